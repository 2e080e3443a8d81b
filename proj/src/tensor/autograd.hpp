#pragma once

// Internal graph bookkeeping shared by the op implementations.

#include <drmc/tensor.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <unordered_map>

namespace drmc::detail
{

struct Node;

struct TensorImpl
{
	Shape shape;
	std::vector<float> data;
	std::vector<float> grad;
	bool requires_grad = false;
	/// Creation order on this thread; backward visits nodes in strictly decreasing order.
	std::uint64_t sequence = 0;
	std::shared_ptr<Node> node;
	double precise = std::numeric_limits<double>::quiet_NaN();
};

/// Hands out accumulation buffers for the inputs of the node being processed.
class GradSink
{
public:
	GradSink(const std::vector<std::shared_ptr<TensorImpl>> &inputs, std::unordered_map<TensorImpl*, std::vector<float>> &interior) :
			inputs_(inputs),
			interior_(interior)
	{
	}

	/// Zero-initialized on first request; nullptr when the input needs no gradient.
	float* get(std::size_t input);

private:
	const std::vector<std::shared_ptr<TensorImpl>> &inputs_;
	std::unordered_map<TensorImpl*, std::vector<float>> &interior_;
};

/// Backward rule: (output values, output gradient, sink for input gradients). Rules add, never assign.
using BackwardFn = std::function<void(std::span<const float>, std::span<const float>, GradSink&)>;

struct Node
{
	std::vector<std::shared_ptr<TensorImpl>> inputs;
	BackwardFn backward;
};

std::uint64_t next_sequence() noexcept;

Tensor make_leaf(Shape shape, std::vector<float> data, bool requires_grad);

/// Wraps a freshly computed value, recording a node when grad mode is on and
/// any input requires grad.
Tensor make_result(Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor> &inputs, BackwardFn backward);

inline void add_into(float *dst, std::span<const float> src)
{
	for (std::size_t i = 0; i < src.size(); i++)
		dst[i] += src[i];
}

void require_finite(std::span<const float> values, const char *op);

} // namespace drmc::detail
