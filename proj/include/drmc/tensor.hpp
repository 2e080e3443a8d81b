#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace drmc
{

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_string(const Shape &shape);

namespace detail
{
struct TensorImpl;
}

/// Dense row-major f32 array with optional gradient tracking.
///
/// Tensor is a shared handle: copies alias the same storage. Values are
/// immutable once an op has produced them; only leaf tensors (parameters,
/// inputs) are written in place through mutable_data(). A scalar is a
/// tensor of shape {1}.
class Tensor
{
public:
	Tensor() = default;

	static Tensor zeros(Shape shape, bool requires_grad = false);
	static Tensor full(Shape shape, float value, bool requires_grad = false);
	static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
	static Tensor scalar(float value, bool requires_grad = false);

	bool defined() const noexcept
	{
		return impl_ != nullptr;
	}

	const Shape &shape() const;
	std::size_t ndim() const;
	std::size_t dim(std::size_t axis) const;
	std::size_t numel() const;

	std::span<const float> data() const;
	/// In-place access for leaf tensors; writes are not recorded.
	std::span<float> mutable_data();

	float item() const;
	/// Scalar value as computed by an f64 reduction, before rounding to f32.
	/// Falls back to item() for tensors not produced by a reduction.
	double item_precise() const;

	bool requires_grad() const;
	void set_requires_grad(bool value);
	bool is_leaf() const;

	bool has_grad() const;
	std::span<const float> grad() const;
	/// Allocates a zero gradient buffer on first use.
	std::span<float> mutable_grad();
	void zero_grad();

	/// New leaf holding a copy of the values, detached from any graph.
	Tensor detach() const;

	bool same_storage(const Tensor &other) const noexcept
	{
		return impl_ == other.impl_;
	}

	const std::shared_ptr<detail::TensorImpl> &impl() const noexcept
	{
		return impl_;
	}
	explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) noexcept :
			impl_(std::move(impl))
	{
	}

private:
	std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse pass from a scalar loss. Gradients accumulate into every reachable
/// leaf that requires grad; unreachable tensors are untouched.
void backward(const Tensor &loss);

/// Vector-Jacobian product: seeds the output gradient with `seed`.
void backward(const Tensor &output, std::span<const float> seed);

bool grad_enabled() noexcept;

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard
{
public:
	NoGradGuard() noexcept;
	~NoGradGuard();
	NoGradGuard(const NoGradGuard &) = delete;
	NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
	bool previous_;
};

} // namespace drmc
