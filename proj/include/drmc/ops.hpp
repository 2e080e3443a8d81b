#pragma once

#include <drmc/tensor.hpp>

#include <cstddef>

/// Differentiable tensor operations. All reductions accumulate in f64 in a
/// fixed loop order, so forward and backward results are reproducible.
namespace drmc::ops
{

enum class ElementwiseKind
{
	add,
	sub,
	mul,
	scale,
	relu,
	gelu,
};

/// Binary kinds take `b` with a's shape or a trailing suffix of it (b repeats
/// along a's leading dimensions). `scale` multiplies by `factor`.
Tensor elementwise(ElementwiseKind kind, const Tensor &a, const Tensor &b = {}, float factor = 1.0f);

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, float factor);
Tensor relu(const Tensor &a);
/// tanh approximation.
Tensor gelu(const Tensor &a);
Tensor exp(const Tensor &a);

/// a * s for a one-element tensor s; differentiable in both.
Tensor mul_scalar(const Tensor &a, const Tensor &s);
/// Element `index` of the flattened tensor as a {1} tensor.
Tensor select(const Tensor &a, std::size_t index);

Tensor sum(const Tensor &a);
Tensor mean(const Tensor &a);

Tensor reshape(const Tensor &a, Shape shape);
Tensor transpose(const Tensor &a);

/// [m x k] . [k x n], or [b x m x k] . [k x n] with b broadcast.
Tensor matmul(const Tensor &a, const Tensor &b);
/// [m x k] . [n x k]^T
Tensor matmul_nt(const Tensor &a, const Tensor &b);

struct Conv3dOptions
{
	std::size_t stride = 1;
	std::size_t padding = 0;
	std::size_t groups = 1;
};

/// Cross-correlation of x [Cin x D x H x W] with weight [Cout x Cin/groups x kd x kh x kw].
/// `bias` may be undefined.
Tensor conv3d(const Tensor &x, const Tensor &weight, const Tensor &bias, Conv3dOptions options = {});

/// Global average pool: [C x ...] -> [C].
Tensor gap(const Tensor &x);

Tensor softmax(const Tensor &x, std::size_t axis);

/// Normalizes across axis 0 at every position of x [C x ...]; gain and offset are [C].
Tensor layernorm(const Tensor &x, const Tensor &gain, const Tensor &offset, float eps = 1e-5f);

Tensor concat(const Tensor &a, const Tensor &b, std::size_t axis);

/// Mean over elements of sqrt((y - y_hat)^2 + eps^2).
Tensor charbonnier(const Tensor &y, const Tensor &y_hat, float eps = 1e-3f);

/// Each row of a 2-D tensor divided by max(||row||, eps).
Tensor l2_normalize_rows(const Tensor &x, float eps = 1e-12f);

/// 1-D logits: keeps the k largest (ties to the lower index), softmaxes them,
/// and sets the rest to exactly zero.
Tensor topk_softmax(const Tensor &logits, std::size_t k);

} // namespace drmc::ops
