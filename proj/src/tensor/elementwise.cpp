#include "autograd.hpp"

#include <drmc/errors.hpp>
#include <drmc/ops.hpp>

#include <cmath>

namespace drmc::ops
{
namespace
{

using detail::GradSink;
using detail::make_result;

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

const char* kind_name(ElementwiseKind kind)
{
	switch (kind)
	{
	case ElementwiseKind::add:
		return "add";
	case ElementwiseKind::sub:
		return "sub";
	case ElementwiseKind::mul:
		return "mul";
	case ElementwiseKind::scale:
		return "scale";
	case ElementwiseKind::relu:
		return "relu";
	case ElementwiseKind::gelu:
		return "gelu";
	}
	return "?";
}

bool is_suffix(const Shape &b, const Shape &a)
{
	if (b.size() > a.size())
		return false;
	return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

// Sums a gradient of a's shape down to b's trailing-suffix shape.
void reduce_broadcast(float *dst, std::span<const float> g, std::size_t nb)
{
	if (nb == g.size())
	{
		detail::add_into(dst, g);
		return;
	}
	const std::size_t reps = g.size() / nb;
	for (std::size_t j = 0; j < nb; j++)
	{
		double s = 0.0;
		for (std::size_t r = 0; r < reps; r++)
			s += g[r * nb + j];
		dst[j] += static_cast<float>(s);
	}
}

Tensor binary(ElementwiseKind kind, const Tensor &a, const Tensor &b)
{
	if (!b.defined())
		throw UsageError(std::string(kind_name(kind)) + " requires two operands");
	if (!is_suffix(b.shape(), a.shape()) || (b.numel() == 0 && a.numel() != 0))
		throw DimensionError(std::string(kind_name(kind)) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
	const auto av = a.data();
	const auto bv = b.data();
	const std::size_t n = av.size();
	const std::size_t nb = bv.size();
	std::vector<float> out(n);
	switch (kind)
	{
	case ElementwiseKind::add:
		for (std::size_t i = 0; i < n; i++)
			out[i] = av[i] + bv[i % nb];
		break;
	case ElementwiseKind::sub:
		for (std::size_t i = 0; i < n; i++)
			out[i] = av[i] - bv[i % nb];
		break;
	default:
		for (std::size_t i = 0; i < n; i++)
			out[i] = av[i] * bv[i % nb];
		break;
	}
	return make_result(a.shape(), std::move(out), { a, b }, [kind, a, b, nb](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		if (float *ga = sink.get(0))
		{
			if (kind == ElementwiseKind::mul)
			{
				const auto bv = b.data();
				for (std::size_t i = 0; i < g.size(); i++)
					ga[i] += g[i] * bv[i % nb];
			}
			else
				detail::add_into(ga, g);
		}
		if (float *gb = sink.get(1))
		{
			if (kind == ElementwiseKind::mul)
			{
				const auto av = a.data();
				std::vector<float> prod(g.size());
				for (std::size_t i = 0; i < g.size(); i++)
					prod[i] = g[i] * av[i];
				reduce_broadcast(gb, prod, nb);
			}
			else if (kind == ElementwiseKind::sub)
			{
				std::vector<float> neg(g.begin(), g.end());
				for (float &v : neg)
					v = -v;
				reduce_broadcast(gb, neg, nb);
			}
			else
				reduce_broadcast(gb, g, nb);
		}
	});
}

} // namespace

Tensor elementwise(ElementwiseKind kind, const Tensor &a, const Tensor &b, float factor)
{
	switch (kind)
	{
	case ElementwiseKind::add:
	case ElementwiseKind::sub:
	case ElementwiseKind::mul:
		return binary(kind, a, b);
	case ElementwiseKind::scale:
	{
		const auto av = a.data();
		std::vector<float> out(av.size());
		for (std::size_t i = 0; i < av.size(); i++)
			out[i] = av[i] * factor;
		return make_result(a.shape(), std::move(out), { a }, [factor](std::span<const float>, std::span<const float> g, GradSink &sink)
		{
			if (float *ga = sink.get(0))
				for (std::size_t i = 0; i < g.size(); i++)
					ga[i] += g[i] * factor;
		});
	}
	case ElementwiseKind::relu:
	{
		const auto av = a.data();
		std::vector<float> out(av.size());
		for (std::size_t i = 0; i < av.size(); i++)
			out[i] = av[i] > 0.0f ? av[i] : 0.0f;
		return make_result(a.shape(), std::move(out), { a }, [a](std::span<const float>, std::span<const float> g, GradSink &sink)
		{
			if (float *ga = sink.get(0))
			{
				const auto av = a.data();
				for (std::size_t i = 0; i < g.size(); i++)
					if (av[i] > 0.0f)
						ga[i] += g[i];
			}
		});
	}
	case ElementwiseKind::gelu:
	{
		const auto av = a.data();
		std::vector<float> out(av.size());
		for (std::size_t i = 0; i < av.size(); i++)
		{
			const double x = av[i];
			out[i] = static_cast<float>(0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))));
		}
		return make_result(a.shape(), std::move(out), { a }, [a](std::span<const float>, std::span<const float> g, GradSink &sink)
		{
			if (float *ga = sink.get(0))
			{
				const auto av = a.data();
				for (std::size_t i = 0; i < g.size(); i++)
				{
					const double x = av[i];
					const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
					const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
					ga[i] += static_cast<float>(g[i] * d);
				}
			}
		});
	}
	}
	throw UsageError("unknown elementwise kind");
}

Tensor add(const Tensor &a, const Tensor &b)
{
	return elementwise(ElementwiseKind::add, a, b);
}

Tensor sub(const Tensor &a, const Tensor &b)
{
	return elementwise(ElementwiseKind::sub, a, b);
}

Tensor mul(const Tensor &a, const Tensor &b)
{
	return elementwise(ElementwiseKind::mul, a, b);
}

Tensor scale(const Tensor &a, float factor)
{
	return elementwise(ElementwiseKind::scale, a, {}, factor);
}

Tensor relu(const Tensor &a)
{
	return elementwise(ElementwiseKind::relu, a);
}

Tensor gelu(const Tensor &a)
{
	return elementwise(ElementwiseKind::gelu, a);
}

Tensor exp(const Tensor &a)
{
	const auto av = a.data();
	std::vector<float> out(av.size());
	for (std::size_t i = 0; i < av.size(); i++)
		out[i] = std::exp(av[i]);
	return make_result(a.shape(), std::move(out), { a }, [](std::span<const float> y, std::span<const float> g, GradSink &sink)
	{
		if (float *ga = sink.get(0))
			for (std::size_t i = 0; i < g.size(); i++)
				ga[i] += g[i] * y[i];
	});
}

Tensor mul_scalar(const Tensor &a, const Tensor &s)
{
	if (s.numel() != 1)
		throw DimensionError("mul_scalar: factor must have one element, got " + shape_string(s.shape()));
	const float f = s.data()[0];
	const auto av = a.data();
	std::vector<float> out(av.size());
	for (std::size_t i = 0; i < av.size(); i++)
		out[i] = av[i] * f;
	return make_result(a.shape(), std::move(out), { a, s }, [a, f](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		if (float *ga = sink.get(0))
			for (std::size_t i = 0; i < g.size(); i++)
				ga[i] += g[i] * f;
		if (float *gs = sink.get(1))
		{
			const auto av = a.data();
			double d = 0.0;
			for (std::size_t i = 0; i < g.size(); i++)
				d += static_cast<double>(g[i]) * av[i];
			gs[0] += static_cast<float>(d);
		}
	});
}

Tensor select(const Tensor &a, std::size_t index)
{
	if (index >= a.numel())
		throw DimensionError("select: index " + std::to_string(index) + " out of range for " + shape_string(a.shape()));
	return make_result( { 1 }, { a.data()[index] }, { a }, [index](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		if (float *ga = sink.get(0))
			ga[index] += g[0];
	});
}

} // namespace drmc::ops
