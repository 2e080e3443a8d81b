#include "autograd.hpp"

#include <drmc/errors.hpp>
#include <drmc/kernels/kernels.hpp>
#include <drmc/ops.hpp>

namespace drmc::ops
{
namespace
{
using detail::GradSink;
using detail::make_result;
} // namespace

Tensor reshape(const Tensor &a, Shape shape)
{
	if (shape_numel(shape) != a.numel())
		throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
	const auto av = a.data();
	return make_result(std::move(shape), std::vector<float>(av.begin(), av.end()), { a },
			[](std::span<const float>, std::span<const float> g, GradSink &sink)
			{
				if (float *ga = sink.get(0))
					detail::add_into(ga, g);
			});
}

Tensor transpose(const Tensor &a)
{
	if (a.ndim() != 2)
		throw DimensionError("transpose expects a 2-D tensor, got " + shape_string(a.shape()));
	const std::size_t r = a.dim(0), c = a.dim(1);
	const auto av = a.data();
	std::vector<float> out(av.size());
	for (std::size_t i = 0; i < r; i++)
		for (std::size_t j = 0; j < c; j++)
			out[j * r + i] = av[i * c + j];
	return make_result( { c, r }, std::move(out), { a }, [r, c](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		if (float *ga = sink.get(0))
			for (std::size_t i = 0; i < r; i++)
				for (std::size_t j = 0; j < c; j++)
					ga[i * c + j] += g[j * r + i];
	});
}

Tensor matmul(const Tensor &a, const Tensor &b)
{
	if (b.ndim() != 2 || (a.ndim() != 2 && a.ndim() != 3))
		throw DimensionError("matmul: unsupported ranks " + shape_string(a.shape()) + " . " + shape_string(b.shape()));
	const std::size_t batch = a.ndim() == 3 ? a.dim(0) : 1;
	const std::size_t m = a.dim(a.ndim() - 2);
	const std::size_t k = a.dim(a.ndim() - 1);
	const std::size_t n = b.dim(1);
	if (b.dim(0) != k)
		throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " . " + shape_string(b.shape()));

	const auto &kern = kernels::active();
	std::vector<float> out(batch * m * n);
	for (std::size_t s = 0; s < batch; s++)
		kern.gemm(false, false, m, n, k, a.data().data() + s * m * k, k, b.data().data(), n, out.data() + s * m * n, n, false);

	Shape shape = a.ndim() == 3 ? Shape { batch, m, n } : Shape { m, n };
	return make_result(std::move(shape), std::move(out), { a, b }, [a, b, batch, m, n, k](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		const auto &kern = kernels::active();
		if (float *ga = sink.get(0))
			for (std::size_t s = 0; s < batch; s++)
				kern.gemm(false, true, m, k, n, g.data() + s * m * n, n, b.data().data(), n, ga + s * m * k, k, true);
		if (float *gb = sink.get(1))
		{
			// Sum over the batch in f64 before touching the accumulator.
			std::vector<float> part(k * n);
			std::vector<double> total(k * n, 0.0);
			for (std::size_t s = 0; s < batch; s++)
			{
				kern.gemm(true, false, k, n, m, a.data().data() + s * m * k, k, g.data() + s * m * n, n, part.data(), n, false);
				for (std::size_t i = 0; i < part.size(); i++)
					total[i] += part[i];
			}
			for (std::size_t i = 0; i < total.size(); i++)
				gb[i] += static_cast<float>(total[i]);
		}
	});
}

Tensor matmul_nt(const Tensor &a, const Tensor &b)
{
	if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
		throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " . " + shape_string(b.shape()) + "^T");
	const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
	std::vector<float> out(m * n);
	kernels::active().gemm(false, true, m, n, k, a.data().data(), k, b.data().data(), k, out.data(), n, false);
	return make_result( { m, n }, std::move(out), { a, b }, [a, b, m, n, k](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		const auto &kern = kernels::active();
		// C = A B^T:  dA = dC B,  dB = dC^T A
		if (float *ga = sink.get(0))
			kern.gemm(false, false, m, k, n, g.data(), n, b.data().data(), k, ga, k, true);
		if (float *gb = sink.get(1))
			kern.gemm(true, false, n, k, m, g.data(), n, a.data().data(), k, gb, k, true);
	});
}

Tensor sum(const Tensor &a)
{
	const std::size_t n = a.numel();
	const double s = kernels::active().sum(a.data().data(), n);
	Tensor out = make_result( { 1 }, { static_cast<float>(s) }, { a }, [n](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		if (float *ga = sink.get(0))
			for (std::size_t i = 0; i < n; i++)
				ga[i] += g[0];
	});
	out.impl()->precise = s;
	return out;
}

Tensor mean(const Tensor &a)
{
	const std::size_t n = a.numel();
	if (n == 0)
		throw DimensionError("mean of an empty tensor");
	const double s = kernels::active().sum(a.data().data(), n) / static_cast<double>(n);
	Tensor out = make_result( { 1 }, { static_cast<float>(s) }, { a }, [n](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		if (float *ga = sink.get(0))
		{
			const float share = static_cast<float>(static_cast<double>(g[0]) / static_cast<double>(n));
			for (std::size_t i = 0; i < n; i++)
				ga[i] += share;
		}
	});
	out.impl()->precise = s;
	return out;
}

} // namespace drmc::ops
