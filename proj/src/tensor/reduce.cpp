#include "autograd.hpp"

#include <drmc/errors.hpp>
#include <drmc/kernels/kernels.hpp>
#include <drmc/ops.hpp>

#include <algorithm>
#include <numeric>

namespace drmc::ops
{
namespace
{

using detail::GradSink;
using detail::make_result;

struct AxisView
{
	std::size_t outer, len, inner;
};

AxisView split_at(const Shape &shape, std::size_t axis)
{
	if (axis >= shape.size())
		throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
	AxisView v { 1, shape[axis], 1 };
	for (std::size_t i = 0; i < axis; i++)
		v.outer *= shape[i];
	for (std::size_t i = axis + 1; i < shape.size(); i++)
		v.inner *= shape[i];
	return v;
}

} // namespace

Tensor gap(const Tensor &x)
{
	if (x.ndim() < 2)
		throw DimensionError("gap expects [C x spatial...], got " + shape_string(x.shape()));
	const std::size_t c = x.dim(0);
	const std::size_t s = x.numel() / std::max<std::size_t>(c, 1);
	if (s == 0)
		throw DimensionError("gap over an empty spatial extent " + shape_string(x.shape()));
	const auto &kern = kernels::active();
	std::vector<float> out(c);
	for (std::size_t i = 0; i < c; i++)
		out[i] = static_cast<float>(kern.sum(x.data().data() + i * s, s) / static_cast<double>(s));
	return make_result( { c }, std::move(out), { x }, [c, s](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		if (float *gx = sink.get(0))
			for (std::size_t i = 0; i < c; i++)
			{
				const float share = static_cast<float>(static_cast<double>(g[i]) / static_cast<double>(s));
				for (std::size_t j = 0; j < s; j++)
					gx[i * s + j] += share;
			}
	});
}

Tensor softmax(const Tensor &x, std::size_t axis)
{
	detail::require_finite(x.data(), "softmax");
	const AxisView v = split_at(x.shape(), axis);
	const auto xv = x.data();
	std::vector<float> out(xv.size());
	std::vector<double> e(v.len);
	for (std::size_t o = 0; o < v.outer; o++)
		for (std::size_t in = 0; in < v.inner; in++)
		{
			const std::size_t base = o * v.len * v.inner + in;
			float mx = -std::numeric_limits<float>::infinity();
			for (std::size_t k = 0; k < v.len; k++)
				mx = std::max(mx, xv[base + k * v.inner]);
			double total = 0.0;
			for (std::size_t k = 0; k < v.len; k++)
			{
				e[k] = std::exp(static_cast<double>(xv[base + k * v.inner]) - mx);
				total += e[k];
			}
			for (std::size_t k = 0; k < v.len; k++)
				out[base + k * v.inner] = static_cast<float>(e[k] / total);
		}
	return make_result(x.shape(), std::move(out), { x }, [v](std::span<const float> y, std::span<const float> g, GradSink &sink)
	{
		float *gx = sink.get(0);
		if (!gx)
			return;
		for (std::size_t o = 0; o < v.outer; o++)
			for (std::size_t in = 0; in < v.inner; in++)
			{
				const std::size_t base = o * v.len * v.inner + in;
				double dotp = 0.0;
				for (std::size_t k = 0; k < v.len; k++)
					dotp += static_cast<double>(g[base + k * v.inner]) * y[base + k * v.inner];
				for (std::size_t k = 0; k < v.len; k++)
				{
					const std::size_t i = base + k * v.inner;
					gx[i] += static_cast<float>(y[i] * (g[i] - dotp));
				}
			}
	});
}

Tensor layernorm(const Tensor &x, const Tensor &gain, const Tensor &offset, float eps)
{
	if (x.ndim() < 2)
		throw DimensionError("layernorm expects [C x spatial...], got " + shape_string(x.shape()));
	const std::size_t c = x.dim(0);
	const std::size_t s = x.numel() / c;
	if (gain.numel() != c || offset.numel() != c)
		throw DimensionError("layernorm: gain/offset " + shape_string(gain.shape()) + "/" + shape_string(offset.shape()) + " do not match " + std::to_string(c)
				+ " channels");
	const auto xv = x.data();
	const auto gv = gain.data();
	const auto ov = offset.data();

	// Channel loop outermost so each pass streams contiguous rows.
	std::vector<double> mu(s, 0.0), var(s, 0.0);
	for (std::size_t k = 0; k < c; k++)
		for (std::size_t j = 0; j < s; j++)
			mu[j] += xv[k * s + j];
	for (std::size_t j = 0; j < s; j++)
		mu[j] /= static_cast<double>(c);
	for (std::size_t k = 0; k < c; k++)
		for (std::size_t j = 0; j < s; j++)
		{
			const double d = xv[k * s + j] - mu[j];
			var[j] += d * d;
		}
	auto inv_std = std::make_shared<std::vector<double>>(s);
	for (std::size_t j = 0; j < s; j++)
		(*inv_std)[j] = 1.0 / std::sqrt(var[j] / static_cast<double>(c) + eps);

	auto xhat = std::make_shared<std::vector<float>>(xv.size());
	std::vector<float> out(xv.size());
	for (std::size_t k = 0; k < c; k++)
		for (std::size_t j = 0; j < s; j++)
		{
			const double h = (xv[k * s + j] - mu[j]) * (*inv_std)[j];
			(*xhat)[k * s + j] = static_cast<float>(h);
			out[k * s + j] = static_cast<float>(gv[k] * h + ov[k]);
		}

	return make_result(x.shape(), std::move(out), { x, gain, offset }, [gain, xhat, inv_std, c, s](std::span<const float>, std::span<const float> g,
			GradSink &sink)
	{
		const auto gv = gain.data();
		const auto &xh = *xhat;
		if (float *gg = sink.get(1))
			for (std::size_t k = 0; k < c; k++)
			{
				double acc = 0.0;
				for (std::size_t j = 0; j < s; j++)
					acc += static_cast<double>(g[k * s + j]) * xh[k * s + j];
				gg[k] += static_cast<float>(acc);
			}
		if (float *go = sink.get(2))
			for (std::size_t k = 0; k < c; k++)
				go[k] += static_cast<float>(kernels::active().sum(g.data() + k * s, s));
		if (float *gx = sink.get(0))
		{
			std::vector<double> mean_d(s, 0.0), mean_dx(s, 0.0);
			for (std::size_t k = 0; k < c; k++)
				for (std::size_t j = 0; j < s; j++)
				{
					const double d = static_cast<double>(g[k * s + j]) * gv[k];
					mean_d[j] += d;
					mean_dx[j] += d * xh[k * s + j];
				}
			const double inv_c = 1.0 / static_cast<double>(c);
			for (std::size_t k = 0; k < c; k++)
				for (std::size_t j = 0; j < s; j++)
				{
					const double d = static_cast<double>(g[k * s + j]) * gv[k];
					gx[k * s + j] += static_cast<float>((*inv_std)[j] * (d - mean_d[j] * inv_c - xh[k * s + j] * mean_dx[j] * inv_c));
				}
		}
	});
}

Tensor concat(const Tensor &a, const Tensor &b, std::size_t axis)
{
	const Shape &sa = a.shape();
	const Shape &sb = b.shape();
	bool ok = sa.size() == sb.size() && axis < sa.size();
	for (std::size_t i = 0; ok && i < sa.size(); i++)
		ok = i == axis || sa[i] == sb[i];
	if (!ok)
		throw DimensionError("concat along axis " + std::to_string(axis) + ": " + shape_string(sa) + " vs " + shape_string(sb));
	const AxisView va = split_at(sa, axis);
	const AxisView vb = split_at(sb, axis);
	const std::size_t ca = va.len * va.inner, cb = vb.len * vb.inner;
	Shape shape = sa;
	shape[axis] = sa[axis] + sb[axis];
	std::vector<float> out(a.numel() + b.numel());
	const auto av = a.data();
	const auto bv = b.data();
	for (std::size_t o = 0; o < va.outer; o++)
	{
		std::copy_n(av.data() + o * ca, ca, out.data() + o * (ca + cb));
		std::copy_n(bv.data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
	}
	return make_result(std::move(shape), std::move(out), { a, b }, [va, ca, cb](std::span<const float>, std::span<const float> g, GradSink &sink)
	{
		float *ga = sink.get(0);
		float *gb = sink.get(1);
		for (std::size_t o = 0; o < va.outer; o++)
		{
			if (ga)
				detail::add_into(ga + o * ca, g.subspan(o * (ca + cb), ca));
			if (gb)
				detail::add_into(gb + o * cb, g.subspan(o * (ca + cb) + ca, cb));
		}
	});
}

Tensor charbonnier(const Tensor &y, const Tensor &y_hat, float eps)
{
	if (y.shape() != y_hat.shape())
		throw DimensionError("charbonnier: shape mismatch " + shape_string(y.shape()) + " vs " + shape_string(y_hat.shape()));
	const std::size_t n = y.numel();
	if (n == 0)
		throw DimensionError("charbonnier on empty tensors");
	const auto yv = y.data();
	const auto hv = y_hat.data();
	const double e2 = static_cast<double>(eps) * eps;
	double total = 0.0;
	for (std::size_t i = 0; i < n; i++)
	{
		const double d = static_cast<double>(yv[i]) - hv[i];
		total += std::sqrt(d * d + e2);
	}
	const double value = total / static_cast<double>(n);
	Tensor out = make_result( { 1 }, { static_cast<float>(value) }, { y, y_hat }, [y, y_hat, e2, n](std::span<const float>, std::span<const float> g,
			GradSink &sink)
	{
		float *gy = sink.get(0);
		float *gh = sink.get(1);
		const auto yv = y.data();
		const auto hv = y_hat.data();
		const double scale = static_cast<double>(g[0]) / static_cast<double>(n);
		for (std::size_t i = 0; i < n; i++)
		{
			const double d = static_cast<double>(yv[i]) - hv[i];
			const double r = scale * d / std::sqrt(d * d + e2);
			if (gy)
				gy[i] += static_cast<float>(r);
			if (gh)
				gh[i] -= static_cast<float>(r);
		}
	});
	out.impl()->precise = value;
	return out;
}

Tensor l2_normalize_rows(const Tensor &x, float eps)
{
	if (x.ndim() != 2)
		throw DimensionError("l2_normalize_rows expects a 2-D tensor, got " + shape_string(x.shape()));
	const std::size_t r = x.dim(0), k = x.dim(1);
	const auto &kern = kernels::active();
	const auto xv = x.data();
	auto norms = std::make_shared<std::vector<double>>(r);
	std::vector<float> out(xv.size());
	for (std::size_t i = 0; i < r; i++)
	{
		const double nrm = std::max(std::sqrt(kern.dot(xv.data() + i * k, xv.data() + i * k, k)), static_cast<double>(eps));
		(*norms)[i] = nrm;
		for (std::size_t j = 0; j < k; j++)
			out[i * k + j] = static_cast<float>(xv[i * k + j] / nrm);
	}
	return make_result(x.shape(), std::move(out), { x }, [norms, r, k, eps](std::span<const float> y, std::span<const float> g, GradSink &sink)
	{
		float *gx = sink.get(0);
		if (!gx)
			return;
		const auto &kern = kernels::active();
		for (std::size_t i = 0; i < r; i++)
		{
			const double nrm = (*norms)[i];
			const float *yr = y.data() + i * k;
			const float *gr = g.data() + i * k;
			// Below eps the divisor is constant and the map is linear.
			const double proj = nrm > eps ? kern.dot(yr, gr, k) : 0.0;
			for (std::size_t j = 0; j < k; j++)
				gx[i * k + j] += static_cast<float>((gr[j] - yr[j] * proj) / nrm);
		}
	});
}

Tensor topk_softmax(const Tensor &logits, std::size_t k)
{
	if (logits.ndim() != 1)
		throw DimensionError("topk_softmax expects 1-D logits, got " + shape_string(logits.shape()));
	const std::size_t m = logits.numel();
	if (k == 0 || k > m)
		throw ConfigError("topk_softmax: k=" + std::to_string(k) + " invalid for " + std::to_string(m) + " logits");
	const auto lv = logits.data();
	detail::require_finite(lv, "topk_softmax");
	std::vector<std::size_t> order(m);
	std::iota(order.begin(), order.end(), 0);
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b)
	{
		return lv[a] > lv[b];
	});
	auto kept = std::make_shared<std::vector<std::size_t>>(order.begin(), order.begin() + k);
	std::sort(kept->begin(), kept->end());

	float mx = -std::numeric_limits<float>::infinity();
	for (std::size_t i : *kept)
		mx = std::max(mx, lv[i]);
	double total = 0.0;
	std::vector<double> e;
	for (std::size_t i : *kept)
	{
		e.push_back(std::exp(static_cast<double>(lv[i]) - mx));
		total += e.back();
	}
	std::vector<float> out(m, 0.0f);
	for (std::size_t t = 0; t < kept->size(); t++)
		out[(*kept)[t]] = static_cast<float>(e[t] / total);

	return make_result(logits.shape(), std::move(out), { logits }, [kept](std::span<const float> y, std::span<const float> g, GradSink &sink)
	{
		float *gl = sink.get(0);
		if (!gl)
			return;
		double dotp = 0.0;
		for (std::size_t i : *kept)
			dotp += static_cast<double>(g[i]) * y[i];
		for (std::size_t i : *kept)
			gl[i] += static_cast<float>(y[i] * (g[i] - dotp));
	});
}

} // namespace drmc::ops
