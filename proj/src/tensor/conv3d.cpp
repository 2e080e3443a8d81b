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

struct ConvGeometry
{
	std::size_t cin, d, h, w;
	std::size_t cout, kd, kh, kw;
	std::size_t stride, pad, groups;
	std::size_t od, oh, ow;
	std::size_t pd, ph, pw; // padded input extents

	std::size_t cin_per_group() const
	{
		return cin / groups;
	}
	std::size_t cout_per_group() const
	{
		return cout / groups;
	}
	bool pointwise() const
	{
		return kd == 1 && kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1;
	}
};

ConvGeometry make_geometry(const Tensor &x, const Tensor &weight, const Tensor &bias, const Conv3dOptions &opt)
{
	if (x.ndim() != 4 || weight.ndim() != 5)
		throw DimensionError("conv3d expects x [C x D x H x W] and weight [Cout x Cin/g x kd x kh x kw], got " + shape_string(x.shape()) + " and "
				+ shape_string(weight.shape()));
	ConvGeometry g { };
	g.cin = x.dim(0);
	g.d = x.dim(1);
	g.h = x.dim(2);
	g.w = x.dim(3);
	g.cout = weight.dim(0);
	g.kd = weight.dim(2);
	g.kh = weight.dim(3);
	g.kw = weight.dim(4);
	g.stride = opt.stride;
	g.pad = opt.padding;
	g.groups = opt.groups;
	if (g.groups == 0 || g.stride == 0)
		throw ConfigError("conv3d: groups and stride must be positive");
	if (g.cin % g.groups != 0 || g.cout % g.groups != 0)
		throw ConfigError("conv3d: channels " + std::to_string(g.cin) + "->" + std::to_string(g.cout) + " not divisible by groups " + std::to_string(g.groups));
	if (weight.dim(1) != g.cin / g.groups)
		throw DimensionError("conv3d: weight expects " + std::to_string(weight.dim(1)) + " input channels per group, input has "
				+ std::to_string(g.cin / g.groups));
	if (g.kd % 2 == 0 || g.kh % 2 == 0 || g.kw % 2 == 0)
		throw ConfigError("conv3d: kernel sizes must be odd, got " + shape_string(weight.shape()));
	if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.cout))
		throw DimensionError("conv3d: bias shape " + shape_string(bias.shape()) + " does not match " + std::to_string(g.cout) + " output channels");
	g.pd = g.d + 2 * g.pad;
	g.ph = g.h + 2 * g.pad;
	g.pw = g.w + 2 * g.pad;
	if (g.pd < g.kd || g.ph < g.kh || g.pw < g.kw)
		throw DimensionError("conv3d: kernel " + shape_string(weight.shape()) + " larger than padded input " + shape_string(x.shape()));
	g.od = (g.pd - g.kd) / g.stride + 1;
	g.oh = (g.ph - g.kh) / g.stride + 1;
	g.ow = (g.pw - g.kw) / g.stride + 1;
	return g;
}

std::vector<float> pad_input(std::span<const float> x, const ConvGeometry &g)
{
	if (g.pad == 0)
		return std::vector<float>(x.begin(), x.end());
	std::vector<float> out(g.cin * g.pd * g.ph * g.pw, 0.0f);
	for (std::size_t c = 0; c < g.cin; c++)
		for (std::size_t z = 0; z < g.d; z++)
			for (std::size_t y = 0; y < g.h; y++)
			{
				const float *src = x.data() + ((c * g.d + z) * g.h + y) * g.w;
				float *dst = out.data() + ((c * g.pd + z + g.pad) * g.ph + y + g.pad) * g.pw + g.pad;
				std::copy(src, src + g.w, dst);
			}
	return out;
}

std::size_t weight_index(const ConvGeometry &g, std::size_t co, std::size_t cil, std::size_t a, std::size_t b, std::size_t c)
{
	return (((co * g.cin_per_group() + cil) * g.kd + a) * g.kh + b) * g.kw + c;
}

// Stride-1 convolutions run on the padded grid's pitch: output voxel (z, y, x)
// sits at z*ph*pw + y*pw + x, so each (channel, tap) pair is one contiguous
// axpy or dot of length pitched_length(). Columns past ow are scratch.
std::size_t pitched_length(const ConvGeometry &g)
{
	return ((g.od - 1) * g.ph + g.oh - 1) * g.pw + g.ow;
}

std::size_t tap_offset(const ConvGeometry &g, std::size_t a, std::size_t b, std::size_t c)
{
	return (a * g.ph + b) * g.pw + c;
}

std::size_t channel_volume(const ConvGeometry &g)
{
	return g.pd * g.ph * g.pw;
}

// Copies the dense output gradient of one channel onto the pitched layout.
std::vector<float> pitch_gradient(std::span<const float> gy, const ConvGeometry &g)
{
	const std::size_t len = pitched_length(g);
	const std::size_t out_spatial = g.od * g.oh * g.ow;
	std::vector<float> out(g.cout * len, 0.0f);
	for (std::size_t co = 0; co < g.cout; co++)
		for (std::size_t z = 0; z < g.od; z++)
			for (std::size_t y = 0; y < g.oh; y++)
			{
				const float *src = gy.data() + co * out_spatial + (z * g.oh + y) * g.ow;
				std::copy(src, src + g.ow, out.data() + co * len + (z * g.ph + y) * g.pw);
			}
	return out;
}

std::vector<float> conv_forward(std::span<const float> xp, std::span<const float> wt, std::span<const float> bias, const ConvGeometry &g)
{
	const auto &kern = kernels::active();
	const std::size_t out_spatial = g.od * g.oh * g.ow;
	std::vector<float> out(g.cout * out_spatial);
	if (g.stride == 1)
	{
		const std::size_t len = pitched_length(g);
		std::vector<double> acc(len);
		for (std::size_t co = 0; co < g.cout; co++)
		{
			const std::size_t grp = co / g.cout_per_group();
			std::fill(acc.begin(), acc.end(), bias.empty() ? 0.0 : static_cast<double>(bias[co]));
			for (std::size_t cil = 0; cil < g.cin_per_group(); cil++)
			{
				const float *chan = xp.data() + (grp * g.cin_per_group() + cil) * channel_volume(g);
				for (std::size_t a = 0; a < g.kd; a++)
					for (std::size_t b = 0; b < g.kh; b++)
						for (std::size_t c = 0; c < g.kw; c++)
							kern.axpy_wide(acc.data(), wt[weight_index(g, co, cil, a, b, c)], chan + tap_offset(g, a, b, c), len);
			}
			for (std::size_t z = 0; z < g.od; z++)
				for (std::size_t y = 0; y < g.oh; y++)
				{
					const double *src = acc.data() + (z * g.ph + y) * g.pw;
					float *dst = out.data() + co * out_spatial + (z * g.oh + y) * g.ow;
					for (std::size_t x = 0; x < g.ow; x++)
						dst[x] = static_cast<float>(src[x]);
				}
		}
		return out;
	}

	std::vector<double> acc(g.ow);
	for (std::size_t co = 0; co < g.cout; co++)
	{
		const std::size_t grp = co / g.cout_per_group();
		const double b0 = bias.empty() ? 0.0 : bias[co];
		for (std::size_t z = 0; z < g.od; z++)
			for (std::size_t y = 0; y < g.oh; y++)
			{
				std::fill(acc.begin(), acc.end(), b0);
				for (std::size_t cil = 0; cil < g.cin_per_group(); cil++)
				{
					const std::size_t ci = grp * g.cin_per_group() + cil;
					for (std::size_t a = 0; a < g.kd; a++)
						for (std::size_t b = 0; b < g.kh; b++)
						{
							const float *row = xp.data() + ((ci * g.pd + z * g.stride + a) * g.ph + y * g.stride + b) * g.pw;
							for (std::size_t c = 0; c < g.kw; c++)
							{
								const double wv = wt[weight_index(g, co, cil, a, b, c)];
								for (std::size_t x = 0; x < g.ow; x++)
									acc[x] += wv * row[x * g.stride + c];
							}
						}
				}
				float *dst = out.data() + co * out_spatial + (z * g.oh + y) * g.ow;
				for (std::size_t x = 0; x < g.ow; x++)
					dst[x] = static_cast<float>(acc[x]);
			}
	}
	return out;
}

void conv_backward_input(std::span<const float> gy, std::span<const float> wt, float *gx, const ConvGeometry &g)
{
	const auto &kern = kernels::active();
	const std::size_t out_spatial = g.od * g.oh * g.ow;
	std::vector<double> gxp(g.cin * channel_volume(g), 0.0);
	if (g.stride == 1)
	{
		const std::size_t len = pitched_length(g);
		const std::vector<float> gp = pitch_gradient(gy, g);
		for (std::size_t co = 0; co < g.cout; co++)
		{
			const std::size_t grp = co / g.cout_per_group();
			for (std::size_t cil = 0; cil < g.cin_per_group(); cil++)
			{
				double *chan = gxp.data() + (grp * g.cin_per_group() + cil) * channel_volume(g);
				for (std::size_t a = 0; a < g.kd; a++)
					for (std::size_t b = 0; b < g.kh; b++)
						for (std::size_t c = 0; c < g.kw; c++)
							kern.axpy_wide(chan + tap_offset(g, a, b, c), wt[weight_index(g, co, cil, a, b, c)], gp.data() + co * len, len);
			}
		}
	}
	else
	{
		for (std::size_t co = 0; co < g.cout; co++)
		{
			const std::size_t grp = co / g.cout_per_group();
			for (std::size_t z = 0; z < g.od; z++)
				for (std::size_t y = 0; y < g.oh; y++)
				{
					const float *grow = gy.data() + co * out_spatial + (z * g.oh + y) * g.ow;
					for (std::size_t cil = 0; cil < g.cin_per_group(); cil++)
					{
						const std::size_t ci = grp * g.cin_per_group() + cil;
						for (std::size_t a = 0; a < g.kd; a++)
							for (std::size_t b = 0; b < g.kh; b++)
							{
								double *row = gxp.data() + ((ci * g.pd + z * g.stride + a) * g.ph + y * g.stride + b) * g.pw;
								for (std::size_t c = 0; c < g.kw; c++)
								{
									const double wv = wt[weight_index(g, co, cil, a, b, c)];
									for (std::size_t x = 0; x < g.ow; x++)
										row[x * g.stride + c] += wv * grow[x];
								}
							}
					}
				}
		}
	}
	for (std::size_t c = 0; c < g.cin; c++)
		for (std::size_t z = 0; z < g.d; z++)
			for (std::size_t y = 0; y < g.h; y++)
			{
				const double *src = gxp.data() + ((c * g.pd + z + g.pad) * g.ph + y + g.pad) * g.pw + g.pad;
				float *dst = gx + ((c * g.d + z) * g.h + y) * g.w;
				for (std::size_t x = 0; x < g.w; x++)
					dst[x] += static_cast<float>(src[x]);
			}
}

void conv_backward_weight(std::span<const float> gy, std::span<const float> xp, float *gw, const ConvGeometry &g)
{
	const auto &kern = kernels::active();
	const std::size_t out_spatial = g.od * g.oh * g.ow;
	if (g.stride == 1)
	{
		const std::size_t len = pitched_length(g);
		const std::vector<float> gp = pitch_gradient(gy, g);
		for (std::size_t co = 0; co < g.cout; co++)
		{
			const std::size_t grp = co / g.cout_per_group();
			for (std::size_t cil = 0; cil < g.cin_per_group(); cil++)
			{
				const float *chan = xp.data() + (grp * g.cin_per_group() + cil) * channel_volume(g);
				for (std::size_t a = 0; a < g.kd; a++)
					for (std::size_t b = 0; b < g.kh; b++)
						for (std::size_t c = 0; c < g.kw; c++)
							gw[weight_index(g, co, cil, a, b, c)] += static_cast<float>(kern.dot(gp.data() + co * len, chan + tap_offset(g, a, b, c), len));
			}
		}
		return;
	}

	std::vector<float> strided(g.ow);
	for (std::size_t co = 0; co < g.cout; co++)
	{
		const std::size_t grp = co / g.cout_per_group();
		for (std::size_t cil = 0; cil < g.cin_per_group(); cil++)
		{
			const std::size_t ci = grp * g.cin_per_group() + cil;
			for (std::size_t a = 0; a < g.kd; a++)
				for (std::size_t b = 0; b < g.kh; b++)
					for (std::size_t c = 0; c < g.kw; c++)
					{
						double s = 0.0;
						for (std::size_t z = 0; z < g.od; z++)
							for (std::size_t y = 0; y < g.oh; y++)
							{
								const float *grow = gy.data() + co * out_spatial + (z * g.oh + y) * g.ow;
								const float *xrow = xp.data() + ((ci * g.pd + z * g.stride + a) * g.ph + y * g.stride + b) * g.pw + c;
								for (std::size_t x = 0; x < g.ow; x++)
									strided[x] = xrow[x * g.stride];
								s += kern.dot(grow, strided.data(), g.ow);
							}
						gw[weight_index(g, co, cil, a, b, c)] += static_cast<float>(s);
					}
		}
	}
}

Tensor pointwise_conv(const Tensor &x, const Tensor &weight, const Tensor &bias, const ConvGeometry &g)
{
	const std::size_t s = g.d * g.h * g.w;
	std::vector<float> out(g.cout * s);
	if (bias.defined())
		for (std::size_t co = 0; co < g.cout; co++)
			std::fill(out.begin() + co * s, out.begin() + (co + 1) * s, bias.data()[co]);
	kernels::active().gemm(false, false, g.cout, s, g.cin, weight.data().data(), g.cin, x.data().data(), s, out.data(), s, bias.defined());
	return make_result( { g.cout, g.d, g.h, g.w }, std::move(out), { x, weight, bias }, [x, weight, g, s](std::span<const float>,
			std::span<const float> gy, GradSink &sink)
	{
		const auto &kern = kernels::active();
		if (float *gx = sink.get(0))
			kern.gemm(true, false, g.cin, s, g.cout, weight.data().data(), g.cin, gy.data(), s, gx, s, true);
		if (float *gw = sink.get(1))
			kern.gemm(false, true, g.cout, g.cin, s, gy.data(), s, x.data().data(), s, gw, g.cin, true);
		if (float *gb = sink.get(2))
			for (std::size_t co = 0; co < g.cout; co++)
				gb[co] += static_cast<float>(kern.sum(gy.data() + co * s, s));
	});
}

} // namespace

Tensor conv3d(const Tensor &x, const Tensor &weight, const Tensor &bias, Conv3dOptions options)
{
	const ConvGeometry g = make_geometry(x, weight, bias, options);
	if (g.pointwise())
		return pointwise_conv(x, weight, bias, g);

	auto xp = std::make_shared<std::vector<float>>(pad_input(x.data(), g));
	std::vector<float> out = conv_forward(*xp, weight.data(), bias.defined() ? bias.data() : std::span<const float>(), g);
	const std::size_t out_spatial = g.od * g.oh * g.ow;
	return make_result( { g.cout, g.od, g.oh, g.ow }, std::move(out), { x, weight, bias }, [weight, xp, g, out_spatial](std::span<const float>,
			std::span<const float> gy, GradSink &sink)
	{
		if (float *gx = sink.get(0))
			conv_backward_input(gy, weight.data(), gx, g);
		if (float *gw = sink.get(1))
			conv_backward_weight(gy, *xp, gw, g);
		if (float *gb = sink.get(2))
			for (std::size_t co = 0; co < g.cout; co++)
				gb[co] += static_cast<float>(kernels::active().sum(gy.data() + co * out_spatial, out_spatial));
	});
}

} // namespace drmc::ops
