#include <drmc/errors.hpp>
#include <drmc/synth.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace drmc::synth
{

namespace
{

std::uint64_t splitmix(std::uint64_t x)
{
	x += 0x9e3779b97f4a7c15ull;
	x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
	x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
	return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b)
{
	return splitmix(a ^ splitmix(b));
}

// Uniform double in [lo, hi) from 53 random bits.
double uniform(std::mt19937_64 &rng, double lo, double hi)
{
	return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1p-53;
}

Extent extent_of(const Tensor &v, const char *what)
{
	if (v.ndim() != 4 || v.dim(0) != 1)
		throw DimensionError(std::string(what) + ": expected [1 x D x H x W], got " + shape_string(v.shape()));
	return { v.dim(1), v.dim(2), v.dim(3) };
}

// Flat top to r = 0.75, cosine taper to zero at r = 1.
double soft_profile(double r)
{
	if (r <= 0.75)
		return 1.0;
	if (r >= 1.0)
		return 0.0;
	return 0.5 * (1.0 + std::cos(std::numbers::pi * (r - 0.75) / 0.25));
}

double radius(const Ellipsoid &e, double z, double y, double x)
{
	const double dz = (z - e.center[0]) / e.axes[0];
	const double dy = (y - e.center[1]) / e.axes[1];
	const double dx = (x - e.center[2]) / e.axes[2];
	return std::sqrt(dz * dz + dy * dy + dx * dx);
}

// One 1-D linear-interpolation pass along `axis` of a D x H x W volume.
std::vector<double> resample_axis(const std::vector<double> &in, const Extent &in_ext, std::size_t axis, std::size_t out_len)
{
	Extent out_ext = in_ext;
	out_ext[axis] = out_len;
	const std::size_t n_in = in_ext[axis];
	std::size_t inner = 1;
	for (std::size_t a = axis + 1; a < 3; a++)
		inner *= in_ext[a];
	std::size_t outer = 1;
	for (std::size_t a = 0; a < axis; a++)
		outer *= in_ext[a];

	// Source coordinate of each output sample, half-voxel aligned.
	std::vector<std::size_t> i0(out_len), i1(out_len);
	std::vector<double> t(out_len);
	const double ratio = static_cast<double>(n_in) / static_cast<double>(out_len);
	for (std::size_t o = 0; o < out_len; o++)
	{
		double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
		src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
		i0[o] = static_cast<std::size_t>(std::floor(src));
		i1[o] = std::min(i0[o] + 1, n_in - 1);
		t[o] = src - static_cast<double>(i0[o]);
	}

	std::vector<double> out(outer * out_len * inner);
	for (std::size_t p = 0; p < outer; p++)
		for (std::size_t o = 0; o < out_len; o++)
		{
			const double *a = in.data() + (p * n_in + i0[o]) * inner;
			const double *b = in.data() + (p * n_in + i1[o]) * inner;
			double *dst = out.data() + (p * out_len + o) * inner;
			for (std::size_t q = 0; q < inner; q++)
				dst[q] = t[o] == 0.0 ? a[q] : a[q] + t[o] * (b[q] - a[q]);
		}
	return out;
}

} // namespace

void validate(const CenterSpec &c)
{
	const std::string who = "center " + std::to_string(c.id) + ": ";
	if (!(c.drf >= 1.0))
		throw DomainError(who + "drf must be >= 1, got " + std::to_string(c.drf));
	if (!(c.psf_sigma >= 0.0))
		throw DomainError(who + "psf_sigma must be >= 0, got " + std::to_string(c.psf_sigma));
	if (!(c.count_scale > 0.0))
		throw DomainError(who + "count_scale must be > 0, got " + std::to_string(c.count_scale));
	if (!(c.spacing_scale > 0.0))
		throw DomainError(who + "spacing_scale must be > 0, got " + std::to_string(c.spacing_scale));
}

std::vector<CenterSpec> default_centers()
{
	// Spacing scales are each site's native voxel size relative to a 2 mm grid.
	std::vector<CenterSpec> c(6);
	c[0] = { 1, 12.0, 1.0, 1.3, 300.0, 1.00, 0.00, PhantomKind::body, 2, false };
	c[1] = { 2, 4.0, 0.6, 1.3, 300.0, 0.85, 0.02, PhantomKind::body, 2, false };
	c[2] = { 3, 10.0, 0.8, 1.0, 300.0, 1.15, -0.01, PhantomKind::body, 2, false };
	c[3] = { 4, 10.0, 0.7, 0.83, 300.0, 0.95, 0.03, PhantomKind::body, 2, false };
	c[4] = { 5, 4.0, 0.5, 0.7, 300.0, 1.05, 0.00, PhantomKind::brain, 0, true };
	c[5] = { 6, 12.0, 1.2, 1.3, 300.0, 0.90, 0.01, PhantomKind::body, 2, true };
	return c;
}

Phantom generate_phantom(std::uint64_t seed, Extent shape, std::size_t n_ellipsoids, std::size_t n_lesions, PhantomKind kind)
{
	for (std::size_t e : shape)
		if (e < 16)
			throw DimensionError("phantom extent must be at least 16 per axis, got " + shape_string( { shape[0], shape[1], shape[2] }));
	std::mt19937_64 rng(seed);
	Phantom ph;
	ph.seed = seed;
	const std::size_t d = shape[0], h = shape[1], w = shape[2];
	const std::array<double, 3> dims { double(d), double(h), double(w) };

	for (std::size_t i = 0; i < n_ellipsoids; i++)
	{
		Ellipsoid e;
		if (i == 0)
		{
			// Body or head outline.
			for (int a = 0; a < 3; a++)
			{
				e.center[a] = (dims[a] - 1.0) / 2.0 + uniform(rng, -0.05, 0.05) * dims[a];
				e.axes[a] = uniform(rng, 0.36, 0.46) * dims[a];
			}
			e.intensity = kind == PhantomKind::brain ? uniform(rng, 0.2, 0.35) : uniform(rng, 0.2, 0.4);
		}
		else
		{
			const Ellipsoid &body = ph.ellipsoids.front();
			const bool brain = kind == PhantomKind::brain;
			for (int a = 0; a < 3; a++)
			{
				e.center[a] = body.center[a] + uniform(rng, -0.6, 0.6) * body.axes[a];
				e.axes[a] = (brain ? uniform(rng, 0.04, 0.10) : uniform(rng, 0.07, 0.20)) * dims[a];
			}
			e.intensity = brain ? uniform(rng, 0.6, 1.0) : uniform(rng, 0.2, 1.0);
		}
		ph.ellipsoids.push_back(e);
	}

	std::vector<float> vol(d * h * w, 0.0f);
	for (std::size_t z = 0; z < d; z++)
		for (std::size_t y = 0; y < h; y++)
			for (std::size_t x = 0; x < w; x++)
			{
				double v = 0.0;
				for (const Ellipsoid &e : ph.ellipsoids)
					v = std::max(v, e.intensity * soft_profile(radius(e, double(z), double(y), double(x))));
				vol[(z * h + y) * w + x] = static_cast<float>(v);
			}

	ph.lesion_mask.assign(d * h * w, 0);
	for (std::size_t l = 0; l < n_lesions; l++)
	{
		// Lesions sit on a voxel inside the body when there is one.
		std::size_t cz = 0, cy = 0, cx = 0;
		for (int attempt = 0; attempt < 1000; attempt++)
		{
			cz = static_cast<std::size_t>(uniform(rng, 2.0, double(d) - 2.0));
			cy = static_cast<std::size_t>(uniform(rng, 2.0, double(h) - 2.0));
			cx = static_cast<std::size_t>(uniform(rng, 2.0, double(w) - 2.0));
			if (vol[(cz * h + cy) * w + cx] >= 0.15f)
				break;
		}
		Ellipsoid e;
		e.lesion = true;
		e.center = { double(cz), double(cy), double(cx) };
		for (int a = 0; a < 3; a++)
			e.axes[a] = uniform(rng, 1.0, 2.2);
		const double local = std::max(0.2, double(vol[(cz * h + cy) * w + cx]));
		e.intensity = uniform(rng, 1.5, 3.0) * local;
		ph.ellipsoids.push_back(e);
		for (std::size_t z = 0; z < d; z++)
			for (std::size_t y = 0; y < h; y++)
				for (std::size_t x = 0; x < w; x++)
					if (radius(e, double(z), double(y), double(x)) <= 1.0)
					{
						const std::size_t i = (z * h + y) * w + x;
						vol[i] = static_cast<float>(e.intensity);
						ph.lesion_mask[i] = 1;
					}
	}
	ph.full = Tensor::from_data( { 1, d, h, w }, std::move(vol));
	return ph;
}

Tensor gaussian_blur(const Tensor &v, double sigma)
{
	const Extent ext = extent_of(v, "gaussian_blur");
	if (!(sigma >= 0.0))
		throw DomainError("gaussian_blur: sigma must be >= 0");
	if (sigma == 0.0)
		return v.detach();
	const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
	std::vector<double> kernel(2 * radius + 1);
	double norm = 0.0;
	for (std::ptrdiff_t k = -radius; k <= radius; k++)
		norm += kernel[k + radius] = std::exp(-0.5 * double(k * k) / (sigma * sigma));
	for (double &k : kernel)
		k /= norm;

	std::vector<double> cur(v.data().begin(), v.data().end());
	std::vector<double> next(cur.size());
	const std::array<std::size_t, 3> stride { ext[1] * ext[2], ext[2], 1 };
	for (std::size_t axis = 0; axis < 3; axis++)
	{
		const auto n = static_cast<std::ptrdiff_t>(ext[axis]);
		for (std::size_t z = 0; z < ext[0]; z++)
			for (std::size_t y = 0; y < ext[1]; y++)
				for (std::size_t x = 0; x < ext[2]; x++)
				{
					const std::array<std::size_t, 3> pos { z, y, x };
					const std::size_t base = z * stride[0] + y * stride[1] + x - pos[axis] * stride[axis];
					const auto p = static_cast<std::ptrdiff_t>(pos[axis]);
					double s = 0.0;
					for (std::ptrdiff_t k = -radius; k <= radius; k++)
					{
						const std::ptrdiff_t q = std::clamp<std::ptrdiff_t>(p + k, 0, n - 1);
						s += kernel[k + radius] * cur[base + static_cast<std::size_t>(q) * stride[axis]];
					}
					next[z * stride[0] + y * stride[1] + x] = s;
				}
		std::swap(cur, next);
	}
	std::vector<float> out(cur.size());
	for (std::size_t i = 0; i < cur.size(); i++)
		out[i] = static_cast<float>(cur[i]);
	return Tensor::from_data(v.shape(), std::move(out));
}

Tensor degrade_counts_and_blur(const Tensor &full, const CenterSpec &center, std::uint64_t seed)
{
	validate(center);
	extent_of(full, "degrade");
	std::mt19937_64 rng(seed);
	const auto src = full.data();
	std::vector<float> counts(src.size());
	const double per_unit = center.count_scale / center.drf;
	for (std::size_t i = 0; i < src.size(); i++)
	{
		if (!(src[i] >= 0.0f))
			throw DomainError("degrade: full-dose volume has negative or NaN value " + std::to_string(src[i]) + " at voxel " + std::to_string(i));
		const double lambda = static_cast<double>(src[i]) * per_unit;
		if (lambda == 0.0)
		{
			counts[i] = 0.0f;
			continue;
		}
		std::poisson_distribution<long long> poisson(lambda);
		counts[i] = static_cast<float>(static_cast<double>(poisson(rng)) / per_unit);
	}
	return gaussian_blur(Tensor::from_data(full.shape(), std::move(counts)), center.psf_sigma);
}

Tensor degrade(const Tensor &full, const CenterSpec &center, std::uint64_t seed)
{
	const Tensor blurred = degrade_counts_and_blur(full, center, seed);
	std::vector<float> out(blurred.data().begin(), blurred.data().end());
	for (float &v : out)
		v = static_cast<float>(center.intensity_gain * v + center.intensity_offset);
	return Tensor::from_data(full.shape(), std::move(out));
}

Tensor resample_to(const Tensor &v, Extent shape)
{
	const Extent in = extent_of(v, "resample");
	for (std::size_t e : shape)
		if (e < 1)
			throw DimensionError("resample: output extent below 1: " + shape_string( { shape[0], shape[1], shape[2] }));
	if (in == shape)
		return v.detach();
	std::vector<double> cur(v.data().begin(), v.data().end());
	Extent ext = in;
	for (std::size_t axis = 0; axis < 3; axis++)
	{
		if (ext[axis] == shape[axis])
			continue;
		cur = resample_axis(cur, ext, axis, shape[axis]);
		ext[axis] = shape[axis];
	}
	std::vector<float> out(cur.size());
	for (std::size_t i = 0; i < cur.size(); i++)
		out[i] = static_cast<float>(cur[i]);
	return Tensor::from_data( { 1, shape[0], shape[1], shape[2] }, std::move(out));
}

Tensor resample(const Tensor &v, double scale)
{
	if (!(scale > 0.0) || !std::isfinite(scale))
		throw DomainError("resample: scale must be positive and finite");
	const Extent in = extent_of(v, "resample");
	Extent out;
	for (std::size_t a = 0; a < 3; a++)
	{
		const double e = std::round(static_cast<double>(in[a]) * scale);
		if (e < 1.0)
			throw DimensionError("resample: scale " + std::to_string(scale) + " maps extent " + std::to_string(in[a]) + " below 1");
		out[a] = static_cast<std::size_t>(e);
	}
	return resample_to(v, out);
}

const char* split_name(Split split)
{
	return split == Split::train ? "train" : "test";
}

SampleRecord make_record(const CenterSpec &center, Split split, std::size_t index, const DatasetConfig &config)
{
	validate(center);
	SampleRecord rec;
	rec.center_id = center.id;
	rec.split = split;
	rec.index = index;
	rec.seed = mix(mix(mix(config.seed, static_cast<std::uint64_t>(center.id)), split == Split::train ? 1 : 2), index);
	const Phantom ph = generate_phantom(rec.seed, config.shape, config.ellipsoids, center.lesions, center.phantom);
	// Both volumes pass through the center's native grid; the lesion mask
	// stays on the common grid.
	Tensor full_native = ph.full;
	if (center.spacing_scale != 1.0)
		full_native = resample(ph.full, 1.0 / center.spacing_scale);
	rec.full = resample_to(full_native, config.shape);
	rec.low = resample_to(degrade(full_native, center, mix(rec.seed, 0xd05e)), config.shape);
	rec.lesion_mask = ph.lesion_mask;
	rec.ellipsoids = ph.ellipsoids;
	return rec;
}

std::vector<SampleRecord> build_dataset(const std::vector<CenterSpec> &centers, const DatasetConfig &config)
{
	if (centers.empty())
		throw UsageError("build_dataset: no centers given");
	std::vector<SampleRecord> out;
	out.reserve(centers.size() * (config.train_per_center + config.test_per_center));
	for (const CenterSpec &c : centers)
	{
		for (std::size_t i = 0; i < config.train_per_center; i++)
			out.push_back(make_record(c, Split::train, i, config));
		for (std::size_t i = 0; i < config.test_per_center; i++)
			out.push_back(make_record(c, Split::test, i, config));
	}
	return out;
}

} // namespace drmc::synth
