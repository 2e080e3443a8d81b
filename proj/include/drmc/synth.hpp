#pragma once

#include <drmc/tensor.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

/// Synthetic multi-center data: phantoms, per-center degradation, and
/// resampling between voxel grids.
namespace drmc::synth
{

using Extent = std::array<std::size_t, 3>; // D, H, W

enum class PhantomKind
{
	body,
	brain,
};

struct CenterSpec
{
	int id = 1;
	double drf = 4.0;
	double psf_sigma = 0.0;     // voxels
	double spacing_scale = 1.0; // native voxel size / common voxel size
	double count_scale = 300.0; // expected counts per unit intensity at full dose
	double intensity_gain = 1.0;
	double intensity_offset = 0.0;
	PhantomKind phantom = PhantomKind::body;
	std::size_t lesions = 2;
	/// Held out from training.
	bool unknown = false;

	bool operator==(const CenterSpec&) const = default;
};

/// Throws DomainError on drf < 1, psf_sigma < 0, or nonpositive scales.
void validate(const CenterSpec &center);

/// Four training centers followed by two held-out ones (a brain-like center
/// and a near copy of center 1 with shifted blur and gain).
std::vector<CenterSpec> default_centers();

struct Ellipsoid
{
	std::array<double, 3> center {};
	std::array<double, 3> axes {};
	double intensity = 0.0;
	bool lesion = false;
};

struct Phantom
{
	Tensor full;                      // [1 x D x H x W], >= 0
	std::vector<std::uint8_t> lesion_mask; // D*H*W
	std::uint64_t seed = 0;
	std::vector<Ellipsoid> ellipsoids;
};

/// Throws DimensionError when any extent is below 16.
Phantom generate_phantom(std::uint64_t seed, Extent shape, std::size_t n_ellipsoids, std::size_t n_lesions, PhantomKind kind = PhantomKind::body);

/// Poisson thinning at 1/drf of the counts, rescaled to preserve the mean,
/// then Gaussian blur and the center's affine intensity map.
Tensor degrade(const Tensor &full, const CenterSpec &center, std::uint64_t seed);

/// Same as degrade, without the affine step.
Tensor degrade_counts_and_blur(const Tensor &full, const CenterSpec &center, std::uint64_t seed);

/// Separable Gaussian blur with clamp-to-edge borders; sigma 0 is a copy.
Tensor gaussian_blur(const Tensor &v, double sigma);

/// Trilinear resampling of [1 x D x H x W] with half-voxel alignment. Output
/// extents are round(extent * scale).
Tensor resample(const Tensor &v, double scale);
Tensor resample_to(const Tensor &v, Extent shape);

enum class Split
{
	train,
	test,
};

const char* split_name(Split split);

struct SampleRecord
{
	int center_id = 0;
	Split split = Split::train;
	std::size_t index = 0; // within (center, split)
	std::uint64_t seed = 0;
	Tensor low;
	Tensor full;
	std::vector<std::uint8_t> lesion_mask;
	std::vector<Ellipsoid> ellipsoids;
};

struct DatasetConfig
{
	Extent shape { 24, 24, 24 };
	std::size_t train_per_center = 8;
	std::size_t test_per_center = 4;
	std::size_t ellipsoids = 6;
	std::uint64_t seed = 1;

	bool operator==(const DatasetConfig&) const = default;
};

/// Per center, in order: train records then test records. Every record has
/// its own phantom seed, so no phantom is shared between splits.
std::vector<SampleRecord> build_dataset(const std::vector<CenterSpec> &centers, const DatasetConfig &config);

/// Record for one (center, split, index), identical to the one build_dataset
/// would produce.
SampleRecord make_record(const CenterSpec &center, Split split, std::size_t index, const DatasetConfig &config);

} // namespace drmc::synth
