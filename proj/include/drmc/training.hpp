#pragma once

#include <drmc/analysis.hpp>
#include <drmc/model.hpp>
#include <drmc/synth.hpp>

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

/// Patch extraction, Adam, and the synchronized multi-center training loop.
namespace drmc::train
{

struct TrainConfig
{
	double lr = 1e-3;
	std::size_t epochs = 30;
	std::size_t patch_size = 16;
	std::size_t eval_stride = 8;
	std::size_t patches_per_center = 32;
	std::size_t batch_per_center = 1;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double adam_eps = 1e-8;
	double charbonnier_eps = 1e-3;
	std::uint64_t seed = 1;
	/// Write a checkpoint every k epochs through the epoch callback; 0 = only at end.
	std::size_t checkpoint_every = 0;

	bool operator==(const TrainConfig&) const = default;
};

/// Throws ConfigError naming the first invalid field.
void validate(const TrainConfig &config);

struct PatchGrid
{
	std::vector<synth::Extent> origins; // lexicographic (z, y, x)
	std::size_t patch_size = 0;
	std::size_t stride = 0;
	synth::Extent source {};
};

/// Per-axis origins 0, s, 2s, ... with the last one clamped to extent - p, so
/// the patches always cover the whole axis.
std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch, std::size_t stride);

/// Throws DimensionError when the patch exceeds the volume, ConfigError on
/// stride 0 or stride > patch.
std::pair<std::vector<Tensor>, PatchGrid> unfold(const Tensor &v, std::size_t patch_size, std::size_t stride);

/// Mean of the contributing patches at every voxel. Throws UsageError when the
/// patches do not match the grid.
Tensor merge(const std::vector<Tensor> &patches, const PatchGrid &grid);

/// Whole-volume estimate: unfold the input, run the network on every patch,
/// merge. The patch size is reduced to the smallest extent when needed.
Tensor predict_volume(const model::DRMCNetwork &net, const Tensor &low, std::size_t patch_size, std::size_t stride);

/// `count` (low, full) patch pairs at uniformly random origins of uniformly
/// random records, reproducible from seed.
std::vector<std::pair<Tensor, Tensor>> sample_patches(const std::vector<const synth::SampleRecord*> &records, std::size_t count, std::size_t patch_size, std::uint64_t seed);

struct AdamState
{
	std::vector<std::vector<double>> m;
	std::vector<std::vector<double>> v;
	std::uint64_t step = 0;
};

/// One Adam update with bias correction. Throws NumericError naming the
/// parameter on a non-finite gradient, before anything is modified.
void adam_step(std::vector<model::Parameter> &params, const std::vector<std::vector<float>> &grads, AdamState &state, const TrainConfig &config);

struct Batch
{
	std::vector<Tensor> low;
	std::vector<Tensor> full;
};

struct StepResult
{
	std::vector<double> losses;                                // per center
	std::vector<std::vector<std::vector<float>>> center_grads; // [center][param][entry]
	std::vector<std::vector<float>> mean_grad;                 // [param][entry]
};

/// Per-center gradient of the mean batch loss, then one Adam step on the
/// equal-weight mean over centers (summed in center order, in double).
StepResult multi_center_step(model::DRMCNetwork &net, const std::vector<Batch> &batches, AdamState &state, const TrainConfig &config);

struct HistoryRow
{
	std::size_t epoch = 0; // 1-based
	int center_id = 0;
	double train_loss = 0.0;
	double val_psnr = 0.0;
};

struct History
{
	std::vector<HistoryRow> rows;
	void write_csv(std::ostream &out) const;
};

using EpochCallback = std::function<void(std::size_t epoch, const model::DRMCNetwork &net)>;

/// Trains on every center present in records, in order of first appearance;
/// callers drop held-out centers beforehand. Throws UsageError when a center
/// has no train or no test records.
History train(model::DRMCNetwork &net, const std::vector<const synth::SampleRecord*> &records, const TrainConfig &config, const EpochCallback &on_epoch = {});

struct RecordMetrics
{
	int center_id = 0;
	synth::Split split = synth::Split::test;
	std::size_t index = 0;
	double psnr = 0.0;
	double input_psnr = 0.0;
	analysis::LesionBias bias;
};

std::vector<RecordMetrics> evaluate(const model::DRMCNetwork &net, const std::vector<const synth::SampleRecord*> &records, const TrainConfig &config);

/// Records of the given split, optionally restricted to known centers.
std::vector<const synth::SampleRecord*> select(const std::vector<synth::SampleRecord> &records, synth::Split split, const std::vector<int> &center_ids = {});

} // namespace drmc::train
