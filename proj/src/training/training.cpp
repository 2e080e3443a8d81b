#include "../common/format.hpp"

#include <drmc/errors.hpp>
#include <drmc/ops.hpp>
#include <drmc/training.hpp>

#include <algorithm>
#include <cmath>
#include <random>

namespace drmc::train
{

using model::DRMCNetwork;
using model::Parameter;
using synth::Extent;
using synth::SampleRecord;
using synth::Split;

namespace
{

std::uint64_t splitmix(std::uint64_t x)
{
	x += 0x9e3779b97f4a7c15ull;
	x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
	x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
	return x ^ (x >> 31);
}

// Uniform index in [0, n) that does not depend on the standard library's
// distribution implementation.
std::size_t draw_index(std::mt19937_64 &rng, std::size_t n)
{
	const double u = static_cast<double>(rng() >> 11) * 0x1p-53;
	return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
}

void shuffle(std::vector<std::size_t> &v, std::mt19937_64 &rng)
{
	for (std::size_t i = v.size(); i > 1; i--)
		std::swap(v[i - 1], v[draw_index(rng, i)]);
}

Extent spatial(const Tensor &v)
{
	if (v.ndim() != 4 || v.dim(0) != 1)
		throw DimensionError("expected a [1 x D x H x W] volume, got " + shape_string(v.shape()));
	return { v.dim(1), v.dim(2), v.dim(3) };
}

Tensor crop(const Tensor &v, const Extent &origin, std::size_t p)
{
	const Extent ext = spatial(v);
	const auto src = v.data();
	std::vector<float> out(p * p * p);
	for (std::size_t z = 0; z < p; z++)
		for (std::size_t y = 0; y < p; y++)
		{
			const float *row = src.data() + ((origin[0] + z) * ext[1] + origin[1] + y) * ext[2] + origin[2];
			std::copy(row, row + p, out.data() + (z * p + y) * p);
		}
	return Tensor::from_data( { 1, p, p, p }, std::move(out));
}

double batch_loss_backward(DRMCNetwork &net, const Batch &batch, float eps)
{
	double total = 0.0;
	for (std::size_t k = 0; k < batch.low.size(); k++)
	{
		const Tensor est = net.forward(batch.low[k]).estimate;
		const Tensor loss = ops::charbonnier(est, batch.full[k], eps);
		total += loss.item_precise();
		backward(loss);
	}
	return total;
}

} // namespace

void validate(const TrainConfig &c)
{
	auto require = [](bool ok, const char *what)
	{
		if (!ok)
			throw ConfigError(std::string("train.") + what);
	};
	require(c.lr >= 0.0 && std::isfinite(c.lr), "lr must be finite and >= 0");
	require(c.epochs > 0, "epochs must be positive");
	require(c.patch_size >= 3, "patch_size must be at least 3");
	require(c.eval_stride > 0 && c.eval_stride <= c.patch_size, "eval_stride must be in [1, patch_size]");
	require(c.patches_per_center > 0, "patches_per_center must be positive");
	require(c.batch_per_center > 0 && c.batch_per_center <= c.patches_per_center, "batch_per_center must be in [1, patches_per_center]");
	require(c.beta1 >= 0.0 && c.beta1 < 1.0, "beta1 must be in [0, 1)");
	require(c.beta2 >= 0.0 && c.beta2 < 1.0, "beta2 must be in [0, 1)");
	require(c.adam_eps > 0.0, "adam_eps must be positive");
	require(c.charbonnier_eps > 0.0, "charbonnier_eps must be positive");
}

std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch, std::size_t stride)
{
	std::vector<std::size_t> out;
	for (std::size_t o = 0; o + patch <= extent; o += stride)
		out.push_back(o);
	if (out.empty() || out.back() + patch < extent)
		out.push_back(extent - patch);
	return out;
}

std::pair<std::vector<Tensor>, PatchGrid> unfold(const Tensor &v, std::size_t patch_size, std::size_t stride)
{
	const Extent ext = spatial(v);
	if (stride == 0 || stride > patch_size)
		throw ConfigError("unfold: stride must be in [1, patch_size], got " + std::to_string(stride));
	for (std::size_t e : ext)
		if (patch_size > e || patch_size == 0)
			throw DimensionError("unfold: patch " + std::to_string(patch_size) + " does not fit volume " + shape_string(v.shape()));
	PatchGrid grid;
	grid.patch_size = patch_size;
	grid.stride = stride;
	grid.source = ext;
	const auto oz = axis_origins(ext[0], patch_size, stride);
	const auto oy = axis_origins(ext[1], patch_size, stride);
	const auto ox = axis_origins(ext[2], patch_size, stride);
	std::vector<Tensor> patches;
	for (std::size_t z : oz)
		for (std::size_t y : oy)
			for (std::size_t x : ox)
			{
				grid.origins.push_back( { z, y, x });
				patches.push_back(crop(v, grid.origins.back(), patch_size));
			}
	return { std::move(patches), std::move(grid) };
}

Tensor merge(const std::vector<Tensor> &patches, const PatchGrid &grid)
{
	if (patches.size() != grid.origins.size())
		throw UsageError("merge: " + std::to_string(patches.size()) + " patches for a grid of " + std::to_string(grid.origins.size()));
	const std::size_t p = grid.patch_size;
	const Extent ext = grid.source;
	std::vector<double> sum(ext[0] * ext[1] * ext[2], 0.0);
	std::vector<std::uint32_t> count(sum.size(), 0);
	for (std::size_t k = 0; k < patches.size(); k++)
	{
		const Shape want { 1, p, p, p };
		if (patches[k].shape() != want)
			throw UsageError("merge: patch " + std::to_string(k) + " has shape " + shape_string(patches[k].shape()) + ", grid expects " + shape_string(want));
		const Extent &o = grid.origins[k];
		for (std::size_t a = 0; a < 3; a++)
			if (o[a] + p > ext[a])
				throw UsageError("merge: patch " + std::to_string(k) + " extends past the source volume");
		const auto d = patches[k].data();
		for (std::size_t z = 0; z < p; z++)
			for (std::size_t y = 0; y < p; y++)
				for (std::size_t x = 0; x < p; x++)
				{
					const std::size_t i = ((o[0] + z) * ext[1] + o[1] + y) * ext[2] + o[2] + x;
					sum[i] += d[(z * p + y) * p + x];
					count[i]++;
				}
	}
	std::vector<float> out(sum.size());
	for (std::size_t i = 0; i < sum.size(); i++)
	{
		if (count[i] == 0)
			throw UsageError("merge: grid leaves voxel " + std::to_string(i) + " uncovered");
		out[i] = static_cast<float>(sum[i] / count[i]);
	}
	return Tensor::from_data( { 1, ext[0], ext[1], ext[2] }, std::move(out));
}

Tensor predict_volume(const DRMCNetwork &net, const Tensor &low, std::size_t patch_size, std::size_t stride)
{
	const Extent ext = spatial(low);
	const std::size_t p = std::min( { patch_size, ext[0], ext[1], ext[2] });
	NoGradGuard no_grad;
	auto [patches, grid] = unfold(low, p, std::min(stride, p));
	for (Tensor &patch : patches)
		patch = net.forward(patch).estimate;
	return merge(patches, grid);
}

std::vector<std::pair<Tensor, Tensor>> sample_patches(const std::vector<const SampleRecord*> &records, std::size_t count, std::size_t patch_size, std::uint64_t seed)
{
	if (records.empty())
		throw UsageError("sample_patches: no records");
	std::mt19937_64 rng(seed);
	std::vector<std::pair<Tensor, Tensor>> out;
	out.reserve(count);
	for (std::size_t k = 0; k < count; k++)
	{
		const SampleRecord &r = *records[draw_index(rng, records.size())];
		const Extent ext = spatial(r.low);
		Extent origin;
		for (std::size_t a = 0; a < 3; a++)
		{
			if (patch_size > ext[a])
				throw DimensionError("patch " + std::to_string(patch_size) + " does not fit volume " + shape_string(r.low.shape()));
			origin[a] = draw_index(rng, ext[a] - patch_size + 1);
		}
		out.emplace_back(crop(r.low, origin, patch_size), crop(r.full, origin, patch_size));
	}
	return out;
}

void adam_step(std::vector<Parameter> &params, const std::vector<std::vector<float>> &grads, AdamState &state, const TrainConfig &config)
{
	if (grads.size() != params.size())
		throw UsageError("adam_step: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) + " parameters");
	for (std::size_t i = 0; i < params.size(); i++)
	{
		if (grads[i].size() != params[i].value.numel())
			throw DimensionError("adam_step: gradient size mismatch for " + params[i].name);
		for (float g : grads[i])
			if (!std::isfinite(g))
				throw NumericError("adam_step: non-finite gradient in " + params[i].name);
	}
	if (state.m.empty())
	{
		for (const Parameter &p : params)
		{
			state.m.emplace_back(p.value.numel(), 0.0);
			state.v.emplace_back(p.value.numel(), 0.0);
		}
	}
	state.step++;
	const double t = static_cast<double>(state.step);
	const double c1 = 1.0 - std::pow(config.beta1, t);
	const double c2 = 1.0 - std::pow(config.beta2, t);
	for (std::size_t i = 0; i < params.size(); i++)
	{
		auto p = params[i].value.mutable_data();
		auto &m = state.m[i];
		auto &v = state.v[i];
		for (std::size_t k = 0; k < p.size(); k++)
		{
			const double g = grads[i][k];
			m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
			v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
			const double update = config.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.adam_eps);
			p[k] = static_cast<float>(p[k] - update);
		}
	}
}

StepResult multi_center_step(DRMCNetwork &net, const std::vector<Batch> &batches, AdamState &state, const TrainConfig &config)
{
	if (batches.empty())
		throw UsageError("multi_center_step: no center batches");
	const std::size_t size = batches.front().low.size();
	for (std::size_t c = 0; c < batches.size(); c++)
		if (batches[c].low.empty() || batches[c].low.size() != size || batches[c].full.size() != batches[c].low.size())
			throw UsageError("multi_center_step: batch for center slot " + std::to_string(c) + " is missing or has a different size");

	std::vector<Parameter> params = net.parameters(); // handles share storage
	StepResult result;
	for (const Batch &batch : batches)
	{
		net.zero_grad();
		result.losses.push_back(batch_loss_backward(net, batch, static_cast<float>(config.charbonnier_eps)) / size);
		auto &grads = result.center_grads.emplace_back();
		for (const Parameter &p : params)
		{
			auto &g = grads.emplace_back(p.value.numel(), 0.0f);
			if (p.value.has_grad())
			{
				const auto src = p.value.grad();
				for (std::size_t k = 0; k < g.size(); k++)
					g[k] = static_cast<float>(static_cast<double>(src[k]) / size);
			}
		}
	}
	net.zero_grad();

	const double k = static_cast<double>(batches.size());
	for (std::size_t i = 0; i < params.size(); i++)
	{
		auto &g = result.mean_grad.emplace_back(params[i].value.numel());
		for (std::size_t e = 0; e < g.size(); e++)
		{
			double s = 0.0;
			for (const auto &center : result.center_grads)
				s += center[i][e];
			g[e] = static_cast<float>(s / k);
		}
	}
	adam_step(params, result.mean_grad, state, config);
	return result;
}

void History::write_csv(std::ostream &out) const
{
	out << "epoch,center_id,train_loss,val_psnr\n";
	for (const HistoryRow &r : rows)
		out << r.epoch << ',' << r.center_id << ',' << detail::format_double(r.train_loss) << ',' << detail::format_double(r.val_psnr) << '\n';
}

std::vector<const SampleRecord*> select(const std::vector<SampleRecord> &records, Split split, const std::vector<int> &center_ids)
{
	std::vector<const SampleRecord*> out;
	for (const SampleRecord &r : records)
		if (r.split == split && (center_ids.empty() || std::find(center_ids.begin(), center_ids.end(), r.center_id) != center_ids.end()))
			out.push_back(&r);
	return out;
}

History train(DRMCNetwork &net, const std::vector<const SampleRecord*> &records, const TrainConfig &config, const EpochCallback &on_epoch)
{
	validate(config);
	std::vector<int> centers;
	for (const SampleRecord *r : records)
		if (std::find(centers.begin(), centers.end(), r->center_id) == centers.end())
			centers.push_back(r->center_id);
	if (centers.empty())
		throw UsageError("train: no records");

	std::vector<std::vector<const SampleRecord*>> train_of(centers.size()), test_of(centers.size());
	for (const SampleRecord *r : records)
	{
		const std::size_t c = static_cast<std::size_t>(std::find(centers.begin(), centers.end(), r->center_id) - centers.begin());
		(r->split == Split::train ? train_of : test_of)[c].push_back(r);
	}

	// Fixed per-center patch pools drawn from the training volumes.
	const std::size_t p = config.patch_size;
	std::vector<std::vector<std::pair<Tensor, Tensor>>> pools(centers.size());
	for (std::size_t c = 0; c < centers.size(); c++)
	{
		if (train_of[c].empty() || test_of[c].empty())
			throw UsageError("train: center " + std::to_string(centers[c]) + " has an empty " + (train_of[c].empty() ? "train" : "test") + " split");
		pools[c] = sample_patches(train_of[c], config.patches_per_center, p, splitmix(config.seed ^ splitmix(static_cast<std::uint64_t>(centers[c]))));
	}

	History history;
	AdamState state;
	const std::size_t steps = config.patches_per_center / config.batch_per_center;
	for (std::size_t epoch = 1; epoch <= config.epochs; epoch++)
	{
		std::vector<std::vector<std::size_t>> order(centers.size());
		for (std::size_t c = 0; c < centers.size(); c++)
		{
			order[c].resize(config.patches_per_center);
			for (std::size_t k = 0; k < order[c].size(); k++)
				order[c][k] = k;
			std::mt19937_64 rng(splitmix(config.seed ^ splitmix(epoch * 1000003ull + static_cast<std::uint64_t>(centers[c]))));
			shuffle(order[c], rng);
		}
		std::vector<double> loss_sum(centers.size(), 0.0);
		for (std::size_t s = 0; s < steps; s++)
		{
			std::vector<Batch> batches(centers.size());
			for (std::size_t c = 0; c < centers.size(); c++)
				for (std::size_t b = 0; b < config.batch_per_center; b++)
				{
					const auto &pair = pools[c][order[c][s * config.batch_per_center + b]];
					batches[c].low.push_back(pair.first);
					batches[c].full.push_back(pair.second);
				}
			const StepResult step = multi_center_step(net, batches, state, config);
			for (std::size_t c = 0; c < centers.size(); c++)
			{
				if (!std::isfinite(step.losses[c]))
					throw NumericError("train: non-finite loss for center " + std::to_string(centers[c]) + " at epoch " + std::to_string(epoch));
				loss_sum[c] += step.losses[c];
			}
		}
		for (std::size_t c = 0; c < centers.size(); c++)
		{
			double psnr_sum = 0.0;
			for (const RecordMetrics &m : evaluate(net, test_of[c], config))
				psnr_sum += m.psnr;
			history.rows.push_back( { epoch, centers[c], loss_sum[c] / steps, psnr_sum / test_of[c].size() });
		}
		if (on_epoch)
			on_epoch(epoch, net);
	}
	return history;
}

std::vector<RecordMetrics> evaluate(const DRMCNetwork &net, const std::vector<const SampleRecord*> &records, const TrainConfig &config)
{
	std::vector<RecordMetrics> out;
	out.reserve(records.size());
	for (const SampleRecord *r : records)
	{
		const Tensor est = predict_volume(net, r->low, config.patch_size, config.eval_stride);
		RecordMetrics m;
		m.center_id = r->center_id;
		m.split = r->split;
		m.index = r->index;
		m.psnr = analysis::psnr(est, r->full);
		m.input_psnr = analysis::psnr(r->low, r->full);
		m.bias = analysis::lesion_bias(est, r->full, r->lesion_mask);
		out.push_back(m);
	}
	return out;
}

} // namespace drmc::train
