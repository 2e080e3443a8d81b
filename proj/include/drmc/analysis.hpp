#pragma once

#include <drmc/model.hpp>
#include <drmc/synth.hpp>

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

/// Image-quality metrics, center interference, and routing statistics.
namespace drmc::analysis
{

/// Returned by psnr when the two volumes are identical.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) in dB, MSE accumulated in double.
double psnr(const Tensor &a, const Tensor &b, double peak);

/// Peak taken as the maximum of the reference volume.
double psnr(const Tensor &estimate, const Tensor &reference);

struct LesionBias
{
	bool has_lesion = false; // false for an empty mask; biases are then unset
	double b_mean = 0.0;
	double b_max = 0.0;
};

/// Relative bias of the mean and max intensity inside the lesion mask.
LesionBias lesion_bias(const Tensor &estimate, const Tensor &reference, const std::vector<std::uint8_t> &mask);

// ---------------------------------------------------------------------------
// Interference

/// Loss landscape seen through a fixed subset of parameters theta. Tasks are
/// centers; each task has a fixed, indexed list of batches.
class Objective
{
public:
	virtual ~Objective() = default;
	virtual std::size_t tasks() const = 0;
	virtual std::size_t batches(std::size_t task) const = 0;
	virtual std::size_t dimension() const = 0;
	virtual double loss(std::size_t task, std::size_t batch) = 0;
	/// Loss, with the gradient with respect to theta written to grad.
	virtual double loss_and_grad(std::size_t task, std::size_t batch, std::vector<double> &grad) = 0;
	virtual std::vector<double> get() const = 0;
	virtual void set(const std::vector<double> &theta) = 0;
};

/// Task t, batch b: 0.5 * sum_k a_k (theta_k - c_tbk)^2.
class QuadraticObjective : public Objective
{
public:
	QuadraticObjective(std::vector<double> curvature, std::vector<std::vector<std::vector<double>>> centers, std::vector<double> theta);

	std::size_t tasks() const override;
	std::size_t batches(std::size_t task) const override;
	std::size_t dimension() const override;
	double loss(std::size_t task, std::size_t batch) override;
	double loss_and_grad(std::size_t task, std::size_t batch, std::vector<double> &grad) override;
	std::vector<double> get() const override;
	void set(const std::vector<double> &theta) override;

private:
	std::vector<double> a_;
	std::vector<std::vector<std::vector<double>>> c_;
	std::vector<double> theta_;
};

/// Mean Charbonnier loss of a network over a batch of patch pairs, seen
/// through the parameters with the given registry indices.
class NetworkObjective : public Objective
{
public:
	struct Batch
	{
		std::vector<Tensor> low;
		std::vector<Tensor> full;
	};

	NetworkObjective(model::DRMCNetwork &net, std::vector<std::vector<Batch>> batches, std::vector<std::size_t> parameters, float charbonnier_eps = 1e-3f);

	std::size_t tasks() const override;
	std::size_t batches(std::size_t task) const override;
	std::size_t dimension() const override;
	double loss(std::size_t task, std::size_t batch) override;
	double loss_and_grad(std::size_t task, std::size_t batch, std::vector<double> &grad) override;
	std::vector<double> get() const override;
	void set(const std::vector<double> &theta) override;

private:
	model::DRMCNetwork &net_;
	std::vector<std::vector<Batch>> batches_;
	std::vector<std::size_t> params_;
	float eps_;
	std::size_t dim_ = 0;
};

enum class DeltaForm
{
	first_order, // lambda * <g_j / |g_j|, g_i>
	exact,       // L_i(theta) - L_i(theta - lambda g_j / |g_j|)
};

struct DeltaResult
{
	double value = 0.0;
	std::size_t batches_used = 0;
	std::size_t batches_skipped = 0; // zero gradient norm on the stepping task
};

/// Expected decrease of task i's loss after a normalized step of size lambda
/// along task j's gradient. Batch k of task i is paired with batch k of task
/// j. Throws NumericError when every pair has a zero task-j gradient.
DeltaResult delta_loss(Objective &objective, std::size_t i, std::size_t j, double lambda, DeltaForm form = DeltaForm::first_order);

struct InterferenceMatrix
{
	std::vector<std::vector<double>> values; // [i][j]
	std::vector<int> center_ids;
	std::string parameter_group;
	std::size_t n_batches = 0;
	double lambda = 0.0;
};

/// I(i, j) = delta_loss(i, j) / delta_loss(i, i). Both use the same task-i
/// batches, so the diagonal is exactly 1.
InterferenceMatrix interference(Objective &objective, double lambda, DeltaForm form = DeltaForm::first_order);

// ---------------------------------------------------------------------------
// Routing

struct RoutingHistogram
{
	using Key = std::tuple<std::size_t, model::BankKind, int>; // block, bank, center id
	std::map<Key, std::vector<std::size_t>> counts;            // per expert
	std::size_t experts = 0;

	/// Experts that are top-1 for at least one (block, bank, center).
	std::size_t distinct_top_experts() const;
};

/// Index of the largest gate weight after multiplying the logits by
/// logit_scale; ties go to the lowest index.
std::size_t top_expert(const std::vector<float> &logits, model::GateKind gate, double logit_scale = 1.0);

/// One whole-volume forward per record. logit_scale rescales the recorded
/// router logits before the top-1 expert is taken.
RoutingHistogram routing_histogram(const model::DRMCNetwork &net, const std::vector<const synth::SampleRecord*> &records, model::GateKind gate, double logit_scale = 1.0);

} // namespace drmc::analysis
