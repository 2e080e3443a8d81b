#include <drmc/analysis.hpp>
#include <drmc/errors.hpp>
#include <drmc/ops.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace drmc::analysis
{

double psnr(const Tensor &a, const Tensor &b, double peak)
{
	if (a.shape() != b.shape())
		throw DimensionError("psnr: shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
	if (!(peak > 0.0))
		throw DomainError("psnr: peak must be positive");
	const auto x = a.data();
	const auto y = b.data();
	double se = 0.0;
	for (std::size_t i = 0; i < x.size(); i++)
	{
		const double d = static_cast<double>(x[i]) - y[i];
		se += d * d;
	}
	if (se == 0.0)
		return kInfinitePsnr;
	return 10.0 * std::log10(peak * peak / (se / static_cast<double>(x.size())));
}

double psnr(const Tensor &estimate, const Tensor &reference)
{
	const auto r = reference.data();
	if (r.empty())
		throw DimensionError("psnr: empty reference");
	return psnr(estimate, reference, *std::max_element(r.begin(), r.end()));
}

LesionBias lesion_bias(const Tensor &estimate, const Tensor &reference, const std::vector<std::uint8_t> &mask)
{
	if (estimate.shape() != reference.shape())
		throw DimensionError("lesion_bias: shapes differ: " + shape_string(estimate.shape()) + " vs " + shape_string(reference.shape()));
	if (mask.size() != reference.numel())
		throw DimensionError("lesion_bias: mask has " + std::to_string(mask.size()) + " voxels, volume has " + std::to_string(reference.numel()));
	const auto e = estimate.data();
	const auto r = reference.data();
	double sum_e = 0.0, sum_r = 0.0;
	double max_e = -INFINITY, max_r = -INFINITY;
	std::size_t n = 0;
	for (std::size_t i = 0; i < mask.size(); i++)
		if (mask[i])
		{
			sum_e += e[i];
			sum_r += r[i];
			max_e = std::max(max_e, static_cast<double>(e[i]));
			max_r = std::max(max_r, static_cast<double>(r[i]));
			n++;
		}
	LesionBias out;
	if (n == 0)
		return out;
	if (sum_r == 0.0 || max_r == 0.0)
		throw NumericError("lesion_bias: reference is zero inside the lesion mask");
	out.has_lesion = true;
	out.b_mean = std::abs(sum_e - sum_r) / std::abs(sum_r);
	out.b_max = std::abs(max_e - max_r) / std::abs(max_r);
	return out;
}

// ---------------------------------------------------------------------------

QuadraticObjective::QuadraticObjective(std::vector<double> curvature, std::vector<std::vector<std::vector<double>>> centers, std::vector<double> theta) :
		a_(std::move(curvature)), c_(std::move(centers)), theta_(std::move(theta))
{
	if (a_.size() != theta_.size())
		throw DimensionError("QuadraticObjective: curvature and theta sizes differ");
	for (const auto &task : c_)
		for (const auto &batch : task)
			if (batch.size() != theta_.size())
				throw DimensionError("QuadraticObjective: batch center has the wrong dimension");
}

std::size_t QuadraticObjective::tasks() const
{
	return c_.size();
}

std::size_t QuadraticObjective::batches(std::size_t task) const
{
	return c_.at(task).size();
}

std::size_t QuadraticObjective::dimension() const
{
	return theta_.size();
}

double QuadraticObjective::loss(std::size_t task, std::size_t batch)
{
	const auto &c = c_.at(task).at(batch);
	double l = 0.0;
	for (std::size_t k = 0; k < theta_.size(); k++)
		l += 0.5 * a_[k] * (theta_[k] - c[k]) * (theta_[k] - c[k]);
	return l;
}

double QuadraticObjective::loss_and_grad(std::size_t task, std::size_t batch, std::vector<double> &grad)
{
	const auto &c = c_.at(task).at(batch);
	grad.resize(theta_.size());
	for (std::size_t k = 0; k < theta_.size(); k++)
		grad[k] = a_[k] * (theta_[k] - c[k]);
	return loss(task, batch);
}

std::vector<double> QuadraticObjective::get() const
{
	return theta_;
}

void QuadraticObjective::set(const std::vector<double> &theta)
{
	if (theta.size() != theta_.size())
		throw DimensionError("QuadraticObjective::set: dimension mismatch");
	theta_ = theta;
}

// ---------------------------------------------------------------------------

NetworkObjective::NetworkObjective(model::DRMCNetwork &net, std::vector<std::vector<Batch>> batches, std::vector<std::size_t> parameters, float charbonnier_eps) :
		net_(net), batches_(std::move(batches)), params_(std::move(parameters)), eps_(charbonnier_eps)
{
	for (std::size_t i : params_)
	{
		if (i >= net_.parameters().size())
			throw UsageError("NetworkObjective: parameter index " + std::to_string(i) + " out of range");
		dim_ += net_.parameters()[i].value.numel();
	}
	if (dim_ == 0)
		throw UsageError("NetworkObjective: empty parameter group");
	for (const auto &task : batches_)
		for (const Batch &b : task)
			if (b.low.empty() || b.low.size() != b.full.size())
				throw UsageError("NetworkObjective: empty or unpaired batch");
}

std::size_t NetworkObjective::tasks() const
{
	return batches_.size();
}

std::size_t NetworkObjective::batches(std::size_t task) const
{
	return batches_.at(task).size();
}

std::size_t NetworkObjective::dimension() const
{
	return dim_;
}

double NetworkObjective::loss(std::size_t task, std::size_t batch)
{
	const Batch &b = batches_.at(task).at(batch);
	NoGradGuard no_grad;
	double total = 0.0;
	for (std::size_t k = 0; k < b.low.size(); k++)
		total += ops::charbonnier(net_.forward(b.low[k]).estimate, b.full[k], eps_).item_precise();
	return total / static_cast<double>(b.low.size());
}

double NetworkObjective::loss_and_grad(std::size_t task, std::size_t batch, std::vector<double> &grad)
{
	const Batch &b = batches_.at(task).at(batch);
	net_.zero_grad();
	double total = 0.0;
	for (std::size_t k = 0; k < b.low.size(); k++)
	{
		const Tensor loss = ops::charbonnier(net_.forward(b.low[k]).estimate, b.full[k], eps_);
		total += loss.item_precise();
		backward(loss);
	}
	const double n = static_cast<double>(b.low.size());
	grad.assign(dim_, 0.0);
	std::size_t offset = 0;
	for (std::size_t i : params_)
	{
		const Tensor &p = net_.parameters()[i].value;
		if (p.has_grad())
		{
			const auto g = p.grad();
			for (std::size_t k = 0; k < g.size(); k++)
				grad[offset + k] = g[k] / n;
		}
		offset += p.numel();
	}
	net_.zero_grad();
	return total / n;
}

std::vector<double> NetworkObjective::get() const
{
	std::vector<double> theta;
	theta.reserve(dim_);
	for (std::size_t i : params_)
		for (float v : net_.parameters()[i].value.data())
			theta.push_back(v);
	return theta;
}

void NetworkObjective::set(const std::vector<double> &theta)
{
	if (theta.size() != dim_)
		throw DimensionError("NetworkObjective::set: dimension mismatch");
	std::size_t offset = 0;
	for (std::size_t i : params_)
	{
		Tensor p = net_.parameters()[i].value;
		auto d = p.mutable_data();
		for (float &v : d)
			v = static_cast<float>(theta[offset++]);
	}
}

// ---------------------------------------------------------------------------

namespace
{

double dot(const std::vector<double> &a, const std::vector<double> &b)
{
	double s = 0.0;
	for (std::size_t k = 0; k < a.size(); k++)
		s += a[k] * b[k];
	return s;
}

std::size_t paired_batches(const Objective &objective, std::size_t i, std::size_t j)
{
	if (i >= objective.tasks() || j >= objective.tasks())
		throw UsageError("delta_loss: task index out of range");
	const std::size_t n = objective.batches(i);
	if (objective.batches(j) != n)
		throw UsageError("delta_loss: tasks " + std::to_string(i) + " and " + std::to_string(j) + " have different batch counts");
	if (n == 0)
		throw UsageError("delta_loss: no batches");
	return n;
}

} // namespace

DeltaResult delta_loss(Objective &objective, std::size_t i, std::size_t j, double lambda, DeltaForm form)
{
	if (!(lambda > 0.0))
		throw DomainError("delta_loss: lambda must be positive");
	const std::size_t n = paired_batches(objective, i, j);
	DeltaResult out;
	double sum = 0.0;
	std::vector<double> gi, gj;
	for (std::size_t b = 0; b < n; b++)
	{
		objective.loss_and_grad(j, b, gj);
		const double norm = std::sqrt(dot(gj, gj));
		if (norm == 0.0)
		{
			out.batches_skipped++;
			continue;
		}
		if (form == DeltaForm::first_order)
		{
			if (i == j)
				gi = gj;
			else
				objective.loss_and_grad(i, b, gi);
			sum += lambda * dot(gj, gi) / norm;
		}
		else
		{
			const std::vector<double> theta = objective.get();
			const double before = objective.loss(i, b);
			std::vector<double> stepped(theta);
			for (std::size_t k = 0; k < stepped.size(); k++)
				stepped[k] -= lambda * gj[k] / norm;
			objective.set(stepped);
			const double after = objective.loss(i, b);
			objective.set(theta);
			sum += before - after;
		}
		out.batches_used++;
	}
	if (out.batches_used == 0)
		throw NumericError("delta_loss: task " + std::to_string(j) + " has zero gradient on every batch");
	out.value = sum / static_cast<double>(out.batches_used);
	return out;
}

InterferenceMatrix interference(Objective &objective, double lambda, DeltaForm form)
{
	const std::size_t k = objective.tasks();
	if (k == 0)
		throw UsageError("interference: no tasks");
	InterferenceMatrix out;
	out.lambda = lambda;
	out.n_batches = objective.batches(0);
	out.values.assign(k, std::vector<double>(k, 0.0));
	for (std::size_t i = 0; i < k; i++)
	{
		// The diagonal is computed once and divides itself.
		const double self = delta_loss(objective, i, i, lambda, form).value;
		if (!(std::abs(self) > 0.0) || !std::isfinite(self))
			throw NumericError("interference: self loss change of task " + std::to_string(i) + " is " + std::to_string(self));
		for (std::size_t j = 0; j < k; j++)
			out.values[i][j] = (i == j ? self : delta_loss(objective, i, j, lambda, form).value) / self;
	}
	return out;
}

// ---------------------------------------------------------------------------

std::size_t RoutingHistogram::distinct_top_experts() const
{
	std::map<std::pair<std::size_t, model::BankKind>, std::set<std::size_t>> seen;
	for (const auto &[key, c] : counts)
		for (std::size_t m = 0; m < c.size(); m++)
			if (c[m] > 0)
				seen[ { std::get<0>(key), std::get<1>(key) }].insert(m);
	std::size_t best = 0;
	for (const auto &[key, s] : seen)
		best = std::max(best, s.size());
	return best;
}

std::size_t top_expert(const std::vector<float> &logits, model::GateKind gate, double logit_scale)
{
	if (logits.empty())
		throw UsageError("top_expert: no logits");
	if (!(logit_scale > 0.0))
		throw DomainError("top_expert: logit scale must be positive");
	const std::size_t m = logits.size();
	std::vector<double> z(m), w(m, 0.0);
	for (std::size_t i = 0; i < m; i++)
		z[i] = logit_scale * logits[i];
	switch (gate)
	{
	case model::GateKind::relu:
	case model::GateKind::no_h:
		for (std::size_t i = 0; i < m; i++)
			w[i] = std::max(z[i], 0.0);
		break;
	case model::GateKind::softmax:
	case model::GateKind::top2:
	{
		std::vector<std::size_t> keep(m);
		for (std::size_t i = 0; i < m; i++)
			keep[i] = i;
		if (gate == model::GateKind::top2 && m > 2)
		{
			std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b)
			{	return z[a] > z[b];});
			keep.resize(2);
		}
		double hi = -INFINITY;
		for (std::size_t i : keep)
			hi = std::max(hi, z[i]);
		double s = 0.0;
		for (std::size_t i : keep)
			s += w[i] = std::exp(z[i] - hi);
		for (std::size_t i : keep)
			w[i] /= s;
		break;
	}
	}
	return static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
}

RoutingHistogram routing_histogram(const model::DRMCNetwork &net, const std::vector<const synth::SampleRecord*> &records, model::GateKind gate, double logit_scale)
{
	RoutingHistogram h;
	h.experts = net.config().experts;
	NoGradGuard no_grad;
	for (const synth::SampleRecord *r : records)
	{
		const model::ForwardResult res = net.forward(r->low, gate);
		for (const model::RouteLog &log : res.routes)
		{
			auto &c = h.counts[ { log.block, log.bank, r->center_id }];
			c.resize(h.experts, 0);
			c[top_expert(log.logits, gate, logit_scale)]++;
		}
	}
	return h;
}

} // namespace drmc::analysis
