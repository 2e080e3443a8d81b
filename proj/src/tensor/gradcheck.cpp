#include <drmc/gradcheck.hpp>

#include <drmc/errors.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace drmc
{
namespace
{

double project(const Tensor &out, const std::vector<float> &weights)
{
	if (out.numel() == 1)
		return out.item_precise();
	const auto v = out.data();
	double s = 0.0;
	for (std::size_t i = 0; i < v.size(); i++)
		s += static_cast<double>(weights[i]) * v[i];
	return s;
}

void require_finite(double v)
{
	if (!std::isfinite(v))
		throw NumericError("finite_diff_check: function produced a non-finite value");
}

} // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()> &f, std::vector<Tensor> inputs, const GradCheckOptions &options)
{
	std::mt19937_64 rng(options.seed);
	std::uniform_real_distribution<float> unit(-1.0f, 1.0f);

	for (Tensor &t : inputs)
	{
		if (!t.is_leaf())
			throw UsageError("finite_diff_check inputs must be leaf tensors");
		t.set_requires_grad(true);
		t.zero_grad();
	}

	Tensor out = f();
	std::vector<float> weights;
	if (out.numel() != 1)
	{
		weights.resize(out.numel());
		for (float &w : weights)
			w = unit(rng);
	}
	require_finite(project(out, weights));
	if (out.numel() == 1)
		backward(out);
	else
		backward(out, weights);
	out = Tensor();

	struct Entry
	{
		std::size_t input, index;
		double analytic, numeric;
	};
	std::vector<Entry> checked;
	for (std::size_t ti = 0; ti < inputs.size(); ti++)
	{
		Tensor &t = inputs[ti];
		const std::vector<float> analytic = t.has_grad() ? std::vector<float>(t.grad().begin(), t.grad().end()) : std::vector<float>(t.numel(), 0.0f);
		std::vector<std::size_t> entries(t.numel());
		std::iota(entries.begin(), entries.end(), 0);
		if (options.max_entries_per_input != 0 && entries.size() > options.max_entries_per_input)
		{
			std::shuffle(entries.begin(), entries.end(), rng);
			entries.resize(options.max_entries_per_input);
			std::sort(entries.begin(), entries.end());
		}

		NoGradGuard guard;
		auto values = t.mutable_data();
		for (std::size_t i : entries)
		{
			const float original = values[i];
			const float plus = static_cast<float>(original + options.step);
			const float minus = static_cast<float>(original - options.step);
			values[i] = plus;
			const double fp = project(f(), weights);
			values[i] = minus;
			const double fm = project(f(), weights);
			values[i] = original;
			require_finite(fp);
			require_finite(fm);
			checked.push_back( { ti, i, analytic[i], (fp - fm) / (static_cast<double>(plus) - static_cast<double>(minus)) });
		}
	}

	double sq = 0.0;
	for (const Entry &e : checked)
		sq += e.numeric * e.numeric;
	const double rms = checked.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(checked.size()));

	GradCheckReport report;
	report.entries_checked = checked.size();
	double error_sum = 0.0;
	for (const Entry &e : checked)
	{
		const double denom = std::max( { std::abs(e.analytic), std::abs(e.numeric), rms });
		const double err = denom > 0.0 ? std::abs(e.analytic - e.numeric) / denom : 0.0;
		error_sum += err;
		if (err > report.max_relative_error || (&e == &checked.front()))
		{
			report.max_relative_error = err;
			report.worst_input = e.input;
			report.worst_entry = e.index;
			report.worst_analytic = e.analytic;
			report.worst_numeric = e.numeric;
		}
	}
	report.mean_relative_error = report.entries_checked ? error_sum / static_cast<double>(report.entries_checked) : 0.0;
	report.passed = report.max_relative_error < options.tolerance;
	return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)> &f, Tensor x, const GradCheckOptions &options)
{
	return finite_diff_check([&f, x]()
	{
		return f(x);
	}, std::vector<Tensor> { x }, options);
}

} // namespace drmc
