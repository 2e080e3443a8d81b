#pragma once

#include <drmc/tensor.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace drmc
{

struct GradCheckOptions
{
	double step = 1e-3;
	double tolerance = 1e-3;
	/// Seeds the output projection for non-scalar f and entry sampling.
	std::uint64_t seed = 0x5eed;
	/// Entries per input to probe; 0 checks every entry.
	std::size_t max_entries_per_input = 0;
};

struct GradCheckReport
{
	double max_relative_error = 0.0;
	double mean_relative_error = 0.0;
	std::size_t entries_checked = 0;
	bool passed = false;
	// Location and values of the worst entry.
	std::size_t worst_input = 0;
	std::size_t worst_entry = 0;
	double worst_analytic = 0.0;
	double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients with central differences.
///
/// Non-scalar outputs are reduced to sum(r * f) with a fixed random r, and the
/// difference quotient divides by the perturbation actually representable in
/// f32. The relative error of an entry is |a - n| / max(|a|, |n|, rms), where
/// rms is the root-mean-square numeric gradient over every checked entry of
/// every input. Entries far below the overall gradient scale are thus judged
/// against that scale rather than against f32 round-off in the forward pass.
GradCheckReport finite_diff_check(const std::function<Tensor()> &f, std::vector<Tensor> inputs, const GradCheckOptions &options = {});

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)> &f, Tensor x, const GradCheckOptions &options = {});

} // namespace drmc
