#pragma once

#include <drmc/tensor.hpp>

#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

namespace drmc::testing
{

inline std::vector<float> uniform_values(std::size_t n, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f)
{
	std::mt19937_64 rng(seed);
	std::uniform_real_distribution<float> dist(lo, hi);
	std::vector<float> v(n);
	for (float &x : v)
		x = dist(rng);
	return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false, float lo = -1.0f, float hi = 1.0f)
{
	const std::size_t n = shape_numel(shape);
	return Tensor::from_data(std::move(shape), uniform_values(n, seed, lo, hi), requires_grad);
}

inline bool bitwise_equal(std::span<const float> a, std::span<const float> b)
{
	return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

} // namespace drmc::testing
