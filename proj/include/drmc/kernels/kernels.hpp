#pragma once

#include <cstddef>
#include <string_view>

/// Low-level f32 compute kernels with f64 accumulation.
///
/// Every kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
/// variant. The active table is chosen once at startup from CPUID and can be
/// overridden with DRMC_ISA=scalar|avx2 or select_isa(). Kernels that
/// vectorize across independent outputs (gemm without transposed B, axpy)
/// keep the per-output summation order and are bitwise identical across
/// ISAs; reductions along the vector axis (dot, sum, gemm with transposed B)
/// reassociate and agree to f64 rounding.
namespace drmc::kernels
{

enum class Isa
{
	scalar,
	avx2,
};

struct KernelTable
{
	Isa isa;

	/// C[m x n] (+)= op(A)[m x k] * op(B)[k x n], row-major with leading dimensions.
	void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float *a, std::size_t lda,
			const float *b, std::size_t ldb, float *c, std::size_t ldc, bool accumulate);

	double (*dot)(const float *a, const float *b, std::size_t n);

	double (*sum)(const float *x, std::size_t n);

	/// acc[i] += alpha * x[i], widened to f64.
	void (*axpy_wide)(double *acc, float alpha, const float *x, std::size_t n);
};

const KernelTable &scalar_table();
/// nullptr when the variant was not compiled in.
const KernelTable *avx2_table();

bool cpu_supports(Isa isa);

/// The table used by tensor ops.
const KernelTable &active();

/// Forces a specific variant; throws std::invalid_argument if unavailable on this CPU.
void select_isa(Isa isa);

std::string_view isa_name(Isa isa);

} // namespace drmc::kernels
