#include <drmc/kernels/kernels.hpp>

namespace drmc::kernels
{
namespace
{

void gemm_scalar(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float *a, std::size_t lda,
		const float *b, std::size_t ldb, float *c, std::size_t ldc, bool accumulate)
{
	for (std::size_t i = 0; i < m; i++)
		for (std::size_t j = 0; j < n; j++)
		{
			double s = 0.0;
			for (std::size_t p = 0; p < k; p++)
			{
				const double av = trans_a ? a[p * lda + i] : a[i * lda + p];
				const double bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
				s += av * bv;
			}
			float &out = c[i * ldc + j];
			out = accumulate ? static_cast<float>(static_cast<double>(out) + s) : static_cast<float>(s);
		}
}

double dot_scalar(const float *a, const float *b, std::size_t n)
{
	double s = 0.0;
	for (std::size_t i = 0; i < n; i++)
		s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
	return s;
}

double sum_scalar(const float *x, std::size_t n)
{
	double s = 0.0;
	for (std::size_t i = 0; i < n; i++)
		s += x[i];
	return s;
}

void axpy_wide_scalar(double *acc, float alpha, const float *x, std::size_t n)
{
	const double a = alpha;
	for (std::size_t i = 0; i < n; i++)
		acc[i] += a * static_cast<double>(x[i]);
}

const KernelTable table { Isa::scalar, gemm_scalar, dot_scalar, sum_scalar, axpy_wide_scalar };

} // namespace

const KernelTable &scalar_table()
{
	return table;
}

} // namespace drmc::kernels
