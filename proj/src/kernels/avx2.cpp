// Compiled with -mavx2 -mfma; only reached through the dispatch table after a CPUID check.
#include <drmc/kernels/kernels.hpp>

#include <immintrin.h>

namespace drmc::kernels
{
namespace
{

inline double hsum(__m256d v)
{
	const __m128d lo = _mm256_castpd256_pd128(v);
	const __m128d hi = _mm256_extractf128_pd(v, 1);
	const __m128d s = _mm_add_pd(lo, hi);
	return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline void load8_wide(const float *p, __m256d &lo, __m256d &hi)
{
	const __m256 v = _mm256_loadu_ps(p);
	lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
	hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
}

inline void store8_narrow(float *p, __m256d lo, __m256d hi, bool accumulate)
{
	if (accumulate)
	{
		__m256d clo, chi;
		load8_wide(p, clo, chi);
		lo = _mm256_add_pd(clo, lo);
		hi = _mm256_add_pd(chi, hi);
	}
	const __m128 flo = _mm256_cvtpd_ps(lo);
	const __m128 fhi = _mm256_cvtpd_ps(hi);
	_mm256_storeu_ps(p, _mm256_set_m128(fhi, flo));
}

double dot_avx2(const float *a, const float *b, std::size_t n)
{
	__m256d acc0 = _mm256_setzero_pd();
	__m256d acc1 = _mm256_setzero_pd();
	__m256d acc2 = _mm256_setzero_pd();
	__m256d acc3 = _mm256_setzero_pd();
	std::size_t i = 0;
	for (; i + 16 <= n; i += 16)
	{
		__m256d a0, a1, a2, a3, b0, b1, b2, b3;
		load8_wide(a + i, a0, a1);
		load8_wide(a + i + 8, a2, a3);
		load8_wide(b + i, b0, b1);
		load8_wide(b + i + 8, b2, b3);
		acc0 = _mm256_fmadd_pd(a0, b0, acc0);
		acc1 = _mm256_fmadd_pd(a1, b1, acc1);
		acc2 = _mm256_fmadd_pd(a2, b2, acc2);
		acc3 = _mm256_fmadd_pd(a3, b3, acc3);
	}
	double s = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
	for (; i < n; i++)
		s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
	return s;
}

double sum_avx2(const float *x, std::size_t n)
{
	__m256d acc0 = _mm256_setzero_pd();
	__m256d acc1 = _mm256_setzero_pd();
	std::size_t i = 0;
	for (; i + 8 <= n; i += 8)
	{
		__m256d lo, hi;
		load8_wide(x + i, lo, hi);
		acc0 = _mm256_add_pd(acc0, lo);
		acc1 = _mm256_add_pd(acc1, hi);
	}
	double s = hsum(_mm256_add_pd(acc0, acc1));
	for (; i < n; i++)
		s += x[i];
	return s;
}

void axpy_wide_avx2(double *acc, float alpha, const float *x, std::size_t n)
{
	const __m256d a = _mm256_set1_pd(alpha);
	std::size_t i = 0;
	for (; i + 8 <= n; i += 8)
	{
		__m256d lo, hi;
		load8_wide(x + i, lo, hi);
		_mm256_storeu_pd(acc + i, _mm256_fmadd_pd(a, lo, _mm256_loadu_pd(acc + i)));
		_mm256_storeu_pd(acc + i + 4, _mm256_fmadd_pd(a, hi, _mm256_loadu_pd(acc + i + 4)));
	}
	const double ad = alpha;
	for (; i < n; i++)
		acc[i] += ad * static_cast<double>(x[i]);
}

// op(B) not transposed: vectorize along n, four rows of C per pass. Each output
// accumulates over p in order, so results match the scalar kernel bit for bit.
void gemm_rows_avx2(bool trans_a, std::size_t m, std::size_t n, std::size_t k, const float *a, std::size_t lda, const float *b,
		std::size_t ldb, float *c, std::size_t ldc, bool accumulate)
{
	auto a_at = [&](std::size_t i, std::size_t p) -> double
	{
		return trans_a ? a[p * lda + i] : a[i * lda + p];
	};

	std::size_t i = 0;
	for (; i + 4 <= m; i += 4)
	{
		std::size_t j = 0;
		for (; j + 8 <= n; j += 8)
		{
			__m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
			__m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
			__m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
			__m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
			for (std::size_t p = 0; p < k; p++)
			{
				__m256d blo, bhi;
				load8_wide(b + p * ldb + j, blo, bhi);
				const __m256d a0 = _mm256_set1_pd(a_at(i + 0, p));
				const __m256d a1 = _mm256_set1_pd(a_at(i + 1, p));
				const __m256d a2 = _mm256_set1_pd(a_at(i + 2, p));
				const __m256d a3 = _mm256_set1_pd(a_at(i + 3, p));
				c00 = _mm256_fmadd_pd(a0, blo, c00);
				c01 = _mm256_fmadd_pd(a0, bhi, c01);
				c10 = _mm256_fmadd_pd(a1, blo, c10);
				c11 = _mm256_fmadd_pd(a1, bhi, c11);
				c20 = _mm256_fmadd_pd(a2, blo, c20);
				c21 = _mm256_fmadd_pd(a2, bhi, c21);
				c30 = _mm256_fmadd_pd(a3, blo, c30);
				c31 = _mm256_fmadd_pd(a3, bhi, c31);
			}
			store8_narrow(c + (i + 0) * ldc + j, c00, c01, accumulate);
			store8_narrow(c + (i + 1) * ldc + j, c10, c11, accumulate);
			store8_narrow(c + (i + 2) * ldc + j, c20, c21, accumulate);
			store8_narrow(c + (i + 3) * ldc + j, c30, c31, accumulate);
		}
		for (; j < n; j++)
			for (std::size_t r = i; r < i + 4; r++)
			{
				double s = 0.0;
				for (std::size_t p = 0; p < k; p++)
					s += a_at(r, p) * static_cast<double>(b[p * ldb + j]);
				float &out = c[r * ldc + j];
				out = accumulate ? static_cast<float>(static_cast<double>(out) + s) : static_cast<float>(s);
			}
	}
	for (; i < m; i++)
	{
		std::size_t j = 0;
		for (; j + 8 <= n; j += 8)
		{
			__m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
			for (std::size_t p = 0; p < k; p++)
			{
				__m256d blo, bhi;
				load8_wide(b + p * ldb + j, blo, bhi);
				const __m256d av = _mm256_set1_pd(a_at(i, p));
				c0 = _mm256_fmadd_pd(av, blo, c0);
				c1 = _mm256_fmadd_pd(av, bhi, c1);
			}
			store8_narrow(c + i * ldc + j, c0, c1, accumulate);
		}
		for (; j < n; j++)
		{
			double s = 0.0;
			for (std::size_t p = 0; p < k; p++)
				s += a_at(i, p) * static_cast<double>(b[p * ldb + j]);
			float &out = c[i * ldc + j];
			out = accumulate ? static_cast<float>(static_cast<double>(out) + s) : static_cast<float>(s);
		}
	}
}

void gemm_avx2(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float *a, std::size_t lda,
		const float *b, std::size_t ldb, float *c, std::size_t ldc, bool accumulate)
{
	if (!trans_b)
	{
		gemm_rows_avx2(trans_a, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
		return;
	}
	if (!trans_a)
	{
		for (std::size_t i = 0; i < m; i++)
			for (std::size_t j = 0; j < n; j++)
			{
				const double s = dot_avx2(a + i * lda, b + j * ldb, k);
				float &out = c[i * ldc + j];
				out = accumulate ? static_cast<float>(static_cast<double>(out) + s) : static_cast<float>(s);
			}
		return;
	}
	scalar_table().gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

const KernelTable table { Isa::avx2, gemm_avx2, dot_avx2, sum_avx2, axpy_wide_avx2 };

} // namespace

const KernelTable *avx2_table()
{
	return &table;
}

} // namespace drmc::kernels
