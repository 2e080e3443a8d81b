#include <drmc/errors.hpp>
#include <drmc/gradcheck.hpp>
#include <drmc/ops.hpp>

#include <test_util.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace drmc;
using drmc::testing::bitwise_equal;
using drmc::testing::random_tensor;

namespace
{

std::vector<float> values(const Tensor &t)
{
	return std::vector<float>(t.data().begin(), t.data().end());
}

void expect_gradcheck(const std::function<Tensor()> &f, std::vector<Tensor> inputs, double tol = 1e-3)
{
	GradCheckOptions opt;
	opt.tolerance = tol;
	const GradCheckReport r = finite_diff_check(f, std::move(inputs), opt);
	EXPECT_TRUE(r.passed) << "max rel " << r.max_relative_error << " mean rel " << r.mean_relative_error;
	EXPECT_GT(r.entries_checked, 0u);
}

} // namespace

// ---- elementwise -----------------------------------------------------------

TEST(Elementwise, ReluClampsNegatives)
{
	Tensor x = Tensor::from_data( { 3 }, { -1.0f, 0.5f, 2.0f });
	EXPECT_EQ(values(ops::relu(x)), (std::vector<float> { 0.0f, 0.5f, 2.0f }));
}

TEST(Elementwise, ReluOfNegativesIsExactlyZero)
{
	Tensor x = random_tensor( { 257 }, 7);
	Tensor y = ops::relu(x);
	for (std::size_t i = 0; i < x.numel(); i++)
		if (x.data()[i] < 0.0f)
		{
			const float v = y.data()[i];
			EXPECT_EQ(std::signbit(v), false);
			EXPECT_EQ(v, 0.0f);
		}
}

TEST(Elementwise, AddZeroIsBitwiseIdentity)
{
	Tensor x = random_tensor( { 4, 5 }, 1);
	Tensor y = ops::add(x, Tensor::zeros( { 4, 5 }));
	EXPECT_TRUE(bitwise_equal(x.data(), y.data()));
}

TEST(Elementwise, BroadcastAlongLeadingDimension)
{
	Tensor a = Tensor::from_data( { 2, 3 }, { 1, 2, 3, 4, 5, 6 }, true);
	Tensor b = Tensor::from_data( { 3 }, { 10, 20, 30 }, true);
	Tensor y = ops::add(a, b);
	EXPECT_EQ(values(y), (std::vector<float> { 11, 22, 33, 14, 25, 36 }));
	backward(ops::sum(y));
	EXPECT_EQ(std::vector<float>(b.grad().begin(), b.grad().end()), (std::vector<float> { 2, 2, 2 }));
}

TEST(Elementwise, ShapeMismatchNamesBothShapes)
{
	try
	{
		ops::add(Tensor::zeros( { 2, 3 }), Tensor::zeros( { 2 }));
		FAIL() << "expected DimensionError";
	} catch (const DimensionError &e)
	{
		const std::string msg = e.what();
		EXPECT_NE(msg.find("[2x3]"), std::string::npos);
		EXPECT_NE(msg.find("[2]"), std::string::npos);
	}
}

TEST(Elementwise, GeluGradientMatchesFiniteDifference)
{
	Tensor x = random_tensor( { 64 }, 11);
	expect_gradcheck([&]
	{
		return ops::gelu(x);
	}, { x });
}

TEST(Elementwise, BinaryAndScaleGradients)
{
	Tensor a = random_tensor( { 3, 4 }, 12);
	Tensor b = random_tensor( { 4 }, 13);
	expect_gradcheck([&]
	{
		return ops::scale(ops::sub(ops::mul(a, b), ops::add(a, b)), 1.5f);
	}, { a, b });
}

TEST(Elementwise, ExpAndScalarProductGradients)
{
	Tensor a = random_tensor( { 6 }, 14);
	Tensor s = Tensor::scalar(0.3f);
	expect_gradcheck([&]
	{
		return ops::mul_scalar(ops::exp(a), ops::exp(s));
	}, { a, s });
}

// ---- matmul -----------------------------------------------------------------

TEST(Matmul, IdentityLeavesOperandUnchanged)
{
	Tensor eye = Tensor::from_data( { 3, 3 }, { 1, 0, 0, 0, 1, 0, 0, 0, 1 });
	Tensor b = random_tensor( { 3, 3 }, 2);
	EXPECT_TRUE(bitwise_equal(ops::matmul(eye, b).data(), b.data()));
}

TEST(Matmul, HandArithmetic)
{
	Tensor a = Tensor::from_data( { 2, 2 }, { 1, 2, 3, 4 });
	Tensor b = Tensor::from_data( { 2, 1 }, { 1, 1 });
	Tensor c = ops::matmul(a, b);
	EXPECT_EQ(c.shape(), (Shape { 2, 1 }));
	EXPECT_EQ(values(c), (std::vector<float> { 3, 7 }));
}

TEST(Matmul, InnerDimensionMismatchThrows)
{
	EXPECT_THROW(ops::matmul(Tensor::zeros( { 2, 3 }), Tensor::zeros( { 4, 2 })), DimensionError);
	EXPECT_THROW(ops::matmul_nt(Tensor::zeros( { 2, 3 }), Tensor::zeros( { 2, 4 })), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifference)
{
	Tensor a = random_tensor( { 4, 5 }, 3);
	Tensor b = random_tensor( { 5, 3 }, 4);
	expect_gradcheck([&]
	{
		return ops::matmul(a, b);
	}, { a, b });
}

TEST(Matmul, BatchedAndTransposedVariants)
{
	Tensor a = random_tensor( { 2, 3, 4 }, 5);
	Tensor b = random_tensor( { 4, 2 }, 6);
	Tensor c = random_tensor( { 3, 4 }, 7);
	Tensor d = random_tensor( { 5, 4 }, 8);
	expect_gradcheck([&]
	{
		return ops::matmul(a, b);
	}, { a, b });
	expect_gradcheck([&]
	{
		return ops::matmul_nt(c, d);
	}, { c, d });
	expect_gradcheck([&]
	{
		return ops::transpose(c);
	}, { c });
	const auto x = values(ops::matmul_nt(c, d));
	const auto y = values(ops::matmul(c, ops::transpose(d)));
	for (std::size_t i = 0; i < x.size(); i++)
		EXPECT_NEAR(x[i], y[i], 1e-6);
}

// ---- conv3d -----------------------------------------------------------------

TEST(Conv3d, PointwiseUnitKernelIsIdentity)
{
	Tensor x = random_tensor( { 1, 4, 5, 6 }, 9);
	Tensor w = Tensor::full( { 1, 1, 1, 1, 1 }, 1.0f);
	Tensor b = Tensor::zeros( { 1 });
	EXPECT_TRUE(bitwise_equal(ops::conv3d(x, w, b).data(), x.data()));
}

TEST(Conv3d, ZeroKernelGivesConstantBias)
{
	Tensor x = random_tensor( { 2, 4, 4, 4 }, 10);
	Tensor w = Tensor::zeros( { 3, 2, 3, 3, 3 });
	Tensor b = Tensor::from_data( { 3 }, { 0.25f, -1.5f, 2.0f });
	Tensor y = ops::conv3d(x, w, b, { 1, 1, 1 });
	ASSERT_EQ(y.shape(), (Shape { 3, 4, 4, 4 }));
	for (std::size_t c = 0; c < 3; c++)
		for (std::size_t i = 0; i < 64; i++)
			EXPECT_EQ(y.data()[c * 64 + i], b.data()[c]);
}

TEST(Conv3d, SamePaddingPreservesSpatialSizeAndStrideShrinks)
{
	Tensor x = random_tensor( { 2, 5, 6, 7 }, 11);
	Tensor w = random_tensor( { 2, 1, 3, 3, 3 }, 12);
	EXPECT_EQ(ops::conv3d(x, w, Tensor(), { 1, 1, 2 }).shape(), (Shape { 2, 5, 6, 7 }));
	EXPECT_EQ(ops::conv3d(x, w, Tensor(), { 2, 1, 2 }).shape(), (Shape { 2, 3, 3, 4 }));
}

TEST(Conv3d, DirectLoopOracle)
{
	// Independent naive cross-correlation with explicit bounds checks.
	Tensor x = random_tensor( { 2, 3, 4, 5 }, 13);
	Tensor w = random_tensor( { 3, 2, 3, 3, 3 }, 14);
	Tensor b = random_tensor( { 3 }, 15);
	Tensor y = ops::conv3d(x, w, b, { 1, 1, 1 });
	const auto xv = x.data(), wv = w.data();
	for (int co = 0; co < 3; co++)
		for (int z = 0; z < 3; z++)
			for (int r = 0; r < 4; r++)
				for (int c = 0; c < 5; c++)
				{
					double s = b.data()[co];
					for (int ci = 0; ci < 2; ci++)
						for (int a = -1; a <= 1; a++)
							for (int bb = -1; bb <= 1; bb++)
								for (int cc = -1; cc <= 1; cc++)
								{
									const int zz = z + a, rr = r + bb, col = c + cc;
									if (zz < 0 || zz >= 3 || rr < 0 || rr >= 4 || col < 0 || col >= 5)
										continue;
									s += double(wv[(((co * 2 + ci) * 3 + a + 1) * 3 + bb + 1) * 3 + cc + 1]) * xv[((ci * 3 + zz) * 4 + rr) * 5 + col];
								}
					EXPECT_NEAR(y.data()[((co * 3 + z) * 4 + r) * 5 + c], s, 1e-5);
				}
}

TEST(Conv3d, ChannelsNotDivisibleByGroupsIsConfigError)
{
	EXPECT_THROW(ops::conv3d(Tensor::zeros( { 3, 4, 4, 4 }), Tensor::zeros( { 3, 1, 3, 3, 3 }), Tensor(), { 1, 1, 2 }), ConfigError);
	EXPECT_THROW(ops::conv3d(Tensor::zeros( { 2, 4, 4, 4 }), Tensor::zeros( { 2, 2, 2, 2, 2 }), Tensor()), ConfigError);
}

TEST(Conv3d, DepthwiseGradientMatchesFiniteDifference)
{
	Tensor x = random_tensor( { 2, 4, 4, 4 }, 16);
	Tensor w = random_tensor( { 2, 1, 3, 3, 3 }, 17);
	Tensor b = random_tensor( { 2 }, 18);
	expect_gradcheck([&]
	{
		return ops::conv3d(x, w, b, { 1, 1, 2 });
	}, { x, w, b });
}

TEST(Conv3d, DenseStridedAndPointwiseGradients)
{
	Tensor x = random_tensor( { 2, 5, 4, 5 }, 19);
	Tensor w = random_tensor( { 3, 2, 3, 3, 3 }, 20);
	Tensor p = random_tensor( { 4, 2, 1, 1, 1 }, 21);
	Tensor pb = random_tensor( { 4 }, 22);
	expect_gradcheck([&]
	{
		return ops::conv3d(x, w, Tensor(), { 2, 1, 1 });
	}, { x, w });
	expect_gradcheck([&]
	{
		return ops::conv3d(x, p, pb);
	}, { x, p, pb });
}

// ---- gap ----------------------------------------------------------------------

TEST(Gap, ConstantVolume)
{
	Tensor x = Tensor::full( { 3, 2, 2, 2 }, 0.7f);
	EXPECT_EQ(values(ops::gap(x)), (std::vector<float> { 0.7f, 0.7f, 0.7f }));
}

TEST(Gap, ArithmeticMean)
{
	Tensor x = Tensor::from_data( { 1, 2, 1, 2 }, { 0, 2, 2, 0 });
	EXPECT_EQ(ops::gap(x).item(), 1.0f);
}

TEST(Gap, EmptySpatialExtentThrows)
{
	EXPECT_THROW(ops::gap(Tensor::zeros( { 2, 0, 3, 3 })), DimensionError);
}

TEST(Gap, GradientMatchesFiniteDifference)
{
	Tensor x = random_tensor( { 3, 2, 2, 2 }, 23);
	expect_gradcheck([&]
	{
		return ops::gap(x);
	}, { x });
}

// ---- softmax ------------------------------------------------------------------

TEST(Softmax, UniformForEqualLogits)
{
	const auto y = values(ops::softmax(Tensor::zeros( { 3 }), 0));
	for (float v : y)
		EXPECT_FLOAT_EQ(v, 1.0f / 3.0f);
}

TEST(Softmax, LargeLogitsDoNotOverflow)
{
	const auto y = values(ops::softmax(Tensor::from_data( { 2 }, { 1000.0f, 0.0f }), 0));
	EXPECT_EQ(y[0], 1.0f);
	EXPECT_GE(y[1], 0.0f);
	EXPECT_LT(y[1], 1e-30f);
}

TEST(Softmax, NaNInputIsNumericError)
{
	EXPECT_THROW(ops::softmax(Tensor::from_data( { 2 }, { 0.0f, std::nanf("") }), 0), NumericError);
}

TEST(Softmax, RowsSumToOneProperty)
{
	for (std::uint64_t seed = 0; seed < 50; seed++)
	{
		std::mt19937_64 rng(seed);
		const std::size_t rows = 1 + rng() % 5, cols = 1 + rng() % 9;
		Tensor x = random_tensor( { rows, cols }, seed, false, -20.0f, 20.0f);
		for (std::size_t axis : { 0u, 1u })
		{
			Tensor y = ops::softmax(x, axis);
			const std::size_t outer = axis == 0 ? cols : rows;
			const std::size_t len = axis == 0 ? rows : cols;
			for (std::size_t o = 0; o < outer; o++)
			{
				double s = 0.0;
				for (std::size_t k = 0; k < len; k++)
				{
					const float v = axis == 0 ? y.data()[k * cols + o] : y.data()[o * cols + k];
					EXPECT_GE(v, 0.0f);
					s += v;
				}
				EXPECT_NEAR(s, 1.0, 1e-6);
			}
		}
	}
}

TEST(Softmax, GradientMatchesFiniteDifference)
{
	Tensor x = random_tensor( { 8 }, 24);
	expect_gradcheck([&]
	{
		return ops::softmax(x, 0);
	}, { x });
	Tensor m = random_tensor( { 3, 4 }, 25);
	expect_gradcheck([&]
	{
		return ops::softmax(m, 1);
	}, { m });
}

TEST(TopK, KeepsLargestPairAndSoftmaxesIt)
{
	const auto w = values(ops::topk_softmax(Tensor::from_data( { 3 }, { 0.1f, 0.3f, 0.2f }), 2));
	const double e3 = std::exp(0.3), e2 = std::exp(0.2);
	EXPECT_EQ(w[0], 0.0f);
	EXPECT_NEAR(w[1], e3 / (e3 + e2), 1e-6);
	EXPECT_NEAR(w[2], e2 / (e3 + e2), 1e-6);
	EXPECT_NEAR(w[1], 0.525, 1e-3);
}

TEST(TopK, TiesPreferLowerIndexAndGradientMatches)
{
	const auto w = values(ops::topk_softmax(Tensor::from_data( { 4 }, { 1.0f, 1.0f, 1.0f, 0.0f }), 2));
	EXPECT_GT(w[0], 0.0f);
	EXPECT_GT(w[1], 0.0f);
	EXPECT_EQ(w[2], 0.0f);
	Tensor x = Tensor::from_data( { 4 }, { 0.5f, -0.7f, 0.1f, 0.9f });
	expect_gradcheck([&]
	{
		return ops::topk_softmax(x, 2);
	}, { x });
}

// ---- layernorm ----------------------------------------------------------------

TEST(Layernorm, ConstantChannelVectorNormalizesToZero)
{
	Tensor x = Tensor::full( { 4, 3 }, 2.5f);
	const auto y = values(ops::layernorm(x, Tensor::full( { 4 }, 1.0f), Tensor::zeros( { 4 })));
	for (float v : y)
		EXPECT_EQ(v, 0.0f);
}

TEST(Layernorm, AlreadyNormalizedInputPassesThrough)
{
	Tensor x = Tensor::from_data( { 2, 3 }, { 1, 1, 1, -1, -1, -1 });
	const auto y = values(ops::layernorm(x, Tensor::full( { 2 }, 1.0f), Tensor::zeros( { 2 })));
	for (std::size_t j = 0; j < 3; j++)
	{
		EXPECT_NEAR(y[j], 1.0f, 1e-5);
		EXPECT_NEAR(y[3 + j], -1.0f, 1e-5);
	}
}

TEST(Layernorm, SingleChannelIsHandledByEps)
{
	const auto y = values(ops::layernorm(Tensor::full( { 1, 5 }, 3.0f), Tensor::full( { 1 }, 1.0f), Tensor::zeros( { 1 })));
	for (float v : y)
		EXPECT_EQ(v, 0.0f);
}

TEST(Layernorm, GradientMatchesFiniteDifference)
{
	Tensor x = random_tensor( { 4, 6 }, 26);
	Tensor g = random_tensor( { 4 }, 27, false, 0.5f, 1.5f);
	Tensor o = random_tensor( { 4 }, 28);
	expect_gradcheck([&]
	{
		return ops::layernorm(x, g, o);
	}, { x, g, o });
}

// ---- concat -------------------------------------------------------------------

TEST(Concat, JoinsAlongAxis)
{
	Tensor y = ops::concat(Tensor::from_data( { 2 }, { 1, 2 }), Tensor::from_data( { 1 }, { 3 }), 0);
	EXPECT_EQ(values(y), (std::vector<float> { 1, 2, 3 }));
}

TEST(Concat, EmptyOperandIsIdentity)
{
	Tensor x = random_tensor( { 5 }, 29);
	EXPECT_TRUE(bitwise_equal(ops::concat(x, Tensor::zeros( { 0 }), 0).data(), x.data()));
}

TEST(Concat, NonAxisMismatchThrows)
{
	EXPECT_THROW(ops::concat(Tensor::zeros( { 2, 3 }), Tensor::zeros( { 3, 2 }), 0), DimensionError);
}

TEST(Concat, BackwardSplitsUpstreamGradientExactly)
{
	Tensor a = random_tensor( { 2, 3 }, 30, true);
	Tensor b = random_tensor( { 2, 2 }, 31, true);
	Tensor seed = random_tensor( { 2, 5 }, 32);
	backward(ops::concat(a, b, 1), seed.data());
	const auto s = seed.data();
	for (std::size_t r = 0; r < 2; r++)
	{
		for (std::size_t c = 0; c < 3; c++)
			EXPECT_EQ(a.grad()[r * 3 + c], s[r * 5 + c]);
		for (std::size_t c = 0; c < 2; c++)
			EXPECT_EQ(b.grad()[r * 2 + c], s[r * 5 + 3 + c]);
	}
}

// ---- charbonnier --------------------------------------------------------------

TEST(Charbonnier, ZeroResidualGivesEps)
{
	Tensor y = random_tensor( { 2, 3 }, 33);
	EXPECT_EQ(ops::charbonnier(y, y).item(), 1e-3f);
}

TEST(Charbonnier, PythagoreanTriple)
{
	Tensor y = Tensor::full( { 8 }, 3e-3f);
	Tensor h = Tensor::zeros( { 8 });
	EXPECT_NEAR(ops::charbonnier(y, h, 4e-3f).item_precise(), 5e-3, 1e-9);
}

TEST(Charbonnier, ShapeMismatchThrows)
{
	EXPECT_THROW(ops::charbonnier(Tensor::zeros( { 2 }), Tensor::zeros( { 3 })), DimensionError);
}

TEST(Charbonnier, GradientMatchesFiniteDifference)
{
	Tensor y = random_tensor( { 2, 4, 4, 4 }, 34);
	Tensor h = random_tensor( { 2, 4, 4, 4 }, 35);
	expect_gradcheck([&]
	{
		return ops::charbonnier(y, h);
	}, { y, h });
}

TEST(Misc, NormalizeRowsSelectReshapeGradients)
{
	Tensor x = random_tensor( { 3, 7 }, 36);
	expect_gradcheck([&]
	{
		return ops::l2_normalize_rows(x);
	}, { x });
	expect_gradcheck([&]
	{
		return ops::mul(ops::reshape(x, { 7, 3 }), ops::reshape(x, { 7, 3 }));
	}, { x });
	expect_gradcheck([&]
	{
		return ops::mul_scalar(x, ops::select(x, 4));
	}, { x });
}
