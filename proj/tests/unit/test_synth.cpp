#include <drmc/errors.hpp>
#include <drmc/synth.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

using namespace drmc;
using namespace drmc::synth;

namespace
{

struct Moments
{
	double mean = 0.0;
	double var = 0.0;
};

Moments moments(const Tensor &t)
{
	Moments m;
	const auto d = t.data();
	for (float v : d)
		m.mean += v;
	m.mean /= static_cast<double>(d.size());
	for (float v : d)
		m.var += (v - m.mean) * (v - m.mean);
	m.var /= static_cast<double>(d.size() - 1);
	return m;
}

bool bitwise_equal(const Tensor &a, const Tensor &b)
{
	if (a.shape() != b.shape())
		return false;
	const auto x = a.data();
	const auto y = b.data();
	return std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
}

CenterSpec plain_center(double drf)
{
	CenterSpec c;
	c.drf = drf;
	c.psf_sigma = 0.0;
	c.count_scale = 300.0;
	return c;
}

} // namespace

TEST(Phantom, NoEllipsoidsGivesZeroVolume)
{
	const Phantom p = generate_phantom(7, { 16, 16, 16 }, 0, 0);
	for (float v : p.full.data())
		ASSERT_EQ(v, 0.0f);
	EXPECT_EQ(std::accumulate(p.lesion_mask.begin(), p.lesion_mask.end(), 0), 0);
	EXPECT_TRUE(p.ellipsoids.empty());
}

TEST(Phantom, SameSeedIsBitwiseIdentical)
{
	const Phantom a = generate_phantom(42, { 16, 20, 24 }, 6, 2);
	const Phantom b = generate_phantom(42, { 16, 20, 24 }, 6, 2);
	EXPECT_TRUE(bitwise_equal(a.full, b.full));
	EXPECT_EQ(a.lesion_mask, b.lesion_mask);
	const Phantom c = generate_phantom(43, { 16, 20, 24 }, 6, 2);
	EXPECT_FALSE(bitwise_equal(a.full, c.full));
}

TEST(Phantom, MeanIntensityOfManyPhantomsIsInUnitInterval)
{
	double total = 0.0;
	for (std::uint64_t s = 0; s < 100; s++)
	{
		const Phantom p = generate_phantom(s, { 16, 16, 16 }, 6, 2);
		total += moments(p.full).mean;
	}
	const double mean = total / 100.0;
	EXPECT_GT(mean, 0.0);
	EXPECT_LT(mean, 1.0);
}

TEST(Phantom, NonnegativeAndLesionsMarked)
{
	for (std::uint64_t s = 0; s < 20; s++)
	{
		const Phantom p = generate_phantom(s, { 16, 16, 16 }, 6, 3);
		for (float v : p.full.data())
			ASSERT_GE(v, 0.0f);
		EXPECT_GT(std::accumulate(p.lesion_mask.begin(), p.lesion_mask.end(), 0), 0);
		// Every lesion voxel is brighter than the body background range.
		std::size_t lesions = 0;
		for (const Ellipsoid &e : p.ellipsoids)
			if (e.lesion)
			{
				lesions++;
				EXPECT_GE(e.intensity, 1.5 * 0.2 - 1e-12);
			}
		EXPECT_EQ(lesions, 3u);
	}
}

TEST(Phantom, BrainKindHasHeadAndSmallStructures)
{
	const Phantom p = generate_phantom(3, { 24, 24, 24 }, 6, 0, PhantomKind::brain);
	ASSERT_EQ(p.ellipsoids.size(), 6u);
	for (std::size_t i = 1; i < p.ellipsoids.size(); i++)
		for (double a : p.ellipsoids[i].axes)
			EXPECT_LE(a, 0.10 * 24 + 1e-12);
}

TEST(Phantom, SmallExtentIsDimensionError)
{
	EXPECT_THROW(generate_phantom(1, { 15, 16, 16 }, 3, 1), DimensionError);
	EXPECT_THROW(generate_phantom(1, { 16, 16, 0 }, 0, 0), DimensionError);
}

TEST(Degrade, HighCountsReproduceInput)
{
	const Phantom p = generate_phantom(5, { 16, 16, 16 }, 6, 2);
	CenterSpec c = plain_center(1.0);
	c.count_scale = 1e6;
	const Tensor low = degrade(p.full, c, 9);
	double err = 0.0, ref = 0.0;
	for (std::size_t i = 0; i < low.numel(); i++)
	{
		const double d = low.data()[i] - p.full.data()[i];
		err += d * d;
		ref += double(p.full.data()[i]) * p.full.data()[i];
	}
	EXPECT_LT(std::sqrt(err / ref), 0.01);
}

TEST(Degrade, ZeroInputGivesZeroOutput)
{
	const Tensor zero = Tensor::zeros( { 1, 16, 16, 16 });
	CenterSpec c = plain_center(12.0);
	c.psf_sigma = 1.0;
	const Tensor low = degrade(zero, c, 3);
	for (float v : low.data())
		ASSERT_EQ(v, 0.0f);
}

TEST(Degrade, VarianceGrowsWithDoseReduction)
{
	// 10^4 voxels of constant intensity 1.
	const Tensor one = Tensor::full( { 1, 10, 25, 40 }, 1.0f);
	double last = 0.0;
	for (double drf : { 1.0, 4.0, 12.0 })
	{
		const double var = moments(degrade(one, plain_center(drf), 11)).var;
		EXPECT_GT(var, last) << "drf " << drf;
		// Thinned Poisson variance is drf / count_scale.
		EXPECT_NEAR(var, drf / 300.0, 0.1 * drf / 300.0);
		last = var;
	}
}

TEST(Degrade, ExpectationPreservedBeforeAffine)
{
	for (float c : { 0.3f, 1.0f, 2.5f })
	{
		const Tensor v = Tensor::full( { 1, 10, 25, 40 }, c);
		CenterSpec center = plain_center(10.0);
		center.intensity_gain = 1.7;
		center.intensity_offset = 0.4;
		const Moments m = moments(degrade_counts_and_blur(v, center, 21));
		const double se = std::sqrt(m.var / 1e4);
		EXPECT_LT(std::abs(m.mean - c), 3.0 * se) << "c = " << c;
	}
}

TEST(Degrade, AffineStepAppliesGainAndOffset)
{
	const Phantom p = generate_phantom(2, { 16, 16, 16 }, 4, 1);
	CenterSpec c = plain_center(4.0);
	c.psf_sigma = 0.7;
	c.intensity_gain = 0.85;
	c.intensity_offset = 0.02;
	const Tensor pre = degrade_counts_and_blur(p.full, c, 8);
	const Tensor post = degrade(p.full, c, 8);
	for (std::size_t i = 0; i < pre.numel(); i++)
		ASSERT_FLOAT_EQ(post.data()[i], static_cast<float>(0.85 * pre.data()[i] + 0.02));
}

TEST(Degrade, DeterministicGivenSeed)
{
	const Phantom p = generate_phantom(2, { 16, 16, 16 }, 4, 1);
	const CenterSpec c = default_centers()[0];
	EXPECT_TRUE(bitwise_equal(degrade(p.full, c, 5), degrade(p.full, c, 5)));
	EXPECT_FALSE(bitwise_equal(degrade(p.full, c, 5), degrade(p.full, c, 6)));
}

TEST(Degrade, Errors)
{
	const Tensor neg = Tensor::full( { 1, 4, 4, 4 }, -0.5f);
	EXPECT_THROW(degrade(neg, plain_center(2.0), 1), DomainError);
	const Tensor ok = Tensor::full( { 1, 4, 4, 4 }, 0.5f);
	EXPECT_THROW(degrade(ok, plain_center(0.5), 1), DomainError);
	CenterSpec c = plain_center(2.0);
	c.psf_sigma = -1.0;
	EXPECT_THROW(degrade(ok, c, 1), DomainError);
	c = plain_center(2.0);
	c.count_scale = 0.0;
	EXPECT_THROW(degrade(ok, c, 1), DomainError);
}

TEST(Blur, PreservesConstantsAndMass)
{
	const Tensor one = Tensor::full( { 1, 8, 9, 10 }, 2.0f);
	const Tensor blurred = gaussian_blur(one, 1.3);
	for (float v : blurred.data())
		ASSERT_NEAR(v, 2.0f, 1e-6f);
	// An interior impulse keeps its mass and spreads symmetrically.
	std::vector<float> d(17 * 17 * 17, 0.0f);
	d[(8 * 17 + 8) * 17 + 8] = 1.0f;
	const Tensor out = gaussian_blur(Tensor::from_data( { 1, 17, 17, 17 }, d), 1.0);
	double mass = 0.0;
	for (float v : out.data())
		mass += v;
	EXPECT_NEAR(mass, 1.0, 1e-6);
	EXPECT_FLOAT_EQ(out.data()[(8 * 17 + 8) * 17 + 7], out.data()[(8 * 17 + 8) * 17 + 9]);
	EXPECT_FLOAT_EQ(out.data()[(7 * 17 + 8) * 17 + 8], out.data()[(8 * 17 + 8) * 17 + 9]);
}

TEST(Resample, ScaleOneIsBitwiseIdentity)
{
	const Phantom p = generate_phantom(4, { 16, 18, 20 }, 5, 1);
	EXPECT_TRUE(bitwise_equal(resample(p.full, 1.0), p.full));
}

TEST(Resample, ConstantStaysConstant)
{
	const Tensor c = Tensor::full( { 1, 10, 12, 14 }, 0.75f);
	for (double s : { 0.5, 0.7, 1.3, 2.0, 3.1 })
	{
		const Tensor r = resample(c, s);
		EXPECT_EQ(r.dim(1), static_cast<std::size_t>(std::round(10 * s)));
		EXPECT_EQ(r.dim(3), static_cast<std::size_t>(std::round(14 * s)));
		for (float v : r.data())
			ASSERT_FLOAT_EQ(v, 0.75f);
	}
}

TEST(Resample, SmoothBlobRoundTrip)
{
	const std::size_t n = 16;
	std::vector<float> d(n * n * n);
	for (std::size_t z = 0; z < n; z++)
		for (std::size_t y = 0; y < n; y++)
			for (std::size_t x = 0; x < n; x++)
			{
				const double r2 = std::pow(z - 7.5, 2) + std::pow(y - 7.5, 2) + std::pow(x - 7.5, 2);
				d[(z * n + y) * n + x] = static_cast<float>(std::exp(-r2 / (2.0 * 3.0 * 3.0)));
			}
	const Tensor v = Tensor::from_data( { 1, n, n, n }, d);
	const Tensor back = resample(resample(v, 2.0), 0.5);
	ASSERT_EQ(back.shape(), v.shape());
	double err = 0.0;
	for (std::size_t i = 0; i < d.size(); i++)
		err += std::pow(back.data()[i] - d[i], 2);
	EXPECT_LT(std::sqrt(err / d.size()), 0.05 * 1.0);
}

TEST(Resample, Errors)
{
	const Tensor v = Tensor::full( { 1, 4, 4, 4 }, 1.0f);
	EXPECT_THROW(resample(v, 0.1), DimensionError);
	EXPECT_THROW(resample(v, 0.0), DomainError);
	EXPECT_THROW(resample(Tensor::zeros( { 4, 4, 4 }), 1.0), DimensionError);
}

TEST(Centers, DefaultsAreValidAndMirrorTableStructure)
{
	const auto c = default_centers();
	ASSERT_EQ(c.size(), 6u);
	const double drf[4] = { 12, 4, 10, 10 };
	const double psf[4] = { 1.0, 0.6, 0.8, 0.7 };
	for (int i = 0; i < 4; i++)
	{
		EXPECT_EQ(c[i].drf, drf[i]);
		EXPECT_EQ(c[i].psf_sigma, psf[i]);
		EXPECT_FALSE(c[i].unknown);
		EXPECT_NO_THROW(validate(c[i]));
	}
	EXPECT_TRUE(c[4].unknown);
	EXPECT_EQ(c[4].phantom, PhantomKind::brain);
	EXPECT_TRUE(c[5].unknown);
	EXPECT_EQ(c[5].drf, c[0].drf);
	EXPECT_NE(c[5].psf_sigma, c[0].psf_sigma);
}

class DatasetTest : public ::testing::Test
{
protected:
	static void SetUpTestSuite()
	{
		const auto all = default_centers();
		centers_ = new std::vector<CenterSpec>(all.begin(), all.begin() + 4);
		records_ = new std::vector<SampleRecord>(build_dataset(*centers_, DatasetConfig { }));
	}
	static void TearDownTestSuite()
	{
		delete records_;
		delete centers_;
	}
	static std::vector<CenterSpec> *centers_;
	static std::vector<SampleRecord> *records_;
};

std::vector<CenterSpec> *DatasetTest::centers_ = nullptr;
std::vector<SampleRecord> *DatasetTest::records_ = nullptr;

TEST_F(DatasetTest, CountsAndOrder)
{
	ASSERT_EQ(records_->size(), 48u);
	std::set<int> ids;
	for (std::size_t i = 0; i < records_->size(); i++)
	{
		const SampleRecord &r = (*records_)[i];
		ids.insert(r.center_id);
		EXPECT_EQ(r.center_id, (*centers_)[i / 12].id);
		EXPECT_EQ(r.split, i % 12 < 8 ? Split::train : Split::test);
		EXPECT_EQ(r.low.shape(), r.full.shape());
		EXPECT_EQ(r.full.shape(), (Shape { 1, 24, 24, 24 }));
		EXPECT_EQ(r.lesion_mask.size(), 24u * 24 * 24);
	}
	EXPECT_EQ(ids.size(), 4u);
}

TEST_F(DatasetTest, NoFullVolumeSharedAcrossSplits)
{
	for (const SampleRecord &a : *records_)
		for (const SampleRecord &b : *records_)
			if (a.split == Split::train && b.split == Split::test)
				ASSERT_FALSE(bitwise_equal(a.full, b.full));
}

TEST_F(DatasetTest, CenterStatisticsDiffer)
{
	std::vector<Moments> per_center(4);
	for (const SampleRecord &r : *records_)
	{
		const Moments m = moments(r.low);
		const std::size_t c = static_cast<std::size_t>(r.center_id - 1);
		per_center[c].mean += m.mean / 12.0;
		per_center[c].var += std::sqrt(m.var) / 12.0;
	}
	for (std::size_t i = 0; i < 4; i++)
		for (std::size_t j = i + 1; j < 4; j++)
		{
			const double dm = std::abs(per_center[i].mean - per_center[j].mean) / per_center[i].mean;
			const double ds = std::abs(per_center[i].var - per_center[j].var) / per_center[i].var;
			EXPECT_GT(std::max(dm, ds), 0.01) << "centers " << i + 1 << " and " << j + 1;
		}
}

TEST_F(DatasetTest, NearestCentroidClassifierBeatsChance)
{
	// Features: mean intensity and mean absolute voxel-to-neighbor difference
	// of the low-dose volume. Centroids from train records, scored on test.
	auto features = [](const Tensor &t)
	{
		const auto d = t.data();
		double mean = 0.0, rough = 0.0;
		for (std::size_t i = 0; i < d.size(); i++)
		{
			mean += d[i];
			if ((i + 1) % 24 != 0)
				rough += std::abs(d[i + 1] - d[i]);
		}
		return std::array<double, 2> { mean / d.size(), rough / d.size() };
	};
	std::vector<std::array<double, 2>> centroid(4, { 0.0, 0.0 });
	for (const SampleRecord &r : *records_)
		if (r.split == Split::train)
		{
			const auto f = features(r.low);
			for (int k = 0; k < 2; k++)
				centroid[r.center_id - 1][k] += f[k] / 8.0;
		}
	std::size_t correct = 0, total = 0;
	for (const SampleRecord &r : *records_)
		if (r.split == Split::test)
		{
			const auto f = features(r.low);
			std::size_t best = 0;
			double best_d = INFINITY;
			for (std::size_t c = 0; c < 4; c++)
			{
				double dist = 0.0;
				for (int k = 0; k < 2; k++)
					dist += std::pow((f[k] - centroid[c][k]) / centroid[c][k], 2);
				if (dist < best_d)
				{
					best_d = dist;
					best = c;
				}
			}
			correct += best + 1 == static_cast<std::size_t>(r.center_id);
			total++;
		}
	EXPECT_GT(static_cast<double>(correct) / total, 0.25);
}

TEST_F(DatasetTest, RebuildIsBitwiseIdentical)
{
	const auto again = build_dataset(*centers_, DatasetConfig { });
	ASSERT_EQ(again.size(), records_->size());
	for (std::size_t i = 0; i < again.size(); i++)
	{
		EXPECT_TRUE(bitwise_equal(again[i].low, (*records_)[i].low));
		EXPECT_TRUE(bitwise_equal(again[i].full, (*records_)[i].full));
		EXPECT_EQ(again[i].lesion_mask, (*records_)[i].lesion_mask);
	}
	const SampleRecord one = make_record((*centers_)[2], Split::test, 3, DatasetConfig { });
	EXPECT_TRUE(bitwise_equal(one.low, (*records_)[2 * 12 + 8 + 3].low));
}

TEST(Dataset, NoCentersIsUsageError)
{
	EXPECT_THROW(build_dataset( { }, DatasetConfig { }), UsageError);
}
