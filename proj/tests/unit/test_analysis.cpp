#include <drmc/analysis.hpp>
#include <drmc/errors.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace drmc;
using namespace drmc::analysis;
using model::BankKind;
using model::GateKind;

namespace
{

Tensor random_volume(std::size_t n, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f)
{
	std::mt19937 rng(static_cast<std::uint32_t>(seed));
	std::uniform_real_distribution<float> u(lo, hi);
	std::vector<float> v(n * n * n);
	for (float &x : v)
		x = u(rng);
	return Tensor::from_data( { 1, n, n, n }, std::move(v));
}

Tensor map(const Tensor &t, float (*f)(float, std::size_t))
{
	std::vector<float> v(t.data().begin(), t.data().end());
	for (std::size_t i = 0; i < v.size(); i++)
		v[i] = f(v[i], i);
	return Tensor::from_data(t.shape(), std::move(v));
}

} // namespace

TEST(Psnr, IdenticalVolumesGiveInfinity)
{
	const Tensor a = random_volume(6, 1);
	EXPECT_EQ(psnr(a, a, 1.0), kInfinitePsnr);
	EXPECT_EQ(psnr(a, a), kInfinitePsnr);
}

TEST(Psnr, HandArithmetic)
{
	// Every voxel off by 0.1: MSE 0.01, peak 1 -> 20 dB.
	const Tensor a = Tensor::full( { 1, 4, 4, 4 }, 0.5f);
	const Tensor b = Tensor::full( { 1, 4, 4, 4 }, 0.4f);
	EXPECT_NEAR(psnr(a, b, 1.0), 20.0, 1e-5);
	EXPECT_NEAR(psnr(a, b, 2.0), 20.0 + 20.0 * std::log10(2.0), 1e-5);
}

TEST(Psnr, ShiftInvariantAndSymmetric)
{
	const Tensor a = random_volume(6, 2);
	const Tensor b = random_volume(6, 3);
	const Tensor a2 = map(a, [](float v, std::size_t)
	{	return v + 0.25f;});
	const Tensor b2 = map(b, [](float v, std::size_t)
	{	return v + 0.25f;});
	EXPECT_NEAR(psnr(a2, b2, 1.0), psnr(a, b, 1.0), 1e-4);
	EXPECT_EQ(psnr(a, b, 1.0), psnr(b, a, 1.0));
}

TEST(Psnr, Errors)
{
	EXPECT_THROW(psnr(random_volume(4, 1), random_volume(5, 1), 1.0), DimensionError);
	EXPECT_THROW(psnr(random_volume(4, 1), random_volume(4, 2), 0.0), DomainError);
}

TEST(LesionBias, ExactEstimateHasZeroBias)
{
	const Tensor full = random_volume(6, 4, 0.5f, 2.0f);
	std::vector<std::uint8_t> mask(full.numel(), 0);
	mask[7] = mask[40] = mask[41] = 1;
	const LesionBias b = lesion_bias(full, full, mask);
	EXPECT_TRUE(b.has_lesion);
	EXPECT_EQ(b.b_mean, 0.0);
	EXPECT_EQ(b.b_max, 0.0);
}

TEST(LesionBias, ScalingGivesRelativeBias)
{
	const Tensor full = random_volume(6, 5, 0.5f, 2.0f);
	std::vector<std::uint8_t> mask(full.numel(), 0);
	for (std::size_t i = 10; i < 30; i++)
		mask[i] = 1;
	std::vector<float> e(full.data().begin(), full.data().end());
	for (std::size_t i = 0; i < e.size(); i++)
		if (mask[i])
			e[i] = static_cast<float>(1.1 * e[i]);
	const LesionBias b = lesion_bias(Tensor::from_data(full.shape(), e), full, mask);
	EXPECT_NEAR(b.b_mean, 0.1, 1e-6);
	EXPECT_NEAR(b.b_max, 0.1, 1e-6);
}

TEST(LesionBias, RandomPerturbationMatchesTwoPassOracle)
{
	const Tensor full = random_volume(8, 6, 0.2f, 1.5f);
	const Tensor est = random_volume(8, 7, 0.2f, 1.5f);
	std::mt19937 rng(8);
	std::vector<std::uint8_t> mask(full.numel());
	for (auto &m : mask)
		m = rng() % 5 == 0;
	// Oracle: collect masked values first, then reduce.
	std::vector<double> fe, ff;
	for (std::size_t i = 0; i < mask.size(); i++)
		if (mask[i])
		{
			fe.push_back(est.data()[i]);
			ff.push_back(full.data()[i]);
		}
	double me = 0, mf = 0, xe = 0, xf = 0;
	for (std::size_t k = 0; k < fe.size(); k++)
	{
		me += fe[k] / fe.size();
		mf += ff[k] / ff.size();
		xe = std::max(xe, fe[k]);
		xf = std::max(xf, ff[k]);
	}
	const LesionBias b = lesion_bias(est, full, mask);
	EXPECT_NEAR(b.b_mean, std::abs(me - mf) / mf, 1e-9);
	EXPECT_NEAR(b.b_max, std::abs(xe - xf) / xf, 1e-12);
}

TEST(LesionBias, EmptyMaskSignalsNoLesion)
{
	const Tensor full = random_volume(4, 9);
	const LesionBias b = lesion_bias(full, full, std::vector<std::uint8_t>(full.numel(), 0));
	EXPECT_FALSE(b.has_lesion);
	EXPECT_THROW(lesion_bias(full, full, std::vector<std::uint8_t>(3, 1)), DimensionError);
}

// ---------------------------------------------------------------------------

namespace
{

// Two tasks, one batch each, minima at c1 and c2, theta at the origin.
QuadraticObjective two_task(std::vector<double> c1, std::vector<double> c2)
{
	const std::size_t n = c1.size();
	return QuadraticObjective(std::vector<double>(n, 1.0), { { c1 }, { c2 } }, std::vector<double>(n, 0.0));
}

} // namespace

TEST(DeltaLoss, SelfStepIsLambdaTimesGradientNorm)
{
	QuadraticObjective q(std::vector<double> { 1.0, 2.0 }, { { { 1.0, 1.0 }, { 3.0, 0.0 } } }, { 0.0, 0.0 });
	const double lambda = 1e-4;
	// Gradients at the origin: (-1, -2) and (-3, 0).
	const double expect = lambda * (std::sqrt(5.0) + 3.0) / 2.0;
	const DeltaResult r = delta_loss(q, 0, 0, lambda);
	EXPECT_NEAR(r.value, expect, 1e-15);
	EXPECT_EQ(r.batches_used, 2u);
	EXPECT_GT(r.value, 0.0);
}

TEST(DeltaLoss, OrthogonalGradientsGiveZero)
{
	QuadraticObjective q = two_task( { 1.0, 0.0, 0.0 }, { 0.0, 2.0, 0.0 });
	EXPECT_NEAR(delta_loss(q, 0, 1, 1e-4).value, 0.0, 1e-6);
	EXPECT_NEAR(delta_loss(q, 0, 1, 1e-4, DeltaForm::exact).value, 0.0, 1e-6);
}

TEST(DeltaLoss, FirstOrderMatchesExactOnQuadratic)
{
	QuadraticObjective q(std::vector<double> { 1.0, 3.0, 0.5 }, { { { 1.0, -1.0, 2.0 }, { 0.5, 0.5, 0.0 } }, { { 2.0, 1.0, -1.0 }, { -1.0, 2.0, 1.0 } } }, { 0.1, 0.2, -0.3 });
	for (std::size_t i = 0; i < 2; i++)
		for (std::size_t j = 0; j < 2; j++)
		{
			const double a = delta_loss(q, i, j, 1e-4).value;
			const double e = delta_loss(q, i, j, 1e-4, DeltaForm::exact).value;
			EXPECT_LT(std::abs(a - e), 0.05 * std::abs(e)) << i << "," << j;
		}
	// The exact form restores theta.
	EXPECT_EQ(q.get(), (std::vector<double> { 0.1, 0.2, -0.3 }));
}

TEST(DeltaLoss, ZeroGradientBatchesAreSkipped)
{
	QuadraticObjective q(std::vector<double> { 1.0 }, { { { 1.0 }, { 2.0 } }, { { 0.0 }, { 3.0 } } }, { 0.0 });
	const DeltaResult r = delta_loss(q, 0, 1, 1e-3);
	EXPECT_EQ(r.batches_used, 1u);
	EXPECT_EQ(r.batches_skipped, 1u);
	QuadraticObjective flat(std::vector<double> { 1.0 }, { { { 1.0 } }, { { 0.0 } } }, { 0.0 });
	EXPECT_THROW(delta_loss(flat, 0, 1, 1e-3), NumericError);
	EXPECT_THROW(delta_loss(flat, 0, 1, 0.0), DomainError);
}

TEST(Interference, DiagonalIsExactlyOne)
{
	QuadraticObjective q(std::vector<double> { 1.0, 2.0 }, { { { 1.0, 0.3 }, { 0.2, 0.7 } }, { { -1.0, 0.5 }, { 0.4, -0.2 } }, { { 2.0, 2.0 }, { 1.0, 1.0 } } }, { 0.05, -0.1 });
	for (DeltaForm form : { DeltaForm::first_order, DeltaForm::exact })
	{
		const InterferenceMatrix m = interference(q, 1e-4, form);
		ASSERT_EQ(m.values.size(), 3u);
		for (std::size_t i = 0; i < 3; i++)
		{
			EXPECT_EQ(m.values[i][i], 1.0);
			for (double v : m.values[i])
				EXPECT_TRUE(std::isfinite(v));
		}
	}
}

TEST(Interference, OpposedGradientsConflict)
{
	QuadraticObjective q = two_task( { 1.0, -2.0 }, { -1.0, 2.0 });
	const InterferenceMatrix m = interference(q, 1e-4);
	EXPECT_LT(m.values[0][1], 0.0);
	EXPECT_NEAR(m.values[0][1], -1.0, 1e-12);
	EXPECT_LT(m.values[1][0], 0.0);
}

TEST(Interference, NetworkFirstOrderAgreesWithExact)
{
	model::ModelConfig mc;
	model::DRMCNetwork net(mc);
	net.init_parameters(3);
	std::mt19937 rng(4);
	std::uniform_real_distribution<float> u(-0.05f, 0.05f);
	for (float &w : net.tail_weight.mutable_data())
		w = u(rng);
	std::vector<std::vector<NetworkObjective::Batch>> batches(2);
	for (std::size_t t = 0; t < 2; t++)
		for (std::size_t b = 0; b < 2; b++)
		{
			NetworkObjective::Batch batch;
			batch.low.push_back(random_volume(8, 10 * t + b + 1));
			batch.full.push_back(random_volume(8, 10 * t + b + 100));
			batches[t].push_back(batch);
		}
	NetworkObjective obj(net, batches, net.bank_parameters(1, BankKind::ffn));
	const double lambda = 1e-3;
	for (std::size_t i = 0; i < 2; i++)
		for (std::size_t j = 0; j < 2; j++)
		{
			const double a = delta_loss(obj, i, j, lambda).value;
			const double e = delta_loss(obj, i, j, lambda, DeltaForm::exact).value;
			EXPECT_LT(std::abs(a - e), 0.1 * std::abs(a)) << i << "," << j << " first-order " << a << " exact " << e;
		}
	const InterferenceMatrix m = interference(obj, lambda);
	EXPECT_EQ(m.values[0][0], 1.0);
	EXPECT_EQ(m.values[1][1], 1.0);
}

// ---------------------------------------------------------------------------

TEST(TopExpert, GateSemanticsAndTies)
{
	EXPECT_EQ(top_expert( { -1.0f, 0.5f, 2.0f }, GateKind::relu), 2u);
	EXPECT_EQ(top_expert( { -1.0f, -0.5f, -2.0f }, GateKind::relu), 0u); // all weights zero
	EXPECT_EQ(top_expert( { 1.0f, 3.0f, 3.0f }, GateKind::softmax), 1u);
	EXPECT_EQ(top_expert( { 0.2f, -1.0f, 0.3f }, GateKind::top2), 2u);
	EXPECT_EQ(top_expert( { 5.0f }, GateKind::softmax), 0u);
}

TEST(TopExpert, InvariantUnderPositiveLogitScaling)
{
	std::mt19937 rng(12);
	std::normal_distribution<float> n;
	for (int t = 0; t < 200; t++)
	{
		const std::vector<float> l { n(rng), n(rng), n(rng), n(rng) };
		for (GateKind g : { GateKind::relu, GateKind::softmax, GateKind::top2 })
			EXPECT_EQ(top_expert(l, g, 2.0), top_expert(l, g, 1.0));
	}
}

namespace
{

std::vector<synth::SampleRecord> small_records()
{
	synth::DatasetConfig dc;
	dc.shape = { 16, 16, 16 };
	dc.train_per_center = 3;
	dc.test_per_center = 0;
	const auto c = synth::default_centers();
	return synth::build_dataset( { c[0], c[1] }, dc);
}

std::vector<const synth::SampleRecord*> pointers(const std::vector<synth::SampleRecord> &r)
{
	std::vector<const synth::SampleRecord*> out;
	for (const auto &x : r)
		out.push_back(&x);
	return out;
}

} // namespace

TEST(RoutingHistogram, SingleExpertAlwaysWins)
{
	model::ModelConfig mc;
	mc.channels = 4;
	mc.experts = 1;
	mc.blocks = 2;
	mc.gate = GateKind::softmax;
	model::DRMCNetwork net(mc);
	net.init_parameters(1);
	const auto records = small_records();
	const RoutingHistogram h = routing_histogram(net, pointers(records), GateKind::softmax);
	EXPECT_EQ(h.counts.size(), 2u * 2u * 2u);
	for (const auto &[key, c] : h.counts)
		EXPECT_EQ(c, (std::vector<std::size_t> { 3 }));
	EXPECT_EQ(h.distinct_top_experts(), 1u);
}

TEST(RoutingHistogram, CountsSumToRecordsAndIgnoreLogitScale)
{
	model::ModelConfig mc;
	mc.channels = 4;
	mc.experts = 3;
	mc.blocks = 2;
	model::DRMCNetwork net(mc);
	net.init_parameters(2);
	const auto records = small_records();
	for (GateKind g : { GateKind::relu, GateKind::softmax })
	{
		const RoutingHistogram h1 = routing_histogram(net, pointers(records), g);
		const RoutingHistogram h2 = routing_histogram(net, pointers(records), g, 2.0);
		EXPECT_EQ(h1.counts, h2.counts);
		for (const auto &[key, c] : h1.counts)
		{
			ASSERT_EQ(c.size(), 3u);
			EXPECT_EQ(c[0] + c[1] + c[2], 3u);
		}
	}
}
