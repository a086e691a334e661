#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "idn/dense_flow.hpp"
#include "idn/inversion.hpp"
#include "idn/likelihood.hpp"

using namespace idn;
using fixture::to_vec;

namespace {
Tensor points(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.5) {
  Rng rng = make_rng(seed, 77);
  return normal_tensor({n, d}, scale, rng);
}
}  // namespace

// ---- dense layers and blocks

TEST(DenseLayer, FixedModeZeroWeight) {
  Rng rng = make_rng(0);
  DenseLayer layer("l", 2, 4, ActivationTag::Identity, ConcatMode::Fixed, 0.98, rng);
  layer.weight.raw.value.fill(0.0);
  layer.weight.sigma_hat = 0.0;
  Tape tape(false);
  const Tensor x = Tensor::matrix(1, 2, {1.0, -3.0});
  const Tensor out = layer.forward(tape.constant(x), nullptr).value();
  const double r = std::sqrt(0.5);
  ASSERT_EQ(out.shape(), (Shape{1, 6}));
  EXPECT_EQ(to_vec(out), (oracle::Vec{r, -3.0 * r, 0, 0, 0, 0}));
}

TEST(DenseLayer, EqualRawEtasMatchFixedModeExactly) {
  Rng r1 = make_rng(3), r2 = make_rng(3);
  DenseLayer fixed("l", 2, 8, ActivationTag::CLipSwish, ConcatMode::Fixed, 0.98, r1);
  DenseLayer learn("l", 2, 8, ActivationTag::CLipSwish, ConcatMode::Learnable, 0.98, r2);
  learn.concat->raw_eta1.value.fill(-0.7);
  learn.concat->raw_eta2.value.fill(-0.7);
  const auto [e1, e2] = learn.concat_weights();
  EXPECT_EQ(e1, std::sqrt(0.5));
  EXPECT_EQ(e2, std::sqrt(0.5));
  const Tensor x = points(5, 2, 1);
  Tape tape(false);
  EXPECT_EQ(to_vec(fixed.forward(tape.constant(x), nullptr).value()),
            to_vec(learn.forward(tape.constant(x), nullptr).value()));
}

TEST(DenseLayer, UnitCircleWeights) {
  const auto [a, b] = unit_circle_weights(inverse_softplus(3.0), inverse_softplus(4.0));
  EXPECT_NEAR(a, 0.6, 1e-12);
  EXPECT_NEAR(b, 0.8, 1e-12);
  const auto [c, d] = unit_circle_weights(0.3, 0.3);
  EXPECT_EQ(c, std::sqrt(0.5));
  EXPECT_EQ(d, std::sqrt(0.5));
}

TEST(DenseLayer, DimensionMismatch) {
  Rng rng = make_rng(0);
  DenseLayer layer("l", 3, 4, ActivationTag::LipSwish, ConcatMode::Fixed, 0.98, rng);
  Tape tape(false);
  EXPECT_THROW(layer.forward(tape.constant(Tensor({2, 2})), nullptr), ShapeError);
}

TEST(DenseBlock, ZeroWeightsGiveIdentity) {
  auto model = fixture::small_model(5);
  for (SpectralWeight* w : model->spectral_weights()) {
    w->raw.value.fill(0.0);
    w->bias.value.fill(0.0);
    w->sigma_hat = 0.0;
  }
  const Tensor x = points(7, 2, 2);
  EXPECT_EQ(to_vec(model->block(0).forward_value(x)), to_vec(x));
  EXPECT_EQ(to_vec(model->forward_value(x)), to_vec(x));
}

TEST(FlowModel, LinearBlock) {
  auto model = fixture::scaled_identity_model(2, 0.5);
  const Tensor x = points(4, 2, 3);
  EXPECT_LT(max_abs_diff(model->forward_value(x), x * 1.5), 1e-15);
}

TEST(FlowModel, DepthZeroIsLinearProjection) {
  ModelConfig c;
  c.depth = 0;
  c.blocks = 3;
  auto model = build_model(c, 9);
  for (std::size_t k = 0; k < model->size(); ++k) {
    auto& b = dynamic_cast<DenseBlock&>(model->block(k));
    EXPECT_TRUE(b.layers.empty());
    EXPECT_EQ(b.proj->in_dim(), 2u);
  }
  EXPECT_EQ(model->parameter_count(), 3u * (4 + 2));
}

TEST(FlowModel, InvalidConfig) {
  ModelConfig c;
  c.coeff = 1.2;
  EXPECT_THROW(build_model(c, 0), std::invalid_argument);
  c = {};
  c.dim = 0;
  EXPECT_THROW(build_model(c, 0), std::invalid_argument);
  c = {};
  c.growth = 7;
  EXPECT_THROW(build_model(c, 0), std::invalid_argument);
}

TEST(FlowModel, SeedDeterminesInitialization) {
  auto a = fixture::small_model(4), b = fixture::small_model(4), c = fixture::small_model(5);
  const Tensor x = points(6, 2, 1);
  EXPECT_EQ(to_vec(a->forward_value(x)), to_vec(b->forward_value(x)));
  EXPECT_NE(to_vec(a->forward_value(x)), to_vec(c->forward_value(x)));
}

class BlockKinds : public ::testing::TestWithParam<Architecture> {};

TEST_P(BlockKinds, JvpMatchesFiniteDifferences) {
  auto model = fixture::small_model(8, GetParam(), 3, 1, 8);
  FlowBlock& block = model->block(0);
  const Tensor x = points(3, 2, 4);
  Tape tape(false);
  BlockTrace trace;
  block.g(tape.constant(x), &trace);
  for (std::size_t r = 0; r < 3; ++r) {
    const oracle::Vec jac = fixture::fd_block_jacobian(block, to_vec(x.row(r)));
    for (std::size_t j = 0; j < 2; ++j) {
      Tensor t({3, 2});
      t.at(r, j) = 1.0;
      const Tensor col = block.jvp(trace, tape.constant(t)).value();
      for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(col.at(r, i), jac[i * 2 + j], 1e-7);
    }
  }
}

TEST_P(BlockKinds, LipschitzBelowOne) {
  auto model = fixture::small_model(8, GetParam(), 3, 2, 16);
  model->refresh_spectral();
  for (std::size_t k = 0; k < model->size(); ++k) {
    FlowBlock& block = model->block(k);
    EXPECT_LT(block.lipschitz_bound(), 1.0);
    Rng rng = make_rng(3);
    const RatioStats s = empirical_lipschitz([&](const Tensor& v) { return block.g_value(v); }, 2, 5000, 2.0, rng);
    EXPECT_LT(s.max, block.lipschitz_bound() + 1e-9);
  }
}

INSTANTIATE_TEST_SUITE_P(Flow, BlockKinds, ::testing::Values(Architecture::Dense, Architecture::Residual),
                         [](const auto& info) { return to_string(info.param); });

TEST(FlowModel, ResidualBaselineMatchesParameterCount) {
  ModelConfig c;
  const std::size_t dense = dense_block_parameter_count(c);
  c.arch = Architecture::Residual;
  auto model = build_model(c, 0);
  const double per_block = static_cast<double>(model->parameter_count()) / static_cast<double>(c.blocks);
  EXPECT_NEAR(per_block / static_cast<double>(dense), 1.0, 0.02);
}

TEST(FlowModel, ResidualBaselineWidthsAreBalanced) {
  for (std::size_t growth : {8, 16, 32, 64}) {
    ModelConfig c;
    c.growth = growth;
    const std::vector<std::size_t> w = matched_residual_widths(c);
    ASSERT_EQ(w.size(), c.depth);
    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    EXPECT_LE(static_cast<double>(*hi), 1.5 * static_cast<double>(*lo)) << "growth " << growth;
  }
}

// ---- log-determinants and likelihood

TEST(LogDet, ZeroMapGivesZero) {
  auto model = fixture::scaled_identity_model(2, 0.0);
  const Tensor x = points(5, 2, 1);
  Rng rng = make_rng(1);
  EXPECT_EQ(max_abs(logdet_exact(model->block(0), x)), 0.0);
  EXPECT_EQ(max_abs(logdet_truncated(model->block(0), x, 10, 3, rng)), 0.0);
  EXPECT_EQ(max_abs(logdet_roulette(model->block(0), x, 0.5, 3, rng, 2)), 0.0);
}

TEST(LogDet, DiagonalLinear) {
  auto model = fixture::linear_model(Tensor::matrix(2, 2, {0.1, 0, 0, 0.2}));
  const Tensor ld = logdet_exact(model->block(0), points(3, 2, 1));
  for (double v : ld.data()) EXPECT_NEAR(v, std::log(1.1) + std::log(1.2), 1e-14);
}

TEST(LogDet, ExactMatchesFiniteDifferenceOracle) {
  auto model = fixture::small_model(12, Architecture::Dense, 3, 2, 16);
  const Tensor x = points(4, 2, 9);
  for (std::size_t k = 0; k < model->size(); ++k) {
    const Tensor ld = logdet_exact(model->block(k), x);
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(ld[r], fixture::fd_block_logdet(model->block(k), to_vec(x.row(r))), 1e-7);
  }
}

TEST(LogDet, NegativeDeterminantFlagsViolation) {
  auto model = fixture::linear_model(Tensor::matrix(2, 2, {-2, 0, 0, 0}));
  auto& block = dynamic_cast<DenseBlock&>(model->block(0));
  block.proj->sigma_hat = 1.0;  // stale estimate lets W_eff = diag(-1.96, 0) through
  EXPECT_THROW(logdet_exact(block, points(2, 2, 1)), LipschitzViolation);
}

TEST(LogDet, TruncatedConvergesToExact) {
  auto model = fixture::small_model(21, Architecture::Dense, 2, 1, 8);
  const Tensor x = points(1, 2, 5);
  Tensor many({4000, 2});
  for (std::size_t r = 0; r < 4000; ++r)
    for (std::size_t c = 0; c < 2; ++c) many.at(r, c) = x[c];
  const double exact = logdet_exact(model->block(0), x)[0];
  Rng rng = make_rng(2);
  const oracle::MeanSe est = oracle::mean_se(to_vec(logdet_truncated(model->block(0), many, 40, 1, rng)));
  EXPECT_LT(std::abs(est.mean - exact), 4.0 * est.se + 1e-12) << est.mean << " vs " << exact;
}

TEST(LogDet, ScalarSeriesRemainder) {
  auto model = fixture::scaled_identity_model(1, 0.5);
  const Tensor x = Tensor::matrix(1, 1, {0.3});
  for (int n : {1, 2, 5, 10, 20}) {
    Rng rng = make_rng(0);
    const double v = logdet_truncated(model->block(0), x, n, 1, rng)[0];
    EXPECT_LE(std::abs(v - std::log(1.5)), std::pow(0.5, n + 1) / ((n + 1) * 0.5) + 1e-15) << n;
  }
}

TEST(LogDet, RouletteWeights) {
  Rng rng = make_rng(1);
  const auto w = roulette_weights(20000, 0.5, 3, rng);
  ASSERT_EQ(w.size(), 20000u);
  std::vector<double> mean_weight(8, 0.0);
  for (const auto& row : w) {
    ASSERT_GE(row.size(), 4u);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(row[k], 1.0);
    for (std::size_t k = 0; k < std::min<std::size_t>(row.size(), 8); ++k) mean_weight[k] += row[k] / 20000.0;
  }
  // every term is weighted 1 in expectation
  for (double m : mean_weight) EXPECT_NEAR(m, 1.0, 0.1);
}

TEST(LogDet, RouletteVarianceShrinksWithSmallerStoppingProbability) {
  // Diagonal maps make Rademacher traces exact, isolating the roulette variance.
  auto model = fixture::linear_model(Tensor::matrix(2, 2, {0.9, 0, 0, 0.6}));
  Tensor x({20000, 2});
  auto variance = [&](double p) {
    Rng rng = make_rng(4);
    const oracle::Vec v = to_vec(logdet_roulette(model->block(0), x, p, 1, rng, 0));
    const oracle::MeanSe s = oracle::mean_se(v);
    return s.se * s.se * static_cast<double>(v.size());
  };
  const double lo = variance(0.1);
  const double hi = variance(0.5);
  EXPECT_LT(lo, hi);
  const double exact = std::log(1.9) + std::log(1.6);
  Rng rng = make_rng(4);
  const oracle::MeanSe s = oracle::mean_se(to_vec(logdet_roulette(model->block(0), x, 0.1, 1, rng, 0)));
  EXPECT_LT(std::abs(s.mean - exact), 4.0 * s.se);
}

TEST(Likelihood, IdentityFlowIsStandardNormal) {
  auto model = fixture::scaled_identity_model(2, 0.0, 2);
  const Tensor x = points(6, 2, 3);
  Rng rng = make_rng(0);
  const LogProb lp = log_prob(*model, x, {}, rng);
  for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(lp.logp[r], oracle::std_normal_log_pdf(to_vec(x.row(r))), 1e-14);
}

TEST(Likelihood, LinearBlockLogDet) {
  auto model = fixture::scaled_identity_model(2, 0.5);
  const Tensor x = points(6, 2, 3);
  Rng rng = make_rng(0);
  const LogProb lp = log_prob(*model, x, {}, rng);
  ASSERT_EQ(lp.blocks.size(), 1u);
  EXPECT_NEAR(lp.blocks[0].value, 2.0 * std::log(1.5), 1e-14);
  for (std::size_t r = 0; r < 6; ++r) {
    oracle::Vec z = to_vec(x.row(r));
    for (double& e : z) e *= 1.5;
    EXPECT_NEAR(lp.logp[r], oracle::std_normal_log_pdf(z) + 2.0 * std::log(1.5), 1e-13);
  }
}

TEST(Likelihood, StandardNormalEntropy) {
  ModelConfig c;
  c.blocks = 0;
  auto model = build_model(c, 0);
  Rng data = make_rng(8);
  const Tensor x = normal_tensor({200000, 2}, 1.0, data);
  Rng rng = make_rng(0);
  EXPECT_NEAR(nll_nats(*model, x, {}, rng), 1.0 + std::log(2.0 * std::numbers::pi), 0.01);
}

TEST(Likelihood, TapedLossMatchesUntaped) {
  auto model = fixture::small_model(6, Architecture::Dense, 2, 3, 8);
  const Tensor x = points(50, 2, 6);
  Rng r1 = make_rng(0), r2 = make_rng(0);
  const double untaped = nll_nats(*model, x, {}, r1);
  Tape tape;
  const double taped = nll_loss(*model, tape.constant(x), {}, r2).value().item();
  EXPECT_NEAR(taped, untaped, 1e-12);
}

class LossGradient : public ::testing::TestWithParam<std::tuple<Architecture, ConcatMode>> {};

TEST_P(LossGradient, MatchesFiniteDifferences) {
  ModelConfig c;
  c.blocks = 2;
  c.depth = 2;
  c.growth = 8;
  c.arch = std::get<0>(GetParam());
  c.concat = std::get<1>(GetParam());
  auto model = build_model(c, 17);
  model->refresh_spectral();
  const Tensor x = points(16, 2, 4);
  auto loss = [&] {
    Tape tape(false);
    Rng rng = make_rng(0);
    return nll_loss(*model, tape.constant(x), {}, rng).value().item();
  };
  Tape tape;
  Rng rng = make_rng(0);
  Var l = nll_loss(*model, tape.constant(x), {}, rng);
  for (Parameter* p : model->parameters()) p->zero_grad();
  tape.backward(l);
  for (Parameter* p : model->parameters()) {
    const oracle::Vec numeric = oracle::finite_diff_gradient(
        [&](const oracle::Vec& v) {
          const Tensor keep = p->value;
          p->value = fixture::from_vec(v, keep.shape());
          const double out = loss();
          p->value = keep;
          return out;
        },
        to_vec(p->value));
    EXPECT_LT(oracle::max_rel_err(to_vec(p->grad), numeric), 1e-6) << p->name;
  }
}

INSTANTIATE_TEST_SUITE_P(Flow, LossGradient,
                         ::testing::Combine(::testing::Values(Architecture::Dense, Architecture::Residual),
                                            ::testing::Values(ConcatMode::Fixed, ConcatMode::Learnable)),
                         [](const auto& info) {
                           return to_string(std::get<0>(info.param)) + "_" + to_string(std::get<1>(info.param));
                         });

TEST(Likelihood, EstimatorNames) {
  for (EstimatorKind k : {EstimatorKind::Exact, EstimatorKind::Truncated, EstimatorKind::Roulette})
    EXPECT_EQ(parse_estimator(to_string(k)), k);
  EXPECT_THROW(parse_estimator("magic"), std::invalid_argument);
}

// ---- inversion

TEST(Inversion, ZeroMapConvergesImmediately) {
  auto model = fixture::scaled_identity_model(2, 0.0);
  const Tensor y = points(4, 2, 1);
  const InversionResult r = invert_block(model->block(0), y);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(to_vec(r.x), to_vec(y));
}

TEST(Inversion, LinearBlockGeometricConvergence) {
  auto model = fixture::scaled_identity_model(1, 0.5);
  const InversionResult r = invert_block(model->block(0), Tensor::matrix(1, 1, {3.0}), {.tol = 1e-12, .max_iter = 200});
  EXPECT_NEAR(r.x[0], 2.0, 1e-11);
  for (std::size_t k = 1; k < r.residuals.size(); ++k) EXPECT_NEAR(r.residuals[k] / r.residuals[k - 1], 0.5, 1e-6);
}

TEST(Inversion, IterationLimitCarriesResidual) {
  auto model = fixture::scaled_identity_model(1, 0.9);
  try {
    invert_block(model->block(0), Tensor::matrix(1, 1, {3.0}), {.tol = 1e-12, .max_iter = 3});
    FAIL() << "expected InversionError";
  } catch (const InversionError& e) {
    EXPECT_GT(e.residual, 1e-12);
    EXPECT_EQ(e.block, -1);
  }
  try {
    invert_model(*model, Tensor::matrix(1, 1, {3.0}), {.tol = 1e-12, .max_iter = 3});
    FAIL() << "expected InversionError";
  } catch (const InversionError& e) {
    EXPECT_EQ(e.block, 0);
  }
}

TEST(Inversion, IdentityModel) {
  ModelConfig c;
  c.blocks = 0;
  auto model = build_model(c, 0);
  const Tensor z = points(5, 2, 1);
  EXPECT_EQ(to_vec(invert_model(*model, z)), to_vec(z));
}

TEST(Inversion, RoundTripRandomModels) {
  for (Architecture arch : {Architecture::Dense, Architecture::Residual}) {
    ModelConfig c;
    c.arch = arch;
    auto model = build_model(c, 31);
    model->refresh_spectral();
    EXPECT_LT(round_trip_error(*model, points(1000, 2, 2, 2.0)), 1e-4) << to_string(arch);
  }
}

TEST(Inversion, SamplesHaveModelShape) {
  auto model = fixture::small_model(2);
  Rng rng = make_rng(1);
  const Tensor s = sample(*model, 11, rng);
  EXPECT_EQ(s.shape(), (Shape{11, 2}));
  EXPECT_TRUE(s.all_finite());
}
