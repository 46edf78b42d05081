#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "statdiff/kds.hpp"
#include "statdiff/population_oracle.hpp"
#include "support/fd_grad.hpp"
#include "support/fd_oracles.hpp"
#include "support/sampling.hpp"
#include "support/test_models.hpp"

namespace statdiff {
namespace {

using testing::normal_vector;
using testing::to_ld;

SdeModel random_linear(std::mt19937_64& rng, int d, double scale = 0.5) {
  SdeModel m = SdeModel::linear(d);
  m.set_params(normal_vector(rng, m.num_params(), scale));
  return m;
}

SdeModel random_mlp(std::mt19937_64& rng, int d, int h, double scale = 0.5) {
  SdeModel m = SdeModel::mlp(d, h);
  m.set_params(normal_vector(rng, m.num_params(), scale));
  return m;
}

TEST(GeneratorPair, OrnsteinUhlenbeckAtOrigin) {
  const auto ou = testing::ou_model(1, 2.0);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  EXPECT_NEAR(generator_pair(KernelConfig(1.0), ou, ou, zero, zero), 3.0, 1e-15);
}

TEST(GeneratorPair, NullOperatorLimit) {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd x = normal_vector(rng, 3), xp = normal_vector(rng, 3);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  const Eigen::VectorXd tiny = Eigen::VectorXd::Constant(3, 1e-12);
  EXPECT_EQ(generator_pair(KernelConfig(1.0), x, xp, zero, zero, zero, zero), 0.0);
  EXPECT_NEAR(generator_pair(KernelConfig(1.0), x, xp, zero, zero, tiny, tiny), 0.0, 1e-20);
}

TEST(GeneratorPair, MatchesNestedOperatorDifferences) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 1 + trial % 3;
    const KernelConfig kernel(0.8 + 0.3 * trial);
    SdeModel m = random_linear(rng, d);
    const Eigen::VectorXd x = normal_vector(rng, d), xp = normal_vector(rng, d);
    const double got = generator_pair(kernel, m, m, x, xp);
    // The nested oracle needs f at displaced points, so it evaluates the linear drift itself.
    const Eigen::VectorXd fx = m.drift(x), fxp = m.drift(xp), S = m.diffusion();
    const double want = static_cast<double>(testing::fd_generator_pair(
        to_ld(x), to_ld(xp), to_ld(fx), to_ld(fxp), to_ld(S), to_ld(S), kernel.gamma(), 1e-3L,
        1e-2L));
    EXPECT_LE(testing::relative_error(got, want, 1e-3), 1e-5) << got << " vs " << want;
  }
}

TEST(GeneratorPair, SymmetricForOneModel) {
  std::mt19937_64 rng(3);
  const SdeModel m = random_mlp(rng, 3, 4);
  const Eigen::VectorXd x = normal_vector(rng, 3), xp = normal_vector(rng, 3);
  const KernelConfig kernel(1.5);
  EXPECT_NEAR(generator_pair(kernel, m, m, x, xp), generator_pair(kernel, m, m, xp, x), 1e-14);
}

TEST(PairGradient, MatchesDifferencesInDriftAndDiffusion) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> positive(0.3, 2.0);
  const KernelConfig kernel(1.2);
  const int d = 3;
  Eigen::VectorXd x = normal_vector(rng, d), xp = normal_vector(rng, d);
  Eigen::VectorXd fx = normal_vector(rng, d), fxp = normal_vector(rng, d);
  Eigen::VectorXd sx(d), sxp(d);
  for (int i = 0; i < d; ++i) {
    sx[i] = positive(rng);
    sxp[i] = positive(rng);
  }
  const PairGradient g = pair_gradient(kernel, x, xp, fx, fxp, sx, sxp);
  EXPECT_DOUBLE_EQ(g.term.value, generator_pair(kernel, x, xp, fx, fxp, sx, sxp));

  // Pack (fx, fxp, sx, sxp) so one finite-difference helper covers all four blocks.
  Eigen::VectorXd packed(4 * d);
  packed << fx, fxp, sx, sxp;
  auto value = [&](const Eigen::VectorXd& p) {
    return generator_pair(kernel, x, xp, p.segment(0, d), p.segment(d, d), p.segment(2 * d, d),
                          p.segment(3 * d, d));
  };
  Eigen::VectorXd analytic(4 * d);
  analytic << g.d_fx, g.d_fxp, g.d_sx, g.d_sxp;
  for (int i = 0; i < 4 * d; ++i) {
    const double fd = testing::fd_partial(value, packed, i, 1e-4);
    EXPECT_LE(testing::relative_error(analytic[i], fd, 1e-6), 1e-6) << "entry " << i;
  }
}

TEST(KdsUstat, TwoSamplesEqualThePairTerm) {
  std::mt19937_64 rng(5);
  const SdeModel m = random_linear(rng, 2);
  const Samples D = testing::standard_normal(rng, 2, 2);
  const KernelConfig kernel(1.0);
  const double pair = generator_pair(kernel, m, m, D.row(0).transpose(), D.row(1).transpose());
  EXPECT_NEAR(kds_ustat(kernel, m, D), pair, 1e-15 * std::max(1.0, std::abs(pair)));
  EXPECT_NEAR(kds_linear(kernel, m, D), pair, 1e-15 * std::max(1.0, std::abs(pair)));
}

TEST(KdsUstat, EqualsMeanOfPairTerms) {
  std::mt19937_64 rng(18);
  for (int d : {2, 7, 12}) {
    const SdeModel m = random_mlp(rng, d, 3);
    const Samples D = testing::standard_normal(rng, 40, d);
    const KernelConfig kernel(1.7);
    double sum = 0.0;
    for (int a = 0; a < 40; ++a)
      for (int b = 0; b < 40; ++b)
        if (a != b) sum += generator_pair(kernel, m, m, D.row(a).transpose(), D.row(b).transpose());
    const double want = sum / (40.0 * 39.0);
    EXPECT_NEAR(kds_ustat(kernel, m, D), want, 1e-12 * std::max(1.0, std::abs(want))) << d;
  }
}

TEST(KdsUstat, RejectsFewerThanTwoSamples) {
  const SdeModel m = SdeModel::linear(2);
  const KernelConfig kernel(1.0);
  EXPECT_THROW(kds_ustat(kernel, m, Samples::Zero(1, 2)), NumericError);
  EXPECT_THROW(kds_linear(kernel, m, Samples::Zero(1, 2)), NumericError);
  EXPECT_THROW(kds_grad(kernel, m, InterventionParams{}, Samples::Zero(1, 2)), NumericError);
  EXPECT_THROW(kds_ustat(kernel, m, Samples::Zero(4, 3)), DomainError);
}

TEST(KdsUstat, StationaryOrnsteinUhlenbeckIsZeroWithinNoise) {
  std::mt19937_64 rng(6);
  const auto ou = testing::ou_model(2, 2.0);
  const Samples D = testing::standard_normal(rng, 1000, 2);
  const UStatEstimate est = kds_ustat_estimate(KernelConfig(1.0), ou, D);
  EXPECT_GT(est.standard_error, 0.0);
  EXPECT_LE(std::abs(est.value), 3.0 * est.standard_error);
}

TEST(KdsUstat, MisspecifiedMeanIsPositive) {
  std::mt19937_64 rng(7);
  const auto model = testing::affine_1d(0.0, -1.0, std::sqrt(2.0));
  const Samples D = testing::gaussian_samples(rng, 1000, Eigen::VectorXd::Constant(1, 1.0),
                                              Eigen::MatrixXd::Identity(1, 1));
  const KernelConfig kernel(1.0);
  const UStatEstimate est = kds_ustat_estimate(kernel, model, D);
  EXPECT_GT(est.value, 0.0);
  EXPECT_GT(est.value, 3.0 * est.standard_error);
  EXPECT_GT(population_kds_oracle(kernel, model, Eigen::VectorXd::Constant(1, 1.0),
                                  Eigen::MatrixXd::Identity(1, 1)),
            0.0);
}

TEST(KdsUstat, SpeedScalingIsQuadratic) {
  std::mt19937_64 rng(8);
  const SdeModel m = random_mlp(rng, 3, 4);
  const Samples D = testing::standard_normal(rng, 64, 3);
  const KernelConfig kernel(1.0);
  const double base = kds_ustat(kernel, m, D);
  for (double s : {0.5, 2.0, 10.0}) {
    const testing::ScaledModel<SdeModel> scaled{m, s};
    EXPECT_LE(std::abs(kds_ustat(kernel, scaled, D) - s * s * base), 1e-12 * s * s * std::abs(base));
  }
}

TEST(KdsUstat, PermutationInvariant) {
  std::mt19937_64 rng(9);
  const SdeModel m = random_linear(rng, 2);
  Samples D = testing::standard_normal(rng, 50, 2);
  const KernelConfig kernel(1.0);
  const double base = kds_ustat(kernel, m, D);
  std::vector<int> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Samples P(50, 2);
  for (int i = 0; i < 50; ++i) P.row(i) = D.row(perm[static_cast<std::size_t>(i)]);
  EXPECT_NEAR(kds_ustat(kernel, m, P), base, 1e-12 * std::max(1.0, std::abs(base)));
}

TEST(KdsUstat, WorkerCountDoesNotChangeResults) {
  std::mt19937_64 rng(10);
  const SdeModel m = random_mlp(rng, 3, 4);
  const Samples D = testing::standard_normal(rng, 200, 3);
  const KernelConfig kernel(1.0);
  const InterventionParams phi({1}, Eigen::VectorXd::Constant(1, 0.7));
  const KdsGradient one = kds_grad(kernel, m, phi, D, Parallelism{1});
  for (unsigned w : {2u, 3u, 8u}) {
    EXPECT_EQ(kds_ustat(kernel, m, D, Parallelism{w}), kds_ustat(kernel, m, D, Parallelism{1}));
    const KdsGradient many = kds_grad(kernel, m, phi, D, Parallelism{w});
    EXPECT_EQ(many.value, one.value);
    EXPECT_EQ(many.theta, one.theta);
    EXPECT_EQ(many.delta, one.delta);
  }
}

TEST(KdsLinear, UsesConsecutiveDisjointPairs) {
  std::mt19937_64 rng(11);
  const SdeModel m = random_linear(rng, 2);
  const KernelConfig kernel(1.0);
  Samples D = testing::standard_normal(rng, 3, 2);
  const double three = kds_linear(kernel, m, D);
  D.row(2) *= 100.0;
  EXPECT_EQ(kds_linear(kernel, m, D), three);
  EXPECT_NEAR(three, kds_ustat(kernel, m, Samples(D.topRows(2))), 1e-15 * std::max(1.0, std::abs(three)));
}

void expect_gradient_matches(const SdeModel& model, const InterventionParams& phi,
                             const Samples& D, const KernelConfig& kernel) {
  const KdsGradient g = kds_grad(kernel, model, phi, D);
  EXPECT_NEAR(g.value, kds_ustat(kernel, apply_intervention(model, phi), D), 1e-12);
  auto by_theta = [&](const Eigen::VectorXd& p) {
    SdeModel m = model;
    m.set_params(p);
    return kds_ustat(kernel, apply_intervention(m, phi), D);
  };
  const double scale = std::max(1e-3, g.theta.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < model.num_params(); ++i) {
    if (!model.trainable(i)) {
      EXPECT_EQ(g.theta[i], 0.0);
      continue;
    }
    const double fd = testing::fd_partial(by_theta, model.params(), i, 1e-4);
    EXPECT_LE(testing::relative_error(g.theta[i], fd, 1e-3 * scale), 1e-5)
        << "theta " << i << ": " << g.theta[i] << " vs " << fd;
  }
  for (Eigen::Index a = 0; a < phi.size(); ++a) {
    auto by_delta = [&](const Eigen::VectorXd& v) {
      InterventionParams p = phi;
      p.delta = v;
      return kds_ustat(kernel, apply_intervention(model, p), D);
    };
    auto by_beta = [&](const Eigen::VectorXd& v) {
      InterventionParams p = phi;
      p.log_beta = v;
      return kds_ustat(kernel, apply_intervention(model, p), D);
    };
    EXPECT_LE(testing::relative_error(g.delta[a], testing::fd_partial(by_delta, phi.delta, a, 1e-4),
                                      1e-3 * scale),
              1e-5);
    EXPECT_LE(testing::relative_error(g.log_beta[a],
                                      testing::fd_partial(by_beta, phi.log_beta, a, 1e-4),
                                      1e-3 * scale),
              1e-5);
  }
}

TEST(KdsGrad, LinearModelMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (int d : {1, 3, 5, 7}) {
    SdeModel m = random_linear(rng, d, 0.4);
    const Samples D = testing::standard_normal(rng, 16, d);
    const InterventionParams phi({0}, Eigen::VectorXd::Constant(1, 0.8),
                                 Eigen::VectorXd::Constant(1, 0.2));
    expect_gradient_matches(m, phi, D, KernelConfig(1.5));
    expect_gradient_matches(m, InterventionParams{}, D, KernelConfig(1.5));
  }
}

TEST(KdsGrad, MlpModelMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  SdeModel m = random_mlp(rng, 4, 8, 0.4);
  const Samples D = testing::standard_normal(rng, 16, 4);
  const InterventionParams phi({2, 0}, Eigen::Vector2d(-0.5, 1.1));
  expect_gradient_matches(m, phi, D, KernelConfig(2.0));
}

TEST(KdsGrad, IdenticalRowsPair) {
  std::mt19937_64 rng(14);
  SdeModel m = random_linear(rng, 2);
  Samples D(2, 2);
  D.row(0) = normal_vector(rng, 2).transpose();
  D.row(1) = D.row(0);
  expect_gradient_matches(m, InterventionParams{}, D, KernelConfig(1.0));
}

TEST(KdsGrad, ShiftGradientEqualsBiasGradient) {
  std::mt19937_64 rng(15);
  for (SdeModel m : {random_linear(rng, 3), random_mlp(rng, 3, 4)}) {
    const Samples D = testing::standard_normal(rng, 30, 3);
    const InterventionParams phi({1}, Eigen::VectorXd::Constant(1, 2.0));
    const KdsGradient g = kds_grad(KernelConfig(1.0), m, phi, D);
    EXPECT_NEAR(g.delta[0], g.theta[m.bias_index(1)], 1e-14 * std::max(1.0, std::abs(g.delta[0])));
  }
}

TEST(KdsGrad, FrozenEntriesAreZero) {
  std::mt19937_64 rng(16);
  SdeModel m = random_linear(rng, 3);
  m.freeze(m.weight_index(0, 2));
  const KdsGradient g = kds_grad(KernelConfig(1.0), m, InterventionParams{},
                                 testing::standard_normal(rng, 20, 3));
  for (int j = 0; j < 3; ++j) EXPECT_EQ(g.theta[m.weight_index(j, j)], 0.0);
  EXPECT_EQ(g.theta[m.weight_index(0, 2)], 0.0);
  EXPECT_NE(g.theta[m.weight_index(2, 0)], 0.0);
}

TEST(GaussHermite, IntegratesPolynomialsExactly) {
  const GaussHermiteRule rule = gauss_hermite(30);
  const double sqrt_pi = std::sqrt(std::numbers::pi);
  EXPECT_NEAR(rule.weights.sum(), sqrt_pi, 1e-13);
  EXPECT_NEAR(rule.weights.dot(rule.nodes.array().square().matrix()), sqrt_pi / 2, 1e-13);
  EXPECT_NEAR(rule.weights.dot(rule.nodes.array().pow(4).matrix()), 3 * sqrt_pi / 4, 1e-12);
}

TEST(PopulationOracle, OrnsteinUhlenbeckIsStationary) {
  const KernelConfig kernel(1.0);
  EXPECT_NEAR(population_kds_oracle(kernel, testing::ou_model(1, 2.0), Eigen::VectorXd::Zero(1),
                                    Eigen::MatrixXd::Identity(1, 1)),
              0.0, 1e-8);
  EXPECT_NEAR(population_kds_oracle(kernel, testing::ou_model(2, 2.0), Eigen::VectorXd::Zero(2),
                                    Eigen::MatrixXd::Identity(2, 2)),
              0.0, 1e-8);
}

TEST(PopulationOracle, ShiftedTargetIsPositiveAndSpeedScalesByFour) {
  const KernelConfig kernel(1.0);
  const auto ou = testing::ou_model(1, 2.0);
  const Eigen::VectorXd mean = Eigen::VectorXd::Constant(1, 1.0);
  const Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(1, 1);
  const double base = population_kds_oracle(kernel, ou, mean, cov);
  EXPECT_GT(base, 1e-3);
  const testing::ScaledModel<testing::FunctionModel> fast{ou, 2.0};
  EXPECT_NEAR(population_kds_oracle(kernel, fast, mean, cov), 4.0 * base, 1e-12 * base);
}

TEST(PopulationOracle, NonNegativeOnRandomPairs) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + trial % 2;
    const SdeModel m = random_mlp(rng, d, 3, 1.0);
    Eigen::MatrixXd A = Eigen::MatrixXd::Random(d, d);
    const Eigen::MatrixXd cov = A * A.transpose() + 0.3 * Eigen::MatrixXd::Identity(d, d);
    EXPECT_GE(population_kds_oracle(KernelConfig(1.0), m, normal_vector(rng, d), cov), -1e-10);
  }
}

TEST(PopulationOracle, RejectsUnsupportedInputs) {
  const KernelConfig kernel(1.0);
  EXPECT_THROW(population_kds_oracle(kernel, testing::ou_model(3), Eigen::VectorXd::Zero(3),
                                     Eigen::MatrixXd::Identity(3, 3)),
               DomainError);
  EXPECT_THROW(population_kds_oracle(kernel, testing::ou_model(1), Eigen::VectorXd::Zero(1),
                                     Eigen::MatrixXd::Identity(1, 1), 10),
               ConfigError);
}

}  // namespace
}  // namespace statdiff
