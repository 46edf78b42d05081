#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "statdiff/models.hpp"

namespace statdiff {
namespace {

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

SdeModel random_model(std::mt19937_64& rng, SdeModel model) {
  model.set_params(random_vector(rng, model.num_params(), 0.7));
  return model;
}

TEST(LinearDrift, Examples) {
  SdeModel ou = SdeModel::linear(3);
  const Eigen::VectorXd x = Eigen::Vector3d(0.5, -2.0, 1.25);
  EXPECT_TRUE(eval_drift(ou, x).isApprox(-x));

  SdeModel one = SdeModel::linear(1);
  one.set_param(one.bias_index(0), 1.0);
  EXPECT_DOUBLE_EQ(eval_drift(one, Eigen::VectorXd::Constant(1, 0.5))[0], 0.5);
}

TEST(LinearDrift, DiagonalIsPinned) {
  SdeModel m = SdeModel::linear(3);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(m.num_params(), 4.0);
  m.set_params(p);
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(m.weight(j, j), -1.0);
    EXPECT_FALSE(m.trainable(m.weight_index(j, j)));
  }
  m.set_param(m.weight_index(1, 1), 9.0);
  EXPECT_EQ(m.weight(1, 1), -1.0);
  EXPECT_EQ(m.weight(0, 1), 4.0);
}

TEST(LinearDrift, UnpinnedVariantKeepsDiagonalTrainable) {
  SdeModel m = SdeModel::linear(1, false);
  m.set_param(m.weight_index(0, 0), -2.5);
  EXPECT_EQ(m.weight(0, 0), -2.5);
  EXPECT_TRUE(m.trainable(m.weight_index(0, 0)));
}

TEST(MlpDrift, ZeroParametersGiveMinusX) {
  const SdeModel m = SdeModel::mlp(4, 8);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const Eigen::VectorXd x = random_vector(rng, 4, 3.0);
    EXPECT_TRUE(eval_drift(m, x).isApprox(-x, 1e-15));
  }
}

TEST(MlpDrift, SelfColumnIsZeroAndIgnored) {
  std::mt19937_64 rng(2);
  const SdeModel m = random_model(rng, SdeModel::mlp(3, 4));
  for (int j = 0; j < 3; ++j) {
    for (int k = 0; k < 4; ++k) {
      EXPECT_EQ(m.params()[m.u_index(j, k, j)], 0.0);
      EXPECT_FALSE(m.trainable(m.u_index(j, k, j)));
    }
  }
  // f_j depends on x_j only through the explicit -x_j term.
  Eigen::VectorXd x = random_vector(rng, 3);
  const Eigen::VectorXd f0 = eval_drift(m, x);
  x[1] += 0.3;
  const Eigen::VectorXd f1 = eval_drift(m, x);
  EXPECT_NEAR(f1[1] - f0[1], -0.3, 1e-14);
}

TEST(MlpDrift, MatchesDirectFormula) {
  std::mt19937_64 rng(4);
  const SdeModel m = random_model(rng, SdeModel::mlp(3, 5));
  const Eigen::VectorXd x = random_vector(rng, 3);
  const Eigen::VectorXd f = eval_drift(m, x);
  for (int j = 0; j < 3; ++j) {
    double acc = m.bias(j) - x[j];
    for (int k = 0; k < 5; ++k) {
      double z = m.params()[m.v_index(j, k)];
      for (int i = 0; i < 3; ++i) z += m.params()[m.u_index(j, k, i)] * x[i];
      acc += m.params()[m.w_index(j, k)] / (1.0 + std::exp(-z));
    }
    EXPECT_NEAR(f[j], acc, 1e-14);
  }
}

TEST(Sigmoid, StableForLargeArguments) {
  EXPECT_EQ(sigmoid(-800.0), 0.0);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(-30.0), std::exp(-30.0), 1e-25);
}

TEST(DriftVjp, LinearUnitCotangent) {
  SdeModel m = SdeModel::linear(3);
  const Eigen::VectorXd x = Eigen::Vector3d(0.5, -1.0, 2.0);
  const int j = 1;
  const Eigen::VectorXd g = drift_vjp(m, x, Eigen::VectorXd::Unit(3, j));
  EXPECT_EQ(g[m.bias_index(j)], 1.0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(g[m.weight_index(j, i)], i == j ? 0.0 : x[i]);
    EXPECT_EQ(g[m.weight_index(0, i)], 0.0);
  }
  EXPECT_TRUE(g.tail(3).isZero(0.0));
}

TEST(DriftVjp, ZeroCotangentGivesZero) {
  std::mt19937_64 rng(6);
  for (SdeModel m : {SdeModel::linear(4), SdeModel::mlp(4, 3)}) {
    m = random_model(rng, m);
    EXPECT_TRUE(drift_vjp(m, random_vector(rng, 4), Eigen::VectorXd::Zero(4)).isZero(0.0));
  }
}

TEST(DriftVjp, MlpMatchesCentralDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    SdeModel m = random_model(rng, SdeModel::mlp(4, 8));
    const Eigen::VectorXd x = random_vector(rng, 4);
    const Eigen::VectorXd cot = random_vector(rng, 4);
    const Eigen::VectorXd g = drift_vjp(m, x, cot);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < m.num_params(); ++i) {
      if (!m.trainable(i)) {
        EXPECT_EQ(g[i], 0.0);
        continue;
      }
      SdeModel plus = m, minus = m;
      plus.set_param(i, m.params()[i] + h);
      minus.set_param(i, m.params()[i] - h);
      const double fd = (cot.dot(eval_drift(plus, x)) - cot.dot(eval_drift(minus, x))) / (2 * h);
      EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "param " << i;
    }
  }
}

TEST(DriftVjp, FrozenEntriesReportZero) {
  SdeModel m = SdeModel::linear(2);
  m.freeze(m.bias_index(0));
  const Eigen::VectorXd g = drift_vjp(m, Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d(1.0, 1.0));
  EXPECT_EQ(g[m.bias_index(0)], 0.0);
  EXPECT_EQ(g[m.bias_index(1)], 1.0);
}

TEST(Diffusion, Examples) {
  SdeModel m = SdeModel::linear(2);
  EXPECT_TRUE(diffusion_matrix(m, InterventionParams{}).isApprox(Eigen::Vector2d(1.0, 1.0)));

  SdeModel one = SdeModel::linear(1);
  one.set_param(one.log_scale_index(0), 0.5 * std::log(2.0));
  EXPECT_NEAR(one.diffusion()[0], 2.0, 1e-15);

  const InterventionParams beta3({0}, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, std::log(3.0)));
  const Eigen::VectorXd s = diffusion_matrix(m, beta3);
  EXPECT_NEAR(s[0], 9.0, 1e-14);
  EXPECT_EQ(s[1], 1.0);
}

TEST(Intervention, EmptyIsIdentity) {
  std::mt19937_64 rng(8);
  for (SdeModel m : {SdeModel::linear(3), SdeModel::mlp(3, 4)}) {
    m = random_model(rng, m);
    const auto iv = apply_intervention(m, InterventionParams{});
    for (int t = 0; t < 5; ++t) {
      const Eigen::VectorXd x = random_vector(rng, 3);
      EXPECT_EQ(iv.drift(x), m.drift(x));
    }
    EXPECT_EQ(iv.diffusion(), m.diffusion());
  }
}

TEST(Intervention, ShiftAndScaleOnTargetsOnly) {
  SdeModel ou = SdeModel::linear(1);
  const auto shifted = apply_intervention(ou, InterventionParams({0}, Eigen::VectorXd::Constant(1, 2.0)));
  EXPECT_EQ(shifted.drift(Eigen::VectorXd::Zero(1))[0], 2.0);

  SdeModel m = SdeModel::linear(2);
  const InterventionParams phi({1}, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, std::log(2.0)));
  const Eigen::VectorXd s = apply_intervention(m, phi).diffusion();
  EXPECT_EQ(s[0], m.diffusion()[0]);
  EXPECT_NEAR(s[1], 4.0 * m.diffusion()[1], 1e-14);
}

TEST(Intervention, RejectsBadTargets) {
  const SdeModel m = SdeModel::linear(2);
  EXPECT_THROW(apply_intervention(m, InterventionParams({2}, Eigen::VectorXd::Zero(1))), DomainError);
  EXPECT_THROW(apply_intervention(m, InterventionParams({-1}, Eigen::VectorXd::Zero(1))), DomainError);
  EXPECT_THROW(apply_intervention(m, InterventionParams({0, 0}, Eigen::VectorXd::Zero(2))), DomainError);
  EXPECT_THROW(InterventionParams({0}, Eigen::VectorXd::Zero(2)), DomainError);
}

}  // namespace
}  // namespace statdiff
