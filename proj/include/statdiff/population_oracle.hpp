#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "statdiff/errors.hpp"
#include "statdiff/kds.hpp"

namespace statdiff {

struct GaussHermiteRule {
  Eigen::VectorXd nodes;    // for the weight exp(-t^2)
  Eigen::VectorXd weights;  // sum to sqrt(pi)
};

/// Golub-Welsch: nodes are eigenvalues of the symmetric Jacobi matrix of the
/// Hermite recurrence, weights sqrt(pi) times squared first eigenvector entries.
inline GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw ConfigError("gauss_hermite: need at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(0.5 * i);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  GaussHermiteRule rule;
  rule.nodes = eig.eigenvalues();
  rule.weights = std::sqrt(std::numbers::pi) * eig.eigenvectors().row(0).transpose().cwiseAbs2();
  return rule;
}

/// Deterministic tensor-product Gauss-Hermite estimate of
/// E_{x, x' ~ N(mean, cov)} [L_x L_x' k(x, x')] for d <= 2.
template <DiffusionModel M>
double population_kds_oracle(const KernelConfig& kernel, const M& model,
                             const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                             int points_per_axis = 40) {
  const Eigen::Index d = model.dim();
  if (d > 2) throw DomainError("population_kds_oracle: only d <= 2 is supported");
  if (points_per_axis < 30) throw ConfigError("population_kds_oracle: need >= 30 points per axis");
  if (mean.size() != d || cov.rows() != d || cov.cols() != d) {
    throw DomainError("population_kds_oracle: target dimension mismatch");
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw DomainError("population_kds_oracle: covariance not SPD");
  const Eigen::MatrixXd L = llt.matrixL();
  const GaussHermiteRule rule = gauss_hermite(points_per_axis);
  const double norm = 1.0 / std::sqrt(std::numbers::pi);

  const Eigen::Index q = points_per_axis;
  const Eigen::Index total = d == 1 ? q : q * q;
  Samples points(total, d);
  Eigen::VectorXd w(total);
  for (Eigen::Index a = 0; a < total; ++a) {
    Eigen::VectorXd t(d);
    t[0] = rule.nodes[a % q];
    w[a] = norm * rule.weights[a % q];
    if (d == 2) {
      t[1] = rule.nodes[a / q];
      w[a] *= norm * rule.weights[a / q];
    }
    points.row(a) = (mean + std::sqrt(2.0) * L * t).transpose();
  }
  const Samples F = detail::drift_rows(model, points);
  const Eigen::VectorXd S = model.diffusion();
  std::vector<double> r(static_cast<std::size_t>(d));
  double acc = 0.0;
  for (Eigen::Index a = 0; a < total; ++a) {
    double row = 0.0;
    for (Eigen::Index b = 0; b < total; ++b) {
      row += w[b] * detail::pair_kernel(d, kernel.inv_sq(), points.row(a).data(),
                                        points.row(b).data(), F.row(a).data(), F.row(b).data(),
                                        S.data(), S.data(), r.data())
                        .value;
    }
    acc += w[a] * row;
  }
  return acc;
}

}  // namespace statdiff
