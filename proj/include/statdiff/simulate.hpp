#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "statdiff/errors.hpp"
#include "statdiff/kds.hpp"
#include "statdiff/models.hpp"

namespace statdiff {

struct EmConfig {
  double dt = 0.01;
  int thinning = 500;
  int burn_in_samples = 100;
  int n_samples = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("em: dt must be positive");
    if (thinning < 1) throw ConfigError("em: thinning must be >= 1");
    if (burn_in_samples < 0) throw ConfigError("em: burn_in_samples must be >= 0");
    if (n_samples < 1) throw ConfigError("em: n_samples must be >= 1");
  }
};

inline constexpr double kDivergenceThreshold = 1e6;

/// Euler-Maruyama path x_{l+1} = x_l + f(x_l) dt + sigma xi_l sqrt(dt) from x_0 ~ N(0, I).
///
/// Discards burn_in_samples * thinning steps, then keeps every thinning-th state.
/// Throws NumericError once |x|_inf exceeds 1e6 or turns non-finite.
template <DiffusionModel M>
Samples em_stationary_samples(const M& model, const EmConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = model.dim();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  const Eigen::VectorXd noise_scale = (model.diffusion() * cfg.dt).cwiseSqrt();
  Eigen::VectorXd x(d), f(d);
  for (Eigen::Index i = 0; i < d; ++i) x[i] = normal(rng);

  Samples out(cfg.n_samples, d);
  const std::int64_t burn_steps = static_cast<std::int64_t>(cfg.burn_in_samples) * cfg.thinning;
  const std::int64_t total =
      burn_steps + static_cast<std::int64_t>(cfg.n_samples) * cfg.thinning;
  Eigen::Index emitted = 0;
  for (std::int64_t step = 1; step <= total; ++step) {
    model.drift_into(x, f);
    double sup = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      x[i] += f[i] * cfg.dt + noise_scale[i] * normal(rng);
      sup = std::max(sup, std::abs(x[i]));
    }
    if (!(sup <= kDivergenceThreshold)) {
      throw NumericError("euler-maruyama diverged at step " + std::to_string(step) +
                         " (|x|_inf = " + std::to_string(sup) + "); the model is likely unstable");
    }
    if (step > burn_steps && (step - burn_steps) % cfg.thinning == 0) {
      out.row(emitted++) = x.transpose();
    }
  }
  return out;
}

template <DiffusionModel M>
Samples em_stationary_samples(const M& model, const InterventionParams& phi, const EmConfig& cfg) {
  return em_stationary_samples(apply_intervention(model, phi), cfg);
}

/// dx = (a + B x) dt + C dW with C = diag(c).
struct LinearSdeSystem {
  Eigen::VectorXd a;
  Eigen::MatrixXd B;
  Eigen::VectorXd c;

  LinearSdeSystem() = default;
  LinearSdeSystem(Eigen::VectorXd a_, Eigen::MatrixXd B_, Eigen::VectorXd c_)
      : a(std::move(a_)), B(std::move(B_)), c(std::move(c_)) {
    if (B.rows() != a.size() || B.cols() != a.size() || c.size() != a.size()) {
      throw DomainError("linear sde: a, B and C must share dimension");
    }
  }

  Eigen::Index dim() const { return a.size(); }
  void drift_into(ConstVec x, MutVec out) const { out.noalias() = a + B * x; }
  Eigen::VectorXd diffusion() const { return c.cwiseAbs2(); }
  Eigen::MatrixXd C() const { return c.asDiagonal(); }

  double max_real_eigenvalue() const {
    return Eigen::EigenSolver<Eigen::MatrixXd>(B, false).eigenvalues().real().maxCoeff();
  }
  bool stable() const { return max_real_eigenvalue() < 0.0; }
};

/// The linear system of a linear SdeModel: a = b, B = W, C = diag(exp(s)).
inline LinearSdeSystem to_linear_system(const SdeModel& model) {
  if (model.shape().kind != DriftKind::linear) {
    throw DomainError("to_linear_system: model is not linear");
  }
  const Eigen::Index d = model.dim();
  return LinearSdeSystem(model.params().head(d), model.weight_matrix(),
                         model.log_scales().array().exp().matrix());
}

/// Shift-scale intervention on a linear system: a_j += delta, c_j *= beta.
inline LinearSdeSystem intervene(const LinearSdeSystem& sys, const InterventionParams& phi) {
  phi.validate(sys.dim());
  LinearSdeSystem out = sys;
  for (Eigen::Index k = 0; k < phi.size(); ++k) {
    const int j = phi.targets[static_cast<std::size_t>(k)];
    out.a[j] += phi.delta[k];
    out.c[j] *= std::exp(phi.log_beta[k]);
  }
  return out;
}

struct GaussianLaw {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Exact stationary law: mean -B^{-1} a, covariance from B S + S B^T + C C^T = 0
/// solved as (I (x) B + B (x) I) vec S = -vec(C C^T).
inline GaussianLaw lyapunov_stationary(const LinearSdeSystem& sys) {
  const Eigen::Index d = sys.dim();
  if (d < 1) throw DomainError("lyapunov: empty system");
  const double lead = sys.max_real_eigenvalue();
  if (!(lead < 0.0)) {
    throw NumericError("no stationary law: max real eigenvalue of B is " + std::to_string(lead));
  }
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd K(d * d, d * d);
  for (Eigen::Index p = 0; p < d; ++p) {
    for (Eigen::Index q = 0; q < d; ++q) {
      K.block(p * d, q * d, d, d) = I(p, q) * sys.B + sys.B(p, q) * I;
    }
  }
  const Eigen::MatrixXd Q = sys.C() * sys.C().transpose();
  const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(Q.data(), d * d);
  const Eigen::VectorXd vecS = K.partialPivLu().solve(rhs);
  Eigen::MatrixXd S = Eigen::Map<const Eigen::MatrixXd>(vecS.data(), d, d);
  S = 0.5 * (S + S.transpose()).eval();
  return GaussianLaw{-sys.B.partialPivLu().solve(sys.a), S};
}

/// |B S + S B^T + C C^T|_F.
inline double residual_check(const LinearSdeSystem& sys, const Eigen::MatrixXd& covariance) {
  const Eigen::MatrixXd C = sys.C();
  return (sys.B * covariance + covariance * sys.B.transpose() + C * C.transpose()).norm();
}

}  // namespace statdiff
