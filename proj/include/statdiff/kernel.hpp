#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "statdiff/errors.hpp"

namespace statdiff {

/// Gaussian kernel k(x, x') = exp(-|x - x'|^2 / (2 gamma^2)).
///
/// All derivative quantities below are closed forms in r = x - x'. With
/// g = 1 / gamma^2 they reduce to polynomials in g, r and the weights times k.
class KernelConfig {
 public:
  explicit KernelConfig(double gamma) : gamma_(gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
      throw ConfigError("kernel bandwidth must be positive and finite, got " +
                        std::to_string(gamma));
    }
    inv_sq_ = 1.0 / (gamma * gamma);
  }

  double gamma() const noexcept { return gamma_; }
  double inv_sq() const noexcept { return inv_sq_; }

 private:
  double gamma_;
  double inv_sq_;
};

namespace kernel {

using ConstVec = Eigen::Ref<const Eigen::VectorXd>;

namespace detail {

inline void require_same_dim(ConstVec a, ConstVec b, const char* what) {
  if (a.size() != b.size() || a.size() == 0) {
    throw DomainError(std::string(what) + ": dimension mismatch (" +
                      std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
}

inline void require_nonnegative(ConstVec c, const char* what) {
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (!(c[i] >= 0.0)) {
      throw DomainError(std::string(what) + ": weights must be nonnegative");
    }
  }
}

}  // namespace detail

inline double eval(const KernelConfig& cfg, ConstVec x, ConstVec xp) {
  detail::require_same_dim(x, xp, "kernel::eval");
  return std::exp(-0.5 * cfg.inv_sq() * (x - xp).squaredNorm());
}

/// u^T [d^2 k / dx dx'] v, where d^2 k / dx_i dx'_j = (g delta_ij - g^2 r_i r_j) k.
inline double cross_hessian_bilinear(const KernelConfig& cfg, ConstVec x,
                                     ConstVec xp, ConstVec u, ConstVec v) {
  detail::require_same_dim(x, xp, "kernel::cross_hessian_bilinear");
  detail::require_same_dim(x, u, "kernel::cross_hessian_bilinear");
  detail::require_same_dim(x, v, "kernel::cross_hessian_bilinear");
  const double g = cfg.inv_sq();
  const Eigen::VectorXd r = x - xp;
  const double k = std::exp(-0.5 * g * r.squaredNorm());
  return g * k * (u.dot(v) - g * u.dot(r) * v.dot(r));
}

/// grad_x of sum_j c_j d^2 k / dx'_j^2.
///
/// Component i is g k r_i (2 g c_i - g^2 sum_j c_j r_j^2 + g sum_j c_j).
inline Eigen::VectorXd grad_weighted_laplacian(const KernelConfig& cfg,
                                               ConstVec x, ConstVec xp,
                                               ConstVec c) {
  detail::require_same_dim(x, xp, "kernel::grad_weighted_laplacian");
  detail::require_same_dim(x, c, "kernel::grad_weighted_laplacian");
  detail::require_nonnegative(c, "kernel::grad_weighted_laplacian");
  const double g = cfg.inv_sq();
  const Eigen::VectorXd r = x - xp;
  const double k = std::exp(-0.5 * g * r.squaredNorm());
  const double lap = g * g * c.dot(r.cwiseAbs2()) - g * c.sum();
  return (g * k) * r.cwiseProduct((2.0 * g) * c - Eigen::VectorXd::Constant(r.size(), lap));
}

/// sum_i cx_i d^2/dx_i^2 [ sum_j cxp_j d^2 k / dx'_j^2 ].
inline double weighted_bilaplacian(const KernelConfig& cfg, ConstVec x,
                                   ConstVec xp, ConstVec cx, ConstVec cxp) {
  detail::require_same_dim(x, xp, "kernel::weighted_bilaplacian");
  detail::require_same_dim(x, cx, "kernel::weighted_bilaplacian");
  detail::require_same_dim(x, cxp, "kernel::weighted_bilaplacian");
  detail::require_nonnegative(cx, "kernel::weighted_bilaplacian");
  detail::require_nonnegative(cxp, "kernel::weighted_bilaplacian");
  const double g = cfg.inv_sq();
  const Eigen::VectorXd r = x - xp;
  const Eigen::VectorXd r2 = r.cwiseAbs2();
  const double k = std::exp(-0.5 * g * r2.sum());
  const double lap_x = g * g * cx.dot(r2) - g * cx.sum();
  const double lap_xp = g * g * cxp.dot(r2) - g * cxp.sum();
  const Eigen::VectorXd both = cx.cwiseProduct(cxp);
  return k * (2.0 * g * g * both.sum() - 4.0 * g * g * g * both.dot(r2) +
              lap_x * lap_xp);
}

}  // namespace kernel
}  // namespace statdiff
