#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "statdiff/errors.hpp"
#include "statdiff/kds.hpp"
#include "statdiff/models.hpp"

namespace statdiff {

/// dx = (a + b x) dt + c dW, stationary N(-a/b, -c^2/(2b)) for b < 0, c > 0.
struct ScalarOu {
  double a = 0.0;
  double b = -1.0;
  double c = 1.0;

  void validate() const {
    if (!(b < 0.0)) throw ConfigError("scalar ou: need b < 0");
    if (!(c > 0.0)) throw ConfigError("scalar ou: need c > 0");
  }
  double mean() const { return -a / b; }
  double variance() const { return -c * c / (2.0 * b); }

  SdeModel model() const {
    SdeModel m = SdeModel::linear(1, false);
    m.set_param(m.bias_index(0), a);
    m.set_param(m.weight_index(0, 0), b);
    m.set_param(m.log_scale_index(0), std::log(c));
    return m;
  }

  Samples sample(int n, std::mt19937_64& rng) const {
    validate();
    std::normal_distribution<double> normal(mean(), std::sqrt(variance()));
    Samples out(n, 1);
    for (int i = 0; i < n; ++i) out(i, 0) = normal(rng);
    return out;
  }
};

enum class ScanParam { a, c };

inline std::string to_string(ScanParam p) { return p == ScanParam::a ? "a" : "c"; }

struct ScanPoint {
  double value = 0.0;
  double kds = 0.0;
  double derivative = 0.0;     // d kds / d param
  double derivative_se = std::nan("");
};

struct ScanConfig {
  double gamma = 0.5;
  int points = 81;
  double span = 0.5;  // grid covers truth * (1 -+ span)
  bool standard_errors = false;
};

namespace detail {

/// U-statistic standard error of the derivative, from the pair-level derivative row means.
inline double scan_derivative_se(const KernelConfig& kernel, const ScalarOu& p, ScanParam which,
                                 const Samples& data) {
  const Eigen::Index n = data.rows();
  const SdeModel m = p.model();
  Eigen::VectorXd f(n);
  for (Eigen::Index i = 0; i < n; ++i) f[i] = m.drift(data.row(i).transpose())[0];
  const Eigen::VectorXd S = Eigen::VectorXd::Constant(1, p.c * p.c);
  Eigen::VectorXd row(n);
  row.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const PairGradient g = pair_gradient(kernel, data.row(i).transpose(), data.row(j).transpose(),
                                           f.segment(i, 1), f.segment(j, 1), S, S);
      const double h = which == ScanParam::a ? g.d_fx[0] + g.d_fxp[0] : 2.0 * p.c * (g.d_sx[0] + g.d_sxp[0]);
      row[i] += h;
      row[j] += h;
    }
  }
  row /= static_cast<double>(n - 1);
  const double var = (row.array() - row.mean()).square().sum() / static_cast<double>(n - 1);
  return 2.0 * std::sqrt(var / static_cast<double>(n));
}

}  // namespace detail

/// KDS and its partial derivative along a grid over one parameter, the others at truth.
inline std::vector<ScanPoint> parameter_scan(const ScalarOu& truth, ScanParam which, const Samples& data,
                                             const ScanConfig& cfg = {}) {
  truth.validate();
  if (data.cols() != 1) throw DomainError("parameter_scan: data must be one-dimensional");
  if (cfg.points < 1) throw ConfigError("parameter_scan: need at least one grid point");
  const KernelConfig kernel(cfg.gamma);
  const double center = which == ScanParam::a ? truth.a : truth.c;
  const double lo = center - cfg.span * std::abs(center), hi = center + cfg.span * std::abs(center);
  std::vector<ScanPoint> out;
  for (int k = 0; k < cfg.points; ++k) {
    ScalarOu p = truth;
    const double v = cfg.points == 1 ? center : lo + (hi - lo) * k / (cfg.points - 1);
    (which == ScanParam::a ? p.a : p.c) = v;
    if (!(p.c > 0.0)) continue;
    const SdeModel m = p.model();
    const KdsGradient g = kds_grad(kernel, m, InterventionParams{}, data);
    ScanPoint pt;
    pt.value = v;
    pt.kds = g.value;
    pt.derivative = which == ScanParam::a ? g.theta[m.bias_index(0)] : g.theta[m.log_scale_index(0)] / p.c;
    if (cfg.standard_errors) pt.derivative_se = detail::scan_derivative_se(kernel, p, which, data);
    out.push_back(pt);
  }
  return out;
}

/// Consecutive grid intervals [lo, hi] across which the derivative changes sign.
struct SignChange {
  double lo = 0.0;
  double hi = 0.0;
  bool rising = false;  // negative to positive, i.e. a local minimum of the KDS
};

inline std::vector<SignChange> sign_changes(const std::vector<ScanPoint>& scan) {
  std::vector<SignChange> out;
  for (std::size_t k = 0; k + 1 < scan.size(); ++k) {
    const bool up0 = scan[k].derivative > 0.0, up1 = scan[k + 1].derivative > 0.0;
    if (up0 != up1) out.push_back(SignChange{scan[k].value, scan[k + 1].value, up1});
  }
  return out;
}

}  // namespace statdiff
