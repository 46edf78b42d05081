#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "statdiff/datagen.hpp"
#include "statdiff/errors.hpp"
#include "statdiff/models.hpp"
#include "statdiff/parallel.hpp"
#include "statdiff/simulate.hpp"

namespace statdiff {

struct SinkhornConfig {
  double epsilon = 0.1;
  int max_iters = 2000;
  double tol = 1e-6;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("sinkhorn: epsilon must be positive");
    if (max_iters < 1) throw ConfigError("sinkhorn: max_iters must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("sinkhorn: tol must be positive");
  }
};

struct SinkhornResult {
  double value = 0.0;  // sqrt(max(0, cost - eps H))
  double objective = 0.0;  // cost - eps H, before clamping
  double cost = 0.0;
  double entropy = 0.0;
  double marginal_error = 0.0;  // |P 1 - a|_1; column marginals are exact
  int iterations = 0;
  bool converged = false;
};

namespace detail {

/// log sum_k exp((pot_k - cost_k) / eps).
inline double log_sum_exp(const double* pot, const double* cost, Eigen::Index n, double eps, double* buf) {
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) {
    buf[k] = (pot[k] - cost[k]) / eps;
    hi = std::max(hi, buf[k]);
  }
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) s += std::exp(buf[k] - hi);
  return hi + std::log(s);
}

}  // namespace detail

/// Entropic W2 between the empirical measures of the rows of D and Dp (uniform weights),
/// log-domain Sinkhorn on the squared Euclidean cost.
inline SinkhornResult sinkhorn_w2(const Samples& D, const Samples& Dp, const SinkhornConfig& cfg = {}) {
  cfg.validate();
  const Eigen::Index M = D.rows(), N = Dp.rows();
  if (M < 1 || N < 1) throw DomainError("sinkhorn: both datasets need at least one row");
  if (D.cols() != Dp.cols()) throw DomainError("sinkhorn: dimension mismatch");
  const double eps = cfg.epsilon;

  // C(:, j) holds the costs from every row of D to row j of Dp; Ct(:, i) from row i of D.
  Eigen::MatrixXd C(M, N);
  C.noalias() = -2.0 * D * Dp.transpose();
  C.colwise() += D.rowwise().squaredNorm();
  C.rowwise() += Dp.rowwise().squaredNorm().transpose();
  C = C.cwiseMax(0.0);
  const Eigen::MatrixXd Ct = C.transpose();

  const double a = 1.0 / static_cast<double>(M), b = 1.0 / static_cast<double>(N);
  const double log_a = std::log(a), log_b = std::log(b);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(M), g = Eigen::VectorXd::Zero(N);
  std::vector<double> buf(static_cast<std::size_t>(std::max(M, N)));

  // One log-domain sweep so that every row and column of K below has entries of order one.
  for (Eigen::Index i = 0; i < M; ++i)
    f[i] = eps * (log_a - detail::log_sum_exp(g.data(), &Ct(0, i), N, eps, buf.data()));
  for (Eigen::Index j = 0; j < N; ++j)
    g[j] = eps * (log_b - detail::log_sum_exp(f.data(), &C(0, j), M, eps, buf.data()));

  // Scaling iterations on K = exp((f + g - C) / eps), absorbing u, v into f, g when they drift.
  Eigen::MatrixXd K(M, N);
  auto rebuild = [&] { K = ((((-C).colwise() + f).rowwise() + g.transpose()) / eps).array().exp().matrix(); };
  rebuild();
  Eigen::VectorXd u = Eigen::VectorXd::Ones(M), v = Eigen::VectorXd::Ones(N), Kv(M), Ktu(N);
  constexpr double kAbsorb = 1e30;

  SinkhornResult out;
  for (int it = 1;; ++it) {
    Kv.noalias() = K * v;
    // Columns are exact after the v update; rows of P sum to u_i (K v)_i.
    out.marginal_error = (u.cwiseProduct(Kv).array() - a).abs().sum();
    out.iterations = it;
    if (out.marginal_error <= cfg.tol) {
      out.converged = true;
      break;
    }
    if (it == cfg.max_iters || !std::isfinite(out.marginal_error)) break;
    u = Kv.cwiseInverse() * a;
    Ktu.noalias() = K.transpose() * u;
    v = Ktu.cwiseInverse() * b;
    if (u.maxCoeff() > kAbsorb || v.maxCoeff() > kAbsorb || u.minCoeff() < 1 / kAbsorb ||
        v.minCoeff() < 1 / kAbsorb) {
      f += eps * u.array().log().matrix();
      g += eps * v.array().log().matrix();
      u.setOnes();
      v.setOnes();
      rebuild();
    }
  }
  f += eps * u.array().log().matrix();
  g += eps * v.array().log().matrix();

  double cost = 0.0, entropy = 0.0;
  for (Eigen::Index j = 0; j < N; ++j) {
    for (Eigen::Index i = 0; i < M; ++i) {
      const double lp = (f[i] + g[j] - C(i, j)) / eps;
      const double p = std::exp(lp);
      cost += p * C(i, j);
      if (p > 0.0) entropy -= p * (lp - 1.0);
    }
  }
  out.cost = cost;
  out.entropy = entropy;
  out.objective = cost - eps * entropy;
  out.value = std::sqrt(std::max(0.0, out.objective));
  return out;
}

/// (1/d) sum_j (mean_j(D) - mean_j(Dp))^2.
inline double mean_mse(const Samples& D, const Samples& Dp) {
  if (D.cols() != Dp.cols()) throw DomainError("mean_mse: dimension mismatch");
  if (D.rows() < 1 || Dp.rows() < 1) throw DomainError("mean_mse: empty dataset");
  const Eigen::RowVectorXd diff = D.colwise().mean() - Dp.colwise().mean();
  return diff.squaredNorm() / static_cast<double>(D.cols());
}

class CalibrationError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct CalibrationConfig {
  double max_abs_delta = 16384.0;  // 2^14
  int grid_points = 11;
};

struct CalibrationResult {
  double delta = 0.0;
  double mean = 0.0;      // simulated target mean at delta
  double residual = 0.0;  // mean - target_mean
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  int evaluations = 0;
};

/// Finds delta with mean_at(delta) close to target_mean.
///
/// Exponential search over delta = +-1, +-2, +-4, ... until mean_at brackets the target
/// between consecutive points of one direction (starting from 0), then an 11-point grid on
/// that bracket. Grid ties go to the smaller |delta|.
inline CalibrationResult calibrate_shift(const std::function<double(double)>& mean_at,
                                         double target_mean, const CalibrationConfig& cfg = {}) {
  if (!std::isfinite(target_mean)) throw DomainError("calibrate_shift: target mean is not finite");
  if (cfg.grid_points < 2) throw ConfigError("calibrate_shift: grid needs at least 2 points");
  CalibrationResult out;
  auto eval = [&](double delta) {
    ++out.evaluations;
    const double m = mean_at(delta);
    if (!std::isfinite(m)) throw NumericError("calibrate_shift: simulated mean is not finite");
    return m;
  };
  auto brackets = [&](double m0, double m1) {
    return std::min(m0, m1) <= target_mean && target_mean <= std::max(m0, m1);
  };

  const double m_zero = eval(0.0);
  double prev_pos = 0.0, prev_neg = 0.0, m_pos = m_zero, m_neg = m_zero;
  bool found = false;
  for (double step = 1.0; step <= cfg.max_abs_delta; step *= 2.0) {
    const double mp = eval(step);
    if (brackets(m_pos, mp)) {
      out.bracket_lo = prev_pos;
      out.bracket_hi = step;
      found = true;
      break;
    }
    const double mn = eval(-step);
    if (brackets(m_neg, mn)) {
      out.bracket_lo = -step;
      out.bracket_hi = prev_neg;
      found = true;
      break;
    }
    prev_pos = step;
    prev_neg = -step;
    m_pos = mp;
    m_neg = mn;
  }
  if (!found) {
    throw CalibrationError("calibrate_shift: no bracket for target mean " + std::to_string(target_mean) +
                           " within |delta| <= " + std::to_string(cfg.max_abs_delta));
  }

  double best_err = std::numeric_limits<double>::infinity();
  const double width = out.bracket_hi - out.bracket_lo;
  for (int k = 0; k < cfg.grid_points; ++k) {
    const double delta = out.bracket_lo + width * k / (cfg.grid_points - 1);
    const double m = eval(delta);
    const double err = std::abs(m - target_mean);
    if (err < best_err || (err == best_err && std::abs(delta) < std::abs(out.delta))) {
      best_err = err;
      out.delta = delta;
      out.mean = m;
    }
  }
  out.residual = out.mean - target_mean;
  return out;
}

/// Calibration against Euler-Maruyama means of the shift-intervened model, with the fixed seed of `em`.
inline CalibrationResult calibrate_shift(const SdeModel& model, int target, double target_mean,
                                         const EmConfig& em, const CalibrationConfig& cfg = {}) {
  if (target < 0 || target >= model.dim()) throw DomainError("calibrate_shift: target out of range");
  return calibrate_shift(
      [&](double delta) {
        const InterventionParams phi({target}, Eigen::VectorXd::Constant(1, delta));
        return em_stationary_samples(model, phi, em).col(target).mean();
      },
      target_mean, cfg);
}

enum class EvalStatus { ok, calibration_failed, diverged };

inline std::string to_string(EvalStatus s) {
  switch (s) {
    case EvalStatus::ok: return "ok";
    case EvalStatus::calibration_failed: return "calibration_failed";
    case EvalStatus::diverged: return "diverged";
  }
  return "unknown";
}

struct InterventionEval {
  int id = 0;
  int target = 0;
  double delta = 0.0;
  double target_mean = 0.0;
  double residual = 0.0;
  double w2 = std::numeric_limits<double>::quiet_NaN();
  double mse = std::numeric_limits<double>::quiet_NaN();
  bool sinkhorn_converged = false;
  EvalStatus status = EvalStatus::ok;
  std::string message;
};

struct Summary {
  double median = std::numeric_limits<double>::quiet_NaN();
  double q1 = std::numeric_limits<double>::quiet_NaN();
  double q3 = std::numeric_limits<double>::quiet_NaN();
  double iqr() const { return q3 - q1; }
};

/// Linear-interpolation quantile of an already sorted vector.
inline double sorted_quantile(const std::vector<double>& v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Summary summarize(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return Summary{sorted_quantile(values, 0.5), sorted_quantile(values, 0.25), sorted_quantile(values, 0.75)};
}

struct EvalReport {
  std::vector<InterventionEval> interventions;
  Summary w2;
  Summary mse;
  int failures = 0;
  int sinkhorn_warnings = 0;
  bool observational = false;
};

inline EvalReport aggregate(std::vector<InterventionEval> rows, bool observational = false) {
  EvalReport r;
  r.observational = observational;
  std::vector<double> w2, mse;
  for (const auto& row : rows) {
    if (row.status != EvalStatus::ok) {
      ++r.failures;
      continue;
    }
    if (!row.sinkhorn_converged) ++r.sinkhorn_warnings;
    w2.push_back(row.w2);
    mse.push_back(row.mse);
  }
  r.w2 = summarize(std::move(w2));
  r.mse = summarize(std::move(mse));
  r.interventions = std::move(rows);
  return r;
}

struct EvalConfig {
  EmConfig em;                            // sampling of predictions; seed is the base seed
  std::uint64_t calibration_seed = 0x5eedca1bULL;
  CalibrationConfig calibration;
  SinkhornConfig sinkhorn;
  bool observational = false;  // delta forced to 0, no calibration
  Parallelism parallel{1};
};

/// Scores a learned model on the held-out interventions of a task (all in standardized units).
inline EvalReport evaluate_task(const SdeModel& model, const BenchmarkTask& task, const EvalConfig& cfg = {}) {
  cfg.em.validate();
  if (model.dim() != task.obs.cols()) throw DomainError("evaluate: model and task dimensions differ");
  if (task.test.empty()) throw DomainError("evaluate: task has no test interventions");
  std::vector<InterventionEval> rows(task.test.size());
  for_each_block(task.test.size(), cfg.parallel, [&](std::size_t k) {
    const InterventionRecord& rec = task.test[k];
    InterventionEval& row = rows[k];
    row.id = static_cast<int>(k);
    row.target = rec.target;
    row.target_mean = rec.data.col(rec.target).mean();
    try {
      if (!cfg.observational) {
        EmConfig em = cfg.em;
        em.seed = cfg.calibration_seed;
        const CalibrationResult cal = calibrate_shift(model, rec.target, row.target_mean, em, cfg.calibration);
        row.delta = cal.delta;
      }
      EmConfig em = cfg.em;
      em.seed = derive_seed(cfg.em.seed, k);
      em.n_samples = static_cast<int>(rec.data.rows());
      const InterventionParams phi({rec.target}, Eigen::VectorXd::Constant(1, row.delta));
      const Samples pred = em_stationary_samples(model, phi, em);
      row.residual = pred.col(rec.target).mean() - row.target_mean;
      const SinkhornResult sk = sinkhorn_w2(pred, rec.data, cfg.sinkhorn);
      row.w2 = sk.value;
      row.sinkhorn_converged = sk.converged;
      row.mse = mean_mse(pred, rec.data);
    } catch (const CalibrationError& e) {
      row.status = EvalStatus::calibration_failed;
      row.message = e.what();
    } catch (const NumericError& e) {
      row.status = EvalStatus::diverged;
      row.message = e.what();
    }
  });
  return aggregate(std::move(rows), cfg.observational);
}

}  // namespace statdiff
