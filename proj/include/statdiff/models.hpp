#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "statdiff/errors.hpp"

namespace statdiff {

using ConstVec = Eigen::Ref<const Eigen::VectorXd>;
using MutVec = Eigen::Ref<Eigen::VectorXd>;

/// Anything with a drift f(x) and a constant diagonal diffusion Sigma = sigma sigma^T.
template <class M>
concept DiffusionModel = requires(const M& m, const Eigen::VectorXd& x,
                                  Eigen::VectorXd& out) {
  { m.dim() } -> std::convertible_to<Eigen::Index>;
  m.drift_into(x, out);
  { m.diffusion() } -> std::convertible_to<Eigen::VectorXd>;
};

/// A diffusion model whose parameters can be differentiated through.
template <class M>
concept DifferentiableModel =
    DiffusionModel<M> && requires(const M& m, const Eigen::VectorXd& x,
                                  Eigen::VectorXd& grad) {
      { m.num_params() } -> std::convertible_to<Eigen::Index>;
      m.add_drift_vjp(x, x, grad);
      m.add_log_scale_vjp(x, grad);
    };

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (e + 1.0);
}

enum class DriftKind { linear, mlp };

inline std::string to_string(DriftKind kind) {
  return kind == DriftKind::linear ? "linear" : "mlp";
}

inline DriftKind drift_kind_from_string(const std::string& s) {
  if (s == "linear") return DriftKind::linear;
  if (s == "mlp") return DriftKind::mlp;
  throw ConfigError("unknown model kind '" + s + "' (expected linear or mlp)");
}

struct ModelShape {
  DriftKind kind = DriftKind::linear;
  int dim = 1;
  int hidden = 0;
  // Linear only: pin W_jj = -1 (removes the speed-scaling invariance).
  bool fixed_self_regulation = true;
};

/// Parameters theta of a drift f_theta plus log-diffusion scales s, stored flat.
///
/// Layout (row-major everywhere):
///   linear: b[d] | W[d x d] | s[d]
///   mlp:    per coordinate j: b_j | w_j[h] | U_j[h x d] | v_j[h], then s[d]
///
/// Linear: f(x)_j = b_j + W_j . x, with W_jj = -1 when self-regulation is fixed.
/// MLP:    f(x)_j = b_j + w_j . sigmoid(U_j x + v_j) - x_j, column j of U_j is zero.
/// Diffusion: sigma = diag(exp(s)), Sigma = diag(exp(2 s)).
class SdeModel {
 public:
  static SdeModel linear(int dim, bool fixed_self_regulation = true) {
    return SdeModel(ModelShape{DriftKind::linear, dim, 0, fixed_self_regulation});
  }

  static SdeModel mlp(int dim, int hidden = 8) {
    return SdeModel(ModelShape{DriftKind::mlp, dim, hidden, true});
  }

  explicit SdeModel(ModelShape shape) : shape_(shape) {
    if (shape_.dim < 1) throw ConfigError("model dimension must be >= 1");
    if (shape_.kind == DriftKind::mlp && shape_.hidden < 1) {
      throw ConfigError("mlp hidden size must be >= 1");
    }
    if (shape_.kind == DriftKind::linear) shape_.hidden = 0;
    const Eigen::Index d = shape_.dim;
    const Eigen::Index n =
        shape_.kind == DriftKind::linear ? d + d * d + d : d * block_size() + d;
    params_ = Eigen::VectorXd::Zero(n);
    trainable_.assign(static_cast<std::size_t>(n), true);
    for (Eigen::Index j = 0; j < d; ++j) {
      if (shape_.kind == DriftKind::linear) {
        if (shape_.fixed_self_regulation) {
          trainable_[static_cast<std::size_t>(weight_index(j, j))] = false;
        }
      } else {
        for (Eigen::Index k = 0; k < shape_.hidden; ++k) {
          trainable_[static_cast<std::size_t>(u_index(j, k, j))] = false;
        }
      }
    }
    enforce_fixed();
  }

  const ModelShape& shape() const noexcept { return shape_; }
  Eigen::Index dim() const noexcept { return shape_.dim; }
  Eigen::Index num_params() const noexcept { return params_.size(); }
  const Eigen::VectorXd& params() const noexcept { return params_; }

  /// Replaces all parameters; fixed entries are restored afterwards.
  void set_params(const Eigen::VectorXd& p) {
    if (p.size() != params_.size()) {
      throw DomainError("set_params: expected " + std::to_string(params_.size()) +
                        " values, got " + std::to_string(p.size()));
    }
    params_ = p;
    enforce_fixed();
  }

  /// Writes one entry. Writing a structurally fixed entry is a no-op.
  void set_param(Eigen::Index i, double value) {
    check_index(i);
    if (is_structural_fixed(i)) return;
    params_[i] = value;
  }

  bool trainable(Eigen::Index i) const {
    check_index(i);
    return trainable_[static_cast<std::size_t>(i)];
  }
  const std::vector<bool>& trainable_mask() const noexcept { return trainable_; }

  /// Excludes an entry from training (its gradient is reported as zero).
  void freeze(Eigen::Index i) {
    check_index(i);
    trainable_[static_cast<std::size_t>(i)] = false;
  }

  void freeze_all() { std::fill(trainable_.begin(), trainable_.end(), false); }

  void unfreeze(Eigen::Index i) {
    check_index(i);
    if (!is_structural_fixed(i)) trainable_[static_cast<std::size_t>(i)] = true;
  }

  // --- layout ---------------------------------------------------------------

  Eigen::Index bias_index(Eigen::Index j) const {
    return shape_.kind == DriftKind::linear ? j : j * block_size();
  }
  Eigen::Index weight_index(Eigen::Index j, Eigen::Index i) const {
    require_kind(DriftKind::linear, "weight_index");
    return dim() + j * dim() + i;
  }
  Eigen::Index w_index(Eigen::Index j, Eigen::Index k) const {
    require_kind(DriftKind::mlp, "w_index");
    return j * block_size() + 1 + k;
  }
  Eigen::Index u_index(Eigen::Index j, Eigen::Index k, Eigen::Index i) const {
    require_kind(DriftKind::mlp, "u_index");
    return j * block_size() + 1 + shape_.hidden + k * dim() + i;
  }
  Eigen::Index v_index(Eigen::Index j, Eigen::Index k) const {
    require_kind(DriftKind::mlp, "v_index");
    return j * block_size() + 1 + shape_.hidden + shape_.hidden * dim() + k;
  }
  Eigen::Index log_scale_index(Eigen::Index j) const {
    return params_.size() - dim() + j;
  }

  double bias(Eigen::Index j) const { return params_[bias_index(j)]; }
  double weight(Eigen::Index j, Eigen::Index i) const { return params_[weight_index(j, i)]; }
  double log_scale(Eigen::Index j) const { return params_[log_scale_index(j)]; }

  Eigen::VectorXd log_scales() const { return params_.tail(dim()); }

  /// Linear weights as a d x d matrix (row j drives coordinate j).
  Eigen::MatrixXd weight_matrix() const {
    require_kind(DriftKind::linear, "weight_matrix");
    const Eigen::Index d = dim();
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(params_.data() + d, d, d);
  }

  // --- evaluation -----------------------------------------------------------

  void drift_into(ConstVec x, MutVec out) const {
    const Eigen::Index d = dim();
    if (x.size() != d || out.size() != d) throw DomainError("drift: dimension mismatch");
    const double* p = params_.data();
    if (shape_.kind == DriftKind::linear) {
      for (Eigen::Index j = 0; j < d; ++j) {
        const double* w = p + d + j * d;
        double acc = p[j];
        for (Eigen::Index i = 0; i < d; ++i) acc += w[i] * x[i];
        out[j] = acc;
      }
      return;
    }
    const Eigen::Index h = shape_.hidden;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double* blk = p + j * block_size();
      const double* w = blk + 1;
      const double* u = blk + 1 + h;
      const double* v = u + h * d;
      double acc = blk[0] - x[j];
      for (Eigen::Index k = 0; k < h; ++k) {
        double z = v[k];
        const double* uk = u + k * d;
        for (Eigen::Index i = 0; i < d; ++i) z += uk[i] * x[i];
        acc += w[k] * sigmoid(z);
      }
      out[j] = acc;
    }
  }

  Eigen::VectorXd drift(ConstVec x) const {
    Eigen::VectorXd out(dim());
    drift_into(x, out);
    return out;
  }

  /// Diagonal of Sigma = exp(2 s).
  Eigen::VectorXd diffusion() const { return (2.0 * log_scales()).array().exp().matrix(); }

  /// grad += cot^T d f(x) / d theta; entries that are not trainable stay untouched.
  void add_drift_vjp(ConstVec x, ConstVec cot, MutVec grad) const {
    const Eigen::Index d = dim();
    if (x.size() != d || cot.size() != d || grad.size() != num_params()) {
      throw DomainError("drift_vjp: dimension mismatch");
    }
    const double* p = params_.data();
    if (shape_.kind == DriftKind::linear) {
      for (Eigen::Index j = 0; j < d; ++j) {
        const double c = cot[j];
        if (c == 0.0) continue;
        add_if_trainable(grad, j, c);
        const Eigen::Index base = d + j * d;
        for (Eigen::Index i = 0; i < d; ++i) add_if_trainable(grad, base + i, c * x[i]);
      }
      return;
    }
    const Eigen::Index h = shape_.hidden;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double c = cot[j];
      if (c == 0.0) continue;
      const Eigen::Index base = j * block_size();
      const double* w = p + base + 1;
      const double* u = w + h;
      const double* v = u + h * d;
      add_if_trainable(grad, base, c);
      for (Eigen::Index k = 0; k < h; ++k) {
        double z = v[k];
        const double* uk = u + k * d;
        for (Eigen::Index i = 0; i < d; ++i) z += uk[i] * x[i];
        const double a = sigmoid(z);
        add_if_trainable(grad, base + 1 + k, c * a);
        const double t = c * w[k] * a * (1.0 - a);
        add_if_trainable(grad, base + 1 + h + h * d + k, t);
        const Eigen::Index ub = base + 1 + h + k * d;
        for (Eigen::Index i = 0; i < d; ++i) add_if_trainable(grad, ub + i, t * x[i]);
      }
    }
  }

  /// grad += d/ds of a loss whose derivative with respect to s is `ds`.
  void add_log_scale_vjp(ConstVec ds, MutVec grad) const {
    if (ds.size() != dim() || grad.size() != num_params()) {
      throw DomainError("log_scale_vjp: dimension mismatch");
    }
    for (Eigen::Index j = 0; j < dim(); ++j) add_if_trainable(grad, log_scale_index(j), ds[j]);
  }

 private:
  Eigen::Index block_size() const {
    return 1 + 2 * shape_.hidden + shape_.hidden * shape_.dim;
  }

  void require_kind(DriftKind kind, const char* what) const {
    if (shape_.kind != kind) {
      throw DomainError(std::string(what) + " is only defined for " + to_string(kind) +
                        " models");
    }
  }

  void check_index(Eigen::Index i) const {
    if (i < 0 || i >= num_params()) throw DomainError("parameter index out of range");
  }

  bool is_structural_fixed(Eigen::Index i) const {
    const Eigen::Index d = dim();
    if (shape_.kind == DriftKind::linear) {
      if (!shape_.fixed_self_regulation || i < d || i >= d + d * d) return false;
      const Eigen::Index off = i - d;
      return off / d == off % d;
    }
    if (i >= d * block_size()) return false;
    const Eigen::Index j = i / block_size();
    const Eigen::Index in_block = i % block_size() - 1 - shape_.hidden;
    if (in_block < 0 || in_block >= shape_.hidden * d) return false;
    return in_block % d == j;
  }

  void enforce_fixed() {
    for (Eigen::Index i = 0; i < num_params(); ++i) {
      if (!is_structural_fixed(i)) continue;
      params_[i] = shape_.kind == DriftKind::linear ? -1.0 : 0.0;
      trainable_[static_cast<std::size_t>(i)] = false;
    }
  }

  void add_if_trainable(MutVec grad, Eigen::Index i, double value) const {
    if (trainable_[static_cast<std::size_t>(i)]) grad[i] += value;
  }

  ModelShape shape_;
  Eigen::VectorXd params_;
  std::vector<bool> trainable_;
};

/// Shift-scale intervention on known targets: f_j += delta_j, sigma_j *= beta_j.
struct InterventionParams {
  std::vector<int> targets;
  Eigen::VectorXd delta;
  Eigen::VectorXd log_beta;

  InterventionParams() = default;

  explicit InterventionParams(std::vector<int> t)
      : targets(std::move(t)),
        delta(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(targets.size()))),
        log_beta(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(targets.size()))) {}

  InterventionParams(std::vector<int> t, Eigen::VectorXd shift)
      : targets(std::move(t)), delta(std::move(shift)) {
    log_beta = Eigen::VectorXd::Zero(delta.size());
    check_sizes();
  }

  InterventionParams(std::vector<int> t, Eigen::VectorXd shift, Eigen::VectorXd log_scale)
      : targets(std::move(t)), delta(std::move(shift)), log_beta(std::move(log_scale)) {
    check_sizes();
  }

  bool empty() const noexcept { return targets.empty(); }
  Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(targets.size()); }

  void check_sizes() const {
    const auto n = static_cast<Eigen::Index>(targets.size());
    if (delta.size() != n || log_beta.size() != n) {
      throw DomainError("intervention: one delta and one log_beta per target required");
    }
  }

  void validate(Eigen::Index dim) const {
    check_sizes();
    for (std::size_t a = 0; a < targets.size(); ++a) {
      if (targets[a] < 0 || targets[a] >= dim) {
        throw DomainError("intervention target " + std::to_string(targets[a]) +
                          " out of range for dimension " + std::to_string(dim));
      }
      for (std::size_t b = 0; b < a; ++b) {
        if (targets[a] == targets[b]) throw DomainError("intervention targets must be distinct");
      }
    }
  }
};

/// A model under an intervention. Holds its own copy of the base model.
template <DiffusionModel M>
class Intervened {
 public:
  Intervened(M base, InterventionParams phi) : base_(std::move(base)), phi_(std::move(phi)) {
    phi_.validate(base_.dim());
    shift_ = Eigen::VectorXd::Zero(base_.dim());
    scale_sq_ = Eigen::VectorXd::Ones(base_.dim());
    for (Eigen::Index a = 0; a < phi_.size(); ++a) {
      const int j = phi_.targets[static_cast<std::size_t>(a)];
      shift_[j] = phi_.delta[a];
      scale_sq_[j] = std::exp(2.0 * phi_.log_beta[a]);
    }
  }

  Eigen::Index dim() const { return base_.dim(); }
  const M& base() const noexcept { return base_; }
  const InterventionParams& phi() const noexcept { return phi_; }

  void drift_into(ConstVec x, MutVec out) const {
    base_.drift_into(x, out);
    if (!phi_.empty()) out += shift_;
  }

  Eigen::VectorXd drift(ConstVec x) const {
    Eigen::VectorXd out(dim());
    drift_into(x, out);
    return out;
  }

  Eigen::VectorXd diffusion() const {
    Eigen::VectorXd s = base_.diffusion();
    if (!phi_.empty()) s = s.cwiseProduct(scale_sq_);
    return s;
  }

 private:
  M base_;
  InterventionParams phi_;
  Eigen::VectorXd shift_;
  Eigen::VectorXd scale_sq_;
};

template <DiffusionModel M>
Eigen::VectorXd eval_drift(const M& model, ConstVec x) {
  if (x.size() != model.dim()) throw DomainError("eval_drift: dimension mismatch");
  Eigen::VectorXd out(model.dim());
  model.drift_into(x, out);
  return out;
}

template <DifferentiableModel M>
Eigen::VectorXd drift_vjp(const M& model, ConstVec x, ConstVec cotangent) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.num_params());
  model.add_drift_vjp(x, cotangent, grad);
  return grad;
}

template <DiffusionModel M>
Intervened<M> apply_intervention(const M& model, const InterventionParams& phi) {
  return Intervened<M>(model, phi);
}

template <DiffusionModel M>
Eigen::VectorXd diffusion_matrix(const M& model, const InterventionParams& phi) {
  return Intervened<M>(model, phi).diffusion();
}

}  // namespace statdiff
