#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "statdiff/errors.hpp"
#include "statdiff/kds.hpp"
#include "statdiff/kernel.hpp"
#include "statdiff/models.hpp"
#include "statdiff/parallel.hpp"

namespace statdiff {

struct TrainConfig {
  int steps = 20000;
  double learning_rate = 1e-3;
  int batch_size = 512;
  double lambda = 0.0;
  double gamma = 1.0;
  std::uint64_t seed = 0;
  double init_scale = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  DriftKind model = DriftKind::linear;
  int hidden = 8;
  int trace_every = 100;
  unsigned workers = 0;

  void validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (!positive(learning_rate)) throw ConfigError("train: learning_rate must be positive");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train: lambda must be >= 0");
    if (!positive(gamma)) throw ConfigError("train: gamma must be positive");
    if (!(init_scale >= 0.0)) throw ConfigError("train: init_scale must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("train: Adam betas must lie in [0, 1)");
    }
    if (!positive(adam_eps)) throw ConfigError("train: adam_eps must be positive");
    if (model == DriftKind::mlp && hidden < 1) throw ConfigError("train: hidden must be >= 1");
    if (trace_every < 1) throw ConfigError("train: trace_every must be >= 1");
  }
};

/// One dataset and the coordinates its intervention targets (empty = observational).
struct Environment {
  Samples data;
  std::vector<int> targets;
};

struct AdamMoments {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t steps = 0;

  static AdamMoments zeros(Eigen::Index n) {
    return AdamMoments{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
  }
};

struct TrainState {
  SdeModel model = SdeModel::linear(1);
  std::vector<InterventionParams> phis;  // one per environment
  AdamMoments theta_opt;
  std::vector<AdamMoments> phi_opt;      // shift moments, one per environment
  std::int64_t step = 0;
};

struct TraceRow {
  std::int64_t step = 0;
  int env = 0;
  double kds = 0.0;
  double penalty = 0.0;
};

struct StepInfo {
  int env = 0;
  double kds = 0.0;
  double penalty = 0.0;
};

struct PenaltyValue {
  double value = 0.0;
  Eigen::VectorXd subgradient;
};

/// Sparsity penalty on cross-variable drift dependencies. Linear: sum_{i != j} |W_ji|.
/// MLP: sum_{i != j} |U_j[:, i]|_2. Subgradients are 0 at exactly-zero groups.
inline PenaltyValue group_lasso(const SdeModel& model) {
  PenaltyValue out;
  out.subgradient = Eigen::VectorXd::Zero(model.num_params());
  const Eigen::Index d = model.dim();
  const Eigen::VectorXd& p = model.params();
  if (model.shape().kind == DriftKind::linear) {
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) {
        if (i == j) continue;
        const Eigen::Index idx = model.weight_index(j, i);
        out.value += std::abs(p[idx]);
        out.subgradient[idx] = p[idx] > 0.0 ? 1.0 : (p[idx] < 0.0 ? -1.0 : 0.0);
      }
    }
    return out;
  }
  const Eigen::Index h = model.shape().hidden;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      if (i == j) continue;
      double sq = 0.0;
      for (Eigen::Index k = 0; k < h; ++k) sq += p[model.u_index(j, k, i)] * p[model.u_index(j, k, i)];
      const double norm = std::sqrt(sq);
      out.value += norm;
      if (norm == 0.0) continue;
      for (Eigen::Index k = 0; k < h; ++k) {
        const Eigen::Index idx = model.u_index(j, k, i);
        out.subgradient[idx] = p[idx] / norm;
      }
    }
  }
  return out;
}

namespace detail {

inline void require_environments(const std::vector<Environment>& envs, Eigen::Index dim) {
  if (envs.empty()) throw ConfigError("train: need at least one environment");
  if (!envs.front().targets.empty()) {
    throw ConfigError("train: environment 0 must be observational (no targets)");
  }
  for (std::size_t e = 0; e < envs.size(); ++e) {
    if (envs[e].data.rows() < 2) {
      throw ConfigError("train: environment " + std::to_string(e) + " has fewer than 2 samples");
    }
    if (envs[e].data.cols() != dim) {
      throw ConfigError("train: environment " + std::to_string(e) + " has dimension " +
                        std::to_string(envs[e].data.cols()) + ", expected " + std::to_string(dim));
    }
    InterventionParams(envs[e].targets).validate(dim);
  }
}

inline void adam_update(Eigen::Ref<Eigen::VectorXd> params, AdamMoments& opt,
                        const Eigen::VectorXd& grad, const std::vector<bool>* trainable,
                        const TrainConfig& cfg) {
  ++opt.steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.steps));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.steps));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    if (trainable != nullptr && !(*trainable)[static_cast<std::size_t>(i)]) continue;
    opt.m[i] = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * grad[i];
    opt.v[i] = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    params[i] -= cfg.learning_rate * (opt.m[i] / c1) / (std::sqrt(opt.v[i] / c2) + cfg.adam_eps);
  }
}

}  // namespace detail

/// Initial parameters: linear b and off-diagonal W ~ N(0, init_scale^2); MLP w and U
/// uniform in +-sqrt(3 init_scale / fan_in) (fan_in = h for w, d for U), b = v = 0;
/// log scales s = 0.
inline SdeModel init_model(int dim, const TrainConfig& cfg, std::mt19937_64& rng) {
  SdeModel model = cfg.model == DriftKind::linear ? SdeModel::linear(dim) : SdeModel::mlp(dim, cfg.hidden);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(model.num_params());
  const Eigen::Index d = dim;
  if (cfg.model == DriftKind::linear) {
    std::normal_distribution<double> normal(0.0, cfg.init_scale);
    for (Eigen::Index j = 0; j < d; ++j) p[model.bias_index(j)] = normal(rng);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = 0; i < d; ++i) p[model.weight_index(j, i)] = normal(rng);
  } else {
    const Eigen::Index h = cfg.hidden;
    std::uniform_real_distribution<double> w_init(-std::sqrt(3.0 * cfg.init_scale / h),
                                                  std::sqrt(3.0 * cfg.init_scale / h));
    std::uniform_real_distribution<double> u_init(-std::sqrt(3.0 * cfg.init_scale / d),
                                                  std::sqrt(3.0 * cfg.init_scale / d));
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index k = 0; k < h; ++k) p[model.w_index(j, k)] = w_init(rng);
      for (Eigen::Index k = 0; k < h; ++k)
        for (Eigen::Index i = 0; i < d; ++i) p[model.u_index(j, k, i)] = u_init(rng);
    }
  }
  model.set_params(p);
  return model;
}

/// Wraps a given model into a fresh training state: zero optimizer moments and one
/// shift intervention per environment, warm-started at the difference of target means.
inline TrainState make_state(SdeModel model, const std::vector<Environment>& envs) {
  detail::require_environments(envs, model.dim());
  TrainState state;
  state.theta_opt = AdamMoments::zeros(model.num_params());
  const Eigen::VectorXd obs_mean = envs.front().data.colwise().mean().transpose();
  for (const Environment& env : envs) {
    InterventionParams phi(env.targets);
    if (!env.targets.empty()) {
      const Eigen::VectorXd mean = env.data.colwise().mean().transpose();
      for (Eigen::Index a = 0; a < phi.size(); ++a) {
        const int j = phi.targets[static_cast<std::size_t>(a)];
        phi.delta[a] = mean[j] - obs_mean[j];
      }
    }
    state.phi_opt.push_back(AdamMoments::zeros(phi.size()));
    state.phis.push_back(std::move(phi));
  }
  state.model = std::move(model);
  return state;
}

inline TrainState init(const std::vector<Environment>& envs, const TrainConfig& cfg) {
  cfg.validate();
  if (envs.empty()) throw ConfigError("train: need at least one environment");
  std::mt19937_64 rng(cfg.seed);
  return make_state(init_model(static_cast<int>(envs.front().data.cols()), cfg, rng), envs);
}

/// Draws batches without replacement within a step (with replacement when an
/// environment has fewer rows than the batch size).
class BatchSampler {
 public:
  explicit BatchSampler(const std::vector<Environment>& envs) {
    for (const Environment& env : envs) {
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(env.data.rows()));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
      index_.push_back(std::move(idx));
    }
  }

  Samples draw(const Environment& env, std::size_t e, int batch_size, std::mt19937_64& rng) {
    const Eigen::Index n = env.data.rows();
    Samples out(batch_size, env.data.cols());
    if (n < batch_size) {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      for (int r = 0; r < batch_size; ++r) out.row(r) = env.data.row(pick(rng));
      return out;
    }
    std::vector<Eigen::Index>& idx = index_[e];
    for (int r = 0; r < batch_size; ++r) {
      std::uniform_int_distribution<Eigen::Index> pick(r, n - 1);
      std::swap(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(pick(rng))]);
      out.row(r) = env.data.row(idx[static_cast<std::size_t>(r)]);
    }
    return out;
  }

 private:
  std::vector<std::vector<Eigen::Index>> index_;
};

/// One update of (theta, phi_i) for a uniformly drawn environment i.
inline StepInfo train_step(TrainState& state, const std::vector<Environment>& envs,
                           const TrainConfig& cfg, BatchSampler& sampler, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick_env(0, envs.size() - 1);
  const std::size_t e = pick_env(rng);
  const Samples batch = sampler.draw(envs[e], e, cfg.batch_size, rng);
  const KernelConfig kernel(cfg.gamma);
  const KdsGradient g = kds_grad(kernel, state.model, state.phis[e], batch, Parallelism{cfg.workers});
  PenaltyValue pen = group_lasso(state.model);
  ++state.step;

  Eigen::VectorXd grad_theta = g.theta + cfg.lambda * pen.subgradient;
  if (!std::isfinite(g.value) || !grad_theta.allFinite() || !g.delta.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite loss or gradient at step " << state.step << " (environment " << e
        << ", kds " << g.value << ", |theta| " << state.model.params().norm() << ", |delta| "
        << state.phis[e].delta.norm() << ")";
    throw NumericError(msg.str());
  }
  Eigen::VectorXd params = state.model.params();
  detail::adam_update(params, state.theta_opt, grad_theta, &state.model.trainable_mask(), cfg);
  state.model.set_params(params);
  if (!state.phis[e].empty()) {
    detail::adam_update(state.phis[e].delta, state.phi_opt[e], g.delta, nullptr, cfg);
  }
  return StepInfo{static_cast<int>(e), g.value, pen.value};
}

struct TrainResult {
  TrainState state;
  std::vector<TraceRow> trace;
};

using StepCallback = std::function<void(const TrainState&, const StepInfo&)>;

/// Runs cfg.steps updates from `state`, recording a trace row every cfg.trace_every steps.
inline TrainResult train(TrainState state, const std::vector<Environment>& envs,
                         const TrainConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  detail::require_environments(envs, state.model.dim());
  if (state.phis.size() != envs.size()) throw ConfigError("train: one phi per environment required");
  // Stream 1 of the seed; stream 0 is the initialization.
  std::mt19937_64 rng(cfg.seed ^ 0xa0761d6478bd642fULL);
  BatchSampler sampler(envs);
  TrainResult out;
  for (int s = 0; s < cfg.steps; ++s) {
    const StepInfo info = train_step(state, envs, cfg, sampler, rng);
    if (state.step % cfg.trace_every == 0) {
      out.trace.push_back(TraceRow{state.step, info.env, info.kds, info.penalty});
    }
    if (on_step) on_step(state, info);
  }
  out.state = std::move(state);
  return out;
}

inline TrainResult train(const std::vector<Environment>& envs, const TrainConfig& cfg,
                         const StepCallback& on_step = {}) {
  return train(init(envs, cfg), envs, cfg, on_step);
}

}  // namespace statdiff
