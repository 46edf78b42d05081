#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "statdiff/statdiff.hpp"

namespace statdiff::cli {

struct EvalSettings {
  // Euler-Maruyama settings; unset fields fall back to the task manifest.
  std::optional<double> dt;
  std::optional<int> thinning;
  std::optional<int> burn_in_samples;
  SinkhornConfig sinkhorn;
  std::uint64_t calibration_seed = EvalConfig{}.calibration_seed;
  bool observational = false;
  unsigned workers = 1;
};

struct PredictSettings {
  std::vector<int> targets;
  std::vector<double> delta;
  std::vector<double> log_beta;
  EmConfig em;
};

struct Fig2Settings {
  ScalarOu truth{1.0, -1.0, 1.0};
  int n_samples = 1000;
  ScanConfig scan;
};

struct BenchmarkSettings {
  int systems = 5;
};

/// Everything a command needs. One top-level seed drives all randomness of a run.
struct RunConfig {
  std::uint64_t seed = 0;
  TaskConfig task;
  TrainConfig train;
  std::vector<double> lambda_sweep;
  EvalSettings eval;
  PredictSettings predict;
  Fig2Settings fig2;
  BenchmarkSettings benchmark;
};

namespace detail {

inline void check_keys(const Json& sec, const std::string& name, std::initializer_list<const char*> allowed) {
  if (!sec.is_object()) throw ConfigError("config: section '" + name + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : sec.items()) {
    if (!ok.count(key)) throw ConfigError("config: unknown key '" + (name.empty() ? key : name + "." + key) + "'");
  }
}

template <class T>
void read(const Json& sec, const char* key, T& out, const std::string& name) {
  if (!sec.contains(key)) return;
  try {
    out = sec.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config: bad value for '" + name + "." + key + "': " + sec.at(key).dump());
  }
}

template <class T>
void read(const Json& sec, const char* key, std::optional<T>& out, const std::string& name) {
  if (!sec.contains(key) || sec.at(key).is_null()) return;
  T v{};
  read(sec, key, v, name);
  out = v;
}

inline Json optional_json(const auto& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["task"] = task_config_to_json(c.task);
  j["task"].erase("seed");
  const TrainConfig& t = c.train;
  j["train"] = {{"steps", t.steps},
                {"learning_rate", t.learning_rate},
                {"batch_size", t.batch_size},
                {"lambda", t.lambda},
                {"lambda_sweep", c.lambda_sweep},
                {"gamma", t.gamma},
                {"init_scale", t.init_scale},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"model", to_string(t.model)},
                {"hidden", t.hidden},
                {"trace_every", t.trace_every},
                {"workers", t.workers}};
  const EvalSettings& e = c.eval;
  j["eval"] = {{"dt", detail::optional_json(e.dt)},
               {"thinning", detail::optional_json(e.thinning)},
               {"burn_in_samples", detail::optional_json(e.burn_in_samples)},
               {"epsilon", e.sinkhorn.epsilon},
               {"max_iters", e.sinkhorn.max_iters},
               {"tol", e.sinkhorn.tol},
               {"calibration_seed", e.calibration_seed},
               {"observational", e.observational},
               {"workers", e.workers}};
  const PredictSettings& p = c.predict;
  j["predict"] = {{"targets", p.targets},
                  {"delta", p.delta},
                  {"log_beta", p.log_beta},
                  {"n_samples", p.em.n_samples},
                  {"dt", p.em.dt},
                  {"thinning", p.em.thinning},
                  {"burn_in_samples", p.em.burn_in_samples}};
  const Fig2Settings& f = c.fig2;
  j["fig2"] = {{"a", f.truth.a},           {"b", f.truth.b},         {"c", f.truth.c},
               {"n_samples", f.n_samples}, {"gamma", f.scan.gamma}, {"points", f.scan.points},
               {"span", f.scan.span}};
  j["benchmark"] = {{"systems", c.benchmark.systems}};
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  // command, task_dir, checkpoint and metadata are recorded in resolved configs and ignored here.
  detail::check_keys(j, "", {"seed", "task", "train", "eval", "predict", "fig2", "benchmark", "command", "task_dir",
                             "checkpoint", "metadata"});
  detail::read(j, "seed", c.seed, "");
  if (j.contains("task")) {
    const Json& s = j["task"];
    detail::check_keys(s, "task",
                       {"dim", "system", "graph", "expected_degree", "n_train_interventions", "n_test_interventions",
                        "n_per_dataset", "delta_min", "delta_max", "dt", "thinning", "burn_in_samples"});
    try {
      task_config_from_json(s, c.task);
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("config: task: ") + e.what());
    }
  }
  if (j.contains("train")) {
    const Json& s = j["train"];
    detail::check_keys(s, "train",
                       {"steps", "learning_rate", "batch_size", "lambda", "lambda_sweep", "gamma", "init_scale",
                        "beta1", "beta2", "adam_eps", "model", "hidden", "trace_every", "workers"});
    TrainConfig& t = c.train;
    detail::read(s, "steps", t.steps, "train");
    detail::read(s, "learning_rate", t.learning_rate, "train");
    detail::read(s, "batch_size", t.batch_size, "train");
    detail::read(s, "lambda", t.lambda, "train");
    detail::read(s, "lambda_sweep", c.lambda_sweep, "train");
    detail::read(s, "gamma", t.gamma, "train");
    detail::read(s, "init_scale", t.init_scale, "train");
    detail::read(s, "beta1", t.beta1, "train");
    detail::read(s, "beta2", t.beta2, "train");
    detail::read(s, "adam_eps", t.adam_eps, "train");
    std::string kind = to_string(t.model);
    detail::read(s, "model", kind, "train");
    t.model = drift_kind_from_string(kind);
    detail::read(s, "hidden", t.hidden, "train");
    detail::read(s, "trace_every", t.trace_every, "train");
    detail::read(s, "workers", t.workers, "train");
  }
  if (j.contains("eval")) {
    const Json& s = j["eval"];
    detail::check_keys(s, "eval",
                       {"dt", "thinning", "burn_in_samples", "epsilon", "max_iters", "tol", "calibration_seed",
                        "observational", "workers"});
    EvalSettings& e = c.eval;
    detail::read(s, "dt", e.dt, "eval");
    detail::read(s, "thinning", e.thinning, "eval");
    detail::read(s, "burn_in_samples", e.burn_in_samples, "eval");
    detail::read(s, "epsilon", e.sinkhorn.epsilon, "eval");
    detail::read(s, "max_iters", e.sinkhorn.max_iters, "eval");
    detail::read(s, "tol", e.sinkhorn.tol, "eval");
    detail::read(s, "calibration_seed", e.calibration_seed, "eval");
    detail::read(s, "observational", e.observational, "eval");
    detail::read(s, "workers", e.workers, "eval");
  }
  if (j.contains("predict")) {
    const Json& s = j["predict"];
    detail::check_keys(s, "predict",
                       {"targets", "delta", "log_beta", "n_samples", "dt", "thinning", "burn_in_samples"});
    PredictSettings& p = c.predict;
    detail::read(s, "targets", p.targets, "predict");
    detail::read(s, "delta", p.delta, "predict");
    detail::read(s, "log_beta", p.log_beta, "predict");
    detail::read(s, "n_samples", p.em.n_samples, "predict");
    detail::read(s, "dt", p.em.dt, "predict");
    detail::read(s, "thinning", p.em.thinning, "predict");
    detail::read(s, "burn_in_samples", p.em.burn_in_samples, "predict");
  }
  if (j.contains("fig2")) {
    const Json& s = j["fig2"];
    detail::check_keys(s, "fig2", {"a", "b", "c", "n_samples", "gamma", "points", "span"});
    Fig2Settings& f = c.fig2;
    detail::read(s, "a", f.truth.a, "fig2");
    detail::read(s, "b", f.truth.b, "fig2");
    detail::read(s, "c", f.truth.c, "fig2");
    detail::read(s, "n_samples", f.n_samples, "fig2");
    detail::read(s, "gamma", f.scan.gamma, "fig2");
    detail::read(s, "points", f.scan.points, "fig2");
    detail::read(s, "span", f.scan.span, "fig2");
  }
  if (j.contains("benchmark")) {
    const Json& s = j["benchmark"];
    detail::check_keys(s, "benchmark", {"systems"});
    detail::read(s, "systems", c.benchmark.systems, "benchmark");
  }
  c.task.seed = c.seed;
  c.train.seed = c.seed;
  c.predict.em.seed = c.seed;
  return c;
}

/// Applies "a.b.c=value"; value is parsed as JSON when possible, else taken as a string.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::exception&) {
    value = raw;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: bad key '" + key + "'");
    if (!node->is_object()) *node = Json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

/// Defaults, then the config file, then --set overrides, then --seed.
inline RunConfig resolve_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                                std::optional<std::uint64_t> seed) {
  Json j = Json::object();
  if (path) {
    const std::string text = io::read_text(*path);
    try {
      j = Json::parse(text);
    } catch (const Json::exception& e) {
      throw ConfigError(*path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  return run_config_from_json(j);
}

}  // namespace statdiff::cli
