#pragma once

#include <chrono>
#include <ctime>
#include <iostream>
#include <string>

#include "run_config.hpp"

namespace statdiff::cli {

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// resolved_config.json; the timestamp lives only in metadata.created_utc.
inline void write_resolved_config(const fs::path& out, const RunConfig& cfg, const std::string& command,
                                  const Json& extra = Json::object()) {
  Json j = to_json(cfg);
  j["command"] = command;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  j["metadata"] = {{"version", kVersion}, {"created_utc", utc_timestamp()}};
  io::write_json(out / "resolved_config.json", j);
}

inline BenchmarkTask cmd_generate(const RunConfig& cfg, const fs::path& out) {
  const BenchmarkTask task = make_benchmark_task(cfg.task);
  write_task_bundle(out, task);
  if (task.system.kind == SystemKind::sde) {
    io::write_json(out / "truth_model.json", model_to_json(standardized_truth_model(task.system, task.standardization)));
  }
  write_resolved_config(out, cfg, "generate");
  return task;
}

inline TrainResult train_into(const std::vector<Environment>& envs, const RunConfig& cfg, const TrainConfig& tc,
                              const fs::path& out, const fs::path& task_dir) {
  TrainResult r = train(envs, tc);
  fs::create_directories(out);
  save_checkpoint(out / "checkpoint.json", r.state);
  write_trace_csv(out / "loss.csv", r.trace);
  RunConfig resolved = cfg;
  resolved.train = tc;
  resolved.lambda_sweep.clear();
  write_resolved_config(out, resolved, "train", {{"task_dir", task_dir.string()}});
  return r;
}

inline std::string lambda_dir(double lambda) { return "lambda_" + io::format_double(lambda); }

/// Trains on the observational and training splits only; test CSVs are never opened.
inline void cmd_train(const RunConfig& cfg, const fs::path& task_dir, const fs::path& out) {
  cfg.train.validate();
  const BenchmarkTask task = read_task_bundle(task_dir, TestSplits::skip);
  const auto envs = training_environments(task);
  if (cfg.lambda_sweep.empty()) {
    const TrainResult r = train_into(envs, cfg, cfg.train, out, task_dir);
    std::cerr << "trained " << r.state.step << " steps, last batch kds "
              << (r.trace.empty() ? std::nan("") : r.trace.back().kds) << "\n";
    return;
  }
  for (double lambda : cfg.lambda_sweep) {
    TrainConfig tc = cfg.train;
    tc.lambda = lambda;
    tc.validate();
    train_into(envs, cfg, tc, out / lambda_dir(lambda), task_dir);
    std::cerr << "trained lambda " << lambda << "\n";
  }
}

inline EvalConfig eval_config(const RunConfig& cfg, const TaskConfig& task) {
  EvalConfig ec;
  ec.em.dt = cfg.eval.dt.value_or(task.dt);
  ec.em.thinning = cfg.eval.thinning.value_or(task.thinning);
  ec.em.burn_in_samples = cfg.eval.burn_in_samples.value_or(task.burn_in_samples);
  ec.em.seed = cfg.seed;
  ec.calibration_seed = cfg.eval.calibration_seed;
  ec.sinkhorn = cfg.eval.sinkhorn;
  ec.observational = cfg.eval.observational;
  ec.parallel = Parallelism{cfg.eval.workers};
  return ec;
}

inline void write_report(const fs::path& out, const EvalReport& r) {
  io::write_json(out / "report.json", report_to_json(r));
  io::write_text(out / "report.csv", report_csv(r));
}

inline EvalReport cmd_evaluate(const RunConfig& cfg, const fs::path& task_dir, const fs::path& checkpoint,
                               const fs::path& out) {
  const BenchmarkTask task = read_task_bundle(task_dir, TestSplits::load);
  const TrainState state = load_checkpoint(checkpoint);
  const EvalReport r = evaluate_task(state.model, task, eval_config(cfg, task.config));
  fs::create_directories(out);
  write_report(out, r);
  write_resolved_config(out, cfg, "evaluate", {{"task_dir", task_dir.string()}, {"checkpoint", checkpoint.string()}});
  std::cout << "w2 median " << r.w2.median << " iqr " << r.w2.iqr() << ", mse median " << r.mse.median << " iqr "
            << r.mse.iqr() << ", failures " << r.failures << "\n";
  return r;
}

inline void cmd_predict(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out) {
  const TrainState state = load_checkpoint(checkpoint);
  const PredictSettings& p = cfg.predict;
  const auto n = static_cast<Eigen::Index>(p.targets.size());
  auto vec = [&](const std::vector<double>& v, const char* what) {
    if (v.empty()) return Eigen::VectorXd::Zero(n).eval();
    if (static_cast<Eigen::Index>(v.size()) != n) {
      throw ConfigError(std::string("predict: ") + what + " needs one entry per target");
    }
    return Eigen::Map<const Eigen::VectorXd>(v.data(), n).eval();
  };
  InterventionParams phi(p.targets, vec(p.delta, "delta"), vec(p.log_beta, "log_beta"));
  try {
    phi.validate(state.model.dim());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("predict: ") + e.what());
  }
  fs::create_directories(out);
  write_samples_csv(out / "samples.csv", em_stationary_samples(state.model, phi, p.em));
  write_resolved_config(out, cfg, "predict", {{"checkpoint", checkpoint.string()}});
}

inline void cmd_benchmark(const RunConfig& cfg, const fs::path& out) {
  if (cfg.benchmark.systems < 1) throw ConfigError("benchmark: systems must be >= 1");
  std::string summary = "system,seed,w2_median,mse_median,failures,obs_w2_median,obs_mse_median\n";
  for (int s = 0; s < cfg.benchmark.systems; ++s) {
    RunConfig c = cfg;
    c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(s));
    c.task.seed = c.train.seed = c.predict.em.seed = c.seed;
    const fs::path dir = out / ("system_" + std::to_string(s));
    cmd_generate(c, dir / "task");
    const BenchmarkTask task = read_task_bundle(dir / "task", TestSplits::skip);
    train_into(training_environments(task), c, c.train, dir / "train", dir / "task");
    c.eval.observational = false;
    const EvalReport r = cmd_evaluate(c, dir / "task", dir / "train" / "checkpoint.json", dir / "eval");
    c.eval.observational = true;
    const EvalReport o = cmd_evaluate(c, dir / "task", dir / "train" / "checkpoint.json", dir / "eval_observational");
    summary += std::to_string(s) + ',' + std::to_string(c.seed) + ',' + io::format_double(r.w2.median) + ',' +
               io::format_double(r.mse.median) + ',' + std::to_string(r.failures) + ',' +
               io::format_double(o.w2.median) + ',' + io::format_double(o.mse.median) + '\n';
  }
  io::write_text(out / "summary.csv", summary);
  write_resolved_config(out, cfg, "benchmark");
}

inline void cmd_fig2(const RunConfig& cfg, const fs::path& out) {
  const Fig2Settings& f = cfg.fig2;
  try {
    f.truth.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("fig2: ") + e.what());
  }
  if (f.n_samples < 2) throw ConfigError("fig2: n_samples must be >= 2");
  std::mt19937_64 rng(cfg.seed);
  const Samples data = f.truth.sample(f.n_samples, rng);
  std::string csv = "param,value,kds,dkds_dparam\n";
  for (ScanParam which : {ScanParam::a, ScanParam::c}) {
    const auto scan = parameter_scan(f.truth, which, data, f.scan);
    for (const ScanPoint& pt : scan) {
      csv += to_string(which) + ',' + io::format_double(pt.value) + ',' + io::format_double(pt.kds) + ',' +
             io::format_double(pt.derivative) + '\n';
    }
    std::cout << to_string(which) << " sign changes:";
    for (const SignChange& sc : sign_changes(scan)) std::cout << " [" << sc.lo << ", " << sc.hi << "]";
    std::cout << "\n";
  }
  fs::create_directories(out);
  io::write_text(out / "fig2.csv", csv);
  write_samples_csv(out / "samples.csv", data);
  write_resolved_config(out, cfg, "fig2");
}

}  // namespace statdiff::cli
