#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "statdiff/datagen.hpp"
#include "statdiff/errors.hpp"
#include "statdiff/eval.hpp"
#include "statdiff/models.hpp"
#include "statdiff/trainer.hpp"

#ifndef STATDIFF_VERSION
#define STATDIFF_VERSION "unknown"
#endif

namespace statdiff {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = STATDIFF_VERSION;

namespace io {

/// Shortest decimal that round-trips; nan and inf spelled out.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& where) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw IoError(where + ": cannot parse '" + s + "' as a number");
  return v;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

template <class T>
T get(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw IoError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw IoError(where + ": field '" + key + "': " + e.what());
  }
}

inline Json to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw IoError(where + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw IoError(where + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

template <class Derived>
Json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw IoError(where + ": expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j[0].size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw IoError(where + ": ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<Scalar>();
  }
  return m;
}

}  // namespace io

// ---- samples ----

/// CSV with header x1,...,xd and one sample per row.
inline void write_samples_csv(const fs::path& path, const Samples& D) {
  std::string out;
  for (Eigen::Index c = 0; c < D.cols(); ++c) out += (c ? ",x" : "x") + std::to_string(c + 1);
  out += '\n';
  for (Eigen::Index r = 0; r < D.rows(); ++r) {
    for (Eigen::Index c = 0; c < D.cols(); ++c) {
      if (c) out += ',';
      out += io::format_double(D(r, c));
    }
    out += '\n';
  }
  io::write_text(path, out);
}

inline Samples read_samples_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index n = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(io::parse_double(cell, where));
      ++n;
    }
    if (n != cols) throw IoError(where + ": expected " + std::to_string(cols) + " columns, got " + std::to_string(n));
  }
  const auto rows = static_cast<Eigen::Index>(values.size()) / cols;
  Samples D(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) D(r, c) = values[static_cast<std::size_t>(r * cols + c)];
  return D;
}

// ---- models and checkpoints ----

inline Json model_to_json(const SdeModel& model) {
  const ModelShape shape = model.shape();
  const SdeModel fresh(shape);
  Json frozen = Json::array();
  for (Eigen::Index i = 0; i < model.num_params(); ++i) {
    if (fresh.trainable(i) && !model.trainable(i)) frozen.push_back(i);
  }
  Json j;
  j["kind"] = to_string(shape.kind);
  j["dim"] = shape.dim;
  j["hidden"] = shape.hidden;
  j["fixed_self_regulation"] = shape.fixed_self_regulation;
  j["params"] = io::to_json(model.params());
  j["frozen"] = frozen;
  return j;
}

inline SdeModel model_from_json(const Json& j) {
  const std::string where = "model";
  ModelShape shape;
  try {
    shape.kind = drift_kind_from_string(io::get<std::string>(j, "kind", where));
  } catch (const ConfigError& e) {
    throw IoError(std::string("model: ") + e.what());
  }
  shape.dim = io::get<int>(j, "dim", where);
  shape.hidden = io::get<int>(j, "hidden", where);
  shape.fixed_self_regulation = j.value("fixed_self_regulation", true);
  if (shape.dim < 1 || (shape.kind == DriftKind::mlp && shape.hidden < 1)) throw IoError("model: bad shape");
  SdeModel model(shape);
  const Eigen::VectorXd params = io::vector_from_json(j.at("params"), "model.params");
  if (params.size() != model.num_params()) {
    throw IoError("model: expected " + std::to_string(model.num_params()) + " params, got " +
                  std::to_string(params.size()));
  }
  model.set_params(params);
  for (const auto& idx : j.value("frozen", Json::array())) {
    const auto i = idx.get<Eigen::Index>();
    if (i < 0 || i >= model.num_params()) throw IoError("model: frozen index out of range");
    model.freeze(i);
  }
  return model;
}

inline Json phi_to_json(const InterventionParams& phi) {
  Json j;
  j["targets"] = phi.targets;
  j["delta"] = io::to_json(phi.delta);
  j["log_beta"] = io::to_json(phi.log_beta);
  return j;
}

inline InterventionParams phi_from_json(const Json& j) {
  const auto targets = io::get<std::vector<int>>(j, "targets", "intervention");
  const Eigen::VectorXd delta = io::vector_from_json(j.at("delta"), "intervention.delta");
  const Eigen::VectorXd log_beta = j.contains("log_beta")
                                       ? io::vector_from_json(j.at("log_beta"), "intervention.log_beta")
                                       : Eigen::VectorXd::Zero(delta.size());
  try {
    return InterventionParams(targets, delta, log_beta);
  } catch (const DomainError& e) {
    throw IoError(std::string("intervention: ") + e.what());
  }
}

inline Json adam_to_json(const AdamMoments& a) {
  Json j;
  j["m"] = io::to_json(a.m);
  j["v"] = io::to_json(a.v);
  j["steps"] = a.steps;
  return j;
}

inline AdamMoments adam_from_json(const Json& j) {
  AdamMoments a;
  a.m = io::vector_from_json(j.at("m"), "optimizer.m");
  a.v = io::vector_from_json(j.at("v"), "optimizer.v");
  a.steps = io::get<decltype(a.steps)>(j, "steps", "optimizer");
  return a;
}

inline void save_checkpoint(const fs::path& path, const TrainState& state) {
  Json j;
  j["format"] = "statdiff-checkpoint";
  j["version"] = kVersion;
  j["step"] = state.step;
  j["model"] = model_to_json(state.model);
  j["phis"] = Json::array();
  for (const auto& phi : state.phis) j["phis"].push_back(phi_to_json(phi));
  j["optimizer"]["theta"] = adam_to_json(state.theta_opt);
  j["optimizer"]["phis"] = Json::array();
  for (const auto& a : state.phi_opt) j["optimizer"]["phis"].push_back(adam_to_json(a));
  io::write_json(path, j);
}

/// Reads a checkpoint or a bare model file (phis and optimizer then stay empty).
inline TrainState load_checkpoint(const fs::path& path) {
  const Json j = io::read_json(path);
  TrainState s;
  try {
    if (!j.contains("model")) {
      s.model = model_from_json(j);
      s.theta_opt = AdamMoments::zeros(s.model.num_params());
      return s;
    }
    s.model = model_from_json(j.at("model"));
    s.step = j.value("step", 0);
    for (const auto& p : j.value("phis", Json::array())) s.phis.push_back(phi_from_json(p));
    if (j.contains("optimizer")) {
      s.theta_opt = adam_from_json(j["optimizer"].at("theta"));
      for (const auto& a : j["optimizer"].value("phis", Json::array())) s.phi_opt.push_back(adam_from_json(a));
    } else {
      s.theta_opt = AdamMoments::zeros(s.model.num_params());
    }
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  for (const auto& phi : s.phis) {
    try {
      phi.validate(s.model.dim());
    } catch (const DomainError& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }
  return s;
}

inline void write_trace_csv(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::string out = "step,env,kds,penalty\n";
  for (const auto& r : trace) {
    out += std::to_string(r.step) + ',' + std::to_string(r.env) + ',' + io::format_double(r.kds) + ',' +
           io::format_double(r.penalty) + '\n';
  }
  io::write_text(path, out);
}

// ---- task bundles ----

/// On-disk layout: manifest.json, obs.csv, train_<k>.csv, test_<k>.csv.
struct TaskBundle {
  static constexpr const char* kManifest = "manifest.json";
  static fs::path obs_file() { return "obs.csv"; }
  static fs::path train_file(std::size_t k) { return "train_" + std::to_string(k) + ".csv"; }
  static fs::path test_file(std::size_t k) { return "test_" + std::to_string(k) + ".csv"; }
};

inline Json task_config_to_json(const TaskConfig& c) {
  Json j;
  j["dim"] = c.dim;
  j["system"] = to_string(c.system);
  j["graph"] = to_string(c.graph);
  j["expected_degree"] = c.expected_degree;
  j["n_train_interventions"] = c.n_train_interventions;
  j["n_test_interventions"] = c.n_test_interventions;
  j["n_per_dataset"] = c.n_per_dataset;
  j["delta_min"] = c.delta_min;
  j["delta_max"] = c.delta_max;
  j["dt"] = c.dt;
  j["thinning"] = c.thinning;
  j["burn_in_samples"] = c.burn_in_samples;
  j["seed"] = c.seed;
  return j;
}

/// Fields absent from j keep the values already in c.
inline void task_config_from_json(const Json& j, TaskConfig& c) {
  c.dim = j.value("dim", c.dim);
  if (j.contains("system")) c.system = system_kind_from_string(j["system"].get<std::string>());
  if (j.contains("graph")) c.graph = graph_kind_from_string(j["graph"].get<std::string>());
  c.expected_degree = j.value("expected_degree", c.expected_degree);
  c.n_train_interventions = j.value("n_train_interventions", c.n_train_interventions);
  c.n_test_interventions = j.value("n_test_interventions", c.n_test_interventions);
  c.n_per_dataset = j.value("n_per_dataset", c.n_per_dataset);
  c.delta_min = j.value("delta_min", c.delta_min);
  c.delta_max = j.value("delta_max", c.delta_max);
  c.dt = j.value("dt", c.dt);
  c.thinning = j.value("thinning", c.thinning);
  c.burn_in_samples = j.value("burn_in_samples", c.burn_in_samples);
  c.seed = j.value("seed", c.seed);
}

inline void write_task_bundle(const fs::path& dir, const BenchmarkTask& task) {
  Json m;
  m["format"] = "statdiff-task";
  m["version"] = kVersion;
  m["config"] = task_config_to_json(task.config);
  m["graph"] = io::matrix_to_json(task.graph.G);
  m["system"]["kind"] = to_string(task.system.kind);
  m["system"]["W"] = io::matrix_to_json(task.system.W);
  m["system"]["b"] = io::to_json(task.system.b);
  m["system"]["sigma"] = io::to_json(task.system.sigma);
  m["system"]["margin"] = task.system.margin;
  m["system"]["rho_before_shift"] = task.system.rho_before_shift;
  m["standardization"]["mean"] = io::to_json(task.standardization.mean);
  m["standardization"]["scale"] = io::to_json(task.standardization.scale);
  m["observational"] = {{"file", TaskBundle::obs_file().string()}, {"seed", task.obs_seed}};
  auto records = [](const std::vector<InterventionRecord>& recs, auto file_of) {
    Json a = Json::array();
    for (std::size_t k = 0; k < recs.size(); ++k) {
      a.push_back({{"file", file_of(k).string()},
                   {"target", recs[k].target},
                   {"delta", recs[k].delta},
                   {"seed", recs[k].seed}});
    }
    return a;
  };
  m["train"] = records(task.train, TaskBundle::train_file);
  m["test"] = records(task.test, TaskBundle::test_file);

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_samples_csv(dir / TaskBundle::obs_file(), task.obs);
  for (std::size_t k = 0; k < task.train.size(); ++k)
    write_samples_csv(dir / TaskBundle::train_file(k), task.train[k].data);
  for (std::size_t k = 0; k < task.test.size(); ++k)
    write_samples_csv(dir / TaskBundle::test_file(k), task.test[k].data);
  io::write_json(dir / TaskBundle::kManifest, m);
}

enum class TestSplits { skip, load };

/// Loads a bundle. With TestSplits::skip the test CSVs are never opened and the test
/// records carry metadata only.
inline BenchmarkTask read_task_bundle(const fs::path& dir, TestSplits tests = TestSplits::skip) {
  const Json m = io::read_json(dir / TaskBundle::kManifest);
  BenchmarkTask task;
  try {
    task_config_from_json(m.at("config"), task.config);
    task.graph.G = io::matrix_from_json<int>(m.at("graph"), "manifest.graph");
    task.graph.kind = task.config.graph;
    task.graph.expected_degree = task.config.expected_degree;
    const Json& s = m.at("system");
    task.system.kind = system_kind_from_string(s.at("kind").get<std::string>());
    task.system.W = io::matrix_from_json<double>(s.at("W"), "manifest.system.W");
    task.system.b = io::vector_from_json(s.at("b"), "manifest.system.b");
    task.system.sigma = io::vector_from_json(s.at("sigma"), "manifest.system.sigma");
    task.system.margin = s.value("margin", task.system.margin);
    task.system.rho_before_shift = s.value("rho_before_shift", 0.0);
    task.standardization.mean = io::vector_from_json(m.at("standardization").at("mean"), "standardization.mean");
    task.standardization.scale = io::vector_from_json(m.at("standardization").at("scale"), "standardization.scale");
    task.obs_seed = m.at("observational").value("seed", std::uint64_t{0});
    task.obs = read_samples_csv(dir / m.at("observational").at("file").get<std::string>());

    auto load = [&](const Json& arr, bool with_data) {
      std::vector<InterventionRecord> out;
      for (const auto& r : arr) {
        InterventionRecord rec;
        rec.target = r.at("target").get<int>();
        rec.delta = r.at("delta").get<double>();
        rec.seed = r.value("seed", std::uint64_t{0});
        if (with_data) {
          const fs::path file = dir / r.at("file").get<std::string>();
          if (!fs::exists(file)) throw IoError("missing data split " + file.string());
          rec.data = read_samples_csv(file);
        }
        out.push_back(std::move(rec));
      }
      return out;
    };
    task.train = load(m.at("train"), true);
    task.test = load(m.at("test"), tests == TestSplits::load);
  } catch (const Json::exception& e) {
    throw IoError((dir / TaskBundle::kManifest).string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError((dir / TaskBundle::kManifest).string() + ": " + e.what());
  }
  const Eigen::Index d = task.config.dim;
  auto check = [&](const Samples& D, const std::string& what) {
    if (D.cols() != d) throw IoError(what + " has " + std::to_string(D.cols()) + " columns, manifest says " + std::to_string(d));
  };
  check(task.obs, "obs");
  for (const auto& r : task.train) check(r.data, "train split");
  if (tests == TestSplits::load)
    for (const auto& r : task.test) check(r.data, "test split");
  return task;
}

/// Observational data as environment 0 followed by the training interventions.
inline std::vector<Environment> training_environments(const BenchmarkTask& task) {
  std::vector<Environment> envs{{task.obs, {}}};
  for (const auto& r : task.train) envs.push_back({r.data, {r.target}});
  return envs;
}

// ---- reports ----

inline Json summary_to_json(const Summary& s) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return {{"median", num(s.median)}, {"q1", num(s.q1)}, {"q3", num(s.q3)}, {"iqr", num(s.iqr())}};
}

inline Json report_to_json(const EvalReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  Json j;
  j["observational"] = r.observational;
  j["w2"] = summary_to_json(r.w2);
  j["mse"] = summary_to_json(r.mse);
  j["failures"] = r.failures;
  j["sinkhorn_warnings"] = r.sinkhorn_warnings;
  j["interventions"] = Json::array();
  for (const auto& row : r.interventions) {
    Json e;
    e["intervention_id"] = row.id;
    e["target"] = row.target;
    e["delta"] = row.delta;
    e["target_mean"] = num(row.target_mean);
    e["residual"] = num(row.residual);
    e["w2"] = num(row.w2);
    e["mse"] = num(row.mse);
    e["sinkhorn_converged"] = row.sinkhorn_converged;
    e["status"] = to_string(row.status);
    if (!row.message.empty()) e["message"] = row.message;
    j["interventions"].push_back(std::move(e));
  }
  return j;
}

inline std::string report_csv(const EvalReport& r) {
  std::string out = "intervention_id,target,delta,w2,mse,status\n";
  for (const auto& row : r.interventions) {
    out += std::to_string(row.id) + ',' + std::to_string(row.target) + ',' + io::format_double(row.delta) + ',' +
           io::format_double(row.w2) + ',' + io::format_double(row.mse) + ',' + to_string(row.status) + '\n';
  }
  return out;
}

}  // namespace statdiff
