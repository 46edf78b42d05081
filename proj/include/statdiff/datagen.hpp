#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "statdiff/errors.hpp"
#include "statdiff/kds.hpp"
#include "statdiff/models.hpp"
#include "statdiff/simulate.hpp"

namespace statdiff {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed number `stream` of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

enum class GraphKind { erdos_renyi, scale_free };
enum class SystemKind { scm, sde };

inline std::string to_string(GraphKind k) { return k == GraphKind::erdos_renyi ? "er" : "sf"; }
inline std::string to_string(SystemKind k) {
  return k == SystemKind::scm ? "cyclic-linear-scm" : "cyclic-linear-sde";
}

inline GraphKind graph_kind_from_string(const std::string& s) {
  if (s == "er" || s == "erdos-renyi") return GraphKind::erdos_renyi;
  if (s == "sf" || s == "scale-free") return GraphKind::scale_free;
  throw ConfigError("unknown graph kind '" + s + "' (expected er or sf)");
}

inline SystemKind system_kind_from_string(const std::string& s) {
  if (s == "cyclic-linear-scm" || s == "scm") return SystemKind::scm;
  if (s == "cyclic-linear-sde" || s == "sde") return SystemKind::sde;
  throw ConfigError("unknown system kind '" + s + "' (expected cyclic-linear-scm or cyclic-linear-sde)");
}

/// Directed graph in parent convention: G(j, i) = 1 means i -> j, i.e. x_i enters mechanism j.
struct CausalGraph {
  Eigen::MatrixXi G;
  GraphKind kind = GraphKind::erdos_renyi;
  double expected_degree = 3.0;

  Eigen::Index dim() const { return G.rows(); }
  int edge_count() const { return G.sum(); }
  /// In-degree plus out-degree per node.
  Eigen::VectorXi degrees() const {
    return G.rowwise().sum() + G.colwise().sum().transpose();
  }
};

namespace detail {

inline void orient_randomly(Eigen::MatrixXi& G, int a, int b, Rng& rng) {
  if (std::bernoulli_distribution(0.5)(rng)) {
    G(a, b) = 1;
  } else {
    G(b, a) = 1;
  }
}

}  // namespace detail

/// Erdos-Renyi: every unordered pair is linked with probability degree / (d - 1), then
/// oriented by a fair coin. Scale-free: node j attaches to floor(degree / 2) earlier
/// nodes, plus one more with the fractional remainder as probability, chosen with
/// weights proportional to (current degree + 1); each link is then oriented by a coin.
inline CausalGraph sample_graph(int d, GraphKind kind, double expected_degree, Rng& rng) {
  if (d < 1) throw ConfigError("graph dimension must be >= 1");
  CausalGraph out;
  out.kind = kind;
  out.expected_degree = expected_degree;
  out.G = Eigen::MatrixXi::Zero(d, d);
  if (d == 1) return out;
  if (!(expected_degree >= 0.0) || expected_degree >= d) {
    throw ConfigError("expected degree must lie in [0, d); got " + std::to_string(expected_degree) +
                      " for d = " + std::to_string(d));
  }
  if (kind == GraphKind::erdos_renyi) {
    std::bernoulli_distribution link(expected_degree / (d - 1));
    for (int a = 0; a < d; ++a) {
      for (int b = a + 1; b < d; ++b) {
        if (link(rng)) detail::orient_randomly(out.G, a, b, rng);
      }
    }
    return out;
  }
  const double per_node = 0.5 * expected_degree;
  const int base_links = static_cast<int>(std::floor(per_node));
  std::bernoulli_distribution extra(per_node - base_links);
  std::vector<double> degree(static_cast<std::size_t>(d), 0.0);
  for (int j = 1; j < d; ++j) {
    int links = std::min(j, base_links + (extra(rng) ? 1 : 0));
    std::vector<double> weight(degree.begin(), degree.begin() + j);
    for (double& w : weight) w += 1.0;
    while (links-- > 0) {
      std::discrete_distribution<int> pick(weight.begin(), weight.end());
      const int i = pick(rng);
      weight[static_cast<std::size_t>(i)] = 0.0;
      detail::orient_randomly(out.G, i, j, rng);
      degree[static_cast<std::size_t>(i)] += 1.0;
      degree[static_cast<std::size_t>(j)] += 1.0;
    }
  }
  return out;
}

inline constexpr double kStabilityMargin = 0.5;

/// SCM:  x = W x + b + diag(sigma) eps.
/// SDE:  dx = (W x + b) dt + diag(sigma) dW.
struct GroundTruthSystem {
  SystemKind kind = SystemKind::sde;
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  Eigen::VectorXd sigma;
  double margin = kStabilityMargin;
  // max real eigenvalue part of W before the diagonal shift
  double rho_before_shift = 0.0;

  Eigen::Index dim() const { return b.size(); }
  double max_real_eigenvalue() const {
    return Eigen::EigenSolver<Eigen::MatrixXd>(W, false).eigenvalues().real().maxCoeff();
  }
  bool stable() const {
    const double rho = max_real_eigenvalue();
    return kind == SystemKind::sde ? rho < 0.0 : rho < 1.0;
  }
  LinearSdeSystem as_sde() const { return LinearSdeSystem(b, W, sigma); }
};

/// Off-diagonal weights from Unif(-3,-1) u (1,3) on the support of G, biases from
/// Unif(-3,3), log sigma from Unif(-1,1); then rho(W) + margin is subtracted from the diagonal.
inline GroundTruthSystem sample_system(const CausalGraph& graph, SystemKind kind, Rng& rng) {
  const Eigen::Index d = graph.dim();
  if (d < 1) throw ConfigError("sample_system: empty graph");
  std::uniform_real_distribution<double> magnitude(1.0, 3.0), bias(-3.0, 3.0), log_scale(-1.0, 1.0);
  std::bernoulli_distribution negative(0.5);
  GroundTruthSystem sys;
  sys.kind = kind;
  sys.W = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double w = (negative(rng) ? -1.0 : 1.0) * magnitude(rng);
      if (i != j && graph.G(j, i) != 0) sys.W(j, i) = w;
    }
  }
  sys.b.resize(d);
  sys.sigma.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) sys.b[j] = bias(rng);
  for (Eigen::Index j = 0; j < d; ++j) sys.sigma[j] = std::exp(log_scale(rng));
  sys.rho_before_shift = sys.max_real_eigenvalue();
  sys.W.diagonal().array() -= sys.rho_before_shift + sys.margin;
  return sys;
}

/// x = (I - W)^{-1} (b + delta + diag(sigma) eps), eps ~ N(0, I); shifts add to b on targets.
inline Samples sample_scm_data(const GroundTruthSystem& sys, const InterventionParams& phi,
                               Eigen::Index n, Rng& rng) {
  if (sys.kind != SystemKind::scm) throw ConfigError("sample_scm_data: system is not an SCM");
  const Eigen::Index d = sys.dim();
  phi.validate(d);
  Eigen::VectorXd b = sys.b;
  Eigen::VectorXd sigma = sys.sigma;
  for (Eigen::Index k = 0; k < phi.size(); ++k) {
    const int j = phi.targets[static_cast<std::size_t>(k)];
    b[j] += phi.delta[k];
    sigma[j] *= std::exp(phi.log_beta[k]);
  }
  const Eigen::MatrixXd IminusW = Eigen::MatrixXd::Identity(d, d) - sys.W;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(IminusW);
  if (!lu.isInvertible()) throw NumericError("sample_scm_data: I - W is singular");
  std::normal_distribution<double> normal;
  Samples noise(n, d);
  for (Eigen::Index m = 0; m < n; ++m) {
    for (Eigen::Index j = 0; j < d; ++j) noise(m, j) = b[j] + sigma[j] * normal(rng);
  }
  const Eigen::MatrixXd X = lu.solve(noise.transpose());
  return X.transpose();
}

/// Per-coordinate affine map fitted on one dataset, x -> (x - mean) / scale.
struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // population standard deviation (1/N)

  static Standardization fit(const Samples& D) {
    if (D.rows() < 1) throw NumericError("standardization needs at least one sample");
    Standardization s;
    s.mean = D.colwise().mean().transpose();
    s.scale = ((D.rowwise() - s.mean.transpose()).array().square().colwise().sum() /
               static_cast<double>(D.rows()))
                  .sqrt()
                  .transpose();
    if (!(s.scale.minCoeff() > 0.0)) throw NumericError("standardization: a column has zero spread");
    return s;
  }

  static Standardization identity(Eigen::Index d) {
    return Standardization{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)};
  }

  Samples apply(const Samples& D) const {
    Samples out = D;
    for (Eigen::Index m = 0; m < out.rows(); ++m) {
      out.row(m) = (out.row(m) - mean.transpose()).cwiseQuotient(scale.transpose());
    }
    return out;
  }
};

struct InterventionRecord {
  int target = 0;
  double delta = 0.0;       // raw-scale shift added to b_target
  std::uint64_t seed = 0;   // sampling seed of the dataset
  Samples data;             // standardized
};

struct TaskConfig {
  int dim = 20;
  SystemKind system = SystemKind::sde;
  GraphKind graph = GraphKind::erdos_renyi;
  double expected_degree = 3.0;
  int n_train_interventions = 10;
  int n_test_interventions = 10;
  int n_per_dataset = 1000;
  double delta_min = 5.0;
  double delta_max = 15.0;
  // Euler-Maruyama settings for SDE tasks (n_samples is taken from n_per_dataset).
  double dt = 0.01;
  int thinning = 500;
  int burn_in_samples = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 1) throw ConfigError("task: dim must be >= 1");
    if (n_train_interventions < 0 || n_test_interventions < 0) {
      throw ConfigError("task: intervention counts must be >= 0");
    }
    if (n_train_interventions + n_test_interventions > dim) {
      throw ConfigError("task: n_train_interventions + n_test_interventions (" +
                        std::to_string(n_train_interventions + n_test_interventions) +
                        ") exceeds dim (" + std::to_string(dim) + ")");
    }
    if (n_per_dataset < 2) throw ConfigError("task: n_per_dataset must be >= 2");
    if (!(delta_min > 0.0) || !(delta_max >= delta_min)) {
      throw ConfigError("task: need 0 < delta_min <= delta_max");
    }
  }
};

struct BenchmarkTask {
  TaskConfig config;
  CausalGraph graph;
  GroundTruthSystem system;
  Standardization standardization;
  std::uint64_t obs_seed = 0;
  Samples obs;  // standardized
  std::vector<InterventionRecord> train;
  std::vector<InterventionRecord> test;
};

namespace detail {

inline Samples sample_dataset(const GroundTruthSystem& sys, const TaskConfig& cfg,
                              const InterventionParams& phi, std::uint64_t seed) {
  if (sys.kind == SystemKind::scm) {
    Rng rng(seed);
    return sample_scm_data(sys, phi, cfg.n_per_dataset, rng);
  }
  EmConfig em;
  em.dt = cfg.dt;
  em.thinning = cfg.thinning;
  em.burn_in_samples = cfg.burn_in_samples;
  em.n_samples = cfg.n_per_dataset;
  em.seed = seed;
  return em_stationary_samples(intervene(sys.as_sde(), phi), em);
}

}  // namespace detail

/// Samples a system, an observational dataset and single-target shift interventions on
/// disjoint train and test targets, all standardized by the observational statistics.
///
/// Random streams: stream 0 drives graph, system, targets and shifts; dataset k
/// (0 = observational, then train, then test) is sampled with derive_seed(seed, k + 1).
inline BenchmarkTask make_benchmark_task(const TaskConfig& cfg) {
  cfg.validate();
  BenchmarkTask task;
  task.config = cfg;
  Rng rng(derive_seed(cfg.seed, 0));
  task.graph = sample_graph(cfg.dim, cfg.graph, cfg.dim == 1 ? 0.0 : cfg.expected_degree, rng);
  task.system = sample_system(task.graph, cfg.system, rng);

  std::vector<int> order(static_cast<std::size_t>(cfg.dim));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> magnitude(cfg.delta_min, cfg.delta_max);
  std::bernoulli_distribution negative(0.5);
  auto draw_delta = [&] { return (negative(rng) ? -1.0 : 1.0) * magnitude(rng); };

  const int n_int = cfg.n_train_interventions + cfg.n_test_interventions;
  std::vector<InterventionRecord> records(static_cast<std::size_t>(n_int));
  for (int k = 0; k < n_int; ++k) {
    records[static_cast<std::size_t>(k)].target = order[static_cast<std::size_t>(k)];
    records[static_cast<std::size_t>(k)].delta = draw_delta();
  }

  task.obs_seed = derive_seed(cfg.seed, 1);
  const Samples raw_obs = detail::sample_dataset(task.system, cfg, InterventionParams{}, task.obs_seed);
  task.standardization = Standardization::fit(raw_obs);
  task.obs = task.standardization.apply(raw_obs);
  for (int k = 0; k < n_int; ++k) {
    InterventionRecord& rec = records[static_cast<std::size_t>(k)];
    rec.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(k) + 2);
    const InterventionParams phi({rec.target}, Eigen::VectorXd::Constant(1, rec.delta));
    rec.data = task.standardization.apply(detail::sample_dataset(task.system, cfg, phi, rec.seed));
  }
  task.train.assign(records.begin(), records.begin() + cfg.n_train_interventions);
  task.test.assign(records.begin() + cfg.n_train_interventions, records.end());
  return task;
}

/// The SDE ground truth expressed in standardized coordinates and speed-scaled so that
/// W_jj = -1, i.e. as a parameter vector of the fixed-diagonal linear model.
///
/// Exact only when the diagonal of W is uniform, which sample_system guarantees.
inline SdeModel standardized_truth_model(const GroundTruthSystem& sys, const Standardization& st) {
  if (sys.kind != SystemKind::sde) throw ConfigError("truth model: system is not an SDE");
  const Eigen::Index d = sys.dim();
  const double kappa = -sys.W(0, 0);
  if (!(kappa > 0.0)) throw NumericError("truth model: diagonal is not negative");
  // y = (x - m) / s  =>  dy = D^{-1}(b + W m + W D y) dt + D^{-1} diag(sigma) dW.
  const Eigen::VectorXd a = (sys.b + sys.W * st.mean).cwiseQuotient(st.scale);
  SdeModel model = SdeModel::linear(static_cast<int>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    model.set_param(model.bias_index(j), a[j] / kappa);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (i == j) continue;
      model.set_param(model.weight_index(j, i), sys.W(j, i) * st.scale[i] / st.scale[j] / kappa);
    }
    model.set_param(model.log_scale_index(j),
                    std::log(sys.sigma[j] / st.scale[j]) - 0.5 * std::log(kappa));
  }
  return model;
}

/// A raw-scale shift expressed for standardized_truth_model.
inline double standardized_shift(const GroundTruthSystem& sys, const Standardization& st,
                                 int target, double delta) {
  return delta / st.scale[target] / -sys.W(0, 0);
}

}  // namespace statdiff
