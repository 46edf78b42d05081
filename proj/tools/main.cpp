#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4 };

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::string> overrides;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* config_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  f.config_opt = cmd->add_option("--config", f.config, "JSON run configuration");
  f.seed_opt = cmd->add_option("--seed", f.seed, "seed for every random choice of the run");
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_option("--set", f.overrides, "override a config entry, e.g. --set train.lambda=0.01");
}

statdiff::cli::RunConfig resolve(const CommonFlags& f) {
  return statdiff::cli::resolve_config(
      f.config_opt->count() ? std::optional<std::string>(f.config) : std::nullopt, f.overrides,
      f.seed_opt->count() ? std::optional<std::uint64_t>(f.seed) : std::nullopt);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace statdiff;
  CLI::App app{"Learn stationary diffusions and evaluate interventional predictions."};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, eval_f, pred_f, bench_f, fig_f;
  std::string task_dir, checkpoint;

  auto* gen = app.add_subcommand("generate", "sample a benchmark task bundle");
  add_common(gen, gen_f);
  auto* trn = app.add_subcommand("train", "fit a model on the observational and training splits");
  add_common(trn, train_f);
  trn->add_option("--task", task_dir, "task bundle directory")->required();
  auto* evl = app.add_subcommand("evaluate", "score a checkpoint on the held-out interventions");
  add_common(evl, eval_f);
  evl->add_option("--task", task_dir, "task bundle directory")->required();
  evl->add_option("--checkpoint", checkpoint, "checkpoint or model JSON")->required();
  auto* prd = app.add_subcommand("predict", "sample from a checkpointed, optionally intervened model");
  add_common(prd, pred_f);
  prd->add_option("--checkpoint", checkpoint, "checkpoint or model JSON")->required();
  auto* bench = app.add_subcommand("benchmark", "generate, train and evaluate over several systems");
  add_common(bench, bench_f);
  auto* fig = app.add_subcommand("fig2", "KDS and its partial derivatives over a and c for a scalar linear SDE");
  add_common(fig, fig_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      cli::cmd_generate(resolve(gen_f), gen_f.out);
    } else if (*trn) {
      cli::cmd_train(resolve(train_f), task_dir, train_f.out);
    } else if (*evl) {
      cli::cmd_evaluate(resolve(eval_f), task_dir, checkpoint, eval_f.out);
    } else if (*prd) {
      cli::cmd_predict(resolve(pred_f), checkpoint, pred_f.out);
    } else if (*bench) {
      cli::cmd_benchmark(resolve(bench_f), bench_f.out);
    } else if (*fig) {
      cli::cmd_fig2(resolve(fig_f), fig_f.out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const DomainError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
