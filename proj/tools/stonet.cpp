#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "stonet/errors.hpp"
#include "stonet/run.hpp"

namespace fs = std::filesystem;
using namespace stonet;

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep large tape buffers out of mmap; freeing them otherwise dominates runtime.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"stonet: spatio-temporal neural operator forecasting"};
  app.require_subcommand(1);

  std::string config_path, run_dir, data_dir, mode = "transductive", csv_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> ratio;
  std::vector<std::string> runs;

  auto* gen = app.add_subcommand("generate", "simulate a PDE and write a dataset directory");
  gen->add_option("--config", config_path, "run configuration")->required()->check(CLI::ExistingFile);
  gen->add_option("--data-dir", data_dir, "output directory (default: dataset.path)");
  gen->add_option("--seed", seed, "override the root seed");

  auto* tr = app.add_subcommand("train", "train a model into a run directory");
  tr->add_option("--config", config_path, "run configuration")->required()->check(CLI::ExistingFile);
  tr->add_option("--run-dir", run_dir, "run directory (relative to $RUN_DIR when set)");
  tr->add_option("--data-dir", data_dir, "existing dataset; overrides dataset.path");
  tr->add_option("--seed", seed, "override the root seed");

  auto* ev = app.add_subcommand("eval", "evaluate a trained run on the test windows");
  ev->add_option("--run-dir", run_dir, "run directory (relative to $RUN_DIR when set)");
  ev->add_option("--mode", mode, "transductive | inductive | irregular")
      ->check(CLI::IsMember({"transductive", "inductive", "irregular"}));
  ev->add_option("--ratio", ratio, "inductive or missing ratio (default: from the config)");
  ev->add_option("--seed", seed, "override the root seed");

  auto* rep = app.add_subcommand("report", "tabulate metrics across run directories");
  rep->add_option("runs", runs, "run directories")->required();
  rep->add_option("--csv", csv_path, "also write the table as CSV");

  auto* defaults = app.add_subcommand("defaults", "print the default configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*defaults) {
      std::cout << format_config(RunConfig{});
      return kExitOk;
    }
    if (*gen) {
      RunConfig config = load_config(config_path);
      if (seed) config.seed = *seed;
      validate_config(config);
      const fs::path out = data_dir.empty() ? fs::path(config.dataset.path) : fs::path(data_dir);
      if (out.empty()) throw ConfigError("no output directory: pass --data-dir or set dataset.path");
      cmd_generate(config, out);
      std::cout << "wrote " << out.string() << '\n';
      return kExitOk;
    }
    if (*tr) {
      RunConfig config = load_config(config_path);
      if (seed) config.seed = *seed;
      validate_config(config);
      const fs::path dir = resolve_run_path(run_dir);
      const TrainSummary s = cmd_train(config, dir, data_dir, std::cout);
      std::cout << "train nodes " << s.train_nodes << ", held out " << s.held_out_nodes << ", eps "
                << s.eps << ", best epoch " << s.result.best_epoch << ", best val mae "
                << s.result.best_val_mae << (s.result.stopped_early ? " (early stop)" : "") << '\n';
      return kExitOk;
    }
    if (*ev) {
      cmd_eval(resolve_run_path(run_dir), parse_eval_mode(mode), ratio, seed, std::cout);
      return kExitOk;
    }
    if (*rep) {
      std::vector<fs::path> dirs;
      for (const auto& r : runs) dirs.push_back(resolve_run_path(r));
      return cmd_report(dirs, std::cout, csv_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitFailure;
}
