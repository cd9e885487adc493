#pragma once

// Reproducible runs: dataset generation, training, evaluation and reporting
// over a run directory.
//
// A run directory holds
//   config.ini              effective configuration (seed overrides applied)
//   data/                   the dataset, when the run generated it
//   split.csv               node,role (train | inductive), when nodes are held out
//   checkpoint.bin          parameters and normalization buffers
//   train_log.csv           one record per epoch
//   metrics_<mode>.csv      scope,horizon,mae,rmse,mape,count,mape_excluded
//   summary_<mode>.txt      key = value headline numbers
//   predictions_<mode>.csv  x0,x1[,x2],t,channel,value

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stonet/config.hpp"

namespace stonet {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitDivergence = 4,
};

// Maps the exception types of this library onto process exit codes.
int exit_code_for(const std::exception& error);

// `path` relative to the RUN_DIR environment variable when that is set and
// `path` is relative; RUN_DIR itself when `path` is empty.
std::filesystem::path resolve_run_path(const std::filesystem::path& path);

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed);

void cmd_generate(const RunConfig& config, const std::filesystem::path& data_dir);

struct TrainSummary {
  TrainResult result;
  std::size_t train_nodes = 0;
  std::size_t held_out_nodes = 0;
  double eps = 0.0;
};

// `data_dir` overrides dataset.path; with neither, the dataset is generated
// into run_dir/data. Epoch records are echoed to `log`.
TrainSummary cmd_train(RunConfig config, const std::filesystem::path& run_dir,
                       const std::filesystem::path& data_dir, std::ostream& log);

enum class EvalMode { kTransductive, kInductive, kIrregular };
EvalMode parse_eval_mode(const std::string& name);
std::string eval_mode_name(EvalMode mode);

struct EvalSummary {
  MetricReport model;
  MetricReport persistence;
  std::optional<MetricReport> inductive;  // inductive mode with unseen nodes
  std::optional<double> deviation_percent;
  std::size_t unseen_nodes = 0;
  std::size_t present_targets = 0;  // irregular: n_out' per window
  double ratio = 0.0;
};

// 100 * (mae_ind - mae_tran) / mae_tran.
double deviation_percent(double mae_inductive, double mae_transductive);

// `ratio` overrides eval.inductive_ratio or eval.missing_ratio; `seed`
// overrides the snapshot's root seed.
EvalSummary cmd_eval(const std::filesystem::path& run_dir, EvalMode mode,
                     std::optional<double> ratio, std::optional<std::uint64_t> seed,
                     std::ostream& out);

// Prints an aligned table of every run's metrics files; writes the same rows
// as CSV to `csv_path` when non-empty. Runs without metrics are reported as
// errors; returns kExitData if any run failed.
int cmd_report(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out,
               const std::filesystem::path& csv_path = {});

}  // namespace stonet
