#include "stonet/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "stonet/checkpoint.hpp"
#include "stonet/errors.hpp"

namespace fs = std::filesystem;

namespace stonet {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

fs::path dataset_dir(const RunConfig& config, const fs::path& run_dir) {
  if (config.dataset.path.empty()) throw ConfigError("dataset.path is empty in " + run_dir.string());
  const fs::path p(config.dataset.path);
  return p.is_absolute() ? p : run_dir / p;
}

NeighborGraph make_graph(const RunConfig& config, const PointSet& points) {
  const double eps = config.eps > 0.0 ? config.eps : default_epsilon(points);
  NeighborGraph graph = build_epsilon_graph(points, eps);
  if (config.model.levels > 1) {
    graph = with_levels(std::move(graph), partition_levels(points, config.model.levels,
                                                           derive_seed(config.seed, "levels")));
  }
  return graph;
}

ModelConfig model_config(const RunConfig& config, const ObservationSeries& series) {
  ModelConfig mc = config.model;
  mc.channels = series.channels;
  mc.domain = series.points.kind();
  return mc;
}

void write_split(const fs::path& path, const SplitPlan& plan) {
  auto os = open_out(path);
  os << "node,role\n";
  std::vector<std::pair<std::size_t, const char*>> rows;
  for (auto i : plan.train_node_ids) rows.emplace_back(i, "train");
  for (auto i : plan.inductive_node_ids) rows.emplace_back(i, "inductive");
  std::sort(rows.begin(), rows.end());
  for (const auto& [i, role] : rows) os << i << ',' << role << '\n';
}

std::optional<SplitPlan> read_split(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream is(path);
  std::string line;
  if (!std::getline(is, line) || line != "node,role") throw DataError(path.string() + ": bad header");
  SplitPlan plan;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path.string() + ": bad row '" + line + "'");
    const std::size_t id = std::stoul(line.substr(0, comma));
    const std::string role = line.substr(comma + 1);
    if (role == "train") {
      plan.train_node_ids.push_back(id);
    } else if (role == "inductive") {
      plan.inductive_node_ids.push_back(id);
    } else {
      throw DataError(path.string() + ": unknown role '" + role + "'");
    }
  }
  return plan;
}

void write_metric_rows(std::ostream& os, const std::string& scope, const MetricReport& r) {
  auto row = [&](const std::string& horizon, const MetricSet& m) {
    os << scope << ',' << horizon << ',' << num(m.mae) << ',' << num(m.rmse) << ',' << num(m.mape)
       << ',' << m.count << ',' << m.mape_excluded << '\n';
  };
  row("all", r.aggregate);
  for (std::size_t k = 0; k < r.per_horizon.size(); ++k) row(std::to_string(k + 1), r.per_horizon[k]);
}

constexpr const char* kMetricsHeader = "scope,horizon,mae,rmse,mape,count,mape_excluded";

struct Loaded {
  RunConfig config;
  Dataset dataset;
  StoNet model;
  std::optional<SplitPlan> split;
  ObservationSeries train_series;
  NeighborGraph graph;
};

Loaded load_run(const fs::path& run_dir, std::optional<std::uint64_t> seed) {
  Loaded l;
  if (!fs::exists(run_dir / "config.ini")) throw DataError("no config.ini in run directory " + run_dir.string());
  l.config = load_config(run_dir / "config.ini");
  if (seed) l.config.seed = *seed;
  l.dataset = read_dataset(dataset_dir(l.config, run_dir));
  l.split = read_split(run_dir / "split.csv");
  l.train_series =
      l.split ? l.dataset.series.select_nodes(l.split->train_node_ids) : l.dataset.series;
  l.model = StoNet(model_config(l.config, l.train_series), 0);
  const fs::path ckpt = run_dir / "checkpoint.bin";
  if (!fs::exists(ckpt)) throw DataError("no checkpoint in " + run_dir.string());
  assign_parameters(l.model.state(), load_checkpoint(ckpt));
  l.graph = make_graph(l.config, l.train_series.points);
  return l;
}

// Accumulates model and persistence errors for the nodes in [node_begin, node_end).
void accumulate(const StoNet& model, const ObservationSeries& series,
                std::span<const std::size_t> starts, const std::vector<double>& pred,
                std::span<const std::uint8_t> label_mask, std::size_t node_begin,
                std::size_t node_end, MetricAccumulator& model_acc, MetricAccumulator& base_acc) {
  const std::size_t n_in = model.config().n_in, n_out = model.config().n_out;
  const std::size_t n = series.n_nodes(), c = series.channels;
  for (std::size_t w = 0; w < starts.size(); ++w) {
    for (std::size_t k = 0; k < n_out; ++k) {
      if (!label_mask.empty() && !label_mask[w * n_out + k]) continue;
      const std::size_t frame = starts[w] + n_in + k;
      const std::size_t last = starts[w] + n_in - 1;
      for (std::size_t s = node_begin; s < node_end; ++s) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double truth = series.at(frame, s, ch);
          model_acc.add(k, pred[((w * n_out + k) * n + s) * c + ch], truth);
          base_acc.add(k, series.at(last, s, ch), truth);
        }
      }
    }
  }
}

void write_predictions(const fs::path& path, const StoNet& model, const ObservationSeries& series,
                       std::span<const std::size_t> starts, const std::vector<double>& pred,
                       std::size_t node_begin, std::size_t node_end) {
  const std::size_t n_in = model.config().n_in, n_out = model.config().n_out;
  const std::size_t n = series.n_nodes(), c = series.channels, m = series.points.dim();
  auto os = open_out(path);
  for (std::size_t a = 0; a < m; ++a) os << 'x' << a << ',';
  os << "t,channel,value\n";
  for (std::size_t w = 0; w < starts.size(); ++w) {
    if ((starts[w] - starts.front()) % n_out != 0) continue;
    for (std::size_t k = 0; k < n_out; ++k) {
      const double t = series.times[starts[w] + n_in + k];
      for (std::size_t s = node_begin; s < node_end; ++s) {
        const auto x = series.points.point(s);
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (double v : x) os << num(v) << ',';
          os << num(t) << ',' << ch << ',' << num(pred[((w * n_out + k) * n + s) * c + ch]) << '\n';
        }
      }
    }
  }
}

}  // namespace

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error) || dynamic_cast<const ParameterError*>(&error)) {
    return kExitConfig;
  }
  if (dynamic_cast<const DataError*>(&error) || dynamic_cast<const fs::filesystem_error*>(&error)) {
    return kExitData;
  }
  if (dynamic_cast<const DivergenceError*>(&error)) return kExitDivergence;
  return kExitFailure;
}

fs::path resolve_run_path(const fs::path& path) {
  const char* root = std::getenv("RUN_DIR");
  if (path.empty()) {
    if (root == nullptr || *root == '\0') {
      throw ConfigError("no run directory: pass --run-dir or set RUN_DIR");
    }
    return fs::path(root);
  }
  if (path.is_relative() && root != nullptr && *root != '\0') return fs::path(root) / path;
  return path;
}

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed) {
  if (config.spinup % config.stride != 0) {
    throw ConfigError("dataset.spinup must be a multiple of dataset.stride");
  }
  const std::uint64_t data_seed = derive_seed(seed, "data");
  const auto initial = initial_field(config.pde, config.init, derive_seed(data_seed, "field"));
  Movie movie = simulate(config.pde, initial, config.spinup + config.steps, config.stride);
  const auto skip = static_cast<long>(config.spinup / config.stride);
  movie.times.erase(movie.times.begin(), movie.times.begin() + skip);
  movie.frames.erase(movie.frames.begin(), movie.frames.begin() + skip);
  const PointSet points =
      random_points(config.pde, config.domain, config.nodes, derive_seed(data_seed, "points"));

  Dataset ds;
  ds.series = sample_nodes(movie, config.pde, points);
  RunConfig echo;
  echo.dataset = config;
  echo.seed = seed;
  std::istringstream lines(format_config(echo));
  std::string line, section;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    if (!section.empty() && section != "dataset") continue;
    const auto eq = line.find(" = ");
    const std::string key = line.substr(0, eq);
    if (key == "path") continue;
    ds.meta[key] = line.substr(eq + 3);
  }
  return ds;
}

void cmd_generate(const RunConfig& config, const fs::path& data_dir) {
  write_dataset(data_dir, generate_dataset(config.dataset, config.seed));
}

TrainSummary cmd_train(RunConfig config, const fs::path& run_dir, const fs::path& data_dir,
                       std::ostream& log) {
  fs::create_directories(run_dir);
  Dataset ds;
  if (!data_dir.empty()) {
    config.dataset.path = fs::absolute(data_dir).string();
    ds = read_dataset(data_dir);
  } else if (!config.dataset.path.empty()) {
    config.dataset.path = fs::absolute(config.dataset.path).string();
    ds = read_dataset(config.dataset.path);
  } else {
    ds = generate_dataset(config.dataset, config.seed);
    write_dataset(run_dir / "data", ds);
    config.dataset.path = "data";
  }
  validate_config(config);
  {
    auto os = open_out(run_dir / "config.ini");
    os << format_config(config);
  }

  TrainSummary summary;
  ObservationSeries series = ds.series;
  fs::remove(run_dir / "split.csv");
  if (config.inductive_ratio > 0.0) {
    const SplitPlan plan =
        make_split(series.n_nodes(), config.inductive_ratio, derive_seed(config.seed, "split"));
    write_split(run_dir / "split.csv", plan);
    series = series.select_nodes(plan.train_node_ids);
    summary.held_out_nodes = plan.inductive_node_ids.size();
  }
  summary.train_nodes = series.n_nodes();
  if (config.model.levels > static_cast<int>(series.n_nodes())) {
    throw ConfigError("graph.levels exceeds the number of training nodes");
  }
  const NeighborGraph graph = make_graph(config, series.points);
  summary.eps = graph.eps;

  StoNet model(model_config(config, series), derive_seed(config.seed, "init"));
  TrainConfig tc = config.optimizer;
  tc.loss = config.loss;
  tc.missing_ratio = config.missing_ratio;
  tc.mask_seed = derive_seed(config.seed, "mask");
  tc.shuffle_seed = derive_seed(config.seed, "shuffle");

  auto log_file = open_out(run_dir / "train_log.csv");
  log_file << kTrainLogHeader << '\n';
  log << kTrainLogHeader << '\n';
  auto on_epoch = [&](const EpochRecord& r) {
    log_file << format_epoch(r) << '\n';
    log_file.flush();
    log << format_epoch(r) << '\n';
    log.flush();
  };
  try {
    summary.result = train(model, series, graph, tc, on_epoch);
  } catch (const DivergenceError&) {
    save_checkpoint(run_dir / "checkpoint.bin", model.state());
    throw;
  }
  save_checkpoint(run_dir / "checkpoint.bin", model.state());
  return summary;
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "transductive") return EvalMode::kTransductive;
  if (name == "inductive") return EvalMode::kInductive;
  if (name == "irregular") return EvalMode::kIrregular;
  throw ConfigError("unknown mode '" + name + "' (transductive | inductive | irregular)");
}

std::string eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::kTransductive: return "transductive";
    case EvalMode::kInductive: return "inductive";
    case EvalMode::kIrregular: return "irregular";
  }
  return "?";
}

double deviation_percent(double mae_inductive, double mae_transductive) {
  if (!(mae_transductive > 0.0)) throw DomainError("deviation needs a positive transductive MAE");
  return 100.0 * (mae_inductive - mae_transductive) / mae_transductive;
}

EvalSummary cmd_eval(const fs::path& run_dir, EvalMode mode, std::optional<double> ratio,
                     std::optional<std::uint64_t> seed, std::ostream& out) {
  Loaded l = load_run(run_dir, seed);
  const StoNet& model = l.model;
  const std::size_t n_in = model.config().n_in, n_out = model.config().n_out;
  const std::size_t eval_batch = l.config.optimizer.eval_batch;
  const TimeSplit split = split_time(l.dataset.series.n_times(), l.config.optimizer.train_fraction,
                                     l.config.optimizer.val_fraction);
  const std::vector<std::size_t> starts =
      window_starts(split.val_end, split.total, n_in + n_out, 1);
  if (starts.empty()) throw DataError("no complete test window fits the test range");

  EvalSummary summary;
  const std::string name = eval_mode_name(mode);
  std::vector<std::uint8_t> label_mask;
  if (mode == EvalMode::kIrregular) {
    summary.ratio = ratio.value_or(l.config.missing_ratio);
    label_mask = label_masks(starts, n_out, summary.ratio, derive_seed(l.config.seed, "mask-eval"));
    summary.present_targets = static_cast<std::size_t>(
        std::count(label_mask.begin(), label_mask.begin() + static_cast<long>(n_out), std::uint8_t{1}));
  }

  const ObservationSeries& tseries = l.train_series;
  const std::vector<double> pred = predict_windows(model, tseries, l.graph, starts, eval_batch);
  MetricAccumulator model_acc(n_out), base_acc(n_out);
  accumulate(model, tseries, starts, pred, label_mask, 0, tseries.n_nodes(), model_acc, base_acc);
  summary.model = model_acc.report();
  summary.persistence = base_acc.report();

  auto metrics_os = open_out(run_dir / ("metrics_" + name + ".csv"));
  metrics_os << kMetricsHeader << '\n';
  write_metric_rows(metrics_os, mode == EvalMode::kInductive ? "transductive" : "stonet", summary.model);
  write_metric_rows(metrics_os, "persistence", summary.persistence);

  if (mode == EvalMode::kInductive) {
    summary.ratio = ratio.value_or(l.config.inductive_ratio);
    const std::size_t available = l.split ? l.split->inductive_node_ids.size() : 0;
    if (summary.ratio > 0.0 && available > 0) {
      const auto wanted = static_cast<std::size_t>(
          std::llround(summary.ratio * static_cast<double>(tseries.n_nodes())));
      summary.unseen_nodes = std::min(available, std::max<std::size_t>(1, wanted));
    }
    if (summary.unseen_nodes > 0) {
      std::vector<std::size_t> ids = l.split->train_node_ids;
      ExtendedGraph ext{tseries.points, l.graph};
      for (std::size_t u = 0; u < summary.unseen_nodes; ++u) {
        const std::size_t id = l.split->inductive_node_ids[u];
        ext = attach_node(ext.graph, ext.points, l.dataset.series.points.point(id));
        ids.push_back(id);
      }
      const ObservationSeries ext_series = l.dataset.series.select_nodes(ids);
      const std::vector<double> ext_pred = predict_windows(model, ext_series, ext.graph, starts, eval_batch);
      MetricAccumulator ind_acc(n_out), ind_base(n_out);
      accumulate(model, ext_series, starts, ext_pred, {}, tseries.n_nodes(), ext_series.n_nodes(),
                 ind_acc, ind_base);
      summary.inductive = ind_acc.report();
      summary.deviation_percent =
          deviation_percent(summary.inductive->aggregate.mae, summary.model.aggregate.mae);
      write_metric_rows(metrics_os, "inductive", *summary.inductive);
      write_metric_rows(metrics_os, "persistence_inductive", ind_base.report());
      write_predictions(run_dir / ("predictions_" + name + ".csv"), model, ext_series, starts,
                        ext_pred, tseries.n_nodes(), ext_series.n_nodes());
    }
  }
  if (!summary.inductive) {
    write_predictions(run_dir / ("predictions_" + name + ".csv"), model, tseries, starts, pred, 0,
                      tseries.n_nodes());
  }

  std::ostringstream text;
  text << "mode = " << name << '\n';
  text << "ratio = " << num(summary.ratio) << '\n';
  text << "test_windows = " << starts.size() << '\n';
  text << "mae = " << num(summary.model.aggregate.mae) << '\n';
  text << "rmse = " << num(summary.model.aggregate.rmse) << '\n';
  text << "mape = " << num(summary.model.aggregate.mape) << '\n';
  text << "mape_excluded = " << summary.model.aggregate.mape_excluded << '\n';
  text << "persistence_mae = " << num(summary.persistence.aggregate.mae) << '\n';
  if (mode == EvalMode::kIrregular) text << "present_targets = " << summary.present_targets << '\n';
  if (mode == EvalMode::kInductive) {
    text << "unseen_nodes = " << summary.unseen_nodes << '\n';
    text << "mae_tran = " << num(summary.model.aggregate.mae) << '\n';
    if (summary.inductive) {
      text << "mae_ind = " << num(summary.inductive->aggregate.mae) << '\n';
      char dev[64];
      std::snprintf(dev, sizeof(dev), "%+.4f", *summary.deviation_percent);
      text << "deviation_percent = " << dev << '\n';
    }
  }
  auto summary_os = open_out(run_dir / ("summary_" + name + ".txt"));
  summary_os << text.str();
  out << text.str();
  return summary;
}

int cmd_report(const std::vector<fs::path>& run_dirs, std::ostream& out, const fs::path& csv_path) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  const std::vector<std::string> header = {"run", "mode", "scope", "mae", "rmse", "mape", "deviation_percent"};
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> errors;
  for (const auto& dir : run_dirs) {
    std::vector<fs::path> files;
    if (fs::is_directory(dir)) {
      for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string fname = entry.path().filename().string();
        if (fname.rfind("metrics_", 0) == 0 && entry.path().extension() == ".csv") files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      errors.push_back("run " + dir.string() + ": no metrics files found");
      continue;
    }
    std::vector<std::vector<std::string>> run_rows;
    try {
      for (const auto& file : files) {
        const std::string stem = file.stem().string();
        const std::string mode = stem.substr(std::string("metrics_").size());
        std::string deviation;
        std::ifstream summary(dir / ("summary_" + mode + ".txt"));
        for (std::string line; std::getline(summary, line);) {
          if (line.rfind("deviation_percent = ", 0) == 0) deviation = line.substr(20);
        }
        std::ifstream is(file);
        std::string line;
        if (!std::getline(is, line) || line != kMetricsHeader) {
          throw DataError(file.string() + ": unexpected header");
        }
        while (std::getline(is, line)) {
          std::vector<std::string> cells;
          std::stringstream ss(line);
          for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
          if (cells.size() != 7) throw DataError(file.string() + ": malformed row '" + line + "'");
          if (cells[1] != "all") continue;
          run_rows.push_back({dir.filename().empty() ? dir.string() : dir.filename().string(), mode,
                              cells[0], cells[2], cells[3], cells[4],
                              cells[0] == "inductive" ? deviation : ""});
        }
      }
      rows.insert(rows.end(), run_rows.begin(), run_rows.end());
    } catch (const std::exception& e) {
      errors.push_back("run " + dir.string() + ": " + e.what());
    }
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  auto print = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out << "  ";
      if (c < 3) {
        out << std::left << std::setw(static_cast<int>(width[c])) << r[c];
      } else {
        out << std::right << std::setw(static_cast<int>(width[c])) << r[c];
      }
    }
    out << '\n';
  };
  print(header);
  for (const auto& r : rows) print(r);
  for (const auto& e : errors) out << "error: " << e << '\n';

  if (!csv_path.empty()) {
    auto os = open_out(csv_path);
    for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << r[c];
      os << '\n';
    }
  }
  return errors.empty() ? kExitOk : kExitData;
}

}  // namespace stonet
