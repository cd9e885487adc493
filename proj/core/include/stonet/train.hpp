#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stonet/model.hpp"
#include "stonet/optim.hpp"

namespace stonet {

// ---- loss -----------------------------------------------------------------------

struct LossConfig {
  double alpha = 0.5;  // reconstruction weight
  std::size_t n_in = 12;
  std::size_t n_out = 12;
};

struct LossValue {
  Tensor total;
  double reconstruction = 0.0;  // unweighted reconstruction term
  double prediction = 0.0;
};

// Composite L1 objective, averaged over windows:
//   alpha / (n_in n_s) * sum |P'(v_enc) - u_in| + 1 / (n'_out n_s) * sum |P'(v_dec) - u_out|
// where n'_out counts the window's present target frames. v_enc and truth_in
// hold windows * n_in * n_s rows, v_dec and truth_out windows * n_out * n_s
// rows; mask_out has windows * n_out flags.
LossValue composite_loss(const Tensor& v_enc, const Tensor& v_dec, const Tensor& truth_in,
                         const Tensor& truth_out, std::span<const std::uint8_t> mask_out,
                         const Linear& projector, const LossConfig& cfg, std::size_t n_nodes);

// ---- metrics --------------------------------------------------------------------

struct MetricSet {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // fraction, not percent
  std::size_t count = 0;
  std::size_t mape_excluded = 0;  // entries with |truth| < 1e-12
};

struct MetricReport {
  MetricSet aggregate;
  std::vector<MetricSet> per_horizon;
};

inline constexpr double kMapeZeroTolerance = 1e-12;

MetricSet compute_metrics(std::span<const double> pred, std::span<const double> truth);

// Streams (prediction, truth) pairs tagged with a horizon step.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t horizons = 0);
  void add(std::size_t horizon, double pred, double truth);
  MetricReport report() const;

 private:
  struct Sums {
    double abs = 0.0, sq = 0.0, ape = 0.0;
    std::size_t count = 0, ape_count = 0, excluded = 0;
    void add(double pred, double truth);
    MetricSet finish() const;
  };
  std::vector<Sums> horizons_;
  Sums total_;
};

// Per-timestamp and aggregate metrics over timestamps present in both series.
MetricReport metrics(const ObservationSeries& pred, const ObservationSeries& truth);

// Repeats the last present frame of `history` at every horizon time.
ObservationSeries persistence_baseline(const ObservationSeries& history,
                                       std::span<const double> horizon_times);

// ---- training ---------------------------------------------------------------------

// Contiguous frame ranges [0, train_end), [train_end, val_end), [val_end, n).
struct TimeSplit {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t total = 0;
};

TimeSplit split_time(std::size_t n_frames, double train_fraction = 0.7, double val_fraction = 0.15);

// Start frames of every window of `length` frames inside [begin, end).
std::vector<std::size_t> window_starts(std::size_t begin, std::size_t end, std::size_t length,
                                       std::size_t stride = 1);

// Per-window target-label masks (n_out flags each) with round(ratio * n_out)
// seeded removals; all ones when ratio is 0.
std::vector<std::uint8_t> label_masks(std::span<const std::size_t> starts, std::size_t n_out,
                                      double missing_ratio, std::uint64_t seed);

// Per-channel mean / std over present frames in [0, end), and the model time
// unit n_out * median frame spacing.
void fit_normalization(StoNet& model, const ObservationSeries& series, std::size_t end);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::size_t patience = 15;
  std::size_t window_stride = 1;
  std::size_t windows_per_epoch = 0;  // 0: every training window
  std::size_t eval_batch = 8;
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  double missing_ratio = 0.0;  // removal of training labels
  // Below 1, every step trains on a random subset of this fraction of the
  // nodes, with the graph rebuilt at the same radius.
  double node_fraction = 1.0;
  std::uint64_t mask_seed = 0;
  std::uint64_t shuffle_seed = 0;
  LossConfig loss;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

std::string format_epoch(const EpochRecord& r);
inline constexpr const char* kTrainLogHeader = "epoch,train_loss,val_mae,val_rmse,lr,wall_ms";

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;  // 0: initialization
  double best_val_mae = 0.0;
  bool stopped_early = false;
};

// Physical-unit predictions for every window, target frame, node and channel,
// laid out [windows][n_out][nodes][channels]. Masked targets are still
// predicted.
std::vector<double> predict_windows(const StoNet& model, const ObservationSeries& series,
                                    const NeighborGraph& graph, std::span<const std::size_t> starts,
                                    std::size_t batch);

// Metrics in physical units over the given windows (every node, every target
// frame whose label is present).
MetricReport evaluate_windows(const StoNet& model, const ObservationSeries& series,
                              const NeighborGraph& graph, std::span<const std::size_t> starts,
                              std::size_t batch, std::span<const std::uint8_t> label_mask = {});

// Mini-batch Adam over the training windows with per-epoch validation. The
// best-on-validation parameters are restored at the end. A non-finite loss
// restores the last finite parameters and throws DivergenceError.
TrainResult train(StoNet& model, const ObservationSeries& series, const NeighborGraph& graph,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace stonet
