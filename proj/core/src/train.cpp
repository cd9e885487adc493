#include "stonet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "stonet/checkpoint.hpp"
#include "stonet/errors.hpp"

namespace stonet {

// ---- loss -----------------------------------------------------------------------

LossValue composite_loss(const Tensor& v_enc, const Tensor& v_dec, const Tensor& truth_in,
                         const Tensor& truth_out, std::span<const std::uint8_t> mask_out,
                         const Linear& projector, const LossConfig& cfg, std::size_t n_nodes) {
  if (cfg.alpha < 0.0 || !std::isfinite(cfg.alpha)) throw ParameterError("alpha must be >= 0");
  if (n_nodes == 0 || cfg.n_in == 0 || cfg.n_out == 0) throw ContractError("loss: empty window shape");
  const std::size_t per_in = cfg.n_in * n_nodes, per_out = cfg.n_out * n_nodes;
  if (v_enc.dim(0) % per_in != 0 || v_dec.dim(0) % per_out != 0) {
    throw DimensionError("loss: row counts do not split into whole windows");
  }
  const std::size_t windows = v_dec.dim(0) / per_out;
  if (v_enc.dim(0) / per_in != windows || truth_in.dim(0) != v_enc.dim(0) ||
      truth_out.dim(0) != v_dec.dim(0) || mask_out.size() != windows * cfg.n_out) {
    throw DimensionError("loss: inconsistent shapes " + shape_str(v_enc.shape()) + ", " +
                         shape_str(v_dec.shape()) + ", mask " + std::to_string(mask_out.size()));
  }
  const std::size_t c = truth_out.dim(1);

  std::vector<std::size_t> rows;
  std::vector<double> weights;
  for (std::size_t w = 0; w < windows; ++w) {
    std::size_t present = 0;
    for (std::size_t k = 0; k < cfg.n_out; ++k) present += mask_out[w * cfg.n_out + k] ? 1 : 0;
    if (present == 0) {
      throw DataError("loss: window " + std::to_string(w) + " has no target labels");
    }
    const double weight = 1.0 / (static_cast<double>(present * n_nodes) * static_cast<double>(windows));
    for (std::size_t k = 0; k < cfg.n_out; ++k) {
      if (!mask_out[w * cfg.n_out + k]) continue;
      for (std::size_t s = 0; s < n_nodes; ++s) {
        rows.push_back((w * cfg.n_out + k) * n_nodes + s);
        weights.insert(weights.end(), c, weight);
      }
    }
  }
  const Tensor residual =
      abs(sub(projector.forward(gather_rows(v_dec, rows)), gather_rows(truth_out, rows)));
  const Tensor prediction = sum(mul(residual, Tensor({rows.size(), c}, std::move(weights))));

  LossValue out;
  out.prediction = prediction.item();
  if (cfg.alpha == 0.0) {
    out.total = prediction;
    return out;
  }
  const double rec_norm = 1.0 / static_cast<double>(per_in * windows);
  const Tensor reconstruction = scale(sum(abs(sub(projector.forward(v_enc), truth_in))), rec_norm);
  out.reconstruction = reconstruction.item();
  out.total = add(scale(reconstruction, cfg.alpha), prediction);
  return out;
}

// ---- metrics --------------------------------------------------------------------

void MetricAccumulator::Sums::add(double pred, double truth) {
  const double e = pred - truth;
  abs += std::fabs(e);
  sq += e * e;
  ++count;
  if (std::fabs(truth) < kMapeZeroTolerance) {
    ++excluded;
  } else {
    ape += std::fabs(e) / std::fabs(truth);
    ++ape_count;
  }
}

MetricSet MetricAccumulator::Sums::finish() const {
  MetricSet m;
  m.count = count;
  m.mape_excluded = excluded;
  if (count == 0) return m;
  const double n = static_cast<double>(count);
  m.mae = abs / n;
  m.rmse = std::sqrt(sq / n);
  m.mape = ape_count ? ape / static_cast<double>(ape_count) : 0.0;
  return m;
}

MetricAccumulator::MetricAccumulator(std::size_t horizons) : horizons_(horizons) {}

void MetricAccumulator::add(std::size_t horizon, double pred, double truth) {
  if (horizon >= horizons_.size()) horizons_.resize(horizon + 1);
  horizons_[horizon].add(pred, truth);
  total_.add(pred, truth);
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.aggregate = total_.finish();
  for (const auto& h : horizons_) r.per_horizon.push_back(h.finish());
  return r;
}

MetricSet compute_metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " truths");
  }
  MetricAccumulator acc(1);
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(0, pred[i], truth[i]);
  return acc.report().aggregate;
}

MetricReport metrics(const ObservationSeries& pred, const ObservationSeries& truth) {
  if (pred.n_times() != truth.n_times() || pred.n_nodes() != truth.n_nodes() ||
      pred.channels != truth.channels) {
    throw DimensionError("metrics: prediction and truth series are not aligned");
  }
  MetricAccumulator acc(truth.n_times());
  for (std::size_t t = 0; t < truth.n_times(); ++t) {
    if (!truth.mask[t] || !pred.mask[t]) continue;
    for (std::size_t s = 0; s < truth.n_nodes(); ++s) {
      for (std::size_t ch = 0; ch < truth.channels; ++ch) acc.add(t, pred.at(t, s, ch), truth.at(t, s, ch));
    }
  }
  return acc.report();
}

ObservationSeries persistence_baseline(const ObservationSeries& history,
                                       std::span<const double> horizon_times) {
  std::size_t last = history.n_times();
  while (last > 0 && !history.mask[last - 1]) --last;
  if (last == 0) throw ContractError("persistence_baseline: empty history");
  const std::size_t frame = history.n_nodes() * history.channels;
  std::vector<double> values;
  values.reserve(horizon_times.size() * frame);
  const auto first = history.values.begin() + static_cast<long>((last - 1) * frame);
  for (std::size_t k = 0; k < horizon_times.size(); ++k) values.insert(values.end(), first, first + static_cast<long>(frame));
  return make_series(history.points, std::vector<double>(horizon_times.begin(), horizon_times.end()),
                     history.channels, std::move(values));
}

// ---- training ---------------------------------------------------------------------

TimeSplit split_time(std::size_t n_frames, double train_fraction, double val_fraction) {
  if (train_fraction <= 0.0 || val_fraction < 0.0 || train_fraction + val_fraction >= 1.0) {
    throw ParameterError("split fractions must be positive and leave room for a test range");
  }
  TimeSplit s;
  s.total = n_frames;
  s.train_end = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n_frames)));
  s.val_end = static_cast<std::size_t>(
      std::llround((train_fraction + val_fraction) * static_cast<double>(n_frames)));
  return s;
}

std::vector<std::size_t> window_starts(std::size_t begin, std::size_t end, std::size_t length,
                                       std::size_t stride) {
  if (stride == 0) throw ParameterError("window stride must be positive");
  std::vector<std::size_t> out;
  for (std::size_t s = begin; s + length <= end; s += stride) out.push_back(s);
  return out;
}

std::vector<std::uint8_t> label_masks(std::span<const std::size_t> starts, std::size_t n_out,
                                      double missing_ratio, std::uint64_t seed) {
  std::vector<std::uint8_t> out;
  out.reserve(starts.size() * n_out);
  for (auto s : starts) {
    const auto m = presence_mask(n_out, missing_ratio,
                                 derive_seed(seed, "window-" + std::to_string(s)));
    out.insert(out.end(), m.begin(), m.end());
  }
  return out;
}

void fit_normalization(StoNet& model, const ObservationSeries& series, std::size_t end) {
  const std::size_t c = series.channels, n = series.n_nodes();
  end = std::min(end, series.n_times());
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  std::size_t count = 0;
  for (std::size_t t = 0; t < end; ++t) {
    if (!series.mask[t]) continue;
    ++count;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += series.at(t, s, ch);
    }
  }
  if (count == 0) throw DataError("normalization: no present frames in the training range");
  for (auto& m : mean) m /= static_cast<double>(count * n);
  for (std::size_t t = 0; t < end; ++t) {
    if (!series.mask[t]) continue;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double e = series.at(t, s, ch) - mean[ch];
        var[ch] += e * e;
      }
    }
  }
  std::vector<double> stddev(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    stddev[ch] = std::sqrt(var[ch] / static_cast<double>(count * n));
    if (!(stddev[ch] > 1e-12)) stddev[ch] = 1.0;
  }
  std::vector<double> gaps;
  for (std::size_t t = 1; t < series.n_times(); ++t) gaps.push_back(series.times[t] - series.times[t - 1]);
  double spacing = 1.0;
  if (!gaps.empty()) {
    std::nth_element(gaps.begin(), gaps.begin() + static_cast<long>(gaps.size() / 2), gaps.end());
    spacing = gaps[gaps.size() / 2];
  }
  model.set_normalization(mean, stddev, spacing * static_cast<double>(model.config().n_out));
}

std::string format_epoch(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.6g,%.1f", r.epoch, r.train_loss, r.val_mae,
                r.val_rmse, r.lr, r.wall_ms);
  return buf;
}

std::vector<double> predict_windows(const StoNet& model, const ObservationSeries& series,
                                    const NeighborGraph& graph, std::span<const std::size_t> starts,
                                    std::size_t batch) {
  if (batch == 0) throw ParameterError("evaluation batch must be positive");
  const std::size_t c = series.channels;
  std::vector<double> out;
  out.reserve(starts.size() * model.config().n_out * series.n_nodes() * c);
  for (std::size_t b0 = 0; b0 < starts.size(); b0 += batch) {
    const auto chunk = starts.subspan(b0, std::min(batch, starts.size() - b0));
    const WindowBatch wb = model.make_batch(series, chunk, graph);
    const ModelOutput result = model.forward(wb, series.points, graph);
    const auto pred = result.prediction.data();
    for (std::size_t i = 0; i < pred.size(); ++i) out.push_back(model.denormalize(pred[i], i % c));
  }
  return out;
}

MetricReport evaluate_windows(const StoNet& model, const ObservationSeries& series,
                              const NeighborGraph& graph, std::span<const std::size_t> starts,
                              std::size_t batch, std::span<const std::uint8_t> label_mask) {
  const std::size_t n_in = model.config().n_in, n_out = model.config().n_out;
  const std::size_t n = series.n_nodes(), c = series.channels;
  if (!label_mask.empty() && label_mask.size() != starts.size() * n_out) {
    throw DimensionError("evaluate_windows: label mask needs windows * n_out flags");
  }
  const std::vector<double> pred = predict_windows(model, series, graph, starts, batch);
  MetricAccumulator acc(n_out);
  for (std::size_t w = 0; w < starts.size(); ++w) {
    for (std::size_t k = 0; k < n_out; ++k) {
      const std::size_t frame = starts[w] + n_in + k;
      if (!series.mask[frame] || (!label_mask.empty() && !label_mask[w * n_out + k])) continue;
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          acc.add(k, pred[((w * n_out + k) * n + s) * c + ch], series.at(frame, s, ch));
        }
      }
    }
  }
  return acc.report();
}

TrainResult train(StoNet& model, const ObservationSeries& series, const NeighborGraph& graph,
                  const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  using Clock = std::chrono::steady_clock;
  if (cfg.batch == 0) throw ParameterError("batch must be positive");
  if (!(cfg.node_fraction > 0.0 && cfg.node_fraction <= 1.0)) {
    throw ParameterError("node fraction must lie in (0, 1]");
  }
  const ModelConfig& mc = model.config();
  LossConfig loss_cfg = cfg.loss;
  loss_cfg.n_in = mc.n_in;
  loss_cfg.n_out = mc.n_out;
  const std::size_t length = mc.n_in + mc.n_out;

  const TimeSplit split = split_time(series.n_times(), cfg.train_fraction, cfg.val_fraction);
  fit_normalization(model, series, split.train_end);
  std::vector<std::size_t> train_starts = window_starts(0, split.train_end, length, cfg.window_stride);
  const std::vector<std::size_t> val_starts =
      window_starts(split.train_end, split.val_end, length, cfg.window_stride);
  if (train_starts.empty()) throw DataError("no complete training window fits the training range");
  if (val_starts.empty()) throw DataError("no complete validation window fits the validation range");

  std::vector<std::uint8_t> all_masks = label_masks(train_starts, mc.n_out, cfg.missing_ratio, cfg.mask_seed);

  const ParameterList params = model.parameters();
  AdamState adam;
  adam.lr = cfg.lr;
  TrainResult result;
  MetricReport val = evaluate_windows(model, series, graph, val_starts, cfg.eval_batch);
  result.best_val_mae = val.aggregate.mae;
  ParameterList best = snapshot(params);
  std::size_t since_best = 0;
  Rng order_rng(cfg.shuffle_seed);
  Rng node_rng(derive_seed(cfg.shuffle_seed, "nodes"));
  const std::size_t n_nodes = series.n_nodes();
  const auto kept = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.node_fraction * static_cast<double>(n_nodes))));
  std::vector<std::size_t> node_ids(n_nodes);

  std::vector<std::size_t> order(train_starts.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    const std::size_t used = cfg.windows_per_epoch ? std::min(cfg.windows_per_epoch, order.size()) : order.size();
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b0 = 0; b0 < used; b0 += cfg.batch) {
      const std::size_t b1 = std::min(used, b0 + cfg.batch);
      std::vector<std::size_t> starts;
      std::vector<std::uint8_t> labels;
      for (std::size_t i = b0; i < b1; ++i) {
        starts.push_back(train_starts[order[i]]);
        const auto first = all_masks.begin() + static_cast<long>(order[i] * mc.n_out);
        labels.insert(labels.end(), first, first + static_cast<long>(mc.n_out));
      }
      const ObservationSeries* step_series = &series;
      const NeighborGraph* step_graph = &graph;
      ObservationSeries sub_series;
      NeighborGraph sub_graph;
      if (kept < n_nodes) {
        for (std::size_t i = 0; i < n_nodes; ++i) node_ids[i] = i;
        node_rng.shuffle(node_ids);
        std::vector<std::size_t> ids(node_ids.begin(), node_ids.begin() + static_cast<long>(kept));
        std::sort(ids.begin(), ids.end());
        sub_series = series.select_nodes(ids);
        sub_graph = build_epsilon_graph(sub_series.points, graph.eps);
        if (graph.num_levels > 1) {
          std::vector<int> levels;
          for (auto i : ids) levels.push_back(graph.levels[i]);
          sub_graph = with_levels(std::move(sub_graph), std::move(levels));
          sub_graph.num_levels = graph.num_levels;  // a level may be empty in the subset
        }
        step_series = &sub_series;
        step_graph = &sub_graph;
      }
      const ParameterList last_finite = snapshot(params);
      try {
        Tape tape;
        TapeScope scope(tape);
        const WindowBatch wb = model.make_batch(*step_series, starts, *step_graph, labels);
        const ModelOutput out = model.forward(wb, step_series->points, *step_graph);
        const LossValue loss = composite_loss(out.state.v_enc, out.v_dec, wb.inputs, wb.targets,
                                              wb.mask_out, model.projector(), loss_cfg, wb.nodes);
        const double value = loss.total.item();
        if (!std::isfinite(value)) throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch));
        tape.backward(loss.total);
        for (const auto& p : params) {
          for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in " + p.name);
          }
        }
        adam_step(params, adam);
        loss_sum += value;
        ++steps;
      } catch (const DivergenceError&) {
        assign_parameters(params, last_finite);
        throw;
      }
    }
    try {
      val = evaluate_windows(model, series, graph, val_starts, cfg.eval_batch);
      if (!std::isfinite(val.aggregate.mae)) {
        throw DivergenceError("validation error became non-finite at epoch " + std::to_string(epoch));
      }
    } catch (const DivergenceError&) {
      assign_parameters(params, best);
      throw;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    rec.val_mae = val.aggregate.mae;
    rec.val_rmse = val.aggregate.rmse;
    rec.lr = adam.lr;
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      best = snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      result.stopped_early = true;
      break;
    }
  }
  assign_parameters(params, best);
  return result;
}

}  // namespace stonet
