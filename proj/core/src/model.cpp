#include "stonet/model.hpp"

#include <cmath>

#include "stonet/errors.hpp"

namespace stonet {

EncoderConfig ModelConfig::encoder() const {
  EncoderConfig e;
  e.coord_dim = domain_dim(domain);
  e.channels = channels;
  e.d = d;
  e.d_t = d_t;
  e.d_a = d_a;
  e.time_features = 1;
  e.a_hidden = a_hidden;
  e.kappa_hidden = kappa_hidden;
  e.layer_number = layer_number;
  e.levels = levels;
  e.activation = activation;
  return e;
}

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig c;
  c.coord_dim = domain_dim(domain);
  c.d = d;
  c.branch_width = branch_width;
  c.trunk_width = trunk_width;
  c.xi_hidden = xi_hidden;
  c.trunk_hidden = trunk_hidden;
  c.groups = decoder_groups;
  c.norm = branch_norm;
  c.allow_interpolation = interpolation;
  c.activation = activation;
  return c;
}

StoNet::StoNet(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  if (config.n_in == 0 || config.n_out == 0) throw ParameterError("window lengths must be positive");
  Rng rng(init_seed);
  encoder_ = Encoder(config.encoder(), rng);
  decoder_ = Decoder(config.decoder(), rng);
  projector_ = Linear(config.d, config.channels, rng, true);
  mean_ = Tensor::zeros({config.channels});
  std_ = Tensor::full({config.channels}, 1.0);
  time_scale_ = Tensor::full({1}, 1.0);
}

ParameterList StoNet::parameters() const {
  ParameterList out;
  encoder_.collect(out);
  decoder_.collect(out);
  projector_.collect(out, "projector");
  return out;
}

ParameterList StoNet::buffers() const {
  return {{"norm.mean", mean_}, {"norm.std", std_}, {"time.scale", time_scale_}};
}

ParameterList StoNet::state() const {
  ParameterList out = parameters();
  for (auto& b : buffers()) out.push_back(b);
  return out;
}

ParameterList StoNet::decoder_parameters() const {
  ParameterList out;
  decoder_.collect(out);
  return out;
}

void StoNet::set_normalization(std::span<const double> mean, std::span<const double> stddev,
                               double time_scale) {
  if (mean.size() != config_.channels || stddev.size() != config_.channels) {
    throw DimensionError("normalization needs one mean and std per channel");
  }
  for (double s : stddev) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("normalization std must be positive");
  }
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) {
    throw ParameterError("time scale must be positive");
  }
  std::copy(mean.begin(), mean.end(), mean_.mutable_data().begin());
  std::copy(stddev.begin(), stddev.end(), std_.mutable_data().begin());
  time_scale_.mutable_data()[0] = time_scale;
}

double StoNet::normalize(double value, std::size_t channel) const {
  return (value - mean_.at(channel)) / std_.at(channel);
}

double StoNet::denormalize(double value, std::size_t channel) const {
  return value * std_.at(channel) + mean_.at(channel);
}

WindowBatch StoNet::make_batch(const ObservationSeries& series, std::span<const std::size_t> starts,
                               const NeighborGraph& graph,
                               std::span<const std::uint8_t> label_mask) const {
  const std::size_t n = series.n_nodes(), c = config_.channels;
  const std::size_t n_in = config_.n_in, n_out = config_.n_out;
  if (series.channels != c) throw DimensionError("series channel count differs from the model");
  if (graph.size() != n) throw ContractError("make_batch: graph does not cover the series nodes");
  if (!label_mask.empty() && label_mask.size() != starts.size() * n_out) {
    throw DimensionError("make_batch: label mask needs windows * n_out flags");
  }
  WindowBatch b;
  b.windows = starts.size();
  b.n_in = n_in;
  b.n_out = n_out;
  b.nodes = n;
  std::vector<double> in, tf, target;
  in.reserve(starts.size() * n_in * n * c);
  target.reserve(starts.size() * n_out * n * c);
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) nbrs[i] = query_neighbors(series.points, graph, series.points.point(i));

  for (std::size_t w = 0; w < starts.size(); ++w) {
    const std::size_t s0 = starts[w];
    if (s0 + n_in + n_out > series.n_times()) {
      throw ContractError("make_batch: window at frame " + std::to_string(s0) + " overruns the series");
    }
    const double t_last = series.times[s0 + n_in - 1];
    for (std::size_t f = s0; f < s0 + n_in; ++f) {
      if (!series.mask[f]) throw DataError("make_batch: history frame " + std::to_string(f) + " is missing");
      const double tau = (series.times[f] - t_last) / time_scale();
      b.history_times.push_back(tau);
      tf.push_back(tau);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t ch = 0; ch < c; ++ch) in.push_back(normalize(series.at(f, s, ch), ch));
      }
    }
    for (std::size_t k = 0; k < n_out; ++k) {
      const std::size_t f = s0 + n_in + k;
      const bool present = series.mask[f] && (label_mask.empty() || label_mask[w * n_out + k]);
      b.mask_out.push_back(present ? 1 : 0);
      const double tau = (series.times[f] - t_last) / time_scale();
      for (std::size_t s = 0; s < n; ++s) {
        b.queries.add(series.points.point(s), tau, w, nbrs[s]);
        for (std::size_t ch = 0; ch < c; ++ch) {
          target.push_back(present ? normalize(series.at(f, s, ch), ch) : 0.0);
        }
      }
    }
  }
  b.inputs = Tensor({starts.size() * n_in * n, c}, std::move(in));
  b.time_features = Tensor({starts.size() * n_in, 1}, std::move(tf));
  b.targets = Tensor({starts.size() * n_out * n, c}, std::move(target));
  return b;
}

ModelOutput StoNet::forward(const WindowBatch& batch, const PointSet& points,
                            const NeighborGraph& graph) const {
  ModelOutput out;
  out.state = encoder_.encode(batch.inputs, batch.time_features, points, graph, batch.windows);
  out.v_dec = decoder_.decode(out.state, batch.history_times, batch.queries);
  require_finite(out.v_dec, "decoder");
  out.reconstruction = projector_.forward(out.state.v_enc);
  out.prediction = projector_.forward(out.v_dec);
  return out;
}

ObservationSeries StoNet::forecast(const ObservationSeries& history,
                                   std::span<const double> horizon_times,
                                   const PointSet& query_points, const NeighborGraph& graph) const {
  const std::size_t n = history.n_nodes(), c = config_.channels, frames = history.n_times();
  if (frames == 0) throw ContractError("forecast: empty history");
  if (history.channels != c) throw DimensionError("forecast: channel count differs from the model");
  if (query_points.kind() != history.points.kind()) throw ContractError("forecast: domain mismatch");
  const double t_last = history.times.back();
  for (std::size_t k = 0; k < horizon_times.size(); ++k) {
    if (!(horizon_times[k] > (k ? horizon_times[k - 1] : t_last))) {
      throw ContractError("forecast: horizon times must increase strictly after the history");
    }
  }
  std::vector<double> in, tf;
  in.reserve(frames * n * c);
  for (std::size_t f = 0; f < frames; ++f) {
    if (!history.mask[f]) throw DataError("forecast: history frame " + std::to_string(f) + " is missing");
    tf.push_back((history.times[f] - t_last) / time_scale());
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) in.push_back(normalize(history.at(f, s, ch), ch));
    }
  }
  const Tensor time_features({frames, 1}, tf);
  const EncoderState state =
      encoder_.encode(Tensor({frames * n, c}, std::move(in)), time_features, history.points, graph);

  std::vector<std::vector<std::size_t>> nbrs(query_points.size());
  for (std::size_t q = 0; q < query_points.size(); ++q) {
    nbrs[q] = query_neighbors(history.points, graph, query_points.point(q));
  }
  QueryBatch queries;
  for (double t : horizon_times) {
    for (std::size_t q = 0; q < query_points.size(); ++q) {
      queries.add(query_points.point(q), (t - t_last) / time_scale(), 0, nbrs[q]);
    }
  }
  std::vector<double> values;
  if (queries.size() > 0) {
    const Tensor pred = projector_.forward(decoder_.decode(state, tf, queries));
    require_finite(pred, "forecast");
    values.resize(pred.numel());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = denormalize(pred.data()[i], i % c);
  }
  return make_series(query_points, std::vector<double>(horizon_times.begin(), horizon_times.end()), c,
                     std::move(values));
}

}  // namespace stonet
