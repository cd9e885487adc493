#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stonet/data.hpp"
#include "stonet/decoder.hpp"
#include "stonet/encoder.hpp"

namespace stonet {

struct ModelConfig {
  DomainKind domain = DomainKind::kPlane;
  std::size_t channels = 1;
  std::size_t d = 8;
  std::size_t d_t = 4;
  std::size_t d_a = 16;
  std::size_t a_hidden = 32;
  std::size_t kappa_hidden = 0;
  std::size_t layer_number = 1;
  int levels = 1;
  std::size_t branch_width = 32;
  std::size_t trunk_width = 0;
  std::size_t xi_hidden = 8;
  std::size_t trunk_hidden = 32;
  std::size_t decoder_groups = 1;
  BranchNorm branch_norm = BranchNorm::kSpatial;
  Activation activation = Activation::kRelu;
  bool interpolation = false;
  std::size_t n_in = 12;
  std::size_t n_out = 12;

  EncoderConfig encoder() const;
  DecoderConfig decoder() const;
};

// Sliding windows cut from one series: n_in history frames followed by n_out
// target frames per window. Values are normalized.
struct WindowBatch {
  std::size_t windows = 0;
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::size_t nodes = 0;
  Tensor inputs;                      // [windows * n_in * nodes, c]
  Tensor time_features;               // [windows * n_in, 1]
  std::vector<double> history_times;  // model time of every input frame
  QueryBatch queries;                 // window-major, then horizon step, then node
  Tensor targets;                     // [windows * n_out * nodes, c]
  std::vector<std::uint8_t> mask_out;  // [windows * n_out]
};

struct ModelOutput {
  EncoderState state;
  Tensor v_dec;           // [queries, d]
  Tensor reconstruction;  // P'(v_enc), [windows * n_in * nodes, c]
  Tensor prediction;      // P'(v_dec), [queries, c]
};

class StoNet {
 public:
  StoNet() = default;
  StoNet(const ModelConfig& config, std::uint64_t init_seed);

  // Trainable tensors in checkpoint order.
  ParameterList parameters() const;
  // Non-trainable: norm.mean [c], norm.std [c], time.scale [1].
  ParameterList buffers() const;
  // parameters() followed by buffers(); what a checkpoint stores.
  ParameterList state() const;
  ParameterList decoder_parameters() const;

  void set_normalization(std::span<const double> mean, std::span<const double> stddev,
                         double time_scale);
  double time_scale() const { return time_scale_.item(); }
  double normalize(double value, std::size_t channel) const;
  double denormalize(double value, std::size_t channel) const;

  // Windows beginning at the given frame indices of `series`. `label_mask`
  // (windows * n_out flags) hides target frames; empty keeps the series mask.
  WindowBatch make_batch(const ObservationSeries& series, std::span<const std::size_t> starts,
                         const NeighborGraph& graph,
                         std::span<const std::uint8_t> label_mask = {}) const;

  ModelOutput forward(const WindowBatch& batch, const PointSet& points,
                      const NeighborGraph& graph) const;

  // Encodes the whole history as one window over `graph` (built on
  // history.points) and predicts every query point at every horizon time, in
  // physical units.
  ObservationSeries forecast(const ObservationSeries& history, std::span<const double> horizon_times,
                             const PointSet& query_points, const NeighborGraph& graph) const;

  const ModelConfig& config() const { return config_; }
  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }
  Linear& projector() { return projector_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }
  const Linear& projector() const { return projector_; }

 private:
  ModelConfig config_;
  Encoder encoder_;
  Decoder decoder_;
  Linear projector_;
  Tensor mean_;
  Tensor std_;
  Tensor time_scale_;
};

}  // namespace stonet
