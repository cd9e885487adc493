#pragma once

// Graph kernel encoder: lifts each observed frame into a d-dimensional
// representation and refines it with multipole message passing whose kernel
// is conditioned on a learned parametric function a_t(x).

#include <span>
#include <vector>

#include "stonet/geometry.hpp"
#include "stonet/nn.hpp"

namespace stonet {

struct EncoderConfig {
  std::size_t coord_dim = 2;
  std::size_t channels = 1;
  std::size_t d = 8;
  std::size_t d_t = 4;
  std::size_t d_a = 16;
  std::size_t time_features = 1;
  std::size_t a_hidden = 32;
  std::size_t kappa_hidden = 0;  // 0 selects 4 * d
  std::size_t layer_number = 1;  // stacked V-cycles, untied parameters
  int levels = 1;
  Activation activation = Activation::kRelu;

  std::size_t kernel_steps() const { return 3 * static_cast<std::size_t>(levels) - 2; }
};

// e_t = [sin(w_1 . t), cos(w_1 . t), ..., sin(w_k . t), cos(w_k . t)] with
// learnable frequency vectors w_k (one per embedding pair, each as wide as
// the time-feature vector).
class TimeEmbedder {
 public:
  TimeEmbedder() = default;
  TimeEmbedder(std::size_t features, std::size_t d_t);

  // [n, features] -> [n, 2 * d_t]
  Tensor embed(const Tensor& time_features) const;
  void collect(ParameterList& out, const std::string& prefix) const;

  Tensor& omegas() { return omegas_; }  // [features, d_t]
  std::size_t width() const { return 2 * omegas_.dim(1); }

 private:
  Tensor omegas_;
};

// a_t(x) = MLP([x, e_t]).
class ParametricFn {
 public:
  ParametricFn() = default;
  ParametricFn(std::size_t coord_dim, std::size_t embed_width, std::size_t hidden, std::size_t d_a,
               Activation act, Rng& rng);

  Tensor evaluate(const Tensor& coords, const Tensor& embeddings) const;
  void collect(ParameterList& out, const std::string& prefix) const { mlp_.collect(out, prefix); }
  Mlp& mlp() { return mlp_; }

 private:
  Mlp mlp_;
};

// Parameters of one message-passing step: the local weight W and the kernel
// network kappa(a(x), a(x_j), x, x_j) -> d x d. The kernel's first layer is
// kept as two blocks (one for the receiving node, one for the sender) so that
// it can be evaluated per node and gathered per edge; together they form a
// single linear map of the concatenated input.
struct KernelLayer {
  KernelLayer() = default;
  KernelLayer(std::size_t d, std::size_t node_width, std::size_t hidden, Rng& rng);

  Tensor w;        // [d, d]; rows act on v as v . w
  Linear self_in;  // node_width -> hidden, with bias
  Linear nbr_in;   // node_width -> hidden
  Linear hidden;   // hidden -> hidden
  Linear out;      // hidden -> d * d

  std::size_t d() const { return w.dim(0); }
  void collect(ParameterList& params, const std::string& prefix) const;
};

// Rows updated by one kernel step and the weighted edges feeding them. Rows
// index a stack of frames: row = frame * n_nodes + node.
struct KernelStep {
  std::vector<std::size_t> targets;
  std::vector<std::size_t> edge_src;     // sending row
  std::vector<std::size_t> edge_dst;     // position in `targets`
  std::vector<double> edge_weight;       // 1 / |N_step(target)|
};

// All nodes, full adjacency.
KernelStep flat_step(const NeighborGraph& graph, std::size_t frames);

// Intra-level steps l = 1..L, upward steps l -> l+1 for l = 1..L-1, downward
// steps l+1 -> l for l = L-1..1. Requires a level assignment on the graph.
std::vector<KernelStep> multipole_steps(const NeighborGraph& graph, std::size_t frames);

// kappa(...) for every edge of `step`, shaped [E, d*d].
Tensor kernel_matrices(const Tensor& node_features, const KernelStep& step,
                       const KernelLayer& layer, Activation act);

// v with every target row x replaced by
//   act(W v(x) + sum_j weight_j kappa(x, x_j) v(x_j)).
// Targets without edges receive act(W v(x)).
Tensor kernel_update(const Tensor& v, const Tensor& node_features, const KernelStep& step,
                     const KernelLayer& layer, Activation act);

// Applies the steps in order, each with its own layer.
Tensor multipole_vcycle(const Tensor& v, const Tensor& node_features,
                        std::span<const KernelStep> steps, std::span<const KernelLayer> layers,
                        Activation act);

struct EncoderState {
  Tensor v_enc;          // [frames * nodes, d], frame-major
  Tensor inputs;         // [frames * nodes, channels], what was encoded
  Tensor time_features;  // [frames, features]
  std::size_t frames = 0;
  std::size_t windows = 1;  // frames split evenly into independent windows
  PointSet points;
  NeighborGraph graph;

  std::size_t nodes() const { return points.size(); }
  std::size_t d() const { return v_enc.dim(1); }
  std::size_t frames_per_window() const { return frames / windows; }
  std::size_t row(std::size_t frame, std::size_t node) const { return frame * nodes() + node; }
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, Rng& rng);

  // values: [frames * n_s, channels]; time_features: [frames, features].
  EncoderState encode(const Tensor& values, const Tensor& time_features, const PointSet& points,
                      const NeighborGraph& graph, std::size_t windows = 1) const;

  // Re-encodes `state` over `extended`, whose last node must be `x_new` and
  // whose leading nodes must be the state's nodes. `u_new` holds the new
  // node's values, frames x channels.
  EncoderState encode_new_node(const EncoderState& state, std::span<const double> x_new,
                               std::span<const double> u_new, const ExtendedGraph& extended) const;

  // a_t(x) for every (frame, node) row.
  Tensor parametric_values(const Tensor& time_features, const PointSet& points) const;
  Tensor lift(const Tensor& values) const { return lift_.forward(values); }

  void collect(ParameterList& out) const;

  const EncoderConfig& config() const { return config_; }
  Linear& lift_layer() { return lift_; }
  TimeEmbedder& time_embedder() { return time_; }
  ParametricFn& parametric() { return parametric_; }
  std::vector<std::vector<KernelLayer>>& cycles() { return cycles_; }
  const std::vector<std::vector<KernelLayer>>& cycles() const { return cycles_; }

 private:
  EncoderConfig config_;
  Linear lift_;
  TimeEmbedder time_;
  ParametricFn parametric_;
  std::vector<std::vector<KernelLayer>> cycles_;  // [layer_number][kernel_steps]
};

// Rank-2 constant tensor [frames * n_s, coord_dim] repeating the node
// coordinates for every frame.
Tensor repeated_coordinates(const PointSet& points, std::size_t frames);

// Throws DivergenceError if any value is NaN or infinite.
void require_finite(const Tensor& t, const char* where);

}  // namespace stonet
