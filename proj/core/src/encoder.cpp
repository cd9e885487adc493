#include "stonet/encoder.hpp"

#include <cmath>

#include "stonet/errors.hpp"

namespace stonet {

namespace {

// Builds the step updating `target_level` nodes from `source_level`
// neighbors found in `lists`.
KernelStep level_step(const NeighborGraph& graph, const std::vector<std::vector<std::size_t>>& lists,
                      int target_level, int source_level, std::size_t frames) {
  const std::size_t n = graph.size();
  KernelStep step;
  std::vector<std::size_t> senders;
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < n; ++i) {
      if (graph.levels[i] != target_level) continue;
      const std::size_t pos = step.targets.size();
      step.targets.push_back(f * n + i);
      senders.clear();
      for (auto j : lists[i]) {
        if (graph.levels[j] == source_level) senders.push_back(j);
      }
      const double w = senders.empty() ? 0.0 : 1.0 / static_cast<double>(senders.size());
      for (auto j : senders) {
        step.edge_src.push_back(f * n + j);
        step.edge_dst.push_back(pos);
        step.edge_weight.push_back(w);
      }
    }
  }
  return step;
}

}  // namespace

void require_finite(const Tensor& t, const char* where) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite value in ") + where);
  }
}

Tensor repeated_coordinates(const PointSet& points, std::size_t frames) {
  const std::size_t n = points.size(), m = points.dim();
  std::vector<double> c;
  c.reserve(frames * n * m);
  for (std::size_t f = 0; f < frames; ++f) c.insert(c.end(), points.coords().begin(), points.coords().end());
  return Tensor({frames * n, m}, std::move(c));
}

// ---- TimeEmbedder / ParametricFn ------------------------------------------------

TimeEmbedder::TimeEmbedder(std::size_t features, std::size_t d_t) {
  if (features == 0 || d_t == 0) throw DimensionError("time embedding needs positive widths");
  std::vector<double> w(features * d_t);
  for (std::size_t f = 0; f < features; ++f) {
    for (std::size_t k = 0; k < d_t; ++k) w[f * d_t + k] = static_cast<double>(k + 1);
  }
  omegas_ = Tensor({features, d_t}, std::move(w), true);
}

Tensor TimeEmbedder::embed(const Tensor& time_features) const {
  if (time_features.rank() != 2 || time_features.dim(1) != omegas_.dim(0)) {
    throw DimensionError("time features " + shape_str(time_features.shape()) +
                         " do not match embedder width " + std::to_string(omegas_.dim(0)));
  }
  return sin_cos_interleave(matmul(time_features, omegas_));
}

void TimeEmbedder::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".omega", omegas_});
}

ParametricFn::ParametricFn(std::size_t coord_dim, std::size_t embed_width, std::size_t hidden,
                           std::size_t d_a, Activation act, Rng& rng)
    : mlp_({coord_dim + embed_width, hidden, d_a}, act, Activation::kIdentity, rng) {}

Tensor ParametricFn::evaluate(const Tensor& coords, const Tensor& embeddings) const {
  const Tensor parts[] = {coords, embeddings};
  return mlp_.forward(concat_cols(parts));
}

// ---- kernel layers ---------------------------------------------------------------

KernelLayer::KernelLayer(std::size_t d, std::size_t node_width, std::size_t hidden_width, Rng& rng)
    : self_in(node_width, hidden_width, rng, true),
      nbr_in(node_width, hidden_width, rng, false),
      hidden(hidden_width, hidden_width, rng, true),
      out(hidden_width, d * d, rng, true) {
  w = uniform_parameter({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
}

void KernelLayer::collect(ParameterList& params, const std::string& prefix) const {
  params.push_back({prefix + ".W", w});
  self_in.collect(params, prefix + ".kappa.in_self");
  nbr_in.collect(params, prefix + ".kappa.in_nbr");
  hidden.collect(params, prefix + ".kappa.hidden");
  out.collect(params, prefix + ".kappa.out");
}

KernelStep flat_step(const NeighborGraph& graph, std::size_t frames) {
  std::vector<int> ones(graph.size(), 1);
  NeighborGraph flat = graph;
  flat.levels = ones;
  return level_step(flat, graph.adjacency, 1, 1, frames);
}

std::vector<KernelStep> multipole_steps(const NeighborGraph& graph, std::size_t frames) {
  const int levels = graph.num_levels;
  if (graph.levels.size() != graph.size() || levels < 1 ||
      graph.inter_level.size() != graph.size()) {
    throw ContractError("multipole encoding needs a level assignment on the graph");
  }
  std::vector<KernelStep> steps;
  for (int l = 1; l <= levels; ++l) steps.push_back(level_step(graph, graph.adjacency, l, l, frames));
  for (int l = 1; l < levels; ++l) steps.push_back(level_step(graph, graph.inter_level, l + 1, l, frames));
  for (int l = levels - 1; l >= 1; --l) steps.push_back(level_step(graph, graph.inter_level, l, l + 1, frames));
  return steps;
}

Tensor kernel_matrices(const Tensor& node_features, const KernelStep& step,
                       const KernelLayer& layer, Activation act) {
  const Tensor receiver = layer.self_in.forward(gather_rows(node_features, step.targets));
  const Tensor sender = layer.nbr_in.forward(node_features);
  Tensor h = activate(add(gather_rows(receiver, step.edge_dst), gather_rows(sender, step.edge_src)), act);
  h = activate(layer.hidden.forward(h), act);
  return layer.out.forward(h);
}

Tensor kernel_update(const Tensor& v, const Tensor& node_features, const KernelStep& step,
                     const KernelLayer& layer, Activation act) {
  if (v.rank() != 2 || v.dim(1) != layer.d()) {
    throw DimensionError("kernel_update: representation " + shape_str(v.shape()) +
                         " vs layer width " + std::to_string(layer.d()));
  }
  if (node_features.dim(0) != v.dim(0)) {
    throw DimensionError("kernel_update: node features " + shape_str(node_features.shape()) +
                         " do not cover " + std::to_string(v.dim(0)) + " rows");
  }
  require_finite(v, "kernel_update input");
  require_finite(node_features, "kernel_update parametric values");
  Tensor pre = matmul(gather_rows(v, step.targets), layer.w);
  if (!step.edge_src.empty()) {
    const Tensor kappa = kernel_matrices(node_features, step, layer, act);
    const Tensor messages = row_matvec(kappa, gather_rows(v, step.edge_src));
    pre = add(pre, scatter_add_rows(messages, step.edge_dst, step.targets.size(), step.edge_weight));
  }
  return replace_rows(v, step.targets, activate(pre, act));
}

Tensor multipole_vcycle(const Tensor& v, const Tensor& node_features,
                        std::span<const KernelStep> steps, std::span<const KernelLayer> layers,
                        Activation act) {
  if (steps.size() != layers.size()) {
    throw ContractError("multipole_vcycle: " + std::to_string(steps.size()) + " steps but " +
                        std::to_string(layers.size()) + " layers");
  }
  Tensor out = v;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    out = kernel_update(out, node_features, steps[k], layers[k], act);
  }
  return out;
}

// ---- Encoder ----------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  if (config.d < config.channels) throw ParameterError("embedding size d must be >= channel count");
  if (config.levels < 1) throw ParameterError("levels must be >= 1");
  if (config.layer_number < 1) throw ParameterError("layer_number must be >= 1");
  lift_ = Linear(config.channels, config.d, rng, true);
  time_ = TimeEmbedder(config.time_features, config.d_t);
  parametric_ = ParametricFn(config.coord_dim, time_.width(), config.a_hidden, config.d_a,
                             config.activation, rng);
  const std::size_t hidden = config.kappa_hidden ? config.kappa_hidden : 4 * config.d;
  for (std::size_t c = 0; c < config.layer_number; ++c) {
    std::vector<KernelLayer> layers;
    for (std::size_t s = 0; s < config.kernel_steps(); ++s) {
      layers.emplace_back(config.d, config.d_a + config.coord_dim, hidden, rng);
    }
    cycles_.push_back(std::move(layers));
  }
}

Tensor Encoder::parametric_values(const Tensor& time_features, const PointSet& points) const {
  const std::size_t frames = time_features.dim(0), n = points.size();
  std::vector<std::size_t> frame_of_row(frames * n);
  for (std::size_t r = 0; r < frame_of_row.size(); ++r) frame_of_row[r] = r / n;
  const Tensor embeddings = gather_rows(time_.embed(time_features), frame_of_row);
  return parametric_.evaluate(repeated_coordinates(points, frames), embeddings);
}

EncoderState Encoder::encode(const Tensor& values, const Tensor& time_features,
                             const PointSet& points, const NeighborGraph& graph,
                             std::size_t windows) const {
  const std::size_t n = points.size();
  if (graph.size() != n) {
    throw ContractError("encode: graph has " + std::to_string(graph.size()) + " nodes, history " +
                        std::to_string(n));
  }
  if (points.dim() != config_.coord_dim) throw DimensionError("encode: coordinate width mismatch");
  if (time_features.rank() != 2) throw DimensionError("encode: time features must be rank 2");
  const std::size_t frames = time_features.dim(0);
  if (frames == 0) throw ContractError("encode: empty history");
  if (values.rank() != 2 || values.dim(0) != frames * n || values.dim(1) != config_.channels) {
    throw ContractError("encode: values " + shape_str(values.shape()) + " do not match " +
                        std::to_string(frames) + " timestamps x " + std::to_string(n) +
                        " nodes x " + std::to_string(config_.channels) + " channels");
  }
  if (windows == 0 || frames % windows != 0) throw ContractError("encode: bad window count");
  if (graph.num_levels != config_.levels) {
    throw ContractError("encode: graph carries " + std::to_string(graph.num_levels) +
                        " levels, model expects " + std::to_string(config_.levels));
  }
  require_finite(values, "encoder input");

  const Tensor a_vals = parametric_values(time_features, points);
  require_finite(a_vals, "parametric function");
  const Tensor parts[] = {a_vals, repeated_coordinates(points, frames)};
  const Tensor node_features = concat_cols(parts);
  const std::vector<KernelStep> steps = multipole_steps(graph, frames);

  Tensor v = lift_.forward(values);
  for (const auto& layers : cycles_) {
    v = multipole_vcycle(v, node_features, steps, layers, config_.activation);
    require_finite(v, "encoder layer");
  }

  EncoderState state;
  state.v_enc = v;
  state.inputs = values;
  state.time_features = time_features;
  state.frames = frames;
  state.windows = windows;
  state.points = points;
  state.graph = graph;
  return state;
}

EncoderState Encoder::encode_new_node(const EncoderState& state, std::span<const double> x_new,
                                      std::span<const double> u_new,
                                      const ExtendedGraph& extended) const {
  const std::size_t n = state.nodes();
  const std::size_t c = config_.channels;
  if (extended.points.size() != n + 1 || extended.graph.size() != n + 1 ||
      extended.points.find(x_new) != n) {
    throw ContractError("encode_new_node: x_new is not the attached last node of the graph");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (distance(state.points.kind(), state.points.point(i), extended.points.point(i)) > 1e-12) {
      throw ContractError("encode_new_node: extended graph does not extend the encoded nodes");
    }
  }
  if (u_new.size() != state.frames * c) {
    throw DimensionError("encode_new_node: need " + std::to_string(state.frames * c) +
                         " values for the new node, got " + std::to_string(u_new.size()));
  }
  std::vector<double> values;
  values.reserve(state.frames * (n + 1) * c);
  auto old = state.inputs.data();
  for (std::size_t f = 0; f < state.frames; ++f) {
    values.insert(values.end(), old.begin() + static_cast<long>(f * n * c),
                  old.begin() + static_cast<long>((f + 1) * n * c));
    values.insert(values.end(), u_new.begin() + static_cast<long>(f * c),
                  u_new.begin() + static_cast<long>((f + 1) * c));
  }
  return encode(Tensor({state.frames * (n + 1), c}, std::move(values)), state.time_features,
                extended.points, extended.graph, state.windows);
}

void Encoder::collect(ParameterList& out) const {
  lift_.collect(out, "encoder.lift");
  time_.collect(out, "encoder.time");
  parametric_.collect(out, "encoder.param_fn");
  for (std::size_t c = 0; c < cycles_.size(); ++c) {
    for (std::size_t s = 0; s < cycles_[c].size(); ++s) {
      cycles_[c][s].collect(out, "encoder.cycle" + std::to_string(c) + ".step" + std::to_string(s));
    }
  }
}

}  // namespace stonet
