#include "stonet/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "stonet/errors.hpp"

namespace stonet {

BranchNorm parse_branch_norm(const std::string& name) {
  if (name == "spatial") return BranchNorm::kSpatial;
  if (name == "spatiotemporal") return BranchNorm::kSpatioTemporal;
  throw ParameterError("unknown branch_norm '" + name + "' (spatial | spatiotemporal)");
}

std::string branch_norm_name(BranchNorm norm) {
  return norm == BranchNorm::kSpatial ? "spatial" : "spatiotemporal";
}

void QueryBatch::add(std::span<const double> x, double t, std::size_t window_id,
                     std::vector<std::size_t> nbrs) {
  coords.insert(coords.end(), x.begin(), x.end());
  times.push_back(t);
  window.push_back(window_id);
  neighbors.push_back(std::move(nbrs));
}

std::vector<std::size_t> query_neighbors(const PointSet& points, const NeighborGraph& graph,
                                         std::span<const double> x) {
  const std::size_t self = points.find(x);
  if (self == points.size()) return ball_query(points, x, graph.eps);
  std::vector<std::size_t> nbrs = graph.adjacency[self];
  nbrs.insert(std::lower_bound(nbrs.begin(), nbrs.end(), self), self);
  return nbrs;
}

DecoderGroup::DecoderGroup(const DecoderConfig& config, Rng& rng) {
  const std::size_t m = config.coord_dim, d = config.d, r = config.r();
  const std::size_t sr = config.branch_width * r, h = config.xi_hidden;
  if (config.trunk_hidden) {
    trunk = Mlp({m + 1, config.trunk_hidden, r}, config.activation, config.activation, rng);
  } else {
    trunk = Mlp({m + 1, r}, config.activation, config.activation, rng);
  }
  xi_in = Linear(m + 1, h, rng, true);
  xi_head = uniform_parameter({(h + 1) * d, sr}, 1.0 / std::sqrt(static_cast<double>(h + 1)), rng);
  theta = Tensor::zeros({sr}, true);
  c = uniform_parameter({sr}, 1.0 / std::sqrt(static_cast<double>(config.branch_width)), rng);
}

void DecoderGroup::collect(ParameterList& out, const std::string& prefix) const {
  trunk.collect(out, prefix + ".trunk");
  xi_in.collect(out, prefix + ".xi.in");
  out.push_back({prefix + ".xi.head", xi_head});
  out.push_back({prefix + ".theta", theta});
  out.push_back({prefix + ".c", c});
}

Decoder::Decoder(const DecoderConfig& config, Rng& rng) : config_(config) {
  if (config.r() != config.d) {
    throw ParameterError("trunk_width must equal d (got " + std::to_string(config.r()) + " vs " +
                         std::to_string(config.d) + ")");
  }
  if (config.groups == 0 || config.branch_width == 0 || config.xi_hidden == 0) {
    throw ParameterError("decoder widths and group count must be positive");
  }
  for (std::size_t g = 0; g < config.groups; ++g) groups_.emplace_back(config, rng);
  const std::size_t s = config.branch_width, r = config.r();
  std::vector<double> sel(s * r * r, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t k = 0; k < r; ++k) sel[(i * r + k) * r + k] = 1.0;
  }
  selector_ = Tensor({s * r, r}, std::move(sel));
}

std::size_t Decoder::group_of(double t) const {
  const double g = std::ceil(t * static_cast<double>(groups_.size())) - 1.0;
  return static_cast<std::size_t>(std::clamp(g, 0.0, static_cast<double>(groups_.size() - 1)));
}

Tensor Decoder::trunk_eval(std::size_t g, const QueryBatch& queries,
                           std::span<const double> history_times,
                           std::span<const std::size_t> subset) const {
  const std::size_t m = config_.coord_dim;
  const double earliest =
      history_times.empty() ? 0.0 : *std::min_element(history_times.begin(), history_times.end());
  std::vector<double> in;
  in.reserve(subset.size() * (m + 1));
  for (auto q : subset) {
    const double t = queries.times[q];
    if (!std::isfinite(t)) throw ContractError("trunk_eval: non-finite query time");
    if (!config_.allow_interpolation && t < earliest) {
      throw ContractError("trunk_eval: query time " + std::to_string(t) +
                          " precedes the history (enable interpolation to allow it)");
    }
    in.insert(in.end(), queries.coords.begin() + static_cast<long>(q * m),
              queries.coords.begin() + static_cast<long>((q + 1) * m));
    in.push_back(t);
  }
  return groups_.at(g).trunk.forward(Tensor({subset.size(), m + 1}, std::move(in)));
}

Tensor Decoder::branch_eval(std::size_t g, const EncoderState& state,
                            std::span<const double> history_times, const QueryBatch& queries,
                            std::span<const std::size_t> subset) const {
  const std::size_t m = config_.coord_dim, n = state.nodes();
  const std::size_t per_window = state.frames_per_window();
  const DecoderGroup& group = groups_.at(g);

  std::vector<double> deltas;
  std::vector<std::size_t> rows, segment;
  std::vector<double> weights;
  for (std::size_t pos = 0; pos < subset.size(); ++pos) {
    const std::size_t q = subset[pos];
    const auto& nbrs = queries.neighbors[q];
    if (nbrs.empty()) continue;
    const std::size_t w = queries.window[q];
    if (w >= state.windows) throw ContractError("branch_eval: query reads a missing window");
    const double norm = config_.norm == BranchNorm::kSpatial
                            ? static_cast<double>(nbrs.size())
                            : static_cast<double>(nbrs.size() * per_window);
    const double* xq = queries.coords.data() + q * m;
    for (auto j : nbrs) {
      if (j >= n) throw ContractError("branch_eval: neighbor outside the encoded nodes");
      const auto xj = state.points.point(j);
      for (std::size_t fi = 0; fi < per_window; ++fi) {
        const std::size_t frame = w * per_window + fi;
        for (std::size_t a = 0; a < m; ++a) deltas.push_back(xq[a] - xj[a]);
        deltas.push_back(queries.times[q] - history_times[frame]);
        rows.push_back(state.row(frame, j));
        segment.push_back(pos);
        weights.push_back(1.0 / norm);
      }
    }
  }

  const std::size_t hidden = config_.xi_hidden, d = config_.d;
  Tensor aggregated;
  if (rows.empty()) {
    aggregated = Tensor::zeros({subset.size(), (hidden + 1) * d});
  } else {
    const Tensor delta({rows.size(), m + 1}, std::move(deltas));
    const Tensor h = activate(group.xi_in.forward(delta), config_.activation);
    const Tensor parts[] = {h, Tensor::full({rows.size(), 1}, 1.0)};
    aggregated = segment_outer_sum(concat_cols(parts), state.v_enc, rows, segment, weights,
                                   subset.size());
  }
  return activate(add(matmul(aggregated, group.xi_head), group.theta), config_.activation);
}

Tensor Decoder::decode(const EncoderState& state, std::span<const double> history_times,
                       const QueryBatch& queries) const {
  if (!state.v_enc.defined() || state.frames == 0 || state.nodes() == 0) {
    throw ContractError("decode: empty encoder state");
  }
  if (state.d() != config_.d) {
    throw ContractError("decode: state width " + std::to_string(state.d()) + " vs decoder width " +
                        std::to_string(config_.d));
  }
  if (history_times.size() != state.frames) {
    throw ContractError("decode: need one history time per encoded frame");
  }
  if (queries.coords.size() != queries.size() * config_.coord_dim ||
      queries.window.size() != queries.size() || queries.neighbors.size() != queries.size()) {
    throw DimensionError("decode: inconsistent query batch");
  }

  std::vector<std::vector<std::size_t>> by_group(groups_.size());
  for (std::size_t q = 0; q < queries.size(); ++q) by_group[group_of(queries.times[q])].push_back(q);

  Tensor out;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (by_group[g].empty()) continue;
    const Tensor branch = branch_eval(g, state, history_times, queries, by_group[g]);
    const Tensor trunk = trunk_eval(g, queries, history_times, by_group[g]);
    const Tensor v = mul(matmul(mul(branch, groups_[g].c), selector_), trunk);
    if (by_group[g].size() == queries.size()) return v;
    if (!out.defined()) out = Tensor::zeros({queries.size(), config_.r()});
    out = replace_rows(out, by_group[g], v);
  }
  if (!out.defined()) out = Tensor::zeros({0, config_.r()});
  return out;
}

void Decoder::collect(ParameterList& out) const {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    groups_[g].collect(out, "decoder.group" + std::to_string(g));
  }
}

}  // namespace stonet
