#pragma once

// Operator decoder: v_dec_k(x, t) = sum_i c_ik * Branch_ik(x, t) * Trunk_k(x, t)
// where the branch aggregates encoder representations of (neighbor, history
// frame) pairs weighted by xi(x - x_j, t - t_j).

#include <span>
#include <vector>

#include "stonet/encoder.hpp"

namespace stonet {

enum class BranchNorm { kSpatial, kSpatioTemporal };

BranchNorm parse_branch_norm(const std::string& name);
std::string branch_norm_name(BranchNorm norm);

struct DecoderConfig {
  std::size_t coord_dim = 2;
  std::size_t d = 8;
  std::size_t branch_width = 32;  // s
  std::size_t trunk_width = 0;    // r; 0 selects d
  std::size_t xi_hidden = 8;
  std::size_t trunk_hidden = 32;  // 0: single layer sigma(eta [x, t] + zeta)
  std::size_t groups = 1;         // decoders owning equal slices of the horizon (0, 1]
  BranchNorm norm = BranchNorm::kSpatial;
  bool allow_interpolation = false;
  Activation activation = Activation::kRelu;

  std::size_t r() const { return trunk_width ? trunk_width : d; }
};

// Queries against an encoded state. Times are model times: the last history
// frame sits at 0 and one full horizon spans (0, 1].
struct QueryBatch {
  std::vector<double> coords;                    // m per query
  std::vector<double> times;                     // one per query
  std::vector<std::size_t> window;               // encoded window each query reads
  std::vector<std::vector<std::size_t>> neighbors;  // node ids of the state's point set

  std::size_t size() const { return times.size(); }
  void add(std::span<const double> x, double t, std::size_t window_id,
           std::vector<std::size_t> nbrs);
};

// Closed eps-ball of `x` among the state's nodes: a node's own adjacency plus
// itself, or a ball query for points off the graph.
std::vector<std::size_t> query_neighbors(const PointSet& points, const NeighborGraph& graph,
                                         std::span<const double> x);

class DecoderGroup {
 public:
  DecoderGroup() = default;
  DecoderGroup(const DecoderConfig& config, Rng& rng);

  Mlp trunk;       // [x, t] -> r
  Linear xi_in;    // [dx, dt] -> xi_hidden
  Tensor xi_head;  // [(xi_hidden + 1) * d, s * r]
  Tensor theta;    // [s * r]
  Tensor c;        // [s * r], column i * r + k holds c_ik

  void collect(ParameterList& out, const std::string& prefix) const;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const DecoderConfig& config, Rng& rng);

  // history_times: model time of every encoded frame (state.frames values).
  // Returns [queries, r].
  Tensor decode(const EncoderState& state, std::span<const double> history_times,
                const QueryBatch& queries) const;

  // Trunk features [queries, r] of group `g`.
  Tensor trunk_eval(std::size_t g, const QueryBatch& queries, std::span<const double> history_times,
                    std::span<const std::size_t> subset) const;
  // Branch features [queries, s * r] of group `g`.
  Tensor branch_eval(std::size_t g, const EncoderState& state,
                     std::span<const double> history_times, const QueryBatch& queries,
                     std::span<const std::size_t> subset) const;

  // Group answering a query at model time t.
  std::size_t group_of(double t) const;

  void collect(ParameterList& out) const;
  const DecoderConfig& config() const { return config_; }
  std::vector<DecoderGroup>& groups() { return groups_; }

 private:
  DecoderConfig config_;
  std::vector<DecoderGroup> groups_;
  Tensor selector_;  // [s * r, r] sums over i
};

}  // namespace stonet
