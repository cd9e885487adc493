#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stonet {

enum class DomainKind { kPlane, kSphere };

DomainKind parse_domain(const std::string& name);
std::string domain_name(DomainKind kind);
std::size_t domain_dim(DomainKind kind);

// Throws DomainError when `x` is not a valid point of `kind` (wrong width,
// non-finite coordinate, sphere vector off the unit sphere by more than 1e-9).
void validate_point(DomainKind kind, std::span<const double> x);

// Plane: Euclidean norm. Sphere: great-circle angle arccos(<x, y>), evaluated
// as atan2(|x cross y|, <x, y>) which stays accurate for nearby points.
double distance(DomainKind kind, std::span<const double> x, std::span<const double> y);

// Sample locations. Plane points are 2-D, sphere points are unit 3-vectors.
class PointSet {
 public:
  PointSet() = default;
  PointSet(DomainKind kind, std::vector<double> coords);

  DomainKind kind() const { return kind_; }
  std::size_t size() const { return coords_.size() / dim(); }
  std::size_t dim() const { return domain_dim(kind_); }
  std::span<const double> point(std::size_t i) const {
    return {coords_.data() + i * dim(), dim()};
  }
  const std::vector<double>& coords() const { return coords_; }

  PointSet subset(std::span<const std::size_t> ids) const;
  // Appends `x`; rejects duplicates of existing points.
  PointSet with_point(std::span<const double> x) const;
  // Index of a point within 1e-12 of `x`, or size() when there is none.
  std::size_t find(std::span<const double> x) const;

 private:
  DomainKind kind_ = DomainKind::kPlane;
  std::vector<double> coords_;
};

// eps-ball adjacency plus multipole level structure.
struct NeighborGraph {
  double eps = 0.0;
  std::vector<std::vector<std::size_t>> adjacency;  // sorted, symmetric, no self loops
  std::vector<int> levels;                          // level id in 1..num_levels per node
  int num_levels = 1;
  // adjacency restricted to neighbors whose level differs by exactly one
  std::vector<std::vector<std::size_t>> inter_level;

  std::size_t size() const { return adjacency.size(); }
  std::size_t edge_count() const;
};

// Every pair with distance <= eps becomes a symmetric edge. All nodes start in
// level 1.
NeighborGraph build_epsilon_graph(const PointSet& points, double eps);

// Closed eps-ball of `x` among `points`, ascending indices.
std::vector<std::size_t> ball_query(const PointSet& points, std::span<const double> x, double eps);

// Balanced random split into L non-empty levels: the first (n mod L) levels
// (after a seeded shuffle of the level ids) receive ceil(n / L) nodes.
std::vector<int> partition_levels(const PointSet& points, int num_levels, std::uint64_t seed);

// Installs `levels` and derives inter_level from the adjacency.
NeighborGraph with_levels(NeighborGraph graph, std::vector<int> levels);

struct ExtendedGraph {
  PointSet points;
  NeighborGraph graph;
};

// Returns copies of (points, graph) with `x_new` appended as the last node and
// symmetric edges to every existing point within eps. `level` = 0 picks the
// least-populated level (lowest id on ties).
ExtendedGraph attach_node(const NeighborGraph& graph, const PointSet& points,
                          std::span<const double> x_new, int level = 0);

// Default radius: starts at the 10th percentile of pairwise distances and is
// rescaled by bisection until the median node degree falls in [6, 12]
// (complete graph when fewer than 7 points).
double default_epsilon(const PointSet& points);

PointSet read_points_csv(const std::filesystem::path& path);
void write_points_csv(const std::filesystem::path& path, const PointSet& points);

}  // namespace stonet
