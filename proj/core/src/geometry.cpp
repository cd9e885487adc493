#include "stonet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

#include "stonet/errors.hpp"
#include "stonet/random.hpp"

namespace stonet {

namespace {

constexpr double kDuplicateTol = 1e-12;
constexpr double kUnitTol = 1e-9;

double median_degree(const PointSet& points, double eps) {
  const std::size_t n = points.size();
  std::vector<std::size_t> degree(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (distance(points.kind(), points.point(i), points.point(j)) <= eps) {
        ++degree[i];
        ++degree[j];
      }
    }
  }
  std::sort(degree.begin(), degree.end());
  return n % 2 ? static_cast<double>(degree[n / 2])
               : 0.5 * static_cast<double>(degree[n / 2 - 1] + degree[n / 2]);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

DomainKind parse_domain(const std::string& name) {
  if (name == "plane") return DomainKind::kPlane;
  if (name == "sphere") return DomainKind::kSphere;
  throw ParameterError("unknown domain '" + name + "'");
}

std::string domain_name(DomainKind kind) {
  return kind == DomainKind::kPlane ? "plane" : "sphere";
}

std::size_t domain_dim(DomainKind kind) { return kind == DomainKind::kPlane ? 2 : 3; }

void validate_point(DomainKind kind, std::span<const double> x) {
  if (x.size() != domain_dim(kind)) {
    throw DomainError(domain_name(kind) + " point needs " + std::to_string(domain_dim(kind)) +
                      " coordinates, got " + std::to_string(x.size()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw DomainError("non-finite coordinate");
  }
  if (kind == DomainKind::kSphere) {
    const double norm = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    if (std::abs(norm - 1.0) > kUnitTol) {
      throw DomainError("sphere point has norm " + std::to_string(norm));
    }
  }
}

double distance(DomainKind kind, std::span<const double> x, std::span<const double> y) {
  validate_point(kind, x);
  validate_point(kind, y);
  if (kind == DomainKind::kPlane) return std::hypot(x[0] - y[0], x[1] - y[1]);
  const double cx = x[1] * y[2] - x[2] * y[1];
  const double cy = x[2] * y[0] - x[0] * y[2];
  const double cz = x[0] * y[1] - x[1] * y[0];
  const double dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
  return std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot);
}

// ---- PointSet --------------------------------------------------------------

PointSet::PointSet(DomainKind kind, std::vector<double> coords)
    : kind_(kind), coords_(std::move(coords)) {
  const std::size_t w = dim();
  if (coords_.empty() || coords_.size() % w != 0) {
    throw DomainError("point set needs a positive multiple of " + std::to_string(w) +
                      " coordinates");
  }
  const std::size_t n = size();
  for (std::size_t i = 0; i < n; ++i) validate_point(kind_, point(i));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (distance(kind_, point(i), point(j)) <= kDuplicateTol) {
        throw DomainError("duplicate points " + std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }
}

PointSet PointSet::subset(std::span<const std::size_t> ids) const {
  std::vector<double> c;
  c.reserve(ids.size() * dim());
  for (auto id : ids) {
    if (id >= size()) throw DimensionError("subset index out of range");
    auto p = point(id);
    c.insert(c.end(), p.begin(), p.end());
  }
  return PointSet(kind_, std::move(c));
}

PointSet PointSet::with_point(std::span<const double> x) const {
  validate_point(kind_, x);
  if (find(x) != size()) throw DomainError("point duplicates an existing node");
  std::vector<double> c = coords_;
  c.insert(c.end(), x.begin(), x.end());
  return PointSet(kind_, std::move(c));
}

std::size_t PointSet::find(std::span<const double> x) const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (distance(kind_, point(i), x) <= kDuplicateTol) return i;
  }
  return size();
}

// ---- graphs ----------------------------------------------------------------

std::size_t NeighborGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& a : adjacency) n += a.size();
  return n / 2;
}

NeighborGraph build_epsilon_graph(const PointSet& points, double eps) {
  if (!(eps > 0.0)) throw ParameterError("eps must be positive, got " + std::to_string(eps));
  const std::size_t n = points.size();
  NeighborGraph g;
  g.eps = eps;
  g.adjacency.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (distance(points.kind(), points.point(i), points.point(j)) <= eps) {
        g.adjacency[i].push_back(j);
        g.adjacency[j].push_back(i);
      }
    }
  }
  // i ascending pushes keep each list sorted already
  return with_levels(std::move(g), std::vector<int>(n, 1));
}

std::vector<std::size_t> ball_query(const PointSet& points, std::span<const double> x, double eps) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (distance(points.kind(), points.point(i), x) <= eps) out.push_back(i);
  }
  return out;
}

std::vector<int> partition_levels(const PointSet& points, int num_levels, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (num_levels < 1 || static_cast<std::size_t>(num_levels) > n) {
    throw ParameterError("level count " + std::to_string(num_levels) + " outside [1, " +
                         std::to_string(n) + "]");
  }
  const auto levels = static_cast<std::size_t>(num_levels);
  Rng rng(seed);
  // which levels get the extra node
  std::vector<int> level_order(levels);
  std::iota(level_order.begin(), level_order.end(), 1);
  rng.shuffle(level_order);
  std::vector<int> slots;
  slots.reserve(n);
  for (std::size_t k = 0; k < levels; ++k) {
    const std::size_t count = n / levels + (k < n % levels ? 1 : 0);
    slots.insert(slots.end(), count, level_order[k]);
  }
  rng.shuffle(slots);
  return slots;
}

NeighborGraph with_levels(NeighborGraph graph, std::vector<int> levels) {
  if (levels.size() != graph.size()) {
    throw DimensionError("level assignment covers " + std::to_string(levels.size()) +
                         " nodes, graph has " + std::to_string(graph.size()));
  }
  int top = 1;
  for (int l : levels) {
    if (l < 1) throw ParameterError("level ids start at 1");
    top = std::max(top, l);
  }
  graph.levels = std::move(levels);
  graph.num_levels = top;
  graph.inter_level.assign(graph.size(), {});
  for (std::size_t i = 0; i < graph.size(); ++i) {
    for (auto j : graph.adjacency[i]) {
      if (std::abs(graph.levels[i] - graph.levels[j]) == 1) graph.inter_level[i].push_back(j);
    }
  }
  return graph;
}

ExtendedGraph attach_node(const NeighborGraph& graph, const PointSet& points,
                          std::span<const double> x_new, int level) {
  if (graph.size() != points.size()) {
    throw ContractError("attach_node: graph and point set sizes differ");
  }
  ExtendedGraph ext{points.with_point(x_new), graph};
  const std::size_t id = points.size();
  std::vector<std::size_t> mine;
  for (std::size_t i = 0; i < id; ++i) {
    if (distance(points.kind(), points.point(i), x_new) <= graph.eps) {
      mine.push_back(i);
      ext.graph.adjacency[i].push_back(id);  // id is the largest index: stays sorted
    }
  }
  ext.graph.adjacency.push_back(std::move(mine));

  if (level == 0) {
    std::vector<std::size_t> population(static_cast<std::size_t>(graph.num_levels) + 1, 0);
    for (int l : graph.levels) ++population[static_cast<std::size_t>(l)];
    level = 1;
    for (int l = 2; l <= graph.num_levels; ++l) {
      if (population[static_cast<std::size_t>(l)] < population[static_cast<std::size_t>(level)]) {
        level = l;
      }
    }
  }
  if (level > graph.num_levels) throw ParameterError("attach_node: level beyond hierarchy");
  std::vector<int> levels = graph.levels;
  levels.push_back(level);
  ext.graph = with_levels(std::move(ext.graph), std::move(levels));
  ext.graph.num_levels = std::max(ext.graph.num_levels, graph.num_levels);
  return ext;
}

double default_epsilon(const PointSet& points) {
  const std::size_t n = points.size();
  if (n < 2) return 1.0;
  std::vector<double> d;
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) d.push_back(distance(points.kind(), points.point(i), points.point(j)));
  }
  std::sort(d.begin(), d.end());
  if (n < 7) return d.back();

  const double base = d[d.size() / 10];
  double eps = base;
  double deg = median_degree(points, eps);
  if (deg >= 6.0 && deg <= 12.0) return eps;

  // Degree is monotone in eps: bracket, then bisect on the scale factor.
  double lo = 0.0, hi = d.back() / base;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    deg = median_degree(points, base * mid);
    if (deg < 6.0) {
      lo = mid;
    } else if (deg > 12.0) {
      hi = mid;
    } else {
      return base * mid;
    }
  }
  return base * hi;
}

PointSet read_points_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read point file " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty point file " + path.string());
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "domain" || header[1] != "x0" || header[2] != "x1" ||
      (header.size() == 4 && header[3] != "x2") || header.size() > 4) {
    throw DataError("point file header must be domain,x0,x1[,x2]");
  }
  std::vector<double> coords;
  std::optional<DomainKind> kind;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_csv(line);
    DomainKind k;
    try {
      k = parse_domain(fields.at(0));
    } catch (const std::exception&) {
      throw DataError("row " + std::to_string(row) + ": bad domain");
    }
    if (kind && *kind != k) throw DataError("row " + std::to_string(row) + ": mixed domains");
    kind = k;
    const std::size_t w = domain_dim(k);
    if (fields.size() < 1 + w) throw DataError("row " + std::to_string(row) + ": too few coordinates");
    std::vector<double> p(w);
    for (std::size_t c = 0; c < w; ++c) {
      try {
        p[c] = std::stod(fields[1 + c]);
      } catch (const std::exception&) {
        throw DataError("row " + std::to_string(row) + ": bad number '" + fields[1 + c] + "'");
      }
    }
    if (k == DomainKind::kSphere) {
      const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      if (std::abs(norm - 1.0) > 1e-6) {
        throw DataError("row " + std::to_string(row) + ": sphere vector norm " +
                        std::to_string(norm) + " is not within 1e-6 of 1");
      }
      for (auto& v : p) v /= norm;
    }
    coords.insert(coords.end(), p.begin(), p.end());
  }
  if (!kind) throw DataError("point file " + path.string() + " has no rows");
  try {
    return PointSet(*kind, std::move(coords));
  } catch (const DomainError& e) {
    throw DataError(std::string("invalid point set: ") + e.what());
  }
}

void write_points_csv(const std::filesystem::path& path, const PointSet& points) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write point file " + path.string());
  os << (points.kind() == DomainKind::kPlane ? "domain,x0,x1\n" : "domain,x0,x1,x2\n");
  os << std::setprecision(17);
  for (std::size_t i = 0; i < points.size(); ++i) {
    os << domain_name(points.kind());
    for (double v : points.point(i)) os << ',' << v;
    os << '\n';
  }
}

}  // namespace stonet
