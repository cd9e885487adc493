#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stonet/geometry.hpp"

namespace stonet {

// Values u(X, t) over n_t timestamps x n_s nodes x c channels, with a
// per-timestamp presence flag.
struct ObservationSeries {
  PointSet points;
  std::vector<double> times;
  std::size_t channels = 1;
  std::vector<double> values;  // [n_t][n_s][c], row-major
  std::vector<std::uint8_t> mask;

  std::size_t n_times() const { return times.size(); }
  std::size_t n_nodes() const { return points.size(); }
  std::size_t present_count() const;

  double& at(std::size_t t, std::size_t s, std::size_t c = 0) {
    return values[(t * n_nodes() + s) * channels + c];
  }
  double at(std::size_t t, std::size_t s, std::size_t c = 0) const {
    return values[(t * n_nodes() + s) * channels + c];
  }

  // Throws DataError unless times strictly increase, every buffer has the
  // right length and present frames are finite.
  void validate() const;

  ObservationSeries slice_times(std::size_t begin, std::size_t end) const;
  ObservationSeries select_nodes(std::span<const std::size_t> ids) const;
};

ObservationSeries make_series(PointSet points, std::vector<double> times, std::size_t channels,
                              std::vector<double> values);

// ---- finite-difference simulators -------------------------------------------

enum class PdeKind { kHeat, kWave };
enum class Boundary { kPeriodic, kReflective };

PdeKind parse_pde_kind(const std::string& name);
Boundary parse_boundary(const std::string& name);
std::string pde_kind_name(PdeKind kind);
std::string boundary_name(Boundary b);

// Source/sink pair of Gaussians on opposite ends of a circular orbit around
// the domain centre; zero amplitude disables it.
struct OrbitingSource {
  double amplitude = 0.0;
  double orbit_radius = 0.25;
  double width = 0.08;
  double period = 1.0;  // simulation time per revolution
};

struct PdeSpec {
  PdeKind kind = PdeKind::kHeat;
  std::size_t nx = 32;
  std::size_t ny = 32;
  double length = 1.0;  // square domain side
  double diffusivity = 0.1;
  double wave_speed = 1.0;
  Boundary boundary = Boundary::kPeriodic;
  double dt_sim = 1e-3;
  OrbitingSource source;

  double hx() const;
  double hy() const;
  // heat: diffusivity * dt / h^2 (limit 0.25); wave: (speed * dt / h)^2
  // (limit 0.5); h is the finer axis spacing.
  double stability_number() const;
  double stability_limit() const;
};

struct Movie {
  std::size_t nx = 0;
  std::size_t ny = 0;
  double hx = 0.0;
  double hy = 0.0;
  Boundary boundary = Boundary::kPeriodic;
  std::vector<double> times;
  std::vector<std::vector<double>> frames;  // each nx*ny, index i*ny + j
};

// Evaluates the orbiting source on the grid at time t.
std::vector<double> source_field(const PdeSpec& spec, double t);

// Advances `initial` (nx*ny values) by `total_steps` explicit steps (forward
// Euler for heat, leapfrog from rest for wave) and stores a frame after every
// `stride` steps. Rejects unstable step sizes.
Movie simulate(const PdeSpec& spec, const std::vector<double>& initial, std::size_t total_steps,
               std::size_t stride = 1);

struct InitialCondition {
  enum class Kind { kConstant, kBlobs } kind = Kind::kBlobs;
  double value = 0.0;
  int blobs = 4;
  double amplitude = 1.0;
  double width = 0.1;
};

std::vector<double> initial_field(const PdeSpec& spec, const InitialCondition& init,
                                  std::uint64_t seed);

// Grid-frame coordinates of a node: plane points are used as-is, sphere
// points map (longitude, latitude) onto the square.
std::pair<double, double> grid_position(const PdeSpec& spec, DomainKind kind,
                                        std::span<const double> point);

// Bilinear interpolation of every stored frame at every point.
ObservationSeries sample_nodes(const Movie& movie, const PdeSpec& spec, const PointSet& points);

// Random node locations inside the simulated domain (sphere points restricted
// to |latitude| <= 60 degrees).
PointSet random_points(const PdeSpec& spec, DomainKind kind, std::size_t count,
                       std::uint64_t seed);

// ---- inductive split / irregular sampling -------------------------------------

struct SplitPlan {
  std::vector<std::size_t> train_node_ids;
  std::vector<std::size_t> inductive_node_ids;
  double inductive_ratio = 0.0;
};

// Inductive count = max(1, round(ratio * train count)). With train_count = 0
// the largest train set that leaves room for its inductive partner is used.
SplitPlan make_split(std::size_t n_nodes, double ratio, std::uint64_t seed,
                     std::size_t train_count = 0);

// n flags with round(ratio * n) seeded-random zeros (at most n - 1).
std::vector<std::uint8_t> presence_mask(std::size_t n, double missing_ratio, std::uint64_t seed);

// Clears the mask on round(ratio * n_t) seeded-random frames (at least one
// frame always survives).
ObservationSeries drop_timestamps(const ObservationSeries& series, double missing_ratio,
                                  std::uint64_t seed);

// ---- dataset directory ------------------------------------------------------

using Metadata = std::map<std::string, std::string>;

struct Dataset {
  ObservationSeries series;
  Metadata meta;
};

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

std::string serialize_values(const ObservationSeries& series);

}  // namespace stonet
