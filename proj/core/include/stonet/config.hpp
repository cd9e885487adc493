#pragma once

// Run configuration: plain text, `key = value` lines grouped under
// `[section]` headers, `#` comments. Top-level keys precede any section.
//
//   seed = 7
//   [dataset]
//   pde = heat
//   ...
//
// Unknown sections or keys are ConfigErrors, as are malformed or
// out-of-range values.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stonet/data.hpp"
#include "stonet/model.hpp"
#include "stonet/train.hpp"

namespace stonet {

// Heat on the unit square driven by the orbiting source.
inline PdeSpec desk_pde() {
  PdeSpec p;
  p.source.amplitude = 20.0;
  return p;
}

struct DatasetConfig {
  std::string path;  // existing dataset directory; empty generates one
  DomainKind domain = DomainKind::kPlane;
  PdeSpec pde = desk_pde();
  InitialCondition init;
  std::size_t steps = 3000;  // simulator steps after spin-up; steps / stride frames are stored
  std::size_t stride = 5;    // simulator steps per stored frame
  std::size_t spinup = 0;    // simulator steps discarded before the first frame
  std::size_t nodes = 64;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  double eps = 0.0;  // 0 picks the default radius
  ModelConfig model;
  LossConfig loss;
  TrainConfig optimizer;
  double inductive_ratio = 0.0;
  double missing_ratio = 0.0;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Every key, in a fixed order; parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& config);

// Throws ConfigError on out-of-range values or inconsistent settings.
void validate_config(const RunConfig& config);

// Section-qualified names of every accepted key ("seed", "model.d", ...).
std::vector<std::string> config_keys();

}  // namespace stonet
