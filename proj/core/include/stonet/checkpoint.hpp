#pragma once

// Parameter checkpoint container.
//
//   offset  size  field
//   0       8     magic "STONETCK"
//   8       1     version (currently 1)
//   9       4     record count N (uint32, little endian)
//   then N records:
//           4     name length B (uint32)
//           B     name bytes (UTF-8, no terminator)
//           4     rank R (uint32)
//           8*R   dims (uint64 each)
//           8*P   values, P = product(dims), IEEE-754 float-64 little endian
//
// Records appear in registration order. A rank-0 record holds one value.

#include <filesystem>
#include <string>

#include "stonet/nn.hpp"

namespace stonet {

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'O', 'N', 'E', 'T', 'C', 'K'};
inline constexpr unsigned char kCheckpointVersion = 1;

std::string serialize_tensors(const ParameterList& params);
ParameterList deserialize_tensors(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params);
ParameterList load_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into the same-named tensors of `target`.
// Missing names or shape mismatches are DataErrors.
void assign_parameters(const ParameterList& target, const ParameterList& source);

// Detached snapshot of every tensor's current values.
ParameterList snapshot(const ParameterList& params);

}  // namespace stonet
