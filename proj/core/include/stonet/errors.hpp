#pragma once

#include <stdexcept>
#include <string>

namespace stonet {

// Shapes or widths that do not line up.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a precondition of an operation (consumed tape, missing grad,
// unattached node, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Out-of-range scalar parameter (eps <= 0, L > n_s, ratio >= 1, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Point not valid for its domain (non-unit sphere vector, NaN coordinate).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or malformed dataset / checkpoint / CSV input.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values surfaced during a forward pass or a training step.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stonet
