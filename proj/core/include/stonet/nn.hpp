#pragma once

#include <string>
#include <vector>

#include "stonet/random.hpp"
#include "stonet/tensor.hpp"

namespace stonet {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered parameter registry; the order is the checkpoint order.
using ParameterList = std::vector<NamedTensor>;

// Trainable tensor drawn uniformly from [-bound, bound].
Tensor uniform_parameter(Shape shape, double bound, Rng& rng);

// y = x W + b with W [in, out]. Weights start uniform in +-1/sqrt(in),
// biases at zero.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Tensor forward(const Tensor& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

// Stack of Linear layers with `hidden` between them; the last layer is
// followed by `output` (identity for a plain linear read-out).
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation output, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear> layers_;
  Activation hidden_ = Activation::kRelu;
  Activation output_ = Activation::kIdentity;
};

// Sets every parameter's values to zero (used by tests and degenerate
// configurations).
void zero_parameters(const ParameterList& params);

}  // namespace stonet
