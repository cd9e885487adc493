#include "stonet/nn.hpp"

#include <algorithm>
#include <cmath>

#include "stonet/errors.hpp"

namespace stonet {

Tensor uniform_parameter(Shape shape, double bound, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(data), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  if (in == 0 || out == 0) throw DimensionError("Linear: zero-width layer");
  weight_ = uniform_parameter({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (with_bias) bias_ = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add(y, bias_) : y;
}

void Linear::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
}

Mlp::Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation output, Rng& rng)
    : hidden_(hidden), output_(output) {
  if (widths.size() < 2) throw DimensionError("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.emplace_back(widths[i], widths[i + 1], rng);
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    h = activate(h, i + 1 < layers_.size() ? hidden_ : output_);
  }
  return h;
}

void Mlp::collect(ParameterList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(out, prefix + "." + std::to_string(i));
  }
}

void zero_parameters(const ParameterList& params) {
  for (const auto& p : params) {
    auto t = p.tensor;
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
}

}  // namespace stonet
