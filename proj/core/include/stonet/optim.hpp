#pragma once

#include <cstdint>
#include <vector>

#include "stonet/nn.hpp"

namespace stonet {

struct AdamState {
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments
};

// One bias-corrected Adam update over `params` followed by zeroing their
// gradients. Every parameter must carry a gradient of matching shape; moment
// buffers are created on the first call.
void adam_step(const ParameterList& params, AdamState& state);

}  // namespace stonet
