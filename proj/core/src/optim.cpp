#include "stonet/optim.hpp"

#include <cmath>

#include "stonet/errors.hpp"

namespace stonet {

void adam_step(const ParameterList& params, AdamState& state) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.tensor.shape()));
      state.v.push_back(Tensor::zeros(p.tensor.shape()));
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor param = params[k].tensor;
    if (state.m[k].shape() != param.shape()) {
      throw DimensionError("adam_step: moment shape mismatch for '" + params[k].name + "'");
    }
    auto w = param.mutable_data();
    auto g = param.mutable_grad();
    auto m = state.m[k].mutable_data();
    auto v = state.v[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
      g[i] = 0.0;
    }
  }
}

}  // namespace stonet
