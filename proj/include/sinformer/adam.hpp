#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sinformer/tensor.hpp"

namespace sinformer::nn {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::span<const Tensor<T>> params, AdamHyper h = {}) : hyper(h) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.emplace_back(p.size(), T{0});
      v.emplace_back(p.size(), T{0});
    }
  }
};

/// One bias-corrected Adam update over `params`, reading each tensor's grad.
/// Moments are accumulated in double so float training and double
/// verification share the same update rule.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  if (params.size() != state.m.size())
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) + " tensors but " +
                        std::to_string(params.size()) + " were passed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != state.m[i].size())
      throw ContractError("adam_step: parameter " + std::to_string(i) + " has shape " +
                          shape_str(params[i].shape()) + " but its moments have " +
                          std::to_string(state.m[i].size()) + " entries");
    if (!params[i].requires_grad())
      throw ContractError("adam_step: parameter " + std::to_string(i) + " does not carry a gradient");
  }
  ++state.step;
  const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    const auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      w[j] = static_cast<T>(w[j] - lr * mhat / (std::sqrt(vhat) + state.hyper.eps));
    }
  }
}

}  // namespace sinformer::nn
