#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sinformer/rng.hpp"
#include "sinformer/tensor.hpp"

namespace sinformer::nn {

struct GradCheckOptions {
  double step = 1e-5;
  // Five-point stencil (error O(step^4)) instead of the three-point one.
  bool fourth_order = false;
  // Coordinates probed per tensor; 0 means all of them.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  // Test hook: multiplies the autodiff gradient of this (tensor, coordinate)
  // by `corrupt_factor` before comparison.
  long corrupt_tensor = -1;
  std::size_t corrupt_coord = 0;
  double corrupt_factor = 2.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_coord = 0;
  double worst_fd = 0.0;
  double worst_autodiff = 0.0;
  std::size_t coords_checked = 0;
};

inline double relative_error(double fd, double ad) {
  return std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-12});
}

/// `loss_fn` must build a fresh scalar loss on the given tape from `params`
/// (reading their current values) and be deterministic.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>(Tape<T>&)>& loss_fn, std::span<Tensor<T>> params,
                           const GradCheckOptions& opt = {}) {
  for (auto& p : params) {
    if (!p.requires_grad()) p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<T> tape;
    Tensor<T> loss = loss_fn(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<T>> autodiff;
  autodiff.reserve(params.size());
  for (auto& p : params) autodiff.emplace_back(p.grad().begin(), p.grad().end());
  if (opt.corrupt_tensor >= 0 && static_cast<std::size_t>(opt.corrupt_tensor) < autodiff.size()) {
    auto& g = autodiff[static_cast<std::size_t>(opt.corrupt_tensor)];
    if (opt.corrupt_coord < g.size()) g[opt.corrupt_coord] = static_cast<T>(g[opt.corrupt_coord] * opt.corrupt_factor);
  }

  auto eval = [&]() {
    Tape<T> tape(Tape<T>::Mode::inference);
    return static_cast<double>(loss_fn(tape).item());
  };

  Rng rng(opt.seed);
  GradCheckResult result;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    auto w = params[ti].data();
    std::vector<std::size_t> coords(w.size());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
    if (opt.max_coords_per_tensor && coords.size() > opt.max_coords_per_tensor) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(opt.max_coords_per_tensor);
    }
    if (opt.corrupt_tensor == static_cast<long>(ti) &&
        std::find(coords.begin(), coords.end(), opt.corrupt_coord) == coords.end() && opt.corrupt_coord < w.size())
      coords.push_back(opt.corrupt_coord);
    for (std::size_t j : coords) {
      const T saved = w[j];
      auto at = [&](double offset) {
        w[j] = static_cast<T>(saved + offset);
        return eval();
      };
      const double h = opt.step;
      const double fd = opt.fourth_order ? (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h)
                                         : (at(h) - at(-h)) / (2.0 * h);
      w[j] = saved;
      const double ad = autodiff[ti][j];
      const double err = relative_error(fd, ad);
      ++result.coords_checked;
      if (err > result.max_rel_error || result.coords_checked == 1) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error) {
          result.worst_tensor = ti;
          result.worst_coord = j;
          result.worst_fd = fd;
          result.worst_autodiff = ad;
        }
      }
    }
  }
  return result;
}

}  // namespace sinformer::nn
