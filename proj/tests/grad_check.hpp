#pragma once

// Central-difference gradient checking for the 64-bit tensor stack. The loss
// closure must be a pure function of the parameters (fixed rng seeds, no
// state), so both finite-difference evaluations see the same masks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "salm/tensor.hpp"

namespace salm::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

template <typename LossFn>
GradCheckResult check_gradients(std::vector<Tensor<double>> params, LossFn&& loss_fn,
                                int samples_per_param = 6, double step = 1e-5,
                                std::uint64_t seed = 0) {
  for (auto& p : params) {
    auto g = p.grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
  Tensor<double> loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult result;
  RngStream rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].data();
    const int samples = std::min<int>(samples_per_param, static_cast<int>(data.size()));
    for (int s = 0; s < samples; ++s) {
      const std::size_t i =
          static_cast<std::size_t>(rng.next_double() * static_cast<double>(data.size()));
      const double orig = data[i];
      double lo, hi;
      {
        NoGradGuard guard;
        data[i] = orig + step;
        hi = loss_fn().item();
        data[i] = orig - step;
        lo = loss_fn().item();
        data[i] = orig;
      }
      const double fd = (hi - lo) / (2.0 * step);
      const double ad = analytic[pi][i];
      const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-2});
      result.max_rel_err = std::max(result.max_rel_err, rel);
      ++result.checked;
      CHECK_MESSAGE(rel < 1e-4, "param ", pi, " index ", i, ": analytic ", ad,
                    " vs finite-difference ", fd);
    }
  }
  return result;
}

}  // namespace salm::testing
