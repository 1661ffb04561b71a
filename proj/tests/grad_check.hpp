#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ppmu/tensor.hpp"

namespace testutil {

// Central finite-difference oracle for reverse-mode gradients. `build` has to
// assemble a scalar loss from the leaves' current values on every call; the
// analytic gradient from one taped backward pass is compared against
// (f(x+h) - f(x-h)) / 2h element by element.
inline double max_grad_rel_err(std::vector<ppmu::Tensor>& leaves,
                               const std::function<ppmu::Tensor()>& build,
                               double h = 1e-5) {
  ppmu::Tape tape;
  for (auto& leaf : leaves) tape.watch(leaf);
  ppmu::Tensor loss = build();
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());
  tape.reset();

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    std::vector<double>& v = leaves[li].v();
    for (size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = build().value();
      v[i] = keep - h;
      const double down = build().value();
      v[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic[li][i];
      const double rel =
          std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Uniform values bounded away from zero, so kinks in relu/elu and the log
// domain edge stay clear of the finite-difference stencil.
inline std::vector<double> random_values(ppmu::RngStream& rng, int n,
                                         double lo = 0.1, double hi = 2.0,
                                         bool signed_draw = true) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) {
    double x = lo + (hi - lo) * rng.uniform();
    if (signed_draw && rng.uniform() < 0.5) x = -x;
    v[i] = x;
  }
  return v;
}

}  // namespace testutil
