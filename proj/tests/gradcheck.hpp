#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "porenet/nn/tensor.hpp"
#include "support.hpp"

namespace testsupport {

/// sum_i w_i * y_i; its gradient with respect to y is w.
template <typename T>
double weighted_sum(const porenet::nn::Tensor<T>& w, const porenet::nn::Tensor<T>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(w[i]) * static_cast<double>(y[i]);
  return s;
}

struct GradCheck {
  double max_relative = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic[i] with a central difference of loss() in values[i], over all entries or the
/// given subset. Entries where both values are below zero_tol in magnitude count as agreeing: their
/// true gradient is zero (e.g. a conv bias feeding batch norm) and the difference is rounding noise.
template <typename T, typename Loss>
GradCheck check_gradient(std::span<T> values, std::span<const T> analytic, Loss&& loss, double h = 1e-5,
                         double zero_tol = 1e-8, const std::vector<std::size_t>* subset = nullptr) {
  GradCheck out;
  auto one = [&](std::size_t i) {
    const T saved = values[i];
    values[i] = static_cast<T>(saved + h);
    const double up = loss();
    values[i] = static_cast<T>(saved - h);
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = static_cast<double>(analytic[i]);
    if (std::max(std::abs(a), std::abs(numeric)) >= zero_tol) {
      out.max_relative = std::max(out.max_relative, relative_error(a, numeric, zero_tol));
    }
    ++out.checked;
  };
  if (subset != nullptr) {
    for (std::size_t i : *subset) one(i);
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) one(i);
  }
  return out;
}

}  // namespace testsupport
