#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "porenet/nn/layers.hpp"

namespace porenet::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update of a single parameter tensor; step is 1-based.
/// Throws kNumeric (naming the parameter) on a non-finite gradient, before touching anything.
template <typename T>
void adam_step(std::span<T> values, std::span<const T> grads, AdamMoments& state, std::int64_t step,
               const AdamConfig& config, const std::string& name);

/// Adam over a fixed list of trainable parameters.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::int64_t steps() const noexcept { return step_; }

  /// Updates every trainable entry of params from its gradient buffer.
  void step(const std::vector<Param<T>>& params);

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<AdamMoments> moments_;
};

}  // namespace porenet::nn
