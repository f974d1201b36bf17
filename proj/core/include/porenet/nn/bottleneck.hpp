#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "porenet/nn/layers.hpp"

namespace porenet::nn {

enum class Shortcut { kIdentity, kProjection };

struct BottleneckWidths {
  int reduce = 0;   // 1x1
  int spatial = 0;  // 3x3
  int expand = 0;   // 1x1, block output channels
};

/// Residual bottleneck: ReLU(convbn_c(convbn_b(convbn_a(x))) + shortcut(x)), where a and b carry a
/// ReLU and the projection shortcut is a 1x1 conv with batch norm.
template <typename T>
class BottleneckBlock {
 public:
  BottleneckBlock(std::string name, int in_channels, BottleneckWidths widths, Shortcut shortcut);

  const std::string& name() const noexcept { return name_; }
  int in_channels() const noexcept { return in_channels_; }
  int out_channels() const noexcept { return widths_.expand; }
  Shortcut shortcut() const noexcept { return projection_ ? Shortcut::kProjection : Shortcut::kIdentity; }

  ConvBn<T>& reduce() noexcept { return a_; }
  ConvBn<T>& spatial() noexcept { return b_; }
  ConvBn<T>& expand() noexcept { return c_; }
  ConvBn<T>* projection() noexcept { return projection_ ? &*projection_ : nullptr; }

  void init_he(std::mt19937_64& rng);
  /// trace, when given, receives (unit name, output shape) for every conv unit and the block output.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, bool keep_cache = true,
                    std::vector<std::pair<std::string, Shape>>* trace = nullptr);
  Tensor<T> backward(const Tensor<T>& dy);
  void clear_cache();
  void collect(std::vector<Param<T>>& out);

 private:
  std::string name_;
  int in_channels_;
  BottleneckWidths widths_;
  ConvBn<T> a_, b_, c_;
  std::optional<ConvBn<T>> projection_;
  std::optional<Tensor<T>> out_cache_;
};

}  // namespace porenet::nn
