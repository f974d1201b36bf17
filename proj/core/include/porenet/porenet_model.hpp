#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "porenet/image.hpp"
#include "porenet/nn/bottleneck.hpp"
#include "porenet/nn/layers.hpp"

namespace porenet {

inline constexpr int kEmbeddingDim = kPatchPixels;  // 41 * 41 = 1681
inline constexpr long long kExpectedParameterCount = 142881;

struct ParameterAudit {
  long long conv_weights = 0;
  long long conv_biases = 0;
  long long bn_affine = 0;   // gamma + beta
  long long bn_running = 0;  // running mean + variance
  long long total = 0;
  int main_path_convs = 0;
  int shortcuts = 0;
  int projection_shortcuts = 0;
  std::vector<std::pair<std::string, long long>> per_layer;

  std::string report() const;
};

/// (layer name, output shape) recorded during a forward pass.
using ShapeTrace = std::vector<std::pair<std::string, nn::Shape>>;

/// conv1 (3x3, 16) -> conv2_x (2 bottlenecks to 64) -> conv3_x (2 bottlenecks to 128)
/// -> conv4 (3x3, 1, bias, no BN/activation) -> flatten -> l2 normalisation.
/// Stride 1 and same padding throughout, so every feature map stays 41x41.
template <typename T>
class PoreNet {
 public:
  explicit PoreNet(std::uint64_t seed = 42, double bn_momentum = 0.99, double bn_epsilon = 1e-3);

  /// input [B,41,41,1] -> unit-norm embeddings [B,1681].
  nn::Tensor<T> forward(const nn::Tensor<T>& input, nn::Mode mode, ShapeTrace* trace = nullptr,
                        bool keep_cache = true);
  /// Takes d loss / d embeddings, accumulates parameter gradients, returns d loss / d input.
  nn::Tensor<T> backward(const nn::Tensor<T>& d_embeddings);
  void clear_cache();

  /// Every stored entry in a fixed order: trainable parameters and running statistics.
  std::vector<nn::Param<T>> parameters();
  std::vector<nn::Param<T>> trainable_parameters();
  void zero_grad();

  ParameterAudit audit() const;
  /// True once every batch-norm layer has running statistics.
  bool has_running_stats() const;
  void mark_running_stats(bool present);
  void set_bn_momentum(double momentum);

  nn::ConvBn<T>& conv1() noexcept { return conv1_; }
  std::vector<nn::BottleneckBlock<T>>& blocks() noexcept { return blocks_; }
  nn::Conv2d<T>& conv4() noexcept { return conv4_; }

 private:
  std::vector<nn::BatchNorm<T>*> batch_norms();
  std::vector<const nn::BatchNorm<T>*> batch_norms() const;

  nn::ConvBn<T> conv1_;
  std::vector<nn::BottleneckBlock<T>> blocks_;
  nn::Conv2d<T> conv4_;
  nn::Tensor<T> embeddings_;
  std::vector<double> norms_;
  bool cached_ = false;
};

using PoreNetModel = PoreNet<float>;

PoreNetModel build_porenet(std::uint64_t seed = 42);

/// Converts patches to a [B,41,41,1] tensor.
template <typename T>
nn::Tensor<T> patches_to_tensor(std::span<const PorePatch> patches);

/// Inference-mode embeddings, processed in chunks of batch_size.
/// Throws kState if the batch-norm running statistics are missing.
std::vector<std::vector<float>> embed(PoreNetModel& model, std::span<const PorePatch> patches, int batch_size = 64);

// Weights file: magic "PNET", version u32, entry count u32, then per entry: name length u32,
// name bytes, rank u32, extents u32 each, payload as little-endian f32.
inline constexpr std::uint32_t kWeightsFormatVersion = 1;
std::vector<unsigned char> encode_weights(PoreNetModel& model);
/// Validates names and shapes against a freshly built PoreNet.
PoreNetModel decode_weights(std::span<const unsigned char> bytes, const std::string& what = "weights");
void save_weights(PoreNetModel& model, const std::filesystem::path& path);
PoreNetModel load_weights(const std::filesystem::path& path);

/// Copies parameters (including running statistics) between precisions.
template <typename To, typename From>
void copy_parameters(PoreNet<To>& dst, PoreNet<From>& src);

}  // namespace porenet
