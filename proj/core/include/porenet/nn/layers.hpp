#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "porenet/nn/tensor.hpp"

namespace porenet::nn {

enum class Mode { kTrain, kInfer };

/// A named parameter slot. Running statistics are listed too, with trainable == false.
template <typename T>
struct Param {
  std::string name;
  Tensor<T>* tensor = nullptr;
  bool trainable = true;
};

// ---- convolution (stride 1, zero "same" padding, odd square kernels) ----

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;
};

/// input [B,H,W,Cin], kernel [k,k,Cin,Cout], bias [Cout] -> [B,H,W,Cout].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias);

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& upstream, const Tensor<T>& input, const Tensor<T>& kernel);

template <typename T>
class Conv2d {
 public:
  Conv2d(std::string name, int kernel_size, int in_channels, int out_channels);

  const std::string& name() const noexcept { return name_; }
  int kernel_size() const noexcept { return weight_.dim(0); }
  int in_channels() const noexcept { return weight_.dim(2); }
  int out_channels() const noexcept { return weight_.dim(3); }
  Tensor<T>& weight() noexcept { return weight_; }
  Tensor<T>& bias() noexcept { return bias_; }
  const Tensor<T>& weight() const noexcept { return weight_; }
  const Tensor<T>& bias() const noexcept { return bias_; }

  /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
  void init_he(std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x, bool keep_cache = true);
  /// Accumulates parameter gradients; throws kState without a cached forward input.
  Tensor<T> backward(const Tensor<T>& dy);
  void clear_cache() { cache_.reset(); }

  void collect(std::vector<Param<T>>& out);

 private:
  std::string name_;
  Tensor<T> weight_;
  Tensor<T> bias_;
  std::optional<Tensor<T>> cache_;
};

// ---- batch normalisation over N*H*W per channel ----

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;
  bool has_stats = false;

  explicit BatchNormParams(int channels);
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;        // x-hat
  std::vector<double> inv_std;  // per channel
  Mode mode = Mode::kTrain;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

/// Train mode normalises by batch statistics and updates the running statistics
/// (running = momentum * running + (1 - momentum) * batch; the first batch seeds them).
/// Infer mode uses the running statistics and throws kState if none exist yet.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormParams<T>& params, Mode mode,
                            BatchNormCache<T>* cache = nullptr);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& upstream, const BatchNormParams<T>& params,
                                     const BatchNormCache<T>& cache);

template <typename T>
class BatchNorm {
 public:
  BatchNorm(std::string name, int channels) : name_(std::move(name)), params_(channels) {}

  BatchNormParams<T>& params() noexcept { return params_; }
  const BatchNormParams<T>& params() const noexcept { return params_; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, bool keep_cache = true);
  Tensor<T> backward(const Tensor<T>& dy);
  void clear_cache() { cache_.reset(); }
  void collect(std::vector<Param<T>>& out);

 private:
  std::string name_;
  BatchNormParams<T> params_;
  std::optional<BatchNormCache<T>> cache_;
};

// ---- elementwise ----

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);
/// Gradient through ReLU given its forward output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y);

/// Row-wise l2 normalisation of [B, D]; throws kNumeric for rows with norm < 1e-12.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, std::vector<double>* norms = nullptr);
template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& dy, const Tensor<T>& y, const std::vector<double>& norms);

/// conv -> batch norm -> optional ReLU.
template <typename T>
class ConvBn {
 public:
  ConvBn(std::string name, int kernel_size, int in_channels, int out_channels, bool relu);

  const std::string& name() const noexcept { return name_; }
  Conv2d<T>& conv() noexcept { return conv_; }
  BatchNorm<T>& bn() noexcept { return bn_; }
  const Conv2d<T>& conv() const noexcept { return conv_; }
  const BatchNorm<T>& bn() const noexcept { return bn_; }
  bool has_relu() const noexcept { return relu_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, bool keep_cache = true);
  Tensor<T> backward(const Tensor<T>& dy);
  void clear_cache();
  void collect(std::vector<Param<T>>& out);

 private:
  std::string name_;
  Conv2d<T> conv_;
  BatchNorm<T> bn_;
  bool relu_;
  std::optional<Tensor<T>> out_cache_;
};

}  // namespace porenet::nn
