#include "porenet/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "porenet/error.hpp"

namespace porenet::nn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const Mat<T>>;

struct ConvGeom {
  int batch, height, width, cin, cout, k, pad;
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel) {
  if (input.rank() != 4) {
    throw Error(ErrorKind::kInvalidArgument, "conv2d: input must be [B,H,W,C], got " + shape_string(input.shape()));
  }
  if (kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1) || kernel.dim(0) % 2 == 0) {
    throw Error(ErrorKind::kInvalidArgument,
                "conv2d: kernel must be [k,k,Cin,Cout] with odd k, got " + shape_string(kernel.shape()));
  }
  if (kernel.dim(2) != input.dim(3)) {
    throw Error(ErrorKind::kInvalidArgument, "conv2d: kernel expects " + std::to_string(kernel.dim(2)) +
                                                 " input channels, input " + shape_string(input.shape()) + " has " +
                                                 std::to_string(input.dim(3)));
  }
  return {input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(3), kernel.dim(0), kernel.dim(0) / 2};
}

// Rows: output pixels (y*W + x); columns: (ky*k + kx)*Cin + c.
template <typename T>
void im2col(const T* sample, const ConvGeom& g, Mat<T>& col) {
  const int kc = g.k * g.k * g.cin;
  col.resize(static_cast<Eigen::Index>(g.height) * g.width, kc);
  T* out = col.data();
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      T* row = out + (static_cast<std::size_t>(y) * g.width + x) * kc;
      for (int ky = 0; ky < g.k; ++ky) {
        const int sy = y + ky - g.pad;
        for (int kx = 0; kx < g.k; ++kx) {
          const int sx = x + kx - g.pad;
          T* dst = row + (ky * g.k + kx) * g.cin;
          if (sy < 0 || sy >= g.height || sx < 0 || sx >= g.width) {
            std::fill(dst, dst + g.cin, T{});
          } else {
            const T* src = sample + (static_cast<std::size_t>(sy) * g.width + sx) * g.cin;
            std::copy(src, src + g.cin, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Mat<T>& col, const ConvGeom& g, T* sample_grad) {
  const int kc = g.k * g.k * g.cin;
  const T* in = col.data();
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const T* row = in + (static_cast<std::size_t>(y) * g.width + x) * kc;
      for (int ky = 0; ky < g.k; ++ky) {
        const int sy = y + ky - g.pad;
        if (sy < 0 || sy >= g.height) continue;
        for (int kx = 0; kx < g.k; ++kx) {
          const int sx = x + kx - g.pad;
          if (sx < 0 || sx >= g.width) continue;
          const T* src = row + (ky * g.k + kx) * g.cin;
          T* dst = sample_grad + (static_cast<std::size_t>(sy) * g.width + sx) * g.cin;
          for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  const ConvGeom g = conv_geometry(input, kernel);
  expect_shape("conv2d bias", {g.cout}, bias.shape());
  Tensor<T> out({g.batch, g.height, g.width, g.cout});
  const Eigen::Index kc = static_cast<Eigen::Index>(g.k) * g.k * g.cin;
  CMapMat<T> w(kernel.data(), kc, g.cout);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), g.cout);
  const Eigen::Index pixels = static_cast<Eigen::Index>(g.height) * g.width;

  if (g.k == 1) {
    CMapMat<T> x(input.data(), pixels * g.batch, g.cin);
    MapMat<T> y(out.data(), pixels * g.batch, g.cout);
    y.noalias() = x * w;
    y.rowwise() += b;
    return out;
  }
  Mat<T> col;
  for (int n = 0; n < g.batch; ++n) {
    im2col(input.data() + static_cast<std::size_t>(n) * pixels * g.cin, g, col);
    MapMat<T> y(out.data() + static_cast<std::size_t>(n) * pixels * g.cout, pixels, g.cout);
    y.noalias() = col * w;
    y.rowwise() += b;
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& upstream, const Tensor<T>& input, const Tensor<T>& kernel) {
  const ConvGeom g = conv_geometry(input, kernel);
  expect_shape("conv2d upstream gradient", {g.batch, g.height, g.width, g.cout}, upstream.shape());
  Conv2dGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernel.shape()), Tensor<T>({g.cout})};
  const Eigen::Index kc = static_cast<Eigen::Index>(g.k) * g.k * g.cin;
  const Eigen::Index pixels = static_cast<Eigen::Index>(g.height) * g.width;
  CMapMat<T> w(kernel.data(), kc, g.cout);
  MapMat<T> dw(grads.kernel.data(), kc, g.cout);
  CMapMat<T> dy_all(upstream.data(), pixels * g.batch, g.cout);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(grads.bias.data(), g.cout);
  db = dy_all.colwise().sum();

  if (g.k == 1) {
    CMapMat<T> x(input.data(), pixels * g.batch, g.cin);
    MapMat<T> dx(grads.input.data(), pixels * g.batch, g.cin);
    dw.noalias() = x.transpose() * dy_all;
    dx.noalias() = dy_all * w.transpose();
    return grads;
  }
  Mat<T> col, dcol;
  for (int n = 0; n < g.batch; ++n) {
    im2col(input.data() + static_cast<std::size_t>(n) * pixels * g.cin, g, col);
    CMapMat<T> dy(upstream.data() + static_cast<std::size_t>(n) * pixels * g.cout, pixels, g.cout);
    dw.noalias() += col.transpose() * dy;
    dcol.noalias() = dy * w.transpose();
    col2im_add(dcol, g, grads.input.data() + static_cast<std::size_t>(n) * pixels * g.cin);
  }
  return grads;
}

template <typename T>
Conv2d<T>::Conv2d(std::string name, int kernel_size, int in_channels, int out_channels)
    : name_(std::move(name)),
      weight_({kernel_size, kernel_size, in_channels, out_channels}),
      bias_({out_channels}) {
  if (kernel_size % 2 == 0) throw Error(ErrorKind::kInvalidArgument, name_ + ": kernel size must be odd");
}

template <typename T>
void Conv2d<T>::init_he(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(kernel_size()) * kernel_size() * in_channels();
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (T& v : weight_.values()) v = static_cast<T>(normal(rng));
  bias_.fill(T{});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool keep_cache) {
  Tensor<T> y = conv2d_forward(x, weight_, bias_);
  if (keep_cache) {
    cache_ = x;
  } else {
    cache_.reset();
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  if (!cache_) throw Error(ErrorKind::kState, name_ + ": backward called without a cached forward pass");
  Conv2dGrads<T> g = conv2d_backward(dy, *cache_, weight_);
  auto wg = weight_.grad();
  auto bg = bias_.grad();
  for (std::size_t i = 0; i < wg.size(); ++i) wg[i] += g.kernel[i];
  for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += g.bias[i];
  return std::move(g.input);
}

template <typename T>
void Conv2d<T>::collect(std::vector<Param<T>>& out) {
  out.push_back({name_ + ".weight", &weight_, true});
  out.push_back({name_ + ".bias", &bias_, true});
}

template <typename T>
BatchNormParams<T>::BatchNormParams(int channels)
    : gamma({channels}, T{1}), beta({channels}, T{0}), running_mean({channels}, T{0}), running_var({channels}, T{1}) {}

namespace {

// Per-channel column sums of a rows x channels block, accumulated in T over short runs and in double across them.
template <typename T, typename F>
std::vector<double> channel_sums(std::size_t rows, int channels, F&& value) {
  constexpr std::size_t kRun = 64;
  std::vector<double> total(channels, 0.0);
  std::vector<T> partial(channels);
  for (std::size_t r0 = 0; r0 < rows; r0 += kRun) {
    std::fill(partial.begin(), partial.end(), T{});
    const std::size_t r1 = std::min(rows, r0 + kRun);
    for (std::size_t r = r0; r < r1; ++r) {
      T* __restrict acc = partial.data();
      for (int c = 0; c < channels; ++c) acc[c] += value(r, c);
    }
    for (int c = 0; c < channels; ++c) total[c] += partial[c];
  }
  return total;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormParams<T>& p, Mode mode, BatchNormCache<T>* cache) {
  const int channels = p.gamma.dim(0);
  if (input.rank() < 2 || input.shape().back() != channels) {
    throw Error(ErrorKind::kInvalidArgument, "batchnorm: input " + shape_string(input.shape()) + " does not end in " +
                                                 std::to_string(channels) + " channels");
  }
  const std::size_t rows = input.size() / static_cast<std::size_t>(channels);
  const T* x = input.data();
  std::vector<double> mean(channels), var(channels);

  if (mode == Mode::kTrain) {
    if (rows < 2) throw Error(ErrorKind::kInvalidArgument, "batchnorm: training needs at least 2 samples per channel");
    mean = channel_sums<T>(rows, channels, [&](std::size_t r, int c) { return x[r * channels + c]; });
    for (double& m : mean) m /= static_cast<double>(rows);
    std::vector<T> centre(mean.begin(), mean.end());
    var = channel_sums<T>(rows, channels, [&](std::size_t r, int c) {
      const T d = x[r * channels + c] - centre[c];
      return d * d;
    });
    for (double& v : var) v /= static_cast<double>(rows);
    const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
    for (int c = 0; c < channels; ++c) {
      if (p.has_stats) {
        p.running_mean[c] = static_cast<T>(p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean[c]);
        p.running_var[c] = static_cast<T>(p.momentum * p.running_var[c] + (1.0 - p.momentum) * var[c] * unbias);
      } else {
        p.running_mean[c] = static_cast<T>(mean[c]);
        p.running_var[c] = static_cast<T>(var[c] * unbias);
      }
    }
    p.has_stats = true;
  } else {
    if (!p.has_stats) throw Error(ErrorKind::kState, "batchnorm: inference requested before running statistics exist");
    for (int c = 0; c < channels; ++c) {
      mean[c] = p.running_mean[c];
      var[c] = std::max(0.0, static_cast<double>(p.running_var[c]));
    }
  }
  std::vector<double> inv_std(channels);
  std::vector<T> centre(channels), scale(channels), gamma(channels), beta(channels);
  for (int c = 0; c < channels; ++c) {
    inv_std[c] = 1.0 / std::sqrt(var[c] + p.epsilon);
    centre[c] = static_cast<T>(mean[c]);
    scale[c] = static_cast<T>(inv_std[c]);
    gamma[c] = p.gamma[c];
    beta[c] = p.beta[c];
  }

  Tensor<T> out(input.shape());
  T* y = out.data();
  Tensor<T> normalized;
  if (cache) normalized = Tensor<T>(input.shape());
  T* __restrict xh = cache ? normalized.data() : nullptr;
  const T* __restrict cen = centre.data();
  const T* __restrict sc = scale.data();
  const T* __restrict ga = gamma.data();
  const T* __restrict be = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* __restrict xr = x + r * channels;
    T* __restrict yr = y + r * channels;
    if (xh) {
      T* __restrict hr = xh + r * channels;
      for (int c = 0; c < channels; ++c) {
        const T h = (xr[c] - cen[c]) * sc[c];
        hr[c] = h;
        yr[c] = ga[c] * h + be[c];
      }
    } else {
      for (int c = 0; c < channels; ++c) yr[c] = ga[c] * ((xr[c] - cen[c]) * sc[c]) + be[c];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& upstream, const BatchNormParams<T>& p,
                                     const BatchNormCache<T>& cache) {
  expect_shape("batchnorm upstream gradient", cache.normalized.shape(), upstream.shape());
  const int channels = p.gamma.dim(0);
  const std::size_t rows = upstream.size() / static_cast<std::size_t>(channels);
  const T* dy = upstream.data();
  const T* xh = cache.normalized.data();
  const std::vector<double> sum_dy = channel_sums<T>(rows, channels, [&](std::size_t r, int c) { return dy[r * channels + c]; });
  const std::vector<double> sum_dy_xh = channel_sums<T>(rows, channels, [&](std::size_t r, int c) {
    const std::size_t i = r * channels + c;
    return dy[i] * xh[i];
  });
  BatchNormGrads<T> g{Tensor<T>(upstream.shape()), Tensor<T>({channels}), Tensor<T>({channels})};
  const double n = static_cast<double>(rows);
  std::vector<T> scale(channels), mean_dy(channels), mean_dy_xh(channels);
  for (int c = 0; c < channels; ++c) {
    g.gamma[c] = static_cast<T>(sum_dy_xh[c]);
    g.beta[c] = static_cast<T>(sum_dy[c]);
    scale[c] = static_cast<T>(p.gamma[c] * cache.inv_std[c]);
    mean_dy[c] = cache.mode == Mode::kTrain ? static_cast<T>(sum_dy[c] / n) : T{};
    mean_dy_xh[c] = cache.mode == Mode::kTrain ? static_cast<T>(sum_dy_xh[c] / n) : T{};
  }
  T* __restrict dx = g.input.data();
  const T* __restrict sc = scale.data();
  const T* __restrict md = mean_dy.data();
  const T* __restrict mdx = mean_dy_xh.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* __restrict dyr = dy + r * channels;
    const T* __restrict hr = xh + r * channels;
    T* __restrict dxr = dx + r * channels;
    for (int c = 0; c < channels; ++c) dxr[c] = sc[c] * (dyr[c] - md[c] - hr[c] * mdx[c]);
  }
  return g;
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode, bool keep_cache) {
  if (!keep_cache) {
    cache_.reset();
    return batchnorm_forward<T>(x, params_, mode, nullptr);
  }
  BatchNormCache<T> c;
  Tensor<T> y = batchnorm_forward(x, params_, mode, &c);
  cache_ = std::move(c);
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& dy) {
  if (!cache_) throw Error(ErrorKind::kState, name_ + ": backward called without a cached forward pass");
  BatchNormGrads<T> g = batchnorm_backward(dy, params_, *cache_);
  auto gg = params_.gamma.grad();
  auto bg = params_.beta.grad();
  for (std::size_t i = 0; i < gg.size(); ++i) {
    gg[i] += g.gamma[i];
    bg[i] += g.beta[i];
  }
  return std::move(g.input);
}

template <typename T>
void BatchNorm<T>::collect(std::vector<Param<T>>& out) {
  out.push_back({name_ + ".gamma", &params_.gamma, true});
  out.push_back({name_ + ".beta", &params_.beta, true});
  out.push_back({name_ + ".running_mean", &params_.running_mean, false});
  out.push_back({name_ + ".running_var", &params_.running_var, false});
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  std::transform(x.values().begin(), x.values().end(), y.values().begin(), [](T v) { return v > T{} ? v : T{}; });
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  expect_shape("relu upstream gradient", y.shape(), dy.shape());
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = y[i] > T{} ? dy[i] : T{};
  return dx;
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, std::vector<double>* norms) {
  if (x.rank() != 2) throw Error(ErrorKind::kInvalidArgument, "l2 normalisation expects [B,D], got " + shape_string(x.shape()));
  const int b = x.dim(0);
  const int d = x.dim(1);
  Tensor<T> y(x.shape());
  if (norms) norms->assign(b, 0.0);
  for (int i = 0; i < b; ++i) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += static_cast<double>(x[i * d + k]) * x[i * d + k];
    const double n = std::sqrt(s);
    if (!(n >= 1e-12)) {
      throw Error(ErrorKind::kNumeric, "embedding row " + std::to_string(i) + " has degenerate norm " + std::to_string(n));
    }
    for (int k = 0; k < d; ++k) y[i * d + k] = static_cast<T>(x[i * d + k] / n);
    if (norms) (*norms)[i] = n;
  }
  return y;
}

template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& dy, const Tensor<T>& y, const std::vector<double>& norms) {
  expect_shape("l2 normalisation upstream gradient", y.shape(), dy.shape());
  const int b = y.dim(0);
  const int d = y.dim(1);
  Tensor<T> dx(y.shape());
  for (int i = 0; i < b; ++i) {
    double dot = 0.0;
    for (int k = 0; k < d; ++k) dot += static_cast<double>(dy[i * d + k]) * y[i * d + k];
    for (int k = 0; k < d; ++k) dx[i * d + k] = static_cast<T>((dy[i * d + k] - y[i * d + k] * dot) / norms[i]);
  }
  return dx;
}

template <typename T>
ConvBn<T>::ConvBn(std::string name, int kernel_size, int in_channels, int out_channels, bool relu)
    : name_(name), conv_(name + ".conv", kernel_size, in_channels, out_channels), bn_(name + ".bn", out_channels), relu_(relu) {}

template <typename T>
Tensor<T> ConvBn<T>::forward(const Tensor<T>& x, Mode mode, bool keep_cache) {
  Tensor<T> y = bn_.forward(conv_.forward(x, keep_cache), mode, keep_cache);
  if (!relu_) return y;
  y = relu_forward(y);
  if (keep_cache) {
    out_cache_ = y;
  } else {
    out_cache_.reset();
  }
  return y;
}

template <typename T>
Tensor<T> ConvBn<T>::backward(const Tensor<T>& dy) {
  if (!relu_) return conv_.backward(bn_.backward(dy));
  if (!out_cache_) throw Error(ErrorKind::kState, name_ + ": backward called without a cached forward pass");
  return conv_.backward(bn_.backward(relu_backward(dy, *out_cache_)));
}

template <typename T>
void ConvBn<T>::clear_cache() {
  conv_.clear_cache();
  bn_.clear_cache();
  out_cache_.reset();
}

template <typename T>
void ConvBn<T>::collect(std::vector<Param<T>>& out) {
  conv_.collect(out);
  bn_.collect(out);
}

#define PORENET_INSTANTIATE_LAYERS(T)                                                                         \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template class Conv2d<T>;                                                                                   \
  template struct BatchNormParams<T>;                                                                         \
  template Tensor<T> batchnorm_forward<T>(const Tensor<T>&, BatchNormParams<T>&, Mode, BatchNormCache<T>*);   \
  template BatchNormGrads<T> batchnorm_backward<T>(const Tensor<T>&, const BatchNormParams<T>&,               \
                                                   const BatchNormCache<T>&);                                 \
  template class BatchNorm<T>;                                                                                \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                                       \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> l2_normalize_rows<T>(const Tensor<T>&, std::vector<double>*);                            \
  template Tensor<T> l2_normalize_backward<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<double>&); \
  template class ConvBn<T>;

PORENET_INSTANTIATE_LAYERS(float)
PORENET_INSTANTIATE_LAYERS(double)

#undef PORENET_INSTANTIATE_LAYERS

}  // namespace porenet::nn
