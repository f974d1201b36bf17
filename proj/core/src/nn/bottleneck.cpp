#include "porenet/nn/bottleneck.hpp"

#include "porenet/error.hpp"

namespace porenet::nn {

template <typename T>
BottleneckBlock<T>::BottleneckBlock(std::string name, int in_channels, BottleneckWidths widths, Shortcut shortcut)
    : name_(name),
      in_channels_(in_channels),
      widths_(widths),
      a_(name + ".a", 1, in_channels, widths.reduce, true),
      b_(name + ".b", 3, widths.reduce, widths.spatial, true),
      c_(name + ".c", 1, widths.spatial, widths.expand, false) {
  if (shortcut == Shortcut::kIdentity && in_channels != widths.expand) {
    throw Error(ErrorKind::kInvalidArgument, name_ + ": identity shortcut needs matching channels, got " +
                                                 std::to_string(in_channels) + " -> " + std::to_string(widths.expand));
  }
  if (shortcut == Shortcut::kProjection) projection_.emplace(name + ".proj", 1, in_channels, widths.expand, false);
}

template <typename T>
void BottleneckBlock<T>::init_he(std::mt19937_64& rng) {
  a_.conv().init_he(rng);
  b_.conv().init_he(rng);
  c_.conv().init_he(rng);
  if (projection_) projection_->conv().init_he(rng);
}

template <typename T>
Tensor<T> BottleneckBlock<T>::forward(const Tensor<T>& x, Mode mode, bool keep_cache,
                                      std::vector<std::pair<std::string, Shape>>* trace) {
  const Tensor<T> ya = a_.forward(x, mode, keep_cache);
  const Tensor<T> yb = b_.forward(ya, mode, keep_cache);
  Tensor<T> main = c_.forward(yb, mode, keep_cache);
  if (trace) {
    trace->emplace_back(a_.name(), ya.shape());
    trace->emplace_back(b_.name(), yb.shape());
    trace->emplace_back(c_.name(), main.shape());
  }
  if (projection_) {
    const Tensor<T> s = projection_->forward(x, mode, keep_cache);
    if (trace) trace->emplace_back(projection_->name(), s.shape());
    for (std::size_t i = 0; i < main.size(); ++i) main[i] += s[i];
  } else {
    for (std::size_t i = 0; i < main.size(); ++i) main[i] += x[i];
  }
  Tensor<T> y = relu_forward(main);
  if (trace) trace->emplace_back(name_, y.shape());
  if (keep_cache) {
    out_cache_ = y;
  } else {
    out_cache_.reset();
  }
  return y;
}

template <typename T>
Tensor<T> BottleneckBlock<T>::backward(const Tensor<T>& dy) {
  if (!out_cache_) throw Error(ErrorKind::kState, name_ + ": backward called without a cached forward pass");
  const Tensor<T> d = relu_backward(dy, *out_cache_);
  Tensor<T> dx = a_.backward(b_.backward(c_.backward(d)));
  if (projection_) {
    const Tensor<T> ds = projection_->backward(d);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d[i];
  }
  return dx;
}

template <typename T>
void BottleneckBlock<T>::clear_cache() {
  a_.clear_cache();
  b_.clear_cache();
  c_.clear_cache();
  if (projection_) projection_->clear_cache();
  out_cache_.reset();
}

template <typename T>
void BottleneckBlock<T>::collect(std::vector<Param<T>>& out) {
  a_.collect(out);
  b_.collect(out);
  c_.collect(out);
  if (projection_) projection_->collect(out);
}

template class BottleneckBlock<float>;
template class BottleneckBlock<double>;

}  // namespace porenet::nn
