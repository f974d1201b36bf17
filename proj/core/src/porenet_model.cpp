#include "porenet/porenet_model.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "porenet/error.hpp"

namespace porenet {

namespace {

template <typename T>
void record(ShapeTrace* trace, const std::string& name, const nn::Tensor<T>& t) {
  if (trace) trace->emplace_back(name, t.shape());
}

}  // namespace

std::string ParameterAudit::report() const {
  std::ostringstream os;
  for (const auto& [name, count] : per_layer) os << name << ' ' << count << '\n';
  os << "conv_weights " << conv_weights << '\n'
     << "conv_biases " << conv_biases << '\n'
     << "bn_gamma_beta " << bn_affine << '\n'
     << "bn_running_stats " << bn_running << '\n'
     << "total " << total << '\n'
     << "main_path_convs " << main_path_convs << '\n'
     << "shortcuts " << shortcuts << " (projection " << projection_shortcuts << ")\n"
     << "note: the total counts batch-norm running mean and variance as parameters\n";
  return os.str();
}

template <typename T>
PoreNet<T>::PoreNet(std::uint64_t seed, double bn_momentum, double bn_epsilon)
    : conv1_("conv1", 3, 1, 16, true), conv4_("conv4", 3, 128, 1) {
  blocks_.emplace_back("conv2_1", 16, nn::BottleneckWidths{32, 32, 64}, nn::Shortcut::kProjection);
  blocks_.emplace_back("conv2_2", 64, nn::BottleneckWidths{32, 32, 64}, nn::Shortcut::kIdentity);
  blocks_.emplace_back("conv3_1", 64, nn::BottleneckWidths{64, 64, 128}, nn::Shortcut::kProjection);
  blocks_.emplace_back("conv3_2", 128, nn::BottleneckWidths{64, 64, 128}, nn::Shortcut::kIdentity);

  std::mt19937_64 rng(seed);
  conv1_.conv().init_he(rng);
  for (auto& b : blocks_) b.init_he(rng);
  conv4_.init_he(rng);
  for (nn::BatchNorm<T>* bn : batch_norms()) {
    bn->params().momentum = bn_momentum;
    bn->params().epsilon = bn_epsilon;
  }
}

template <typename T>
nn::Tensor<T> PoreNet<T>::forward(const nn::Tensor<T>& input, nn::Mode mode, ShapeTrace* trace, bool keep_cache) {
  if (input.rank() != 4 || input.dim(1) != kPatchSide || input.dim(2) != kPatchSide || input.dim(3) != 1) {
    throw Error(ErrorKind::kInvalidArgument,
                "porenet: input must be [B,41,41,1], got " + nn::shape_string(input.shape()));
  }
  record(trace, "input", input);
  nn::Tensor<T> x = conv1_.forward(input, mode, keep_cache);
  record(trace, "conv1", x);
  for (auto& b : blocks_) x = b.forward(x, mode, keep_cache, trace);
  x = conv4_.forward(x, keep_cache);
  record(trace, "conv4", x);
  const int batch = x.dim(0);
  x = x.reshaped({batch, kEmbeddingDim});
  record(trace, "flatten", x);
  std::vector<double> norms;
  nn::Tensor<T> y = nn::l2_normalize_rows(x, &norms);
  record(trace, "l2norm", y);
  if (keep_cache) {
    embeddings_ = y;
    norms_ = std::move(norms);
    cached_ = true;
  } else {
    cached_ = false;
  }
  return y;
}

template <typename T>
nn::Tensor<T> PoreNet<T>::backward(const nn::Tensor<T>& d_embeddings) {
  if (!cached_) throw Error(ErrorKind::kState, "porenet: backward called without a cached forward pass");
  nn::Tensor<T> d = nn::l2_normalize_backward(d_embeddings, embeddings_, norms_);
  const int batch = d.dim(0);
  d = d.reshaped({batch, kPatchSide, kPatchSide, 1});
  d = conv4_.backward(d);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
  return conv1_.backward(d);
}

template <typename T>
void PoreNet<T>::clear_cache() {
  conv1_.clear_cache();
  for (auto& b : blocks_) b.clear_cache();
  conv4_.clear_cache();
  embeddings_ = {};
  norms_.clear();
  cached_ = false;
}

template <typename T>
std::vector<nn::Param<T>> PoreNet<T>::parameters() {
  std::vector<nn::Param<T>> out;
  conv1_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  conv4_.collect(out);
  return out;
}

template <typename T>
std::vector<nn::Param<T>> PoreNet<T>::trainable_parameters() {
  std::vector<nn::Param<T>> out;
  for (auto& p : parameters()) {
    if (p.trainable) out.push_back(p);
  }
  return out;
}

template <typename T>
void PoreNet<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

template <typename T>
std::vector<nn::BatchNorm<T>*> PoreNet<T>::batch_norms() {
  std::vector<nn::BatchNorm<T>*> out{&conv1_.bn()};
  for (auto& b : blocks_) {
    out.push_back(&b.reduce().bn());
    out.push_back(&b.spatial().bn());
    out.push_back(&b.expand().bn());
    if (b.projection()) out.push_back(&b.projection()->bn());
  }
  return out;
}

template <typename T>
std::vector<const nn::BatchNorm<T>*> PoreNet<T>::batch_norms() const {
  auto all = const_cast<PoreNet*>(this)->batch_norms();
  return {all.begin(), all.end()};
}

template <typename T>
bool PoreNet<T>::has_running_stats() const {
  for (const auto* bn : batch_norms()) {
    if (!bn->params().has_stats) return false;
  }
  return true;
}

template <typename T>
void PoreNet<T>::mark_running_stats(bool present) {
  for (auto* bn : batch_norms()) bn->params().has_stats = present;
}

template <typename T>
void PoreNet<T>::set_bn_momentum(double momentum) {
  for (auto* bn : batch_norms()) bn->params().momentum = momentum;
}

template <typename T>
ParameterAudit PoreNet<T>::audit() const {
  ParameterAudit a;
  auto& self = const_cast<PoreNet&>(*this);
  auto add_conv = [&](nn::Conv2d<T>& c, long long& layer) {
    a.conv_weights += static_cast<long long>(c.weight().size());
    a.conv_biases += static_cast<long long>(c.bias().size());
    layer += static_cast<long long>(c.weight().size() + c.bias().size());
  };
  auto add_bn = [&](nn::BatchNorm<T>& bn, long long& layer) {
    const auto& p = bn.params();
    a.bn_affine += static_cast<long long>(p.gamma.size() + p.beta.size());
    a.bn_running += static_cast<long long>(p.running_mean.size() + p.running_var.size());
    layer += static_cast<long long>(p.gamma.size() * 4);
  };
  auto add_unit = [&](nn::ConvBn<T>& u) {
    long long layer = 0;
    add_conv(u.conv(), layer);
    add_bn(u.bn(), layer);
    a.per_layer.emplace_back(u.name(), layer);
  };

  add_unit(self.conv1_);
  ++a.main_path_convs;
  for (auto& b : self.blocks_) {
    add_unit(b.reduce());
    add_unit(b.spatial());
    add_unit(b.expand());
    a.main_path_convs += 3;
    ++a.shortcuts;
    if (b.projection()) {
      add_unit(*b.projection());
      ++a.projection_shortcuts;
    }
  }
  long long last = 0;
  add_conv(self.conv4_, last);
  a.per_layer.emplace_back(self.conv4_.name(), last);
  ++a.main_path_convs;
  a.total = a.conv_weights + a.conv_biases + a.bn_affine + a.bn_running;
  return a;
}

PoreNetModel build_porenet(std::uint64_t seed) {
  PoreNetModel model(seed);
  const ParameterAudit a = model.audit();
  if (a.total != kExpectedParameterCount) {
    throw Error(ErrorKind::kState, "porenet: parameter audit found " + std::to_string(a.total) + ", expected " +
                                       std::to_string(kExpectedParameterCount));
  }
  return model;
}

template <typename T>
nn::Tensor<T> patches_to_tensor(std::span<const PorePatch> patches) {
  nn::Tensor<T> t({static_cast<int>(patches.size()), kPatchSide, kPatchSide, 1});
  T* out = t.data();
  for (const PorePatch& p : patches) {
    for (float v : p.pixels) *out++ = static_cast<T>(v);
  }
  return t;
}

std::vector<std::vector<float>> embed(PoreNetModel& model, std::span<const PorePatch> patches, int batch_size) {
  if (batch_size < 1) throw Error(ErrorKind::kInvalidArgument, "embed: batch size must be positive");
  if (!model.has_running_stats()) {
    throw Error(ErrorKind::kState, "embed: model has no batch-norm running statistics; train or load weights first");
  }
  std::vector<std::vector<float>> out;
  out.reserve(patches.size());
  for (std::size_t start = 0; start < patches.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(patches.size() - start, static_cast<std::size_t>(batch_size));
    const nn::Tensor<float> y =
        model.forward(patches_to_tensor<float>(patches.subspan(start, n)), nn::Mode::kInfer, nullptr, false);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = y.data() + i * kEmbeddingDim;
      out.emplace_back(row, row + kEmbeddingDim);
    }
  }
  return out;
}

template <typename To, typename From>
void copy_parameters(PoreNet<To>& dst, PoreNet<From>& src) {
  auto d = dst.parameters();
  auto s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto dv = d[i].tensor->values();
    auto sv = s[i].tensor->values();
    for (std::size_t k = 0; k < dv.size(); ++k) dv[k] = static_cast<To>(sv[k]);
  }
  dst.mark_running_stats(src.has_running_stats());
}

template class PoreNet<float>;
template class PoreNet<double>;
template nn::Tensor<float> patches_to_tensor<float>(std::span<const PorePatch>);
template nn::Tensor<double> patches_to_tensor<double>(std::span<const PorePatch>);
template void copy_parameters<double, float>(PoreNet<double>&, PoreNet<float>&);
template void copy_parameters<float, double>(PoreNet<float>&, PoreNet<double>&);
template void copy_parameters<float, float>(PoreNet<float>&, PoreNet<float>&);

}  // namespace porenet
