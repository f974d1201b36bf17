#include "porenet/nn/adam.hpp"

#include <cmath>
#include <utility>

#include "porenet/error.hpp"

namespace porenet::nn {

template <typename T>
void adam_step(std::span<T> values, std::span<const T> grads, AdamMoments& state, std::int64_t step,
               const AdamConfig& c, const std::string& name) {
  if (grads.size() != values.size()) {
    throw Error(ErrorKind::kInvalidArgument, name + ": gradient size does not match parameter size");
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(values.size(), 0.0);
    state.v.assign(values.size(), 0.0);
  }
  if (state.m.size() != values.size() || state.v.size() != values.size()) {
    throw Error(ErrorKind::kInvalidArgument, name + ": optimizer state does not match parameter shape");
  }
  for (T g : grads) {
    if (!std::isfinite(static_cast<double>(g))) throw Error(ErrorKind::kNumeric, "non-finite gradient in " + name);
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    values[i] = static_cast<T>(values[i] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon));
  }
}

template <typename T>
void Adam<T>::step(const std::vector<Param<T>>& params) {
  std::size_t trainable = 0;
  for (const auto& p : params) trainable += p.trainable ? 1 : 0;
  if (moments_.empty()) moments_.resize(trainable);
  if (moments_.size() != trainable) {
    throw Error(ErrorKind::kInvalidArgument, "Adam: parameter list changed between steps");
  }
  // Validate everything first so a bad gradient leaves all parameters untouched.
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (T g : std::as_const(*p.tensor).grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw Error(ErrorKind::kNumeric, "non-finite gradient in " + p.name);
    }
  }
  ++step_;
  std::size_t k = 0;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    auto grad = p.tensor->grad();
    adam_step<T>(p.tensor->values(), std::span<const T>(grad.data(), grad.size()), moments_[k++], step_, config_,
                 p.name);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamMoments&, std::int64_t,
                               const AdamConfig&, const std::string&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamMoments&, std::int64_t,
                                const AdamConfig&, const std::string&);
template class Adam<float>;
template class Adam<double>;

}  // namespace porenet::nn
