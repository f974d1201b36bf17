#pragma once

#include <span>
#include <vector>

#include "porenet/nn/tensor.hpp"

namespace porenet::nn {

/// Euclidean distance used by the loss, stabilised as sqrt(|a-b|^2 + 1e-12).
inline constexpr double kDistanceEpsilon = 1e-12;

template <typename T>
struct TripletResult {
  double loss = 0.0;
  Tensor<T> grad;                     // d loss / d embeddings, [B, D]
  int valid_anchors = 0;              // anchors with at least one positive and one negative
  int active_anchors = 0;             // anchors with a positive hinge
  std::vector<int> hardest_positive;  // -1 for invalid anchors
  std::vector<int> hardest_negative;
  std::vector<double> positive_distance;
  std::vector<double> negative_distance;
};

/// Batch-hard triplet loss: per anchor the farthest same-label sample and the nearest
/// other-label sample (ties to the smaller index), hinge max(d_ap - d_an + margin, 0),
/// averaged over valid anchors. Throws kInvalidArgument when no anchor is valid.
template <typename T>
TripletResult<T> triplet_loss_batch_hard(const Tensor<T>& embeddings, std::span<const int> labels, double margin);

}  // namespace porenet::nn
