#include "porenet/nn/triplet.hpp"

#include <cmath>
#include <limits>

#include "porenet/error.hpp"

namespace porenet::nn {

template <typename T>
TripletResult<T> triplet_loss_batch_hard(const Tensor<T>& emb, std::span<const int> labels, double margin) {
  if (emb.rank() != 2) throw Error(ErrorKind::kInvalidArgument, "triplet loss expects [B,D] embeddings");
  const int b = emb.dim(0);
  const int d = emb.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw Error(ErrorKind::kInvalidArgument, "triplet loss: " + std::to_string(labels.size()) + " labels for " +
                                                 std::to_string(b) + " embeddings");
  }

  std::vector<double> dist(static_cast<std::size_t>(b) * b, 0.0);
  for (int i = 0; i < b; ++i) {
    for (int j = i + 1; j < b; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = static_cast<double>(emb[i * d + k]) - emb[j * d + k];
        s += diff * diff;
      }
      dist[static_cast<std::size_t>(i) * b + j] = dist[static_cast<std::size_t>(j) * b + i] =
          std::sqrt(s + kDistanceEpsilon);
    }
  }

  TripletResult<T> r;
  r.grad = Tensor<T>(emb.shape());
  r.hardest_positive.assign(b, -1);
  r.hardest_negative.assign(b, -1);
  r.positive_distance.assign(b, 0.0);
  r.negative_distance.assign(b, 0.0);
  std::vector<double> g(static_cast<std::size_t>(b) * d, 0.0);

  for (int a = 0; a < b; ++a) {
    int pos = -1, neg = -1;
    double dp = -1.0, dn = std::numeric_limits<double>::infinity();
    for (int j = 0; j < b; ++j) {
      if (j == a) continue;
      const double dj = dist[static_cast<std::size_t>(a) * b + j];
      if (labels[j] == labels[a]) {
        if (dj > dp) {
          dp = dj;
          pos = j;
        }
      } else if (dj < dn) {
        dn = dj;
        neg = j;
      }
    }
    if (pos < 0 || neg < 0) continue;
    ++r.valid_anchors;
    r.hardest_positive[a] = pos;
    r.hardest_negative[a] = neg;
    r.positive_distance[a] = dp;
    r.negative_distance[a] = dn;
    const double hinge = dp - dn + margin;
    if (hinge <= 0.0) continue;
    ++r.active_anchors;
    r.loss += hinge;
    for (int k = 0; k < d; ++k) {
      const double up = (static_cast<double>(emb[a * d + k]) - emb[pos * d + k]) / dp;
      const double un = (static_cast<double>(emb[a * d + k]) - emb[neg * d + k]) / dn;
      g[static_cast<std::size_t>(a) * d + k] += up - un;
      g[static_cast<std::size_t>(pos) * d + k] -= up;
      g[static_cast<std::size_t>(neg) * d + k] += un;
    }
  }
  if (r.valid_anchors == 0) {
    throw Error(ErrorKind::kInvalidArgument,
                "triplet loss: no anchor has both a positive and a negative; compose batches with several "
                "samples per label and at least two labels");
  }
  r.loss /= r.valid_anchors;
  for (std::size_t i = 0; i < g.size(); ++i) r.grad[i] = static_cast<T>(g[i] / r.valid_anchors);
  return r;
}

template TripletResult<float> triplet_loss_batch_hard<float>(const Tensor<float>&, std::span<const int>, double);
template TripletResult<double> triplet_loss_batch_hard<double>(const Tensor<double>&, std::span<const int>, double);

}  // namespace porenet::nn
