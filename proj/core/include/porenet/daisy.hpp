#pragma once

#include <vector>

#include "porenet/image.hpp"
#include "porenet/matcher.hpp"

namespace porenet {

struct DaisyParams {
  int num_orientations = 8;
  std::vector<double> ring_radii{5.0, 10.0, 15.0};
  int samples_per_ring = 8;
  /// Gaussian sigma per ring; the centre sample uses the first ring's sigma.
  std::vector<double> sigmas{2.5, 5.0, 7.5};

  void validate() const;
  int histogram_bins() const noexcept { return num_orientations; }
  int descriptor_length() const noexcept {
    return (1 + static_cast<int>(ring_radii.size()) * samples_per_ring) * num_orientations;
  }
  /// Distance a keypoint must keep from every border.
  double support_radius() const;
};

struct DaisyDescriptor {
  std::vector<float> values;
  Point keypoint;
};

/// Rectified directional derivatives: map n holds max(0, gx cos(2 pi n / N) + gy sin(2 pi n / N)),
/// with central-difference gradients and replicated borders.
std::vector<Plane<double>> orientation_maps(const GrayImage& img, int num_orientations);

/// Separable Gaussian blur (radius ceil(3 sigma), replicated borders).
Plane<double> gaussian_blur(const Plane<double>& plane, double sigma);

/// Precomputes the smoothed orientation maps of one image so descriptors at many keypoints are cheap.
class DaisyExtractor {
 public:
  DaisyExtractor(const GrayImage& img, DaisyParams params = {});

  const DaisyParams& params() const noexcept { return params_; }
  bool supports(Point keypoint) const noexcept;
  /// Throws kOutOfBounds when the descriptor support leaves the image.
  DaisyDescriptor compute(Point keypoint) const;

 private:
  DaisyParams params_;
  int width_;
  int height_;
  // smoothed_[level][orientation], level 0..rings-1
  std::vector<std::vector<Plane<double>>> smoothed_;
};

DaisyDescriptor daisy_descriptor(const GrayImage& img, Point keypoint, const DaisyParams& params = {});

/// Descriptors for every pore whose support fits; pore_index[k] is the PoreSet index of row k.
struct PoreDescriptors {
  DescriptorSet set;
  std::vector<int> pore_index;
};
PoreDescriptors describe_pores(const GrayImage& img, const PoreSet& pores, const DaisyParams& params = {});

struct DaisyMatch {
  std::vector<Correspondence> correspondences;  // sorted by index_a
  int score = 0;
};

/// Mutual nearest neighbours that also pass the ratio test from both sides, which keeps the
/// result symmetric: match_daisy(B, A) is match_daisy(A, B) with indices swapped.
/// A side with a single descriptor has an infinite second-nearest distance.
DaisyMatch match_daisy(const DescriptorSet& set_a, const DescriptorSet& set_b, double ratio = 0.8);

}  // namespace porenet
