#include "porenet/daisy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "porenet/error.hpp"

namespace porenet {

void DaisyParams::validate() const {
  if (num_orientations < 2) {
    throw Error(ErrorKind::kInvalidArgument, "DAISY needs at least 2 orientations, got " + std::to_string(num_orientations));
  }
  if (ring_radii.empty() || ring_radii.size() != sigmas.size()) {
    throw Error(ErrorKind::kInvalidArgument, "DAISY ring_radii and sigmas must be non-empty and of equal length");
  }
  if (samples_per_ring < 1) throw Error(ErrorKind::kInvalidArgument, "DAISY samples_per_ring must be >= 1");
  for (std::size_t i = 0; i < ring_radii.size(); ++i) {
    if (!(ring_radii[i] > 0.0) || !(sigmas[i] > 0.0)) {
      throw Error(ErrorKind::kInvalidArgument, "DAISY radii and sigmas must be positive");
    }
    if (i > 0 && !(ring_radii[i] > ring_radii[i - 1])) {
      throw Error(ErrorKind::kInvalidArgument, "DAISY ring radii must be strictly increasing");
    }
  }
}

double DaisyParams::support_radius() const {
  return ring_radii.back() + 3.0 * *std::max_element(sigmas.begin(), sigmas.end());
}

std::vector<Plane<double>> orientation_maps(const GrayImage& img, int num_orientations) {
  if (num_orientations < 2) {
    throw Error(ErrorKind::kInvalidArgument, "orientation count must be >= 2, got " + std::to_string(num_orientations));
  }
  const int w = img.width();
  const int h = img.height();
  Plane<double> gx(w, h), gy(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gx(x, y) = 0.5 * (static_cast<double>(img.clamped(x + 1, y)) - img.clamped(x - 1, y));
      gy(x, y) = 0.5 * (static_cast<double>(img.clamped(x, y + 1)) - img.clamped(x, y - 1));
    }
  }
  std::vector<Plane<double>> maps;
  maps.reserve(num_orientations);
  for (int n = 0; n < num_orientations; ++n) {
    const double th = 2.0 * std::numbers::pi * n / num_orientations;
    const double cs = std::cos(th);
    const double sn = std::sin(th);
    Plane<double> m(w, h);
    auto out = m.values();
    auto ax = gx.values();
    auto ay = gy.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, ax[i] * cs + ay[i] * sn);
    maps.push_back(std::move(m));
  }
  return maps;
}

Plane<double> gaussian_blur(const Plane<double>& src, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;

  const int w = src.width();
  const int h = src.height();
  Plane<double> tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * src.clamped(x + i, y);
      tmp(x, y) = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.clamped(x, y + i);
      out(x, y) = s;
    }
  }
  return out;
}

DaisyExtractor::DaisyExtractor(const GrayImage& img, DaisyParams params)
    : params_(std::move(params)), width_(img.width()), height_(img.height()) {
  params_.validate();
  const auto maps = orientation_maps(img, params_.num_orientations);
  smoothed_.resize(params_.sigmas.size());
  for (std::size_t level = 0; level < params_.sigmas.size(); ++level) {
    smoothed_[level].reserve(maps.size());
    for (const auto& m : maps) smoothed_[level].push_back(gaussian_blur(m, params_.sigmas[level]));
  }
}

bool DaisyExtractor::supports(Point p) const noexcept {
  const double s = params_.support_radius();
  return p.x - s >= 0.0 && p.y - s >= 0.0 && p.x + s <= width_ - 1 && p.y + s <= height_ - 1;
}

DaisyDescriptor DaisyExtractor::compute(Point keypoint) const {
  if (!supports(keypoint)) {
    throw Error(ErrorKind::kOutOfBounds, "DAISY support around (" + std::to_string(keypoint.x) + "," +
                                             std::to_string(keypoint.y) + ") exceeds the image bounds");
  }
  const int bins = params_.num_orientations;
  DaisyDescriptor desc;
  desc.keypoint = keypoint;
  desc.values.reserve(params_.descriptor_length());
  std::vector<double> hist(bins);

  auto emit = [&](std::size_t level, double x, double y) {
    double energy = 0.0;
    for (int n = 0; n < bins; ++n) {
      hist[n] = sample_bilinear(smoothed_[level][n], x, y);
      energy += hist[n] * hist[n];
    }
    const double scale = energy < 1e-12 ? 0.0 : 1.0 / std::sqrt(energy);
    for (int n = 0; n < bins; ++n) desc.values.push_back(static_cast<float>(hist[n] * scale));
  };

  emit(0, keypoint.x, keypoint.y);
  for (std::size_t ring = 0; ring < params_.ring_radii.size(); ++ring) {
    const double radius = params_.ring_radii[ring];
    for (int s = 0; s < params_.samples_per_ring; ++s) {
      // Counterclockwise as displayed, starting at angle 0 (+x).
      const double phi = 2.0 * std::numbers::pi * s / params_.samples_per_ring;
      emit(ring, keypoint.x + radius * std::cos(phi), keypoint.y - radius * std::sin(phi));
    }
  }
  return desc;
}

DaisyDescriptor daisy_descriptor(const GrayImage& img, Point keypoint, const DaisyParams& params) {
  return DaisyExtractor(img, params).compute(keypoint);
}

PoreDescriptors describe_pores(const GrayImage& img, const PoreSet& pores, const DaisyParams& params) {
  PoreDescriptors out;
  out.set = DescriptorSet(pores.image_id, params.descriptor_length(), {});
  const DaisyExtractor extractor(img, params);
  for (int i = 0; i < static_cast<int>(pores.pores.size()); ++i) {
    if (!extractor.supports(pores.pores[i])) continue;
    out.set.push_back(extractor.compute(pores.pores[i]).values);
    out.pore_index.push_back(i);
  }
  return out;
}

DaisyMatch match_daisy(const DescriptorSet& set_a, const DescriptorSet& set_b, double ratio) {
  const NeighborTable t = nearest_neighbors(set_a, set_b);
  DaisyMatch m;
  for (int i = 0; i < static_cast<int>(t.row_nearest.size()); ++i) {
    const int j = t.row_nearest[i];
    if (t.col_nearest[j] != i) continue;
    const double d = t.row_best[i];
    if (d < ratio * t.row_second[i] && d < ratio * t.col_second[j]) m.correspondences.push_back({i, j, d});
  }
  m.score = static_cast<int>(m.correspondences.size());
  return m;
}

}  // namespace porenet
