#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "porenet/evaluation.hpp"
#include "porenet/image.hpp"

namespace porenet {

struct SyntheticSpec {
  std::uint64_t seed = 7;
  int fingers = 10;
  /// Impressions per finger, split into two sessions (the first session gets the extra one).
  int impressions = 6;
  int pores_per_finger = 40;
  int width = 320;
  int height = 240;
  int first_finger_id = 1;
  double max_rotation_deg = 3.0;
  double max_shift = 5.0;
  /// Per-impression pore displacement; each axis is uniform in [-j/sqrt(2), j/sqrt(2)].
  double pore_jitter = 1.0;
  /// Probability that a pore is missing from an impression.
  double pore_dropout = 0.0;
  double noise_sigma = 0.02;
  double ridge_period = 14.0;

  void validate() const;
};

struct SyntheticImpression {
  ManifestEntry entry;
  GrayImage image;
  /// Canonical finger frame -> this image.
  AffineTransform transform;
  /// Ground-truth pores inside the image, with the canonical pore index of each.
  PoreSet pores;
  std::vector<int> pore_ids;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<SyntheticImpression> impressions;  // same order as manifest.entries
};

/// Ridge-textured fingerprints with planted pores on ridge centres. Each finger has its own ridge
/// geometry and texture; each impression applies a random rotation about the image centre and a
/// shift, pore jitter, optional dropout and pixel noise. Deterministic in the seed.
SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec);

/// Writes images as "<finger>_<session>_<impression>.pgm", manifest.txt, ground-truth pores under
/// truth/<image_id>.txt and transforms.txt ("image_id a b tx c d ty", canonical -> image).
/// Entry paths in the returned manifest are absolute.
SyntheticDataset write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace porenet
