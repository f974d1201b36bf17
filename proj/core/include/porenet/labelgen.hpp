#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "porenet/daisy.hpp"
#include "porenet/image.hpp"
#include "porenet/matcher.hpp"

namespace porenet {

/// One impression of a finger with its detected pores and their DAISY descriptors.
struct Impression {
  GrayImage image;
  PoreSet pores;
  PoreDescriptors descriptors;  // rows refer to pores via pore_index
};

struct FingerSessionSet {
  int finger_id = 0;
  std::vector<Impression> impressions;
};

/// Builds an impression, computing descriptors for every pore with full DAISY support.
Impression make_impression(GrayImage image, PoreSet pores, const DaisyParams& params = {});

/// Symmetric matrix of DAISY match counts. Correspondences are kept for i < j, expressed as
/// PoreSet indices (index_a into impression i, index_b into impression j).
struct ScoreMatrix {
  int size = 0;
  std::vector<int> scores;  // row-major size x size, diagonal 0
  std::vector<std::vector<Correspondence>> pairs;
  std::vector<std::string> warnings;

  int operator()(int i, int j) const { return scores[static_cast<std::size_t>(i) * size + j]; }
  /// Correspondences oriented from impression i to impression j.
  std::vector<Correspondence> correspondences(int i, int j) const;
};

ScoreMatrix pairwise_scores(const FingerSessionSet& finger, double ratio = 0.8);

/// argmax_i sum_{j != i} S[i][j]; ties go to the smallest index.
int select_reference(const ScoreMatrix& s);
int select_reference(const std::vector<std::vector<int>>& s);

struct PointPair {
  PointF from;
  PointF to;
};

struct RansacParams {
  double inlier_tol = 3.0;
  double confidence = 0.999;
  int max_iters = 2000;
  std::uint64_t seed = 42;
};

struct AffineEstimate {
  AffineTransform transform;
  std::vector<bool> inliers;
  int inlier_count = 0;
  int iterations = 0;
};

/// Exact affine map through three point pairs; nullopt when they are collinear.
std::optional<AffineTransform> affine_from_three(const PointPair& p0, const PointPair& p1, const PointPair& p2);
/// Least-squares affine fit over the given pairs (at least three, not all collinear).
AffineTransform fit_affine_least_squares(const std::vector<PointPair>& pairs);

/// RANSAC over minimal 3-point samples with adaptive iteration count, then a least-squares refit
/// on the consensus set. Throws ErrorKind::kAlignment with fewer than 3 pairs or inliers.
AffineEstimate estimate_affine(const std::vector<PointPair>& pairs, const RansacParams& params = {});

/// Frame data needed for common-pore search in one non-reference impression.
struct AlignedImpression {
  const PoreSet* pores = nullptr;
  AffineTransform to_reference;  // impression frame -> reference frame
  int width = 0;
  int height = 0;
};

struct CommonPoreRecord {
  int pore_id = 0;  // index into the reference PoreSet
  Point reference;
  /// Matched pore coordinate per aligned impression, in the order they were given.
  std::vector<Point> matched;
  std::vector<int> matched_index;
};

/// Keeps reference pores that lie at least 20 px inside the reference and, for every aligned
/// impression, back-project at least 20 px inside it with a detected pore within epsilon there.
/// A detected pore claimed by two reference pores disqualifies both.
std::vector<CommonPoreRecord> find_common_pores(const PoreSet& reference, int ref_width, int ref_height,
                                                const std::vector<AlignedImpression>& aligned, double epsilon = 3.0);

/// Full labelling result for one finger.
struct FingerLabels {
  int finger_id = 0;
  int reference = 0;
  ScoreMatrix scores;
  /// Per impression: transform into the reference frame (identity for the reference itself).
  std::vector<AffineTransform> to_reference;
  std::vector<CommonPoreRecord> common;
  /// Per common pore: coordinate in every impression (index = impression index).
  std::vector<std::vector<Point>> coordinates;
};

struct LabelGenParams {
  double ratio = 0.8;
  double epsilon = 3.0;
  RansacParams ransac;
};

/// Reference selection, alignment and common-pore mining for one finger.
/// Throws ErrorKind::kAlignment if any impression cannot be aligned.
FingerLabels label_finger(const FingerSessionSet& finger, const LabelGenParams& params = {});

struct AugmentSpec {
  int rotations = 10;
  double max_rotation_deg = 20.0;
  int translations = 10;
  int max_shift = 5;
  std::vector<double> gammas{0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90};
  std::uint64_t seed = 42;
  bool enabled = true;

  static AugmentSpec none() {
    AugmentSpec s;
    s.enabled = false;
    return s;
  }
};

/// Patches of one finger with finger-local labels 0..P-1.
/// Per source image: original patches, then rotations, translations and gamma variants; augmented
/// copies whose transformed centre comes within 20 px of the border are skipped.
std::vector<PorePatch> finger_patches(const FingerSessionSet& finger, const FingerLabels& labels,
                                      const AugmentSpec& augmentation);

struct TrainingCorpus {
  std::vector<PorePatch> patches;
  /// Number of labels contributed by each finger, in finger order.
  std::vector<std::pair<int, int>> label_count;  // (finger_id, P)
  int total_labels = 0;
  std::vector<std::string> warnings;
};

/// Builds the corpus in finger order with globally disjoint labels.
TrainingCorpus build_corpus(const std::vector<FingerSessionSet>& fingers, const std::vector<FingerLabels>& labels,
                            const AugmentSpec& augmentation);

/// Deterministic finger-level split; returns the validation finger ids (about fraction of them, at
/// least one when there are two or more fingers).
std::vector<int> split_validation_fingers(std::vector<int> finger_ids, double fraction, std::uint64_t seed);

}  // namespace porenet
