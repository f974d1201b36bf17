#include "porenet/labelgen.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "porenet/error.hpp"

namespace porenet {

Impression make_impression(GrayImage image, PoreSet pores, const DaisyParams& params) {
  Impression imp;
  imp.descriptors = describe_pores(image, pores, params);
  imp.image = std::move(image);
  imp.pores = std::move(pores);
  return imp;
}

std::vector<Correspondence> ScoreMatrix::correspondences(int i, int j) const {
  if (i == j) return {};
  const int lo = std::min(i, j);
  const int hi = std::max(i, j);
  std::vector<Correspondence> out = pairs[static_cast<std::size_t>(lo) * size + hi];
  if (i > j) {
    for (auto& c : out) std::swap(c.index_a, c.index_b);
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.index_a < y.index_a; });
  }
  return out;
}

ScoreMatrix pairwise_scores(const FingerSessionSet& finger, double ratio) {
  const int n = static_cast<int>(finger.impressions.size());
  if (n < 2) {
    throw Error(ErrorKind::kInvalidArgument,
                "finger " + std::to_string(finger.finger_id) + " needs at least 2 impressions, has " + std::to_string(n));
  }
  ScoreMatrix s;
  s.size = n;
  s.scores.assign(static_cast<std::size_t>(n) * n, 0);
  s.pairs.assign(static_cast<std::size_t>(n) * n, {});
  for (int i = 0; i < n; ++i) {
    if (finger.impressions[i].descriptors.set.empty()) {
      s.warnings.push_back("finger " + std::to_string(finger.finger_id) + " impression " + std::to_string(i) +
                           " has no describable pores; its scores are zero");
    }
  }
  for (int i = 0; i < n; ++i) {
    const auto& di = finger.impressions[i].descriptors;
    if (di.set.empty()) continue;
    for (int j = i + 1; j < n; ++j) {
      const auto& dj = finger.impressions[j].descriptors;
      if (dj.set.empty()) continue;
      DaisyMatch m = match_daisy(di.set, dj.set, ratio);
      for (auto& c : m.correspondences) {
        c.index_a = di.pore_index[c.index_a];
        c.index_b = dj.pore_index[c.index_b];
      }
      s.scores[static_cast<std::size_t>(i) * n + j] = m.score;
      s.scores[static_cast<std::size_t>(j) * n + i] = m.score;
      s.pairs[static_cast<std::size_t>(i) * n + j] = std::move(m.correspondences);
    }
  }
  return s;
}

int select_reference(const ScoreMatrix& s) {
  std::vector<std::vector<int>> rows(s.size, std::vector<int>(s.size));
  for (int i = 0; i < s.size; ++i) {
    for (int j = 0; j < s.size; ++j) rows[i][j] = s(i, j);
  }
  return select_reference(rows);
}

int select_reference(const std::vector<std::vector<int>>& s) {
  if (s.size() < 2) throw Error(ErrorKind::kInvalidArgument, "reference selection needs at least 2 impressions");
  int best = 0;
  long long best_sum = std::numeric_limits<long long>::min();
  for (std::size_t i = 0; i < s.size(); ++i) {
    long long sum = 0;
    for (std::size_t j = 0; j < s[i].size(); ++j) {
      if (j != i) sum += s[i][j];
    }
    if (sum > best_sum) {
      best_sum = sum;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::optional<AffineTransform> affine_from_three(const PointPair& p0, const PointPair& p1, const PointPair& p2) {
  Eigen::Matrix3d a;
  a << p0.from.x, p0.from.y, 1.0, p1.from.x, p1.from.y, 1.0, p2.from.x, p2.from.y, 1.0;
  const double det = a.determinant();
  // Twice the triangle area; tiny means collinear.
  if (std::abs(det) < 1e-6) return std::nullopt;
  const Eigen::Matrix3d inv = a.inverse();
  const Eigen::Vector3d row_x = inv * Eigen::Vector3d(p0.to.x, p1.to.x, p2.to.x);
  const Eigen::Vector3d row_y = inv * Eigen::Vector3d(p0.to.y, p1.to.y, p2.to.y);
  AffineTransform t{row_x[0], row_x[1], row_x[2], row_y[0], row_y[1], row_y[2]};
  if (!t.invertible()) return std::nullopt;
  return t;
}

AffineTransform fit_affine_least_squares(const std::vector<PointPair>& pairs) {
  if (pairs.size() < 3) throw Error(ErrorKind::kAlignment, "least-squares affine fit needs at least 3 pairs");
  const Eigen::Index n = static_cast<Eigen::Index>(pairs.size());
  // Centre the source points for conditioning.
  double cx = 0.0, cy = 0.0;
  for (const auto& p : pairs) {
    cx += p.from.x;
    cy += p.from.y;
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd bx(n), by(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    a(i, 0) = p.from.x - cx;
    a(i, 1) = p.from.y - cy;
    a(i, 2) = 1.0;
    bx[i] = p.to.x;
    by[i] = p.to.y;
  }
  const auto qr = a.colPivHouseholderQr();
  if (qr.rank() < 3) throw Error(ErrorKind::kAlignment, "affine fit is degenerate (collinear points)");
  const Eigen::Vector3d sx = qr.solve(bx);
  const Eigen::Vector3d sy = qr.solve(by);
  AffineTransform t{sx[0], sx[1], sx[2] - sx[0] * cx - sx[1] * cy, sy[0], sy[1], sy[2] - sy[0] * cx - sy[1] * cy};
  if (!t.invertible()) throw Error(ErrorKind::kAlignment, "least-squares affine fit is singular");
  return t;
}

namespace {

int count_inliers(const AffineTransform& t, const std::vector<PointPair>& pairs, double tol, std::vector<bool>* mask) {
  const double tol2 = tol * tol;
  int count = 0;
  if (mask) mask->assign(pairs.size(), false);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const PointF q = t.apply(pairs[i].from);
    const double dx = q.x - pairs[i].to.x;
    const double dy = q.y - pairs[i].to.y;
    if (dx * dx + dy * dy <= tol2) {
      ++count;
      if (mask) (*mask)[i] = true;
    }
  }
  return count;
}

std::vector<PointPair> select(const std::vector<PointPair>& pairs, const std::vector<bool>& mask) {
  std::vector<PointPair> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (mask[i]) out.push_back(pairs[i]);
  }
  return out;
}

}  // namespace

AffineEstimate estimate_affine(const std::vector<PointPair>& pairs, const RansacParams& params) {
  const int n = static_cast<int>(pairs.size());
  if (n < 3) {
    throw Error(ErrorKind::kAlignment, "affine estimation needs at least 3 correspondences, got " + std::to_string(n));
  }
  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);

  AffineEstimate best;
  int best_count = 0;
  long long needed = params.max_iters;
  int it = 0;
  for (; it < needed && it < params.max_iters; ++it) {
    int i0 = pick(rng), i1 = pick(rng), i2 = pick(rng);
    if (i0 == i1 || i0 == i2 || i1 == i2) continue;
    const auto t = affine_from_three(pairs[i0], pairs[i1], pairs[i2]);
    if (!t) continue;
    const int c = count_inliers(*t, pairs, params.inlier_tol, nullptr);
    if (c > best_count) {
      best_count = c;
      best.transform = *t;
      const double w = static_cast<double>(c) / n;
      const double p_fail = 1.0 - w * w * w;
      if (p_fail <= 0.0) {
        needed = it + 1;
      } else {
        const double k = std::log(1.0 - params.confidence) / std::log(p_fail);
        needed = std::min<long long>(params.max_iters, static_cast<long long>(std::ceil(k)));
      }
    }
  }
  best.iterations = it;
  if (best_count < 3) {
    throw Error(ErrorKind::kAlignment,
                "affine estimation found only " + std::to_string(best_count) + " inliers among " + std::to_string(n));
  }

  // Refine: least squares on the consensus set, re-score, and refit once more if it grew.
  std::vector<bool> mask;
  count_inliers(best.transform, pairs, params.inlier_tol, &mask);
  for (int round = 0; round < 3; ++round) {
    const auto subset = select(pairs, mask);
    AffineTransform refit;
    try {
      refit = fit_affine_least_squares(subset);
    } catch (const Error&) {
      break;
    }
    std::vector<bool> new_mask;
    const int c = count_inliers(refit, pairs, params.inlier_tol, &new_mask);
    if (c < 3) break;
    best.transform = refit;
    const bool same = new_mask == mask;
    mask = std::move(new_mask);
    if (same) break;
  }
  best.inlier_count = count_inliers(best.transform, pairs, params.inlier_tol, &best.inliers);
  if (best.inlier_count < 3) {
    throw Error(ErrorKind::kAlignment, "affine refinement left fewer than 3 inliers");
  }
  return best;
}

namespace {

bool inside_margin(PointF p, int width, int height) {
  return p.x >= kPatchHalf && p.y >= kPatchHalf && p.x <= width - 1 - kPatchHalf && p.y <= height - 1 - kPatchHalf;
}

}  // namespace

std::vector<CommonPoreRecord> find_common_pores(const PoreSet& reference, int ref_width, int ref_height,
                                                const std::vector<AlignedImpression>& aligned, double epsilon) {
  std::vector<AffineTransform> back;
  back.reserve(aligned.size());
  for (const auto& a : aligned) {
    if (a.pores == nullptr) throw Error(ErrorKind::kInvalidArgument, "aligned impression without pores");
    back.push_back(a.to_reference.inverse());
  }
  const double eps2 = epsilon * epsilon;

  std::vector<CommonPoreRecord> candidates;
  for (int k = 0; k < static_cast<int>(reference.pores.size()); ++k) {
    const Point p = reference.pores[k];
    if (!patch_fits(ref_width, ref_height, p)) continue;
    CommonPoreRecord rec;
    rec.pore_id = k;
    rec.reference = p;
    bool ok = true;
    for (std::size_t a = 0; a < aligned.size() && ok; ++a) {
      const PointF q = back[a].apply(to_pointf(p));
      if (!inside_margin(q, aligned[a].width, aligned[a].height)) {
        ok = false;
        break;
      }
      int best = -1;
      double best_d2 = std::numeric_limits<double>::infinity();
      const auto& pores = aligned[a].pores->pores;
      for (int m = 0; m < static_cast<int>(pores.size()); ++m) {
        const double dx = pores[m].x - q.x;
        const double dy = pores[m].y - q.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 < best_d2) {
          best_d2 = d2;
          best = m;
        }
      }
      if (best < 0 || best_d2 > eps2 || !patch_fits(aligned[a].width, aligned[a].height, pores[best])) {
        ok = false;
        break;
      }
      rec.matched.push_back(pores[best]);
      rec.matched_index.push_back(best);
    }
    if (ok) candidates.push_back(std::move(rec));
  }

  // Drop reference pores that share a matched pore in any impression.
  std::vector<std::map<int, int>> claims(aligned.size());
  for (const auto& rec : candidates) {
    for (std::size_t a = 0; a < aligned.size(); ++a) ++claims[a][rec.matched_index[a]];
  }
  std::vector<CommonPoreRecord> out;
  for (auto& rec : candidates) {
    bool unique = true;
    for (std::size_t a = 0; a < aligned.size(); ++a) unique = unique && claims[a][rec.matched_index[a]] == 1;
    if (unique) out.push_back(std::move(rec));
  }
  return out;
}

FingerLabels label_finger(const FingerSessionSet& finger, const LabelGenParams& params) {
  FingerLabels out;
  out.finger_id = finger.finger_id;
  out.scores = pairwise_scores(finger, params.ratio);
  out.reference = select_reference(out.scores);
  const int n = static_cast<int>(finger.impressions.size());
  const int ref = out.reference;
  const Impression& ref_imp = finger.impressions[ref];

  out.to_reference.assign(n, AffineTransform::identity());
  std::vector<AlignedImpression> aligned;
  std::vector<int> aligned_index;
  for (int j = 0; j < n; ++j) {
    if (j == ref) continue;
    const Impression& imp = finger.impressions[j];
    std::vector<PointPair> pts;
    for (const auto& c : out.scores.correspondences(j, ref)) {
      pts.push_back({to_pointf(imp.pores.pores[c.index_a]), to_pointf(ref_imp.pores.pores[c.index_b])});
    }
    AffineEstimate est;
    try {
      est = estimate_affine(pts, params.ransac);
    } catch (const Error& e) {
      throw Error(ErrorKind::kAlignment, "finger " + std::to_string(finger.finger_id) + ": impression " +
                                             std::to_string(j) + " could not be aligned to reference " +
                                             std::to_string(ref) + ": " + e.what());
    }
    out.to_reference[j] = est.transform;
    aligned.push_back({&imp.pores, est.transform, imp.image.width(), imp.image.height()});
    aligned_index.push_back(j);
  }

  out.common = find_common_pores(ref_imp.pores, ref_imp.image.width(), ref_imp.image.height(), aligned, params.epsilon);
  for (const auto& rec : out.common) {
    std::vector<Point> coords(n);
    coords[ref] = rec.reference;
    for (std::size_t a = 0; a < aligned_index.size(); ++a) coords[aligned_index[a]] = rec.matched[a];
    out.coordinates.push_back(std::move(coords));
  }
  return out;
}

namespace {

void append_patches(const GrayImage& img, const std::vector<Point>& centers, const std::vector<int>& labels,
                    const std::vector<int>& pore_ids, int finger_id, int impression_id, std::vector<PorePatch>& out) {
  for (std::size_t k = 0; k < centers.size(); ++k) {
    if (!patch_fits(img.width(), img.height(), centers[k])) continue;
    PorePatch p = extract_patch(img, centers[k]);
    p.finger_id = finger_id;
    p.impression_id = impression_id;
    p.pore_id = pore_ids[k];
    p.label = labels[k];
    out.push_back(p);
  }
}

Point round_point(PointF p) { return {static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))}; }

}  // namespace

std::vector<PorePatch> finger_patches(const FingerSessionSet& finger, const FingerLabels& labels,
                                      const AugmentSpec& aug) {
  std::vector<PorePatch> out;
  const int n = static_cast<int>(finger.impressions.size());
  const int p_count = static_cast<int>(labels.common.size());
  std::vector<int> label_ids(p_count);
  std::iota(label_ids.begin(), label_ids.end(), 0);
  std::vector<int> pore_ids(p_count);
  for (int k = 0; k < p_count; ++k) pore_ids[k] = labels.common[k].pore_id;

  for (int i = 0; i < n; ++i) {
    const GrayImage& img = finger.impressions[i].image;
    std::vector<Point> centers(p_count);
    for (int k = 0; k < p_count; ++k) centers[k] = labels.coordinates[k][i];
    for (const Point& c : centers) {
      if (!patch_fits(img.width(), img.height(), c)) {
        throw Error(ErrorKind::kOutOfBounds, "common pore too close to the border in finger " +
                                                 std::to_string(finger.finger_id) + " impression " + std::to_string(i));
      }
    }
    append_patches(img, centers, label_ids, pore_ids, finger.finger_id, i, out);
    if (!aug.enabled) continue;

    std::seed_seq seq{static_cast<std::uint32_t>(aug.seed), static_cast<std::uint32_t>(aug.seed >> 32),
                      static_cast<std::uint32_t>(finger.finger_id), static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> angle(-aug.max_rotation_deg, aug.max_rotation_deg);
    std::uniform_int_distribution<int> shift(-aug.max_shift, aug.max_shift);
    const PointF centre{(img.width() - 1) / 2.0, (img.height() - 1) / 2.0};

    auto transformed = [&](const AffineTransform& t) {
      const GrayImage warped = warp_affine(img, t, img.width(), img.height());
      std::vector<Point> moved(p_count);
      for (int k = 0; k < p_count; ++k) moved[k] = round_point(t.apply(to_pointf(centers[k])));
      append_patches(warped, moved, label_ids, pore_ids, finger.finger_id, i, out);
    };
    for (int r = 0; r < aug.rotations; ++r) transformed(AffineTransform::rotation_about(centre, angle(rng)));
    for (int s = 0; s < aug.translations; ++s) {
      const int dx = shift(rng);
      const int dy = shift(rng);
      transformed(AffineTransform::translation(dx, dy));
    }
    for (double g : aug.gammas) append_patches(gamma_transform(img, g), centers, label_ids, pore_ids, finger.finger_id, i, out);
  }
  return out;
}

TrainingCorpus build_corpus(const std::vector<FingerSessionSet>& fingers, const std::vector<FingerLabels>& labels,
                            const AugmentSpec& augmentation) {
  if (fingers.size() != labels.size()) {
    throw Error(ErrorKind::kInvalidArgument, "build_corpus: fingers and labels differ in length");
  }
  std::vector<std::size_t> order(fingers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fingers[a].finger_id < fingers[b].finger_id; });

  TrainingCorpus corpus;
  for (std::size_t idx : order) {
    const auto& f = fingers[idx];
    const auto& l = labels[idx];
    if (l.common.empty()) {
      corpus.warnings.push_back("finger " + std::to_string(f.finger_id) + " has no common pores; skipped");
      continue;
    }
    auto patches = finger_patches(f, l, augmentation);
    for (auto& p : patches) p.label += corpus.total_labels;
    corpus.patches.insert(corpus.patches.end(), patches.begin(), patches.end());
    const int p_count = static_cast<int>(l.common.size());
    corpus.label_count.emplace_back(f.finger_id, p_count);
    corpus.total_labels += p_count;
  }
  return corpus;
}

std::vector<int> split_validation_fingers(std::vector<int> finger_ids, double fraction, std::uint64_t seed) {
  std::sort(finger_ids.begin(), finger_ids.end());
  finger_ids.erase(std::unique(finger_ids.begin(), finger_ids.end()), finger_ids.end());
  if (finger_ids.size() < 2) return {};
  std::mt19937_64 rng(seed);
  std::shuffle(finger_ids.begin(), finger_ids.end(), rng);
  auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(finger_ids.size())));
  count = std::clamp<std::size_t>(count, 1, finger_ids.size() - 1);
  std::vector<int> val(finger_ids.begin(), finger_ids.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(val.begin(), val.end());
  return val;
}

}  // namespace porenet
