#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace porenet {

enum class Protocol { kPolyU, kIiti };

Protocol parse_protocol(const std::string& name);
std::string protocol_name(Protocol p);

struct ManifestEntry {
  std::string path;
  int finger_id = 0;
  int session = 1;     // 1-based
  int impression = 1;  // 1-based within the session

  /// Stable identifier used for pore, descriptor and score files.
  std::string image_id() const;
};

/// Entries are unique in (finger_id, session, impression).
struct DatasetManifest {
  Protocol protocol = Protocol::kPolyU;
  std::vector<ManifestEntry> entries;

  void validate() const;
  std::vector<int> finger_ids() const;
  /// Entries of one finger sorted by (session, impression).
  std::vector<const ManifestEntry*> finger(int finger_id) const;
};

/// Text form: one "path finger_id session impression" line per image; '#' starts a comment.
/// Relative paths are resolved against base_dir.
DatasetManifest parse_manifest(const std::string& text, Protocol protocol, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path, Protocol protocol);
std::string format_manifest(const DatasetManifest& manifest);

/// Indices into manifest.entries: (probe, gallery).
using PairList = std::vector<std::pair<int, int>>;

struct ProtocolPairs {
  PairList genuine;
  PairList impostor;
};

/// polyu: every session-2 image against all session-1 images of its finger; impostors pair the first
/// session-2 image of each finger with the first session-1 image of every other finger.
/// iiti: impressions 5..8 against 1..4 of the same finger; impostors pair impression 5 of each
/// finger with impression 1 of every other finger. Throws kManifest listing missing impressions.
ProtocolPairs protocol_pairs(const DatasetManifest& manifest);

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct DetRow {
  double threshold = 0.0;
  double fmr = 0.0;
  double fnmr = 0.0;
};

/// Thresholds descending: +infinity first, then every distinct observed score.
/// Accept iff score >= threshold.
struct DetCurve {
  std::vector<DetRow> rows;
};

DetCurve det_curve(const ScoreSet& scores);

/// Midpoint (FMR + FNMR) / 2 at the row minimising |FMR - FNMR|; ties go to the lower FNMR.
double eer(const DetCurve& curve);

struct FmrResult {
  double fnmr = 1.0;
  double threshold = 0.0;
  /// True when only the +infinity sentinel satisfies the ceiling.
  bool sentinel_only = false;
};

/// Lowest FNMR among rows with FMR <= ceiling.
FmrResult fmr_at(const DetCurve& curve, double ceiling);

struct Metrics {
  double eer = 0.0;
  FmrResult fmr1000;
  FmrResult fmr10000;
  std::size_t genuine_n = 0;
  std::size_t impostor_n = 0;
};

Metrics compute_metrics(const ScoreSet& scores);
/// "eer=... fmr1000=... fmr10000=... genuine_n=... impostor_n=..."
std::string format_metrics(const Metrics& m);

/// Fraction of (genuine, impostor) pairs with genuine > impostor, ties counted half.
double dominance_probability(const ScoreSet& scores);
/// True iff the genuine empirical CDF lies on or below the impostor CDF everywhere.
bool stochastically_dominates(const ScoreSet& scores);

/// CSV with header "threshold,fmr,fnmr"; the sentinel threshold is written as "inf".
std::string format_det_csv(const DetCurve& curve);
/// CSV "score,genuine_count,impostor_count" over every distinct score.
std::string format_histogram_csv(const ScoreSet& scores);

/// Score files: "probe_id,gallery_id,score" with a header line.
struct ScoredPair {
  std::string probe;
  std::string gallery;
  double score = 0.0;
};
std::string format_scores_csv(const std::vector<ScoredPair>& pairs);
std::vector<ScoredPair> parse_scores_csv(const std::string& text, const std::string& what);

}  // namespace porenet
