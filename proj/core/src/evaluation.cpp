#include "porenet/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "porenet/error.hpp"
#include "porenet/file_util.hpp"

namespace porenet {

Protocol parse_protocol(const std::string& name) {
  if (name == "polyu") return Protocol::kPolyU;
  if (name == "iiti") return Protocol::kIiti;
  throw Error(ErrorKind::kInvalidArgument, "unknown protocol '" + name + "' (expected polyu or iiti)");
}

std::string protocol_name(Protocol p) { return p == Protocol::kPolyU ? "polyu" : "iiti"; }

std::string ManifestEntry::image_id() const {
  return std::to_string(finger_id) + "_" + std::to_string(session) + "_" + std::to_string(impression);
}

void DatasetManifest::validate() const {
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& e : entries) {
    if (e.finger_id < 0 || e.session < 1 || e.impression < 1) {
      throw Error(ErrorKind::kManifest, "manifest: invalid ids for " + e.path);
    }
    if (!seen.emplace(e.finger_id, e.session, e.impression).second) {
      throw Error(ErrorKind::kManifest, "manifest: duplicate entry for finger " + std::to_string(e.finger_id) +
                                            " session " + std::to_string(e.session) + " impression " +
                                            std::to_string(e.impression));
    }
  }
}

std::vector<int> DatasetManifest::finger_ids() const {
  std::set<int> ids;
  for (const auto& e : entries) ids.insert(e.finger_id);
  return {ids.begin(), ids.end()};
}

std::vector<const ManifestEntry*> DatasetManifest::finger(int finger_id) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.finger_id == finger_id) out.push_back(&e);
  }
  std::sort(out.begin(), out.end(), [](const ManifestEntry* a, const ManifestEntry* b) {
    return std::tie(a->session, a->impression) < std::tie(b->session, b->impression);
  });
  return out;
}

DatasetManifest parse_manifest(const std::string& text, Protocol protocol, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.protocol = protocol;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.path)) continue;
    std::string extra;
    if (!(ls >> e.finger_id >> e.session >> e.impression) || (ls >> extra)) {
      throw Error(ErrorKind::kManifest, "manifest line " + std::to_string(lineno) +
                                            ": expected 'path finger_id session impression'");
    }
    const std::filesystem::path p(e.path);
    if (p.is_relative() && !base_dir.empty()) e.path = (base_dir / p).string();
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path, Protocol protocol) {
  return parse_manifest(read_text_file(path), protocol, path.parent_path());
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream os;
  for (const auto& e : manifest.entries) {
    os << e.path << ' ' << e.finger_id << ' ' << e.session << ' ' << e.impression << '\n';
  }
  return os.str();
}

namespace {

[[noreturn]] void report_gaps(const std::vector<std::string>& gaps) {
  std::string msg = "manifest incomplete for protocol; missing:";
  const std::size_t shown = std::min<std::size_t>(gaps.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) msg += " " + gaps[i];
  if (gaps.size() > shown) msg += " ... (" + std::to_string(gaps.size()) + " total)";
  throw Error(ErrorKind::kManifest, msg);
}

ProtocolPairs polyu_pairs(const DatasetManifest& m) {
  // index[finger][session] -> entry indices ordered by impression
  std::map<int, std::map<int, std::map<int, int>>> index;
  int k1 = 0, k2 = 0;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    index[e.finger_id][e.session][e.impression] = static_cast<int>(i);
    if (e.session == 1) k1 = std::max(k1, e.impression);
    if (e.session == 2) k2 = std::max(k2, e.impression);
  }
  std::vector<std::string> gaps;
  if (k1 == 0 || k2 == 0) gaps.push_back(k1 == 0 ? "session 1" : "session 2");
  for (auto& [finger, sessions] : index) {
    for (int s = 1; s <= 2; ++s) {
      const int k = s == 1 ? k1 : k2;
      for (int imp = 1; imp <= k; ++imp) {
        if (!sessions[s].count(imp)) {
          gaps.push_back("finger " + std::to_string(finger) + " session " + std::to_string(s) + " impression " +
                         std::to_string(imp));
        }
      }
    }
  }
  if (!gaps.empty()) report_gaps(gaps);

  ProtocolPairs out;
  for (auto& [finger, sessions] : index) {
    for (auto& [imp2, probe] : sessions[2]) {
      for (auto& [imp1, gallery] : sessions[1]) out.genuine.emplace_back(probe, gallery);
    }
  }
  for (auto& [finger, sessions] : index) {
    const int probe = sessions[2].begin()->second;
    for (auto& [other, other_sessions] : index) {
      if (other != finger) out.impostor.emplace_back(probe, other_sessions[1].begin()->second);
    }
  }
  return out;
}

ProtocolPairs iiti_pairs(const DatasetManifest& m) {
  constexpr int kImpressions = 8;
  std::vector<std::string> gaps;
  std::map<int, std::vector<int>> seq;
  for (int f : m.finger_ids()) {
    auto entries = m.finger(f);
    if (static_cast<int>(entries.size()) < kImpressions) {
      gaps.push_back("finger " + std::to_string(f) + " has " + std::to_string(entries.size()) + " of " +
                     std::to_string(kImpressions) + " impressions");
      continue;
    }
    auto& s = seq[f];
    for (const ManifestEntry* e : entries) s.push_back(static_cast<int>(e - m.entries.data()));
  }
  if (m.entries.empty()) gaps.push_back("all impressions");
  if (!gaps.empty()) report_gaps(gaps);

  ProtocolPairs out;
  for (auto& [finger, s] : seq) {
    for (int probe = 4; probe < 8; ++probe) {
      for (int gallery = 0; gallery < 4; ++gallery) out.genuine.emplace_back(s[probe], s[gallery]);
    }
  }
  for (auto& [finger, s] : seq) {
    for (auto& [other, t] : seq) {
      if (other != finger) out.impostor.emplace_back(s[4], t[0]);
    }
  }
  return out;
}

}  // namespace

ProtocolPairs protocol_pairs(const DatasetManifest& manifest) {
  manifest.validate();
  return manifest.protocol == Protocol::kPolyU ? polyu_pairs(manifest) : iiti_pairs(manifest);
}

DetCurve det_curve(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.impostor.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "det_curve: both genuine and impostor scores are required");
  }
  std::vector<double> gen = scores.genuine, imp = scores.impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<double> thresholds;
  thresholds.reserve(gen.size() + imp.size());
  thresholds.insert(thresholds.end(), gen.begin(), gen.end());
  thresholds.insert(thresholds.end(), imp.begin(), imp.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double ng = static_cast<double>(gen.size());
  const double ni = static_cast<double>(imp.size());
  DetCurve curve;
  curve.rows.reserve(thresholds.size() + 1);
  curve.rows.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  for (double t : thresholds) {
    const auto imp_accepted = imp.end() - std::lower_bound(imp.begin(), imp.end(), t);
    const auto gen_rejected = std::lower_bound(gen.begin(), gen.end(), t) - gen.begin();
    curve.rows.push_back({t, static_cast<double>(imp_accepted) / ni, static_cast<double>(gen_rejected) / ng});
  }
  return curve;
}

double eer(const DetCurve& curve) {
  if (curve.rows.empty()) throw Error(ErrorKind::kInvalidArgument, "eer: empty DET curve");
  const DetRow* best = &curve.rows.front();
  double best_gap = std::abs(best->fmr - best->fnmr);
  for (const DetRow& r : curve.rows) {
    const double gap = std::abs(r.fmr - r.fnmr);
    if (gap < best_gap || (gap == best_gap && r.fnmr < best->fnmr)) {
      best = &r;
      best_gap = gap;
    }
  }
  return (best->fmr + best->fnmr) / 2.0;
}

FmrResult fmr_at(const DetCurve& curve, double ceiling) {
  if (curve.rows.empty()) throw Error(ErrorKind::kInvalidArgument, "fmr_at: empty DET curve");
  FmrResult out{curve.rows.front().fnmr, curve.rows.front().threshold, true};
  for (std::size_t i = 1; i < curve.rows.size(); ++i) {
    const DetRow& r = curve.rows[i];
    if (r.fmr > ceiling) continue;
    if (out.sentinel_only || r.fnmr < out.fnmr) {
      out = {r.fnmr, r.threshold, false};
    }
  }
  return out;
}

Metrics compute_metrics(const ScoreSet& scores) {
  const DetCurve curve = det_curve(scores);
  return {eer(curve), fmr_at(curve, 1e-3), fmr_at(curve, 1e-4), scores.genuine.size(), scores.impostor.size()};
}

std::string format_metrics(const Metrics& m) {
  std::ostringstream os;
  os.precision(6);
  os << "eer=" << m.eer << " fmr1000=" << m.fmr1000.fnmr << " fmr10000=" << m.fmr10000.fnmr
     << " genuine_n=" << m.genuine_n << " impostor_n=" << m.impostor_n;
  return os.str();
}

double dominance_probability(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.impostor.empty()) return 0.0;
  std::vector<double> imp = scores.impostor;
  std::sort(imp.begin(), imp.end());
  double wins = 0.0;
  for (double g : scores.genuine) {
    const auto lo = std::lower_bound(imp.begin(), imp.end(), g);
    const auto hi = std::upper_bound(imp.begin(), imp.end(), g);
    wins += static_cast<double>(lo - imp.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(scores.genuine.size()) * static_cast<double>(imp.size()));
}

bool stochastically_dominates(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.impostor.empty()) return false;
  std::vector<double> gen = scores.genuine, imp = scores.impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<double> points = gen;
  points.insert(points.end(), imp.begin(), imp.end());
  for (double x : points) {
    const double fg = static_cast<double>(std::upper_bound(gen.begin(), gen.end(), x) - gen.begin()) / gen.size();
    const double fi = static_cast<double>(std::upper_bound(imp.begin(), imp.end(), x) - imp.begin()) / imp.size();
    if (fg > fi) return false;
  }
  return true;
}

std::string format_det_csv(const DetCurve& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "threshold,fmr,fnmr\n";
  for (const DetRow& r : curve.rows) {
    if (std::isinf(r.threshold)) {
      os << "inf";
    } else {
      os << r.threshold;
    }
    os << ',' << r.fmr << ',' << r.fnmr << '\n';
  }
  return os.str();
}

std::string format_histogram_csv(const ScoreSet& scores) {
  std::map<double, std::pair<std::size_t, std::size_t>> bins;
  for (double g : scores.genuine) ++bins[g].first;
  for (double i : scores.impostor) ++bins[i].second;
  std::ostringstream os;
  os.precision(17);
  os << "score,genuine_count,impostor_count\n";
  for (const auto& [s, c] : bins) os << s << ',' << c.first << ',' << c.second << '\n';
  return os.str();
}

std::string format_scores_csv(const std::vector<ScoredPair>& pairs) {
  std::ostringstream os;
  os.precision(17);
  os << "probe_id,gallery_id,score\n";
  for (const auto& p : pairs) os << p.probe << ',' << p.gallery << ',' << p.score << '\n';
  return os.str();
}

std::vector<ScoredPair> parse_scores_csv(const std::string& text, const std::string& what) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("probe_id,gallery_id,score", 0) != 0) {
    throw Error(ErrorKind::kFormat, what + ": missing 'probe_id,gallery_id,score' header");
  }
  std::vector<ScoredPair> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw Error(ErrorKind::kFormat, what + " line " + std::to_string(lineno) + ": expected three fields");
    }
    ScoredPair p{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1), 0.0};
    const char* first = line.data() + c2 + 1;
    const char* last = line.data() + line.size();
    if (auto [ptr, ec] = std::from_chars(first, last, p.score); ec != std::errc() || ptr != last) {
      throw Error(ErrorKind::kFormat, what + " line " + std::to_string(lineno) + ": bad score");
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace porenet
