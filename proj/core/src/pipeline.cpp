#include "porenet/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "json.hpp"
#include "porenet/error.hpp"
#include "porenet/evaluation.hpp"
#include "porenet/file_util.hpp"
#include "porenet/labelgen.hpp"
#include "porenet/parallel.hpp"
#include "porenet/pore_detect.hpp"
#include "porenet/porenet_model.hpp"
#include "porenet/trainer.hpp"

namespace porenet {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const std::vector<PipelineConfig::KeyInfo>& PipelineConfig::keys() {
  static const std::vector<KeyInfo> k{
      {"work_dir", "work", "directory for every stage artifact"},
      {"dataset.manifest", "", "evaluation manifest: 'path finger_id session impression' per line"},
      {"dataset.protocol", "polyu", "evaluation protocol: polyu or iiti"},
      {"train.manifest", "", "training manifest; empty means dataset.manifest"},
      {"detector", "dpf", "dpf (dynamic pore filtering) or map (external pore maps)"},
      {"detector.map_dir", "", "directory of <image_id>.txt|.pgm|.png pore maps for detector = map"},
      {"detector.map_window", "5", "local-maxima window for intensity maps"},
      {"detector.map_min_value", "0.4", "minimum map intensity for a pore"},
      {"dpf.threshold", "otsu", "global binarisation: otsu or fixed"},
      {"dpf.fixed_threshold", "0.5", "threshold for dpf.threshold = fixed"},
      {"dpf.min_radius", "1", "smallest local pore radius in pixels"},
      {"dpf.max_radius", "3", "largest local pore radius in pixels"},
      {"dpf.window_scale", "1", "local window half-size as a multiple of the local radius"},
      {"dpf.max_scan", "30", "longest directional scan in pixels"},
      {"labelgen.ratio", "0.8", "ratio-test threshold for DAISY matching"},
      {"labelgen.epsilon", "3", "common-pore distance tolerance in pixels"},
      {"ransac.tolerance", "3", "RANSAC inlier tolerance in pixels"},
      {"ransac.confidence", "0.999", "RANSAC confidence for the adaptive iteration count"},
      {"ransac.max_iters", "2000", "RANSAC iteration cap"},
      {"ransac.seed", "42", "RANSAC seed"},
      {"augment.enabled", "true", "rotation, translation and gamma augmentation"},
      {"augment.rotations", "10", "rotated copies per image"},
      {"augment.max_rotation", "20", "largest rotation in degrees"},
      {"augment.translations", "10", "translated copies per image"},
      {"augment.max_shift", "5", "largest shift in pixels"},
      {"augment.seed", "42", "augmentation seed"},
      {"train.epochs", "100", "training epochs"},
      {"train.batch", "256", "patches per batch; a multiple of train.patches_per_label"},
      {"train.patches_per_label", "8", "patches drawn per label in a batch"},
      {"train.max_steps_per_epoch", "0", "cap on steps per epoch; 0 means no cap"},
      {"train.lr", "0.0001", "Adam learning rate"},
      {"train.beta1", "0.9", "Adam first-moment decay"},
      {"train.beta2", "0.999", "Adam second-moment decay"},
      {"train.adam_epsilon", "1e-8", "Adam epsilon"},
      {"train.margin", "0.8", "triplet margin"},
      {"train.seed", "42", "initialisation, batching and split seed"},
      {"train.bn_momentum", "0.99", "batch-norm running-statistics momentum"},
      {"train.validation_fraction", "0.2", "fraction of fingers held out for validation"},
      {"embed.batch", "64", "patches per inference batch"},
      {"match.ratio", "0.8", "ratio-test threshold for descriptor matching"},
  };
  return k;
}

PipelineConfig::PipelineConfig() {
  for (const auto& k : keys()) values_[k.key] = k.default_value;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

PipelineConfig PipelineConfig::parse(const std::string& text, const std::string& what) {
  PipelineConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kInvalidArgument, what + " line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) { return parse(read_text_file(path), path.string()); }

void PipelineConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::kInvalidArgument, "unknown config key '" + key + "'");
  it->second = value;
}

void PipelineConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw Error(ErrorKind::kInvalidArgument, "expected key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& PipelineConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::kInvalidArgument, "unknown config key '" + key + "'");
  return it->second;
}

double PipelineConfig::number(const std::string& key) const {
  const std::string& v = get(key);
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw Error(ErrorKind::kInvalidArgument, "config " + key + ": expected a number, got '" + v + "'");
  }
  return out;
}

int PipelineConfig::integer(const std::string& key) const {
  const std::string& v = get(key);
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || out < INT32_MIN || out > INT32_MAX) {
    throw Error(ErrorKind::kInvalidArgument, "config " + key + ": expected an integer, got '" + v + "'");
  }
  return static_cast<int>(out);
}

bool PipelineConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::kInvalidArgument, "config " + key + ": expected true or false, got '" + v + "'");
}

fs::path PipelineConfig::path(const std::string& key) const { return fs::path(get(key)); }

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kInvalidArgument, "config " + m); };
  parse_protocol(get("dataset.protocol"));
  if (get("detector") != "dpf" && get("detector") != "map") fail("detector: expected dpf or map");
  if (get("dpf.threshold") != "otsu" && get("dpf.threshold") != "fixed") fail("dpf.threshold: expected otsu or fixed");
  for (const char* k : {"labelgen.ratio", "match.ratio"}) {
    const double r = number(k);
    if (!(r > 0.0 && r <= 1.0)) fail(std::string(k) + ": must lie in (0, 1]");
  }
  if (!(number("train.margin") > 0.0)) fail("train.margin: must be positive");
  if (!(number("labelgen.epsilon") > 0.0)) fail("labelgen.epsilon: must be positive");
  if (integer("train.batch") % integer("train.patches_per_label") != 0) {
    fail("train.batch: must be a multiple of train.patches_per_label");
  }
  if (integer("train.epochs") < 1) fail("train.epochs: must be at least 1");
  if (integer("train.patches_per_label") < 2) fail("train.patches_per_label: must be at least 2");
  if (integer("train.batch") / integer("train.patches_per_label") < 2) {
    fail("train.batch: must hold at least two labels");
  }
  if (integer("train.max_steps_per_epoch") < 0) fail("train.max_steps_per_epoch: must be non-negative");
  if (integer("embed.batch") < 1) fail("embed.batch: must be positive");
  const int window = integer("detector.map_window");
  if (window < 3 || window % 2 == 0) fail("detector.map_window: must be odd and at least 3");
  flag("augment.enabled");
  for (const char* k : {"train.lr", "train.beta1", "train.beta2", "train.adam_epsilon", "train.bn_momentum",
                        "train.validation_fraction", "ransac.confidence", "ransac.tolerance", "dpf.fixed_threshold",
                        "dpf.min_radius", "dpf.max_radius", "dpf.window_scale", "augment.max_rotation",
                        "detector.map_min_value"}) {
    number(k);
  }
  for (const char* k : {"train.epochs", "train.max_steps_per_epoch", "train.seed", "augment.rotations",
                        "augment.translations", "augment.max_shift", "augment.seed", "ransac.max_iters",
                        "ransac.seed", "dpf.max_scan"}) {
    integer(k);
  }
}

std::string PipelineConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

namespace {

using Clock = std::chrono::steady_clock;

struct Workspace {
  fs::path root;

  fs::path manifests() const { return root / "manifests"; }
  fs::path pores() const { return root / "pores"; }
  fs::path labels() const { return root / "labels"; }
  fs::path corpus() const { return root / "corpus"; }
  fs::path model() const { return root / "model"; }
  fs::path embeddings() const { return root / "embeddings"; }
  fs::path scores() const { return root / "scores"; }
  fs::path results() const { return root / "results"; }
  fs::path reports() const { return root / "reports"; }
  fs::path weights() const { return model() / "porenet.pnet"; }
};

void require(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) {
    throw Error(ErrorKind::kPrerequisite, "missing " + p.string() + "; run `" + stage + "` first");
  }
}

/// Stage output directory populated under "<dir>.partial" and swapped in on commit.
class StagingDir {
 public:
  explicit StagingDir(fs::path final_dir) : final_(std::move(final_dir)), tmp_(final_.string() + ".partial") {
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  ~StagingDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  StagingDir(const StagingDir&) = delete;
  StagingDir& operator=(const StagingDir&) = delete;

  const fs::path& path() const { return tmp_; }
  void commit() {
    fs::remove_all(final_);
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path tmp_;
  bool committed_ = false;
};

struct Report {
  json j;
  Clock::time_point start = Clock::now();

  explicit Report(const std::string& stage, const PipelineConfig& config) {
    j["stage"] = stage;
    j["config"] = config.values();
    j["inputs"] = json::array();
    j["outputs"] = json::array();
    j["counts"] = json::object();
  }
  void input(const fs::path& p) { j["inputs"].push_back(p.string()); }
  void output(const fs::path& p) { j["outputs"].push_back(p.string()); }
  template <typename V>
  void count(const std::string& k, const V& v) {
    j["counts"][k] = v;
  }
  StageResult finish(const Workspace& ws, std::string summary) {
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    j["seconds"] = seconds;
    j["summary"] = summary;
    fs::create_directories(ws.reports());
    const fs::path path = ws.reports() / (j["stage"].get<std::string>() + ".json");
    write_text_atomic(path, j.dump(2) + "\n");
    return {j["stage"].get<std::string>(), seconds, path, std::move(summary)};
  }
};

const char* const kSets[] = {"train", "eval"};

DatasetManifest workspace_manifest(const Workspace& ws, const std::string& set, const PipelineConfig& config) {
  const fs::path p = ws.manifests() / (set + ".txt");
  require(p, "manifest");
  return parse_manifest(read_text_file(p), parse_protocol(config.get("dataset.protocol")));
}

// ---- manifest ----

StageResult stage_manifest(const PipelineConfig& config, const Workspace& ws, const LogFn& log) {
  Report report("manifest", config);
  const fs::path eval_path = config.path("dataset.manifest");
  if (eval_path.empty()) throw Error(ErrorKind::kInvalidArgument, "config dataset.manifest is not set");
  const fs::path train_path = config.get("train.manifest").empty() ? eval_path : config.path("train.manifest");
  const Protocol protocol = parse_protocol(config.get("dataset.protocol"));

  StagingDir out(ws.manifests());
  for (const char* set : kSets) {
    const fs::path src = std::string(set) == "train" ? train_path : eval_path;
    if (!fs::exists(src)) throw Error(ErrorKind::kIo, "manifest not found: " + src.string());
    report.input(src);
    DatasetManifest m = load_manifest(src, protocol);
    for (auto& e : m.entries) {
      if (!fs::exists(e.path)) throw Error(ErrorKind::kManifest, src.string() + ": image not found: " + e.path);
      e.path = fs::absolute(e.path).lexically_normal().string();
    }
    if (std::string(set) == "eval") {
      const ProtocolPairs pairs = protocol_pairs(m);
      report.count("genuine_pairs", pairs.genuine.size());
      report.count("impostor_pairs", pairs.impostor.size());
    }
    report.count(std::string(set) + "_images", m.entries.size());
    report.count(std::string(set) + "_fingers", m.finger_ids().size());
    write_text_atomic(out.path() / (std::string(set) + ".txt"), format_manifest(m));
    report.output(ws.manifests() / (std::string(set) + ".txt"));
    if (log) log("manifest: " + std::string(set) + " has " + std::to_string(m.entries.size()) + " images");
  }
  out.commit();
  return report.finish(ws, "manifests written");
}

// ---- detect ----

std::unique_ptr<PoreDetector> make_detector(const PipelineConfig& config) {
  if (config.get("detector") == "map") {
    const fs::path dir = config.path("detector.map_dir");
    if (dir.empty() || !fs::is_directory(dir)) {
      throw Error(ErrorKind::kInvalidArgument, "config detector.map_dir is not a directory: " + dir.string());
    }
    return std::make_unique<MapDetector>(dir, config.integer("detector.map_window"),
                                         config.number("detector.map_min_value"));
  }
  DpfParams p;
  p.threshold_method = config.get("dpf.threshold") == "fixed" ? ThresholdMethod::kFixed : ThresholdMethod::kOtsu;
  p.fixed_threshold = config.number("dpf.fixed_threshold");
  p.min_pore_radius = config.number("dpf.min_radius");
  p.max_pore_radius = config.number("dpf.max_radius");
  p.local_window_scale = config.number("dpf.window_scale");
  p.max_scan = config.integer("dpf.max_scan");
  return std::make_unique<DpfDetector>(p);
}

StageResult stage_detect(const PipelineConfig& config, const Workspace& ws, const LogFn& log) {
  Report report("detect", config);
  const auto detector = make_detector(config);
  StagingDir out(ws.pores());
  std::size_t total = 0;
  for (const char* set : kSets) {
    const DatasetManifest m = workspace_manifest(ws, set, config);
    report.input(ws.manifests() / (std::string(set) + ".txt"));
    fs::create_directories(out.path() / set);
    std::vector<std::size_t> counts(m.entries.size());
    parallel_for(m.entries.size(), [&](std::size_t i) {
      const ManifestEntry& e = m.entries[i];
      const GrayImage img = load_image(e.path);
      const PoreSet pores = detector->detect(img, e.image_id());
      save_pores(pores, out.path() / set / (e.image_id() + ".txt"));
      counts[i] = pores.pores.size();
    });
    std::size_t n = 0;
    for (std::size_t c : counts) n += c;
    total += n;
    report.count(std::string(set) + "_pores", n);
    report.count(std::string(set) + "_mean_pores_per_image",
                 m.entries.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(m.entries.size()));
    if (log) log("detect: " + std::string(set) + " " + std::to_string(n) + " pores in " +
                 std::to_string(m.entries.size()) + " images");
  }
  out.commit();
  report.output(ws.pores());
  return report.finish(ws, std::to_string(total) + " pores detected");
}

// ---- labelgen ----

std::vector<FingerSessionSet> load_fingers(const DatasetManifest& m, const fs::path& pore_dir, bool with_descriptors,
                                           std::vector<std::vector<std::string>>* image_ids = nullptr) {
  const std::vector<int> ids = m.finger_ids();
  std::vector<FingerSessionSet> fingers(ids.size());
  if (image_ids) image_ids->assign(ids.size(), {});
  parallel_for(ids.size(), [&](std::size_t f) {
    fingers[f].finger_id = ids[f];
    for (const ManifestEntry* e : m.finger(ids[f])) {
      GrayImage img = load_image(e->path);
      PoreSet pores = load_pores(pore_dir / (e->image_id() + ".txt"), img.width(), img.height());
      pores.image_id = e->image_id();
      if (with_descriptors) {
        fingers[f].impressions.push_back(make_impression(std::move(img), std::move(pores)));
      } else {
        fingers[f].impressions.push_back({std::move(img), std::move(pores), {}});
      }
      if (image_ids) (*image_ids)[f].push_back(e->image_id());
    }
  });
  return fingers;
}

std::string format_labels(const FingerLabels& l, const std::vector<std::string>& image_ids) {
  std::ostringstream os;
  os.precision(17);
  os << "finger " << l.finger_id << '\n' << "reference " << l.reference << '\n';
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    const AffineTransform& t = l.to_reference[i];
    os << "image " << i << ' ' << image_ids[i] << ' ' << t.a << ' ' << t.b << ' ' << t.tx << ' ' << t.c << ' ' << t.d
       << ' ' << t.ty << '\n';
  }
  for (std::size_t k = 0; k < l.common.size(); ++k) {
    os << "pore " << l.common[k].pore_id;
    for (const Point& p : l.coordinates[k]) os << ' ' << p.x << ' ' << p.y;
    os << '\n';
  }
  return os.str();
}

FingerLabels parse_labels(const std::string& text, const std::string& what, std::vector<std::string>& image_ids) {
  FingerLabels l;
  std::istringstream in(text);
  std::string line;
  auto bad = [&]() { return Error(ErrorKind::kFormat, what + ": malformed labels file"); };
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "finger") {
      if (!(ls >> l.finger_id)) throw bad();
    } else if (tag == "reference") {
      if (!(ls >> l.reference)) throw bad();
    } else if (tag == "image") {
      std::size_t i = 0;
      std::string id;
      AffineTransform t;
      if (!(ls >> i >> id >> t.a >> t.b >> t.tx >> t.c >> t.d >> t.ty) || i != image_ids.size()) throw bad();
      image_ids.push_back(id);
      l.to_reference.push_back(t);
    } else if (tag == "pore") {
      CommonPoreRecord rec;
      if (!(ls >> rec.pore_id)) throw bad();
      std::vector<Point> coords(image_ids.size());
      for (Point& p : coords) {
        if (!(ls >> p.x >> p.y)) throw bad();
      }
      rec.reference = coords.at(static_cast<std::size_t>(l.reference));
      l.common.push_back(rec);
      l.coordinates.push_back(std::move(coords));
    } else {
      throw bad();
    }
  }
  return l;
}

StageResult stage_labelgen(const PipelineConfig& config, const Workspace& ws, const LogFn& log) {
  Report report("labelgen", config);
  const DatasetManifest m = workspace_manifest(ws, "train", config);
  require(ws.pores() / "train", "detect");
  report.input(ws.pores() / "train");
  std::vector<std::vector<std::string>> image_ids;
  const auto fingers = load_fingers(m, ws.pores() / "train", true, &image_ids);

  LabelGenParams params;
  params.ratio = config.number("labelgen.ratio");
  params.epsilon = config.number("labelgen.epsilon");
  params.ransac.inlier_tol = config.number("ransac.tolerance");
  params.ransac.confidence = config.number("ransac.confidence");
  params.ransac.max_iters = config.integer("ransac.max_iters");
  params.ransac.seed = static_cast<std::uint64_t>(config.integer("ransac.seed"));

  std::vector<std::optional<FingerLabels>> labels(fingers.size());
  std::vector<std::string> failures(fingers.size());
  parallel_for(fingers.size(), [&](std::size_t f) {
    try {
      labels[f] = label_finger(fingers[f], params);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kAlignment) throw;
      failures[f] = e.what();
    }
  });

  StagingDir out(ws.labels());
  json per_finger = json::array();
  std::size_t total = 0;
  json warnings = json::array();
  for (std::size_t f = 0; f < fingers.size(); ++f) {
    if (!labels[f]) {
      warnings.push_back("finger " + std::to_string(fingers[f].finger_id) + " skipped: " + failures[f]);
      continue;
    }
    for (const auto& w : labels[f]->scores.warnings) warnings.push_back(w);
    write_text_atomic(out.path() / (std::to_string(fingers[f].finger_id) + ".txt"),
                      format_labels(*labels[f], image_ids[f]));
    per_finger.push_back({{"finger", fingers[f].finger_id},
                          {"reference", labels[f]->reference},
                          {"common_pores", labels[f]->common.size()}});
    total += labels[f]->common.size();
    if (log) log("labelgen: finger " + std::to_string(fingers[f].finger_id) + " reference " +
                 std::to_string(labels[f]->reference) + ", " + std::to_string(labels[f]->common.size()) +
                 " common pores");
  }
  out.commit();
  report.output(ws.labels());
  report.count("fingers", per_finger);
  report.count("common_pores", total);
  report.j["warnings"] = warnings;
  return report.finish(ws, std::to_string(total) + " labels over " + std::to_string(per_finger.size()) + " fingers");
}

// ---- corpus ----

AugmentSpec augment_spec(const PipelineConfig& config) {
  AugmentSpec a;
  a.enabled = config.flag("augment.enabled");
  a.rotations = config.integer("augment.rotations");
  a.max_rotation_deg = config.number("augment.max_rotation");
  a.translations = config.integer("augment.translations");
  a.max_shift = config.integer("augment.max_shift");
  a.seed = static_cast<std::uint64_t>(config.integer("augment.seed"));
  return a;
}

StageResult stage_corpus(const PipelineConfig& config, const Workspace& ws, const LogFn& log) {
  Report report("corpus", config);
  const DatasetManifest m = workspace_manifest(ws, "train", config);
  require(ws.labels(), "labelgen");
  report.input(ws.labels());
  std::vector<std::vector<std::string>> image_ids;
  auto all_fingers = load_fingers(m, ws.pores() / "train", false, &image_ids);

  std::vector<FingerSessionSet> fingers;
  std::vector<FingerLabels> labels;
  for (std::size_t f = 0; f < all_fingers.size(); ++f) {
    const fs::path p = ws.labels() / (std::to_string(all_fingers[f].finger_id) + ".txt");
    if (!fs::exists(p)) continue;
    std::vector<std::string> ids;
    FingerLabels l = parse_labels(read_text_file(p), p.string(), ids);
    if (ids != image_ids[f]) {
      throw Error(ErrorKind::kState, p.string() + ": images differ from the training manifest; rerun `labelgen`");
    }
    fingers.push_back(std::move(all_fingers[f]));
    labels.push_back(std::move(l));
  }
  const TrainingCorpus corpus = build_corpus(fingers, labels, augment_spec(config));

  StagingDir out(ws.corpus());
  std::ostringstream manifest;
  std::map<int, std::vector<unsigned char>> tiles;
  std::map<int, int> tile_count;
  for (const PorePatch& p : corpus.patches) {
    auto& buf = tiles[p.finger_id];
    const auto bytes = to_bytes(p.pixels);
    buf.insert(buf.end(), bytes.begin(), bytes.end());
    const int index = tile_count[p.finger_id]++;
    manifest << p.finger_id << ".raw@" << index << ' ' << p.finger_id << ' ' << p.impression_id << ' ' << p.pore_id
             << ' ' << p.label << '\n';
  }
  for (const auto& [finger, buf] : tiles) write_file_atomic(out.path() / (std::to_string(finger) + ".raw"), buf);
  write_text_atomic(out.path() / "manifest.txt", manifest.str());
  out.commit();
  report.output(ws.corpus() / "manifest.txt");
  report.count("patches", corpus.patches.size());
  report.count("labels", corpus.total_labels);
  report.j["warnings"] = corpus.warnings;
  if (log) log("corpus: " + std::to_string(corpus.patches.size()) + " patches, " +
               std::to_string(corpus.total_labels) + " labels");
  return report.finish(ws, std::to_string(corpus.patches.size()) + " patches");
}

}  // namespace

std::vector<PorePatch> load_corpus(const fs::path& manifest_path) {
  const fs::path dir = manifest_path.parent_path();
  const std::string text = read_text_file(manifest_path);
  std::map<std::string, std::string> files;
  std::vector<PorePatch> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string ref;
    PorePatch p;
    if (!(ls >> ref)) continue;
    if (!(ls >> p.finger_id >> p.impression_id >> p.pore_id >> p.label)) {
      throw Error(ErrorKind::kFormat, "corpus manifest line " + std::to_string(lineno) + ": malformed");
    }
    const auto at = ref.find('@');
    if (at == std::string::npos) {
      throw Error(ErrorKind::kFormat, "corpus manifest line " + std::to_string(lineno) + ": expected file@index");
    }
    const std::string file = ref.substr(0, at);
    const std::size_t index = std::stoul(ref.substr(at + 1));
    auto it = files.find(file);
    if (it == files.end()) it = files.emplace(file, read_binary_file(dir / file)).first;
    const std::size_t offset = index * kPatchPixels;
    if (offset + kPatchPixels > it->second.size()) {
      throw Error(ErrorKind::kFormat, "corpus manifest line " + std::to_string(lineno) + ": tile out of range");
    }
    for (int k = 0; k < kPatchPixels; ++k) {
      p.pixels[k] = static_cast<float>(static_cast<unsigned char>(it->second[offset + k])) / 255.0f;
    }
    out.push_back(p);
  }
  return out;
}

namespace {

// ---- train ----

StageResult stage_train(const PipelineConfig& config, const Workspace& ws, const LogFn& log) {
  Report report("train", config);
  require(ws.corpus() / "manifest.txt", "corpus");
  report.input(ws.corpus() / "manifest.txt");
  const std::vector<PorePatch> corpus = load_corpus(ws.corpus() / "manifest.txt");

  TrainConfig tc;
  tc.epochs = config.integer("train.epochs");
  tc.patches_per_label = config.integer("train.patches_per_label");
  tc.labels_per_batch = config.integer("train.batch") / tc.patches_per_label;
  tc.max_steps_per_epoch = config.integer("train.max_steps_per_epoch");
  tc.learning_rate = config.number("train.lr");
  tc.beta1 = config.number("train.beta1");
  tc.beta2 = config.number("train.beta2");
  tc.adam_epsilon = config.number("train.adam_epsilon");
  tc.margin = config.number("train.margin");
  tc.seed = static_cast<std::uint64_t>(config.integer("train.seed"));
  tc.bn_momentum = config.number("train.bn_momentum");
  tc.validation_fraction = config.number("train.validation_fraction");

  StagingDir out(ws.model());
  tc.checkpoint = out.path() / "checkpoint.pnet";
  std::ostringstream history;
  history << "epoch,steps,train_loss,validation_loss,seconds\n";
  TrainResult result = train(build_porenet(tc.seed), corpus, tc, [&](const EpochStats& s) {
    std::ostringstream line;
    line << s.epoch << ',' << s.steps << ',' << s.train_loss << ','
         << (s.validation_loss ? std::to_string(*s.validation_loss) : std::string("")) << ',' << s.seconds;
    history << line.str() << '\n';
    if (log) log("train: epoch " + line.str());
  });
  save_weights(result.model, out.path() / "porenet.pnet");
  write_text_atomic(out.path() / "history.csv", history.str());
  out.commit();
  report.output(ws.weights());
  report.count("patches", corpus.size());
  report.count("best_epoch", result.best_epoch);
  report.count("validation_fingers", result.validation_fingers);
  report.j["audit"] = result.model.audit().report();
  return report.finish(ws, "best epoch " + std::to_string(result.best_epoch));
}

// ---- embed ----

StageResult stage_embed(const PipelineConfig& config, const Workspace& ws, const LogFn& log) {
  Report report("embed", config);
  const DatasetManifest m = workspace_manifest(ws, "eval", config);
  require(ws.pores() / "eval", "detect");
  require(ws.weights(), "train");
  report.input(ws.weights());
  PoreNetModel model = load_weights(ws.weights());
  const int batch = config.integer("embed.batch");

  StagingDir out(ws.embeddings());
  std::size_t total = 0;
  for (const ManifestEntry& e : m.entries) {
    const GrayImage img = load_image(e.path);
    const PoreSet pores = load_pores(ws.pores() / "eval" / (e.image_id() + ".txt"), img.width(), img.height());
    std::vector<PorePatch> patches;
    for (const Point& p : pores.pores) {
      if (patch_fits(img.width(), img.height(), p)) patches.push_back(extract_patch(img, p));
    }
    DescriptorSet set(e.image_id(), kEmbeddingDim, {});
    for (const auto& row : embed(model, patches, batch)) set.push_back(row);
    save_descriptors(set, out.path() / (e.image_id() + ".pdsc"));
    total += patches.size();
  }
  out.commit();
  report.output(ws.embeddings());
  report.count("images", m.entries.size());
  report.count("embeddings", total);
  if (log) log("embed: " + std::to_string(total) + " embeddings over " + std::to_string(m.entries.size()) + " images");
  return report.finish(ws, std::to_string(total) + " embeddings");
}

// ---- match ----

StageResult stage_match(const PipelineConfig& config, const Workspace& ws, const LogFn& log) {
  Report report("match", config);
  const DatasetManifest m = workspace_manifest(ws, "eval", config);
  require(ws.embeddings(), "embed");
  report.input(ws.embeddings());
  const double ratio = config.number("match.ratio");

  std::vector<DescriptorSet> sets(m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const fs::path p = ws.embeddings() / (m.entries[i].image_id() + ".pdsc");
    require(p, "embed");
    sets[i] = load_descriptors(p);
  }
  const ProtocolPairs pairs = protocol_pairs(m);

  auto score_all = [&](const PairList& list) {
    std::vector<ScoredPair> out(list.size());
    parallel_for(list.size(), [&](std::size_t k) {
      const auto [a, b] = list[k];
      out[k] = {m.entries[a].image_id(), m.entries[b].image_id(),
                static_cast<double>(match_score(sets[a], sets[b], ratio))};
    });
    return out;
  };
  const auto t0 = Clock::now();
  const auto genuine = score_all(pairs.genuine);
  const auto impostor = score_all(pairs.impostor);
  const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();

  StagingDir out(ws.scores());
  write_text_atomic(out.path() / "genuine.csv", format_scores_csv(genuine));
  write_text_atomic(out.path() / "impostor.csv", format_scores_csv(impostor));
  out.commit();
  report.output(ws.scores() / "genuine.csv");
  report.output(ws.scores() / "impostor.csv");
  report.count("genuine", genuine.size());
  report.count("impostor", impostor.size());
  const std::size_t comparisons = genuine.size() + impostor.size();
  report.count("ms_per_comparison", comparisons ? 1000.0 * seconds / static_cast<double>(comparisons) : 0.0);
  if (log) log("match: " + std::to_string(comparisons) + " comparisons");
  return report.finish(ws, std::to_string(genuine.size()) + " genuine, " + std::to_string(impostor.size()) +
                               " impostor scores");
}

// ---- evaluate ----

StageResult stage_evaluate(const PipelineConfig& config, const Workspace& ws, const LogFn& log) {
  Report report("evaluate", config);
  const fs::path gen_path = ws.scores() / "genuine.csv";
  const fs::path imp_path = ws.scores() / "impostor.csv";
  require(gen_path, "match");
  require(imp_path, "match");
  report.input(gen_path);
  report.input(imp_path);
  ScoreSet scores;
  for (const auto& p : parse_scores_csv(read_text_file(gen_path), gen_path.string())) scores.genuine.push_back(p.score);
  for (const auto& p : parse_scores_csv(read_text_file(imp_path), imp_path.string())) scores.impostor.push_back(p.score);

  const DetCurve curve = det_curve(scores);
  const Metrics metrics = compute_metrics(scores);
  const std::string summary = format_metrics(metrics);

  StagingDir out(ws.results());
  write_text_atomic(out.path() / "det.csv", format_det_csv(curve));
  write_text_atomic(out.path() / "histogram.csv", format_histogram_csv(scores));
  write_text_atomic(out.path() / "metrics.txt", summary + "\n");
  out.commit();
  report.output(ws.results() / "metrics.txt");
  report.count("eer", metrics.eer);
  report.count("fmr1000", metrics.fmr1000.fnmr);
  report.count("fmr1000_sentinel_only", metrics.fmr1000.sentinel_only);
  report.count("fmr10000", metrics.fmr10000.fnmr);
  report.count("fmr10000_sentinel_only", metrics.fmr10000.sentinel_only);
  report.count("genuine_n", metrics.genuine_n);
  report.count("impostor_n", metrics.impostor_n);
  report.count("dominance_probability", dominance_probability(scores));
  report.count("stochastic_dominance", stochastically_dominates(scores));
  if (log) log("evaluate: " + summary);
  return report.finish(ws, summary);
}

using StageFn = StageResult (*)(const PipelineConfig&, const Workspace&, const LogFn&);

StageFn stage_function(const std::string& name) {
  static const std::map<std::string, StageFn> table{
      {"manifest", stage_manifest}, {"detect", stage_detect}, {"labelgen", stage_labelgen},
      {"corpus", stage_corpus},     {"train", stage_train},   {"embed", stage_embed},
      {"match", stage_match},       {"evaluate", stage_evaluate}};
  auto it = table.find(name);
  if (it == table.end()) throw Error(ErrorKind::kInvalidArgument, "unknown stage '" + name + "'");
  return it->second;
}

}  // namespace

std::vector<StageResult> run_stage(const std::string& stage, const PipelineConfig& config, const LogFn& log) {
  config.validate();
  const Workspace ws{config.path("work_dir")};
  fs::create_directories(ws.root);
  std::vector<StageResult> results;
  if (stage == "all") {
    for (const auto& s : kStages) results.push_back(stage_function(s)(config, ws, log));
  } else {
    results.push_back(stage_function(stage)(config, ws, log));
  }
  return results;
}

}  // namespace porenet
