#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "porenet/image.hpp"

namespace porenet {

/// Flat "key = value" configuration. Every key has a default; unknown keys are rejected.
class PipelineConfig {
 public:
  PipelineConfig();

  /// Parses "key = value" lines; '#' starts a comment.
  static PipelineConfig parse(const std::string& text, const std::string& what = "config");
  static PipelineConfig load(const std::filesystem::path& path);

  /// Overrides one key; throws kInvalidArgument for unknown keys.
  void set(const std::string& key, const std::string& value);
  /// Accepts "key=value".
  void set_assignment(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  int integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;

  /// Numeric ranges and enumerations; paths are checked by the stages that read them.
  void validate() const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  /// Effective configuration, one "key = value" per line.
  std::string to_text() const;

  struct KeyInfo {
    std::string key;
    std::string default_value;
    std::string help;
  };
  static const std::vector<KeyInfo>& keys();

 private:
  std::map<std::string, std::string> values_;
};

inline const std::vector<std::string> kStages{"manifest", "detect", "labelgen", "corpus", "train",
                                              "embed",    "match",  "evaluate"};

struct StageResult {
  std::string stage;
  double seconds = 0.0;
  /// Run report written to <work_dir>/reports/<stage>.json.
  std::filesystem::path report;
  std::string summary;
};

/// Reads a corpus manifest ("file@index finger_id impression_id pore_id label" per line) and the
/// raw 41x41 8-bit tiles it points to.
std::vector<PorePatch> load_corpus(const std::filesystem::path& manifest_path);

using LogFn = std::function<void(const std::string&)>;

/// Runs one stage, or every stage in order for "all". Missing inputs raise kPrerequisite errors that
/// name the stage to run first.
std::vector<StageResult> run_stage(const std::string& stage, const PipelineConfig& config, const LogFn& log = {});

}  // namespace porenet
