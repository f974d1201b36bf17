// porenet: command-line driver for the pore-based fingerprint verification pipeline.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "porenet/error.hpp"
#include "porenet/pipeline.hpp"
#include "porenet/porenet_model.hpp"
#include "porenet/synthetic.hpp"
#include "porenet/trainer.hpp"

namespace {

using porenet::Error;
using porenet::ErrorKind;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string work_dir;
  std::string manifest;
  std::string train_manifest;
  std::string protocol;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "key = value config file");
  cmd->add_option("-s,--set", o.overrides, "override a config key (key=value); repeatable");
  cmd->add_option("-w,--work-dir", o.work_dir, "artifact directory (work_dir)");
  cmd->add_option("--manifest", o.manifest, "evaluation manifest (dataset.manifest)");
  cmd->add_option("--train-manifest", o.train_manifest, "training manifest (train.manifest)");
  cmd->add_option("--protocol", o.protocol, "polyu or iiti (dataset.protocol)");
  cmd->add_flag("-q,--quiet", o.quiet, "suppress progress lines");
}

porenet::PipelineConfig resolve_config(const CommonOptions& o) {
  porenet::PipelineConfig config = o.config_path.empty() ? porenet::PipelineConfig{}
                                                         : porenet::PipelineConfig::load(o.config_path);
  // Dedicated flags first, so an explicit --set still has the last word.
  if (!o.work_dir.empty()) config.set("work_dir", o.work_dir);
  if (!o.manifest.empty()) config.set("dataset.manifest", o.manifest);
  if (!o.train_manifest.empty()) config.set("train.manifest", o.train_manifest);
  if (!o.protocol.empty()) config.set("dataset.protocol", o.protocol);
  for (const auto& kv : o.overrides) config.set_assignment(kv);
  return config;
}

porenet::LogFn make_log(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

int run_pipeline(const std::string& stage, const porenet::PipelineConfig& config, bool quiet) {
  const auto results = porenet::run_stage(stage, config, make_log(quiet));
  for (const auto& r : results) {
    std::printf("%s: %s (%.1f s)\n", r.stage.c_str(), r.summary.c_str(), r.seconds);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pore-based high-resolution fingerprint verification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  CommonOptions common;
  std::string detector, pore_map;

  std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
  for (const auto& stage : porenet::kStages) {
    if (stage == "train") continue;
    CLI::App* cmd = app.add_subcommand(stage, "run the " + stage + " stage");
    add_common(cmd, common);
    if (stage == "detect") {
      cmd->add_option("--detector", detector, "dpf or map")->check(CLI::IsMember({"dpf", "map"}));
      cmd->add_option("--pore-map", pore_map, "directory of per-image pore maps (detector.map_dir)");
    }
    stage_cmds.emplace_back(stage, cmd);
  }
  CLI::App* all_cmd = app.add_subcommand("all", "run every stage in order");
  add_common(all_cmd, common);
  all_cmd->add_option("--detector", detector, "dpf or map")->check(CLI::IsMember({"dpf", "map"}));
  all_cmd->add_option("--pore-map", pore_map, "directory of per-image pore maps (detector.map_dir)");

  // train doubles as a pipeline stage (no --corpus) and a standalone trainer (--corpus).
  CLI::App* train_cmd = app.add_subcommand("train", "run the train stage, or train on a corpus manifest");
  add_common(train_cmd, common);
  std::string corpus, out_path;
  int epochs = -1, batch = -1, patches_per_label = -1, seed = -1, max_steps = -1;
  double lr = -1.0, margin = -1.0;
  train_cmd->add_option("--corpus", corpus, "corpus manifest for standalone training");
  train_cmd->add_option("--epochs", epochs, "training epochs");
  train_cmd->add_option("--batch", batch, "patches per batch");
  train_cmd->add_option("--patches-per-label", patches_per_label, "patches per label in a batch");
  train_cmd->add_option("--max-steps", max_steps, "cap on steps per epoch");
  train_cmd->add_option("--lr", lr, "Adam learning rate");
  train_cmd->add_option("--margin", margin, "triplet margin");
  train_cmd->add_option("--seed", seed, "seed");
  train_cmd->add_option("--out", out_path, "weights output for standalone training");

  CLI::App* synth_cmd = app.add_subcommand("synth", "write a synthetic fingerprint dataset");
  porenet::SyntheticSpec spec;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", spec.seed, "seed")->capture_default_str();
  synth_cmd->add_option("--fingers", spec.fingers, "fingers")->capture_default_str();
  synth_cmd->add_option("--impressions", spec.impressions, "impressions per finger")->capture_default_str();
  synth_cmd->add_option("--pores", spec.pores_per_finger, "planted pores per finger")->capture_default_str();
  synth_cmd->add_option("--first-finger", spec.first_finger_id, "first finger id")->capture_default_str();
  synth_cmd->add_option("--width", spec.width, "image width")->capture_default_str();
  synth_cmd->add_option("--height", spec.height, "image height")->capture_default_str();
  synth_cmd->add_option("--max-rotation", spec.max_rotation_deg, "per-impression rotation bound, degrees")
      ->capture_default_str();
  synth_cmd->add_option("--max-shift", spec.max_shift, "per-impression shift bound, pixels")->capture_default_str();
  synth_cmd->add_option("--noise", spec.noise_sigma, "pixel noise sigma")->capture_default_str();

  CLI::App* audit_cmd = app.add_subcommand("audit", "print the network's parameter audit");
  std::uint64_t audit_seed = 42;
  audit_cmd->add_option("--seed", audit_seed, "initialisation seed");

  CLI::App* config_cmd = app.add_subcommand("config", "print the effective configuration");
  add_common(config_cmd, common);
  bool list_keys = false;
  config_cmd->add_flag("--keys", list_keys, "list every key with its default and meaning");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "usage: %s\n", e.what());
    return 2;
  }

  try {
    for (const auto& [stage, cmd] : stage_cmds) {
      if (!cmd->parsed()) continue;
      auto config = resolve_config(common);
      if (!detector.empty()) config.set("detector", detector);
      if (!pore_map.empty()) config.set("detector.map_dir", pore_map);
      return run_pipeline(stage, config, common.quiet);
    }
    if (all_cmd->parsed()) {
      auto config = resolve_config(common);
      if (!detector.empty()) config.set("detector", detector);
      if (!pore_map.empty()) config.set("detector.map_dir", pore_map);
      return run_pipeline("all", config, common.quiet);
    }
    if (train_cmd->parsed()) {
      auto config = resolve_config(common);
      if (epochs >= 0) config.set("train.epochs", std::to_string(epochs));
      if (batch >= 0) config.set("train.batch", std::to_string(batch));
      if (patches_per_label >= 0) config.set("train.patches_per_label", std::to_string(patches_per_label));
      if (max_steps >= 0) config.set("train.max_steps_per_epoch", std::to_string(max_steps));
      if (lr >= 0) config.set("train.lr", CLI::detail::to_string(lr));
      if (margin >= 0) config.set("train.margin", CLI::detail::to_string(margin));
      if (seed >= 0) config.set("train.seed", std::to_string(seed));
      if (corpus.empty()) {
        if (!out_path.empty()) throw Error(ErrorKind::kInvalidArgument, "--out needs --corpus");
        return run_pipeline("train", config, common.quiet);
      }
      if (out_path.empty()) throw Error(ErrorKind::kInvalidArgument, "--corpus needs --out");
      config.validate();
      porenet::TrainConfig tc;
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
      const auto patches = porenet::load_corpus(corpus);
      const auto log = make_log(common.quiet);
      auto result = porenet::train(porenet::build_porenet(tc.seed), patches, tc, [&](const porenet::EpochStats& s) {
        if (!log) return;
        std::ostringstream line;
        line << "train: epoch " << s.epoch << " steps " << s.steps << " loss " << s.train_loss;
        if (s.validation_loss) line << " validation " << *s.validation_loss;
        log(line.str());
      });
      porenet::save_weights(result.model, out_path);
      std::printf("train: best epoch %d of %zu, wrote %s\n", result.best_epoch, result.history.size(),
                  out_path.c_str());
      return 0;
    }
    if (synth_cmd->parsed()) {
      const auto data = porenet::write_synthetic_dataset(spec, synth_out);
      std::printf("synth: %zu images in %s\n", data.manifest.entries.size(), synth_out.c_str());
      return 0;
    }
    if (audit_cmd->parsed()) {
      auto model = porenet::build_porenet(audit_seed);
      std::printf("%s\n", model.audit().report().c_str());
      return 0;
    }
    if (config_cmd->parsed()) {
      if (list_keys) {
        for (const auto& k : porenet::PipelineConfig::keys()) {
          std::printf("%-28s %-10s %s\n", k.key.c_str(), k.default_value.c_str(), k.help.c_str());
        }
        return 0;
      }
      const auto config = resolve_config(common);
      config.validate();
      std::fputs(config.to_text().c_str(), stdout);
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: %s\n", std::string(porenet::error_kind_name(e.kind())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
