#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "porenet/image.hpp"
#include "porenet/nn/adam.hpp"
#include "porenet/porenet_model.hpp"

namespace porenet {

struct TrainConfig {
  int epochs = 100;
  /// Each batch holds labels_per_batch labels with patches_per_label patches each (32 x 8 = 256).
  int labels_per_batch = 32;
  int patches_per_label = 8;
  /// Caps the steps per epoch; 0 means one pass over the training labels.
  int max_steps_per_epoch = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double margin = 0.8;
  double bn_momentum = 0.99;
  double validation_fraction = 0.2;
  int validation_batches = 4;
  std::uint64_t seed = 42;
  /// When set, the latest weights are written here after every epoch.
  std::optional<std::filesystem::path> checkpoint;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  int steps = 0;
  double train_loss = 0.0;               // mean over the epoch's steps
  std::optional<double> validation_loss;  // empty without validation fingers
  double seconds = 0.0;
};

struct TrainResult {
  PoreNetModel model;  // weights of the selected epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
  std::vector<int> validation_fingers;
};

/// One label-aware batch: indices into the patch list plus their labels.
struct TrainBatch {
  std::vector<std::size_t> indices;
  std::vector<int> labels;
};

/// Groups patch indices by label; labels with fewer than two patches are dropped.
std::vector<std::vector<std::size_t>> group_by_label(std::span<const PorePatch> patches,
                                                     std::span<const std::size_t> subset);

/// Shuffles labels into batches of labels_per_batch labels; patches are drawn without replacement
/// when a label has enough of them. The last incomplete group is dropped unless it is the only one.
std::vector<TrainBatch> epoch_batches(const std::vector<std::vector<std::size_t>>& groups,
                                      std::span<const PorePatch> patches, int labels_per_batch,
                                      int patches_per_label, std::mt19937_64& rng);

/// Forward, batch-hard triplet loss, backward and one Adam step. Returns the loss.
/// Throws kNumeric on a non-finite loss.
double train_step(PoreNetModel& model, nn::Adam<float>& optimizer, std::span<const PorePatch> patches,
                  const TrainBatch& batch, double margin);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains on the corpus with a finger-level validation split; keeps the epoch with the lowest
/// validation loss (training loss when no validation fingers exist).
TrainResult train(PoreNetModel model, std::span<const PorePatch> corpus, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace porenet
