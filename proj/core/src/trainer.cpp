#include "porenet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "porenet/error.hpp"
#include "porenet/labelgen.hpp"
#include "porenet/nn/triplet.hpp"

namespace porenet {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kInvalidArgument, "train: " + m); };
  if (epochs < 1) fail("epochs must be at least 1");
  if (labels_per_batch < 2) fail("labels_per_batch must be at least 2");
  if (patches_per_label < 2) fail("patches_per_label must be at least 2");
  if (max_steps_per_epoch < 0) fail("max_steps_per_epoch must be non-negative");
  if (!(learning_rate >= 0.0)) fail("learning rate must be non-negative");
  if (!(margin > 0.0)) fail("margin must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) fail("bn_momentum must lie in [0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) fail("validation_fraction must lie in [0, 1)");
}

std::vector<std::vector<std::size_t>> group_by_label(std::span<const PorePatch> patches,
                                                     std::span<const std::size_t> subset) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i : subset) by_label[patches[i].label].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [label, idx] : by_label) {
    if (idx.size() >= 2) out.push_back(std::move(idx));
  }
  return out;
}

std::vector<TrainBatch> epoch_batches(const std::vector<std::vector<std::size_t>>& groups,
                                      std::span<const PorePatch> patches, int labels_per_batch,
                                      int patches_per_label, std::mt19937_64& rng) {
  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t per = static_cast<std::size_t>(labels_per_batch);
  std::size_t full = order.size() / per;
  const bool single_partial = full == 0 && order.size() >= 2;
  const std::size_t nbatches = single_partial ? 1 : full;

  std::vector<TrainBatch> batches;
  for (std::size_t b = 0; b < nbatches; ++b) {
    TrainBatch batch;
    const std::size_t end = std::min(order.size(), (b + 1) * per);
    for (std::size_t k = b * per; k < end; ++k) {
      std::vector<std::size_t> members = groups[order[k]];
      const std::size_t want = static_cast<std::size_t>(patches_per_label);
      if (members.size() >= want) {
        std::shuffle(members.begin(), members.end(), rng);
        members.resize(want);
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        std::vector<std::size_t> drawn = members;
        while (drawn.size() < want) drawn.push_back(members[pick(rng)]);
        members = std::move(drawn);
      }
      for (std::size_t i : members) {
        batch.indices.push_back(i);
        batch.labels.push_back(patches[i].label);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

nn::Tensor<float> gather(std::span<const PorePatch> patches, const std::vector<std::size_t>& indices) {
  nn::Tensor<float> t({static_cast<int>(indices.size()), kPatchSide, kPatchSide, 1});
  float* out = t.data();
  for (std::size_t i : indices) out = std::copy(patches[i].pixels.begin(), patches[i].pixels.end(), out);
  return t;
}

double batch_loss(PoreNetModel& model, std::span<const PorePatch> patches, const TrainBatch& batch, double margin) {
  const nn::Tensor<float> y = model.forward(gather(patches, batch.indices), nn::Mode::kInfer, nullptr, false);
  return nn::triplet_loss_batch_hard(y, batch.labels, margin).loss;
}

}  // namespace

double train_step(PoreNetModel& model, nn::Adam<float>& optimizer, std::span<const PorePatch> patches,
                  const TrainBatch& batch, double margin) {
  model.zero_grad();
  const nn::Tensor<float> y = model.forward(gather(patches, batch.indices), nn::Mode::kTrain);
  const nn::TripletResult<float> t = nn::triplet_loss_batch_hard(y, batch.labels, margin);
  if (!std::isfinite(t.loss)) {
    throw Error(ErrorKind::kNumeric, "train: non-finite triplet loss at optimizer step " +
                                         std::to_string(optimizer.steps() + 1));
  }
  model.backward(t.grad);
  optimizer.step(model.trainable_parameters());
  model.clear_cache();
  return t.loss;
}

TrainResult train(PoreNetModel model, std::span<const PorePatch> corpus, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  model.set_bn_momentum(config.bn_momentum);

  std::set<int> finger_set;
  for (const auto& p : corpus) finger_set.insert(p.finger_id);
  std::vector<int> fingers(finger_set.begin(), finger_set.end());
  std::vector<int> val_fingers;
  if (config.validation_fraction > 0.0 && fingers.size() >= 2) {
    val_fingers = split_validation_fingers(fingers, config.validation_fraction, config.seed);
  }
  const std::set<int> val_set(val_fingers.begin(), val_fingers.end());
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (val_set.count(corpus[i].finger_id) ? val_idx : train_idx).push_back(i);
  }

  const auto train_groups = group_by_label(corpus, train_idx);
  if (train_groups.size() < 2) {
    throw Error(ErrorKind::kInvalidArgument, "train: need at least two labels with two or more patches each");
  }
  std::mt19937_64 rng(config.seed);

  std::vector<TrainBatch> val_batches;
  const auto val_groups = group_by_label(corpus, val_idx);
  if (val_groups.size() >= 2) {
    std::mt19937_64 val_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int i = 0; i < config.validation_batches; ++i) {
      auto b = epoch_batches(val_groups, corpus, config.labels_per_batch, config.patches_per_label, val_rng);
      if (b.empty()) break;
      val_batches.push_back(std::move(b.front()));
    }
  }

  nn::Adam<float> optimizer({config.learning_rate, config.beta1, config.beta2, config.adam_epsilon});
  TrainResult result{model, {}, 0, val_fingers};
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = epoch_batches(train_groups, corpus, config.labels_per_batch, config.patches_per_label, rng);
    if (config.max_steps_per_epoch > 0 && batches.size() > static_cast<std::size_t>(config.max_steps_per_epoch)) {
      batches.resize(static_cast<std::size_t>(config.max_steps_per_epoch));
    }
    EpochStats stats;
    stats.epoch = epoch;
    for (const auto& b : batches) {
      stats.train_loss += train_step(model, optimizer, corpus, b, config.margin);
      ++stats.steps;
    }
    stats.train_loss /= std::max(1, stats.steps);
    if (!val_batches.empty()) {
      double v = 0.0;
      for (const auto& b : val_batches) v += batch_loss(model, corpus, b, config.margin);
      stats.validation_loss = v / static_cast<double>(val_batches.size());
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (config.checkpoint) save_weights(model, *config.checkpoint);

    const double score = stats.validation_loss.value_or(stats.train_loss);
    if (score < best) {
      best = score;
      result.best_epoch = epoch;
      copy_parameters(result.model, model);
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

}  // namespace porenet
