#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <utility>

#include "doctest.h"
#include "gradcheck.hpp"
#include "porenet/error.hpp"
#include "porenet/nn/triplet.hpp"
#include "porenet/porenet_model.hpp"
#include "porenet/trainer.hpp"
#include "support.hpp"

using namespace porenet;
using testsupport::TempDir;

namespace {

std::vector<PorePatch> random_patches(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<PorePatch> out(n);
  for (auto& p : out) {
    for (float& v : p.pixels) v = u(rng);
  }
  return out;
}

// Class k: a bright blob at a class-specific offset over a dim background, plus pixel noise.
PorePatch blob_patch(int k, std::mt19937_64& rng) {
  std::normal_distribution<float> noise(0.0f, 0.05f);
  const double cx = 20 + 9 * std::cos(k * 0.63), cy = 20 + 9 * std::sin(k * 0.63);
  const double radius = 3.0 + (k % 3);
  PorePatch p;
  for (int y = 0; y < kPatchSide; ++y) {
    for (int x = 0; x < kPatchSide; ++x) {
      const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      const float v = static_cast<float>(0.2 + 0.6 * std::exp(-r2 / (2 * radius * radius))) + noise(rng);
      p.pixels[y * kPatchSide + x] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  p.label = k;
  return p;
}

double sq_dist(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Seeds running statistics with one train-mode pass.
void warm_up(PoreNetModel& model, std::mt19937_64& rng) {
  const auto p = random_patches(4, rng);
  model.forward(patches_to_tensor<float>(p), nn::Mode::kTrain, nullptr, false);
}

}  // namespace

TEST_CASE("architecture audit") {
  PoreNetModel model = build_porenet(1);
  const ParameterAudit a = model.audit();
  CHECK(a.total == 142881);
  CHECK(a.main_path_convs == 14);
  CHECK(a.shortcuts == 4);
  CHECK(a.projection_shortcuts == 2);
  CHECK(a.conv_weights + a.conv_biases + a.bn_affine + a.bn_running == a.total);
  // Trainable count excludes the running statistics.
  long long trainable = 0;
  for (const auto& p : model.trainable_parameters()) trainable += static_cast<long long>(p.tensor->size());
  CHECK(trainable == a.total - a.bn_running);
  CHECK(model.blocks().size() == 4);
  CHECK(model.blocks()[0].shortcut() == nn::Shortcut::kProjection);
  CHECK(model.blocks()[1].shortcut() == nn::Shortcut::kIdentity);
  CHECK(model.blocks()[2].shortcut() == nn::Shortcut::kProjection);
  CHECK(model.blocks()[3].shortcut() == nn::Shortcut::kIdentity);
  CHECK(model.conv1().conv().out_channels() == 16);
  CHECK(model.blocks()[1].out_channels() == 64);
  CHECK(model.blocks()[3].out_channels() == 128);
  CHECK(model.conv4().out_channels() == 1);
  CHECK(a.report().find("142881") != std::string::npos);
}

TEST_CASE("every feature map stays 41x41 and embeddings are unit norm") {
  std::mt19937_64 rng(71);
  PoreNetModel model = build_porenet(2);
  ShapeTrace trace;
  const auto patches = random_patches(3, rng);
  model.forward(patches_to_tensor<float>(patches), nn::Mode::kTrain, &trace, false);
  REQUIRE(trace.size() > 10);
  for (const auto& [name, shape] : trace) {
    INFO(name);
    if (shape.size() == 4) {
      CHECK(shape[0] == 3);
      CHECK(shape[1] == 41);
      CHECK(shape[2] == 41);
    } else {
      CHECK(shape == nn::Shape{3, 1681});
    }
  }
  const auto emb = embed(model, patches);
  REQUIRE(emb.size() == 3);
  for (const auto& e : emb) {
    CHECK(e.size() == 1681);
    double s = 0.0;
    for (float v : e) s += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-5);
  }
}

TEST_CASE("embedding requires running statistics") {
  std::mt19937_64 rng(72);
  PoreNetModel model = build_porenet(3);
  CHECK_THROWS_AS(embed(model, random_patches(1, rng)), Error);
  CHECK_THROWS_AS(model.forward(nn::Tensor<float>({1, 40, 41, 1}), nn::Mode::kTrain), Error);
}

TEST_CASE("initialisation is deterministic in the seed") {
  PoreNetModel a = build_porenet(9), b = build_porenet(9), c = build_porenet(10);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool same = true, differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    for (std::size_t k = 0; k < pa[i].tensor->size(); ++k) {
      same = same && (*pa[i].tensor)[k] == (*pb[i].tensor)[k];
      differs = differs || (*pa[i].tensor)[k] != (*pc[i].tensor)[k];
    }
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("weights round trip and corruption") {
  TempDir dir("weights");
  std::mt19937_64 rng(73);
  PoreNetModel model = build_porenet(4);
  CHECK_THROWS_AS(save_weights(model, dir / "early.bin"), Error);
  warm_up(model, rng);
  save_weights(model, dir / "w.bin");
  PoreNetModel back = load_weights(dir / "w.bin");
  const auto patches = random_patches(5, rng);
  CHECK(embed(model, patches) == embed(back, patches));

  auto bytes = encode_weights(model);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PNET");
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_weights(truncated), Error);
  auto renamed = bytes;
  renamed[16] = static_cast<unsigned char>('#');
  try {
    decode_weights(renamed);
    FAIL("renamed entry accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
    CHECK(std::string(e.what()).find("mismatch") != std::string::npos);
  }
  auto version = bytes;
  version[4] = 99;
  CHECK_THROWS_AS(decode_weights(version), Error);
}

TEST_CASE("full-model gradients match finite differences in double precision") {
  std::mt19937_64 rng(74);
  PoreNet<double> net(5);
  // Non-trivial beta so no ReLU unit sits exactly at zero.
  for (auto& p : net.trainable_parameters()) {
    if (p.name.find(".beta") != std::string::npos) {
      for (auto& v : p.tensor->values()) v = 0.1 * std::normal_distribution<double>()(rng);
    }
  }
  const auto patches = random_patches(2, rng);
  const nn::Tensor<double> x = patches_to_tensor<double>(patches);
  const nn::Tensor<double> w = testsupport::random_tensor<double>({2, kEmbeddingDim}, rng);
  net.zero_grad();
  net.forward(x, nn::Mode::kTrain);
  net.backward(w);
  auto loss = [&] { return testsupport::weighted_sum(w, net.forward(x, nn::Mode::kTrain, nullptr, false)); };

  // A small step: with this many ReLUs, a 1e-5 step crosses enough kinks to reach ~1e-3 error.
  auto params = net.trainable_parameters();
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor->size();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  double worst = 0.0;
  for (int s = 0; s < 100; ++s) {
    std::size_t flat = pick(rng);
    std::size_t k = 0;
    while (flat >= params[k].tensor->size()) flat -= params[k++].tensor->size();
    const std::vector<std::size_t> one{flat};
    auto grad = std::as_const(*params[k].tensor).grad();
    const auto r = testsupport::check_gradient<double>(params[k].tensor->values(), grad, loss, 1e-6, 1e-8, &one);
    worst = std::max(worst, r.max_relative);
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("a zero learning rate leaves the trainable weights fixed") {
  std::mt19937_64 rng(75);
  PoreNetModel model = build_porenet(6);
  std::vector<PorePatch> patches;
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < 2; ++i) patches.push_back(blob_patch(k, rng));
  }
  std::vector<std::vector<float>> before;
  for (const auto& p : model.trainable_parameters()) before.emplace_back(p.tensor->values().begin(), p.tensor->values().end());
  nn::Adam<float> opt(nn::AdamConfig{0.0, 0.9, 0.999, 1e-8});
  TrainBatch batch{{0, 1, 2, 3, 4, 5}, {0, 0, 1, 1, 2, 2}};
  const double loss = train_step(model, opt, patches, batch, 0.8);
  CHECK(std::isfinite(loss));
  std::size_t i = 0;
  for (const auto& p : model.trainable_parameters()) {
    CHECK(std::equal(before[i].begin(), before[i].end(), p.tensor->values().begin()));
    ++i;
  }
  CHECK(model.has_running_stats());
}

TEST_CASE("label-aware batching") {
  std::vector<PorePatch> patches;
  for (int k = 0; k < 6; ++k) {
    for (int i = 0; i < (k == 5 ? 1 : 5); ++i) {
      PorePatch p;
      p.label = k;
      patches.push_back(p);
    }
  }
  std::vector<std::size_t> all(patches.size());
  std::iota(all.begin(), all.end(), 0);
  const auto groups = group_by_label(patches, all);
  CHECK(groups.size() == 5);
  std::mt19937_64 rng(76);
  const auto batches = epoch_batches(groups, patches, 2, 3, rng);
  CHECK(batches.size() == 2);
  for (const auto& b : batches) {
    CHECK(b.indices.size() == 6);
    std::map<int, int> count;
    for (std::size_t k = 0; k < b.indices.size(); ++k) {
      CHECK(patches[b.indices[k]].label == b.labels[k]);
      ++count[b.labels[k]];
    }
    CHECK(count.size() == 2);
    for (auto [label, c] : count) CHECK(c == 3);
  }
  TrainConfig bad;
  bad.patches_per_label = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("a short schedule separates blob classes") {
  std::mt19937_64 rng(77);
  const int classes = 8, per_class = 3;
  std::vector<PorePatch> train_set;
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) train_set.push_back(blob_patch(k, rng));
  }
  PoreNetModel model = build_porenet(7);
  nn::Adam<float> opt(nn::AdamConfig{1e-3, 0.9, 0.999, 1e-8});
  TrainBatch batch;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    batch.indices.push_back(i);
    batch.labels.push_back(train_set[i].label);
  }
  for (int step = 0; step < 12; ++step) train_step(model, opt, train_set, batch, 0.8);

  std::vector<PorePatch> held_out;
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < 2; ++i) held_out.push_back(blob_patch(k, rng));
  }
  const auto e = embed(model, held_out);
  double intra = 0.0, inter = 0.0;
  int n_intra = 0, n_inter = 0;
  for (std::size_t a = 0; a < e.size(); ++a) {
    for (std::size_t b = a + 1; b < e.size(); ++b) {
      if (held_out[a].label == held_out[b].label) {
        intra += sq_dist(e[a], e[b]);
        ++n_intra;
      } else {
        inter += sq_dist(e[a], e[b]);
        ++n_inter;
      }
    }
  }
  CHECK(intra / n_intra < inter / n_inter);
}
