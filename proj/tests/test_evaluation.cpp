#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "porenet/error.hpp"
#include "porenet/evaluation.hpp"
#include "support.hpp"

using namespace porenet;
using testsupport::mock_manifest;

namespace {

ScoreSet random_scores(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(1, 60), range(1, 40);
  const int top = range(rng);
  std::uniform_int_distribution<int> score(0, top);
  ScoreSet s;
  const int ng = n(rng), ni = n(rng);
  for (int i = 0; i < ng; ++i) s.genuine.push_back(score(rng) + (rng() % 3 == 0 ? 5 : 0));
  for (int i = 0; i < ni; ++i) s.impostor.push_back(score(rng));
  return s;
}

}  // namespace

TEST_CASE("toy polyu manifest pairs") {
  const auto m = mock_manifest(Protocol::kPolyU, 2, 2, 2);
  const auto p = protocol_pairs(m);
  CHECK(p.genuine.size() == 8);
  CHECK(p.impostor.size() == 2);
  for (auto [probe, gallery] : p.genuine) {
    CHECK(m.entries[probe].session == 2);
    CHECK(m.entries[gallery].session == 1);
    CHECK(m.entries[probe].finger_id == m.entries[gallery].finger_id);
  }
  for (auto [probe, gallery] : p.impostor) {
    CHECK(m.entries[probe].session == 2);
    CHECK(m.entries[probe].impression == 1);
    CHECK(m.entries[gallery].session == 1);
    CHECK(m.entries[gallery].impression == 1);
    CHECK(m.entries[probe].finger_id != m.entries[gallery].finger_id);
  }
}

TEST_CASE("full-size protocol pair counts") {
  const auto polyu = protocol_pairs(mock_manifest(Protocol::kPolyU, 148, 2, 5));
  CHECK(polyu.genuine.size() == 3700);
  CHECK(polyu.impostor.size() == 21756);
  const auto iiti = protocol_pairs(mock_manifest(Protocol::kIiti, 800, 1, 8));
  CHECK(iiti.genuine.size() == 12800);
  CHECK(iiti.impostor.size() == 639200);
}

TEST_CASE("polyu counts follow the closed form") {
  for (int f : {2, 3, 7, 20}) {
    const auto p = protocol_pairs(mock_manifest(Protocol::kPolyU, f, 2, 5));
    CHECK(p.genuine.size() == static_cast<std::size_t>(f * 25));
    CHECK(p.impostor.size() == static_cast<std::size_t>(f * (f - 1)));
  }
}

TEST_CASE("incomplete manifests name the gaps") {
  auto m = mock_manifest(Protocol::kPolyU, 3, 2, 5);
  m.entries.erase(std::remove_if(m.entries.begin(), m.entries.end(),
                                 [](const ManifestEntry& e) { return e.finger_id == 2 && e.session == 2 && e.impression == 4; }),
                  m.entries.end());
  try {
    protocol_pairs(m);
    FAIL("gap not reported");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kManifest);
    CHECK(std::string(e.what()).find("finger 2 session 2 impression 4") != std::string::npos);
  }
  auto iiti = mock_manifest(Protocol::kIiti, 3, 1, 8);
  iiti.entries.pop_back();
  CHECK_THROWS_AS(protocol_pairs(iiti), Error);

  auto dup = mock_manifest(Protocol::kPolyU, 2, 2, 2);
  dup.entries.push_back(dup.entries.front());
  CHECK_THROWS_AS(dup.validate(), Error);
}

TEST_CASE("manifest text format") {
  const std::string text = "# comment\nimgs/a.pgm 1 1 1\nimgs/b.pgm 1 2 1\n\n";
  const auto m = parse_manifest(text, Protocol::kPolyU, "/data");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].path == "/data/imgs/a.pgm");
  CHECK(m.entries[1].session == 2);
  CHECK(parse_manifest(format_manifest(m), Protocol::kPolyU).entries.size() == 2);
  CHECK_THROWS_AS(parse_manifest("a.pgm 1 x 1\n", Protocol::kPolyU), Error);
  CHECK(parse_protocol("iiti") == Protocol::kIiti);
  CHECK(protocol_name(Protocol::kPolyU) == "polyu");
  CHECK_THROWS_AS(parse_protocol("casia"), Error);
}

TEST_CASE("det curve examples") {
  const auto sep = det_curve(ScoreSet{{10, 10}, {0, 0}});
  CHECK(std::isinf(sep.rows.front().threshold));
  bool perfect = false;
  for (const auto& r : sep.rows) perfect = perfect || (r.fmr == 0.0 && r.fnmr == 0.0);
  CHECK(perfect);
  CHECK(eer(sep) == 0.0);
  CHECK(fmr_at(sep, 0.001).fnmr == 0.0);
  CHECK_FALSE(fmr_at(sep, 0.001).sentinel_only);

  const auto hand = det_curve(ScoreSet{{1, 3}, {0, 2}});
  CHECK(eer(hand) == 0.5);

  const ScoreSet same{{1, 2, 3, 4}, {1, 2, 3, 4}};
  const auto c = det_curve(same);
  for (const auto& r : c.rows) CHECK(r.fmr + (1.0 - r.fnmr) == doctest::Approx(2.0 * r.fmr));
  CHECK(eer(c) == 0.5);

  CHECK_THROWS_AS(det_curve(ScoreSet{{}, {1}}), Error);
  CHECK_THROWS_AS(det_curve(ScoreSet{{1}, {}}), Error);
}

TEST_CASE("fmr_at on a constructed distribution") {
  // 10 of 10,000 impostors at or above t0 = 50; 3% of genuine scores below it.
  ScoreSet s;
  for (int i = 0; i < 9989; ++i) s.impostor.push_back(i % 40);
  s.impostor.push_back(49);
  for (int i = 0; i < 10; ++i) s.impostor.push_back(50 + i);
  for (int i = 0; i < 100; ++i) s.genuine.push_back(i < 3 ? 45 : 60 + i);
  const auto r = fmr_at(det_curve(s), 0.001);
  CHECK(r.fnmr == doctest::Approx(0.03));
  CHECK(r.threshold >= 50.0);
}

TEST_CASE("sentinel-only FMR ceilings are flagged") {
  const auto c = det_curve(ScoreSet{{5}, {5}});
  const auto r = fmr_at(c, 0.001);
  CHECK(r.sentinel_only);
  CHECK(r.fnmr == 1.0);
}

TEST_CASE("metrics equal an exhaustive threshold sweep") {
  std::mt19937_64 rng(81);
  for (int trial = 0; trial < 100; ++trial) {
    const ScoreSet s = random_scores(rng);
    const auto curve = det_curve(s);
    const auto oracle = testsupport::det_sweep_oracle(s);
    REQUIRE(curve.rows.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CHECK(curve.rows[i].threshold == oracle[i].threshold);
      CHECK(curve.rows[i].fmr == oracle[i].fmr);
      CHECK(curve.rows[i].fnmr == oracle[i].fnmr);
    }
    CHECK(eer(curve) == testsupport::eer_oracle(oracle));
    for (double ceiling : {0.0001, 0.001, 0.01, 0.1, 0.5}) {
      CHECK(fmr_at(curve, ceiling).fnmr == testsupport::fmr_at_oracle(oracle, ceiling));
    }
  }
}

TEST_CASE("det invariants") {
  std::mt19937_64 rng(82);
  for (int trial = 0; trial < 50; ++trial) {
    const ScoreSet s = random_scores(rng);
    const auto c = det_curve(s);
    for (std::size_t i = 1; i < c.rows.size(); ++i) {
      CHECK(c.rows[i].threshold < c.rows[i - 1].threshold);
      CHECK(c.rows[i].fmr >= c.rows[i - 1].fmr);
      CHECK(c.rows[i].fnmr <= c.rows[i - 1].fnmr);
      CHECK(c.rows[i].fmr >= 0.0);
      CHECK(c.rows[i].fnmr <= 1.0);
    }
    // EER is a rank statistic.
    ScoreSet t = s;
    for (auto& v : t.genuine) v = std::exp(0.1 * v) + 3.0;
    for (auto& v : t.impostor) v = std::exp(0.1 * v) + 3.0;
    CHECK(eer(det_curve(t)) == eer(c));
    double previous = 2.0;
    for (double ceiling : {0.0, 0.0001, 0.001, 0.01, 0.1, 1.0}) {
      const double f = fmr_at(c, ceiling).fnmr;
      CHECK(f <= previous);
      previous = f;
    }
  }
}

TEST_CASE("dominance measures") {
  CHECK(dominance_probability(ScoreSet{{3, 4}, {1, 2}}) == 1.0);
  CHECK(dominance_probability(ScoreSet{{2}, {2}}) == 0.5);
  CHECK(stochastically_dominates(ScoreSet{{3, 4}, {1, 2}}));
  CHECK(stochastically_dominates(ScoreSet{{2, 5}, {1, 5}}));
  CHECK_FALSE(stochastically_dominates(ScoreSet{{0, 9}, {4, 5}}));
}

TEST_CASE("csv and summary formats") {
  const ScoreSet s{{3, 4}, {1, 3}};
  const auto c = det_curve(s);
  const std::string det = format_det_csv(c);
  CHECK(det.rfind("threshold,fmr,fnmr\ninf,0,1\n", 0) == 0);
  const std::string hist = format_histogram_csv(s);
  CHECK(hist.rfind("score,genuine_count,impostor_count\n", 0) == 0);
  CHECK(hist.find("3,1,1") != std::string::npos);

  const Metrics m = compute_metrics(s);
  CHECK(m.genuine_n == 2);
  CHECK(m.impostor_n == 2);
  const std::string line = format_metrics(m);
  for (const char* key : {"eer=", "fmr1000=", "fmr10000=", "genuine_n=2", "impostor_n=2"}) {
    CHECK(line.find(key) != std::string::npos);
  }

  const std::vector<ScoredPair> pairs{{"a", "b", 12}, {"c", "d", 0}};
  const auto back = parse_scores_csv(format_scores_csv(pairs), "scores");
  REQUIRE(back.size() == 2);
  CHECK(back[0].probe == "a");
  CHECK(back[0].gallery == "b");
  CHECK(back[0].score == 12);
  CHECK_THROWS_AS(parse_scores_csv("probe_id,gallery_id,score\na,b\n", "scores"), Error);
}
