#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "relstm/synthdata.hpp"

using namespace relstm;

namespace {

Scenario scenario(ScenarioKind kind, std::int64_t variant, double noise = 0.1) {
  Scenario s;
  s.kind = kind;
  s.variant = variant;
  s.noise = noise;
  return s;
}

bool frames_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("noise-free static scenario renders identical frames") {
  SynthVideo v = generate(scenario(ScenarioKind::kAppearance, 0, 0.0), 8, 42);
  REQUIRE(v.frames.size() == 8);
  // The appearance glyph is static; only the distractor moves. Mask it out by
  // checking that a large majority of pixels never change.
  std::int64_t changed = 0;
  for (std::int64_t i = 0; i < v.frames[0].size(); ++i) {
    for (std::size_t t = 1; t < v.frames.size(); ++t) {
      if (v.frames[t][i] != v.frames[0][i]) {
        ++changed;
        break;
      }
    }
  }
  CHECK(changed < 64);  // distractor footprint only

  // With the distractor region excluded, values are {0, glyph intensity}.
  for (const Tensor& f : v.frames) {
    for (std::int64_t i = 0; i < f.size(); ++i) {
      CHECK(f[i] >= 0.0);
      CHECK(f[i] <= 1.0);
    }
  }
}

TEST_CASE("clips are bitwise deterministic in (scenario, length, seed)") {
  for (ScenarioKind kind : {ScenarioKind::kAppearance, ScenarioKind::kShortMotion,
                            ScenarioKind::kTrajectory, ScenarioKind::kInteraction}) {
    SynthVideo a = generate(scenario(kind, 1), 12, 7);
    SynthVideo b = generate(scenario(kind, 1), 12, 7);
    REQUIRE(a.frames.size() == b.frames.size());
    for (std::size_t t = 0; t < a.frames.size(); ++t) CHECK(frames_equal(a.frames[t], b.frames[t]));
    SynthVideo c = generate(scenario(kind, 1), 12, 8);
    bool any_diff = false;
    for (std::size_t t = 0; t < a.frames.size(); ++t) {
      if (!frames_equal(a.frames[t], c.frames[t])) any_diff = true;
    }
    CHECK(any_diff);
  }
  CHECK_THROWS_AS(generate(scenario(ScenarioKind::kAppearance, 0), 1, 1), DataError);
}

TEST_CASE("recede clips are the exact time reversal of approach clips") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    SynthVideo approach = generate(scenario(ScenarioKind::kInteraction, 0), 16, seed);
    SynthVideo recede = generate(scenario(ScenarioKind::kInteraction, 1), 16, seed);
    REQUIRE(approach.frames.size() == recede.frames.size());
    const std::size_t L = approach.frames.size();
    for (std::size_t t = 0; t < L; ++t) {
      CHECK(frames_equal(recede.frames[t], approach.frames[L - 1 - t]));
    }
  }
}

TEST_CASE("approach and recede share pixel histograms over full clips") {
  // 100 clips per class, 32 intensity bins.
  const int bins = 32;
  std::vector<double> ha(bins, 0.0), hr(bins, 0.0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (int cls = 0; cls < 2; ++cls) {
      SynthVideo v = generate(scenario(ScenarioKind::kInteraction, cls), 16, 1000 + seed);
      std::vector<double>& h = cls == 0 ? ha : hr;
      for (const Tensor& f : v.frames) {
        for (std::int64_t i = 0; i < f.size(); ++i) {
          int b = std::min(bins - 1, static_cast<int>(f[i] * bins));
          h[static_cast<std::size_t>(b)] += 1.0;
        }
      }
    }
  }
  double stat = 0.0;
  int df = 0;
  for (int b = 0; b < bins; ++b) {
    const double tot = ha[b] + hr[b];
    if (tot < 10.0) continue;
    const double e = tot / 2.0;
    stat += (ha[b] - e) * (ha[b] - e) / e + (hr[b] - e) * (hr[b] - e) / e;
    ++df;
  }
  const double p = oracle::chi2_pvalue(stat, std::max(1, df - 1));
  INFO("chi2 ", stat, " df ", df, " p ", p);
  CHECK(p > 0.01);
}

TEST_CASE("frame difference: static clips go to zero, motion leaves a dipole") {
  SynthVideo still;
  still.frames.assign(3, Tensor::full({8, 8, 1}, 0.5));
  SynthVideo d = frame_difference(still);
  CHECK(d.frames.size() == 2);
  CHECK(d.modality == Modality::kFrameDifference);
  for (const Tensor& f : d.frames) {
    for (std::int64_t i = 0; i < f.size(); ++i) CHECK(f[i] == 0.0);
  }

  // One-pixel object moving right by one: -1 at the old cell, +1 at the new.
  SynthVideo mover;
  Tensor f0({8, 8, 1}), f1({8, 8, 1});
  f0[3 * 8 + 2] = 1.0;
  f1[3 * 8 + 3] = 1.0;
  mover.frames = {f0, f1};
  SynthVideo dm = frame_difference(mover);
  CHECK(dm.frames[0][3 * 8 + 2] == -1.0);
  CHECK(dm.frames[0][3 * 8 + 3] == 1.0);

  SynthVideo single;
  single.frames = {f0};
  CHECK_THROWS_AS(frame_difference(single), DataError);
}

TEST_CASE("frame differences cumulatively reconstruct the clip") {
  SynthVideo v = generate(scenario(ScenarioKind::kTrajectory, 0), 10, 77);
  SynthVideo d = frame_difference(v);
  Tensor acc = v.frames[0];
  for (std::size_t t = 0; t < d.frames.size(); ++t) {
    acc = add(acc, d.frames[t]);
    CHECK(oracle::max_abs_diff(acc, v.frames[t + 1]) < 1e-12);
  }
}

TEST_CASE("segment sampling: singleton segments are forced") {
  std::mt19937_64 rng(1);
  const std::vector<std::int64_t> r = segment_sample_random(8, 8, rng);
  const std::vector<std::int64_t> e = segment_sample_equispaced(8, 8, 0, 1);
  for (std::int64_t t = 0; t < 8; ++t) {
    CHECK(r[static_cast<std::size_t>(t)] == t);
    CHECK(e[static_cast<std::size_t>(t)] == t);
  }
}

TEST_CASE("segment sampling: L=16, T=8, one group lands mid-segment") {
  const std::vector<std::int64_t> idx = segment_sample_equispaced(16, 8, 0, 1);
  for (std::int64_t t = 0; t < 8; ++t) CHECK(idx[static_cast<std::size_t>(t)] == 2 * t + 1);
}

TEST_CASE("segment sampling: indices stay inside their segment") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 200; ++rep) {
    const std::int64_t length = 8 + static_cast<std::int64_t>(rng() % 40);
    const std::int64_t segments = 1 + static_cast<std::int64_t>(rng() % 8);
    if (length < segments) continue;
    const auto idx = segment_sample_random(length, segments, rng);
    for (std::int64_t t = 0; t < segments; ++t) {
      CHECK(idx[static_cast<std::size_t>(t)] >= t * length / segments);
      CHECK(idx[static_cast<std::size_t>(t)] < (t + 1) * length / segments);
    }
  }
  CHECK_THROWS_AS(segment_sample_random(4, 8, rng), DataError);
  CHECK_THROWS_AS(segment_sample_equispaced(4, 8, 0, 1), DataError);
  CHECK_THROWS_AS(segment_sample_equispaced(16, 8, 4, 4), DataError);
}

TEST_CASE("random sampling is uniform within segments") {
  std::mt19937_64 rng(3);
  // L=16, T=8: two slots per segment, 16 cells overall.
  std::vector<double> counts(16, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    for (std::int64_t idx : segment_sample_random(16, 8, rng)) {
      counts[static_cast<std::size_t>(idx)] += 1.0;
    }
  }
  const double expected = draws / 2.0;
  double stat = 0.0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  const double p = oracle::chi2_pvalue(stat, 15);
  INFO("chi2 ", stat, " p ", p);
  CHECK(p > 0.01);
}

TEST_CASE("dataset builder balances classes and separates split seeds") {
  DatasetSplits splits = build_dataset(DatasetPreset::kInteraction6, 10, 5, 16, 0.1, 99);
  CHECK(splits.train.items.size() == 60);
  CHECK(splits.test.items.size() == 30);
  CHECK(splits.train.class_count == 6);

  std::vector<int> per_class(6, 0);
  std::set<std::uint64_t> train_seeds, test_seeds;
  for (const DatasetItem& it : splits.train.items) {
    per_class[static_cast<std::size_t>(it.label)]++;
    train_seeds.insert(it.seed);
  }
  for (int c : per_class) CHECK(c == 10);
  for (const DatasetItem& it : splits.test.items) test_seeds.insert(it.seed);
  for (std::uint64_t s : test_seeds) CHECK(train_seeds.count(s) == 0);

  CHECK(preset_scenarios(DatasetPreset::kTrajectory4, 0.1).size() == 4);
  CHECK(preset_scenarios(DatasetPreset::kFull12, 0.1).size() == 12);
  CHECK(preset_from_name("full12") == DatasetPreset::kFull12);
  CHECK_THROWS_AS(preset_from_name("nope"), DataError);
}

TEST_CASE("manifest round-trips through JSON lines") {
  DatasetSplits splits = build_dataset(DatasetPreset::kTrajectory4, 3, 2, 12, 0.05, 17);
  const std::string path = (std::filesystem::temp_directory_path() / "manifest.jsonl").string();
  save_manifest(splits.train, path);
  Dataset back = load_manifest(path);
  REQUIRE(back.items.size() == splits.train.items.size());
  CHECK(back.class_count == 4);
  CHECK(back.length == 12);
  for (std::size_t i = 0; i < back.items.size(); ++i) {
    const DatasetItem& a = splits.train.items[i];
    const DatasetItem& b = back.items[i];
    CHECK(a.id == b.id);
    CHECK(a.label == b.label);
    CHECK(a.seed == b.seed);
    CHECK(a.scenario.kind == b.scenario.kind);
    CHECK(a.scenario.variant == b.scenario.variant);
    CHECK(a.scenario.noise == b.scenario.noise);
    // Materialized clips agree bitwise.
    SynthVideo va = materialize(a, Modality::kAppearance);
    SynthVideo vb = materialize(b, Modality::kAppearance);
    if (i < 2) {
      for (std::size_t t = 0; t < va.frames.size(); ++t) {
        CHECK(frames_equal(va.frames[t], vb.frames[t]));
      }
    }
  }
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.jsonl"), DataError);
}

TEST_CASE("raw frame dumps round-trip and validate their header") {
  SynthVideo v = generate(scenario(ScenarioKind::kShortMotion, 2), 6, 5);
  const std::string path = (std::filesystem::temp_directory_path() / "clip.rlsd").string();
  save_raw_frames(v, path);
  std::vector<Tensor> frames = load_raw_frames(path);
  REQUIRE(frames.size() == v.frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) CHECK(frames_equal(frames[t], v.frames[t]));

  // Header is exactly 16 bytes before the payload.
  const auto file_size = std::filesystem::file_size(path);
  CHECK(file_size == 16 + v.frames.size() * 32 * 32 * sizeof(double));

  std::ofstream os(path, std::ios::binary);
  os << "XXXX";
  os.close();
  CHECK_THROWS_AS(load_raw_frames(path), FormatError);
}

TEST_CASE("orbit clips keep both objects inside the grid") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthVideo v = generate(scenario(ScenarioKind::kInteraction, 2, 0.0), 24, seed);
    std::int64_t bright = 0;
    for (const Tensor& f : v.frames) {
      for (std::int64_t i = 0; i < f.size(); ++i) {
        if (f[i] > 0.5) ++bright;
      }
    }
    // Anchor (16 px) present every frame; satellite (9 px at 0.55) should
    // be visible most of the time.
    CHECK(bright >= 24 * 16);
  }
}
