#include "relstm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "json.hpp"

namespace relstm {

namespace {

using json = nlohmann::json;

// Deterministic draw helpers. Plain modulo keeps clips bit-identical across
// standard libraries, unlike std::uniform_int_distribution.
std::uint64_t rand_below(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

std::int64_t rand_range(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rand_below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

std::int64_t positive_mod(std::int64_t a, std::int64_t m) {
  std::int64_t r = a % m;
  return r < 0 ? r + m : r;
}

// Offset of the p-th cell (clockwise from the top-left corner) on the square
// ring of Chebyshev radius r; p in [0, 8r).
std::pair<std::int64_t, std::int64_t> ring_offset(std::int64_t p, std::int64_t r) {
  const std::int64_t side = 2 * r;
  if (p < side) return {-r + p, -r};
  p -= side;
  if (p < side) return {r, -r + p};
  p -= side;
  if (p < side) return {r - p, r};
  p -= side;
  return {-r, r - p};
}

struct Raster {
  std::int64_t grid;
  Tensor frame;

  explicit Raster(std::int64_t g) : grid(g), frame({g, g, 1}) {}

  // Max blend with clipping; (x, y) is the top-left cell, x = column.
  void rect(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h, double intensity) {
    const std::int64_t x0 = std::max<std::int64_t>(0, x), x1 = std::min(grid, x + w);
    const std::int64_t y0 = std::max<std::int64_t>(0, y), y1 = std::min(grid, y + h);
    for (std::int64_t r = y0; r < y1; ++r) {
      for (std::int64_t c = x0; c < x1; ++c) {
        double& px = frame[r * grid + c];
        px = std::max(px, intensity);
      }
    }
  }
};

struct DistractorWalk {
  std::int64_t x, y, grid;

  static DistractorWalk start(std::mt19937_64& rng, std::int64_t grid) {
    return DistractorWalk{rand_range(rng, 1, grid - 3), rand_range(rng, 1, grid - 3), grid};
  }

  void step(std::mt19937_64& rng) {
    x = std::clamp<std::int64_t>(x + rand_range(rng, -1, 1), 0, grid - 2);
    y = std::clamp<std::int64_t>(y + rand_range(rng, -1, 1), 0, grid - 2);
  }

  void draw(Raster& ras) const { ras.rect(x, y, 2, 2, 0.4); }
};

// Triangle wave over {0..period-1} -> 0..period/2..0.
std::int64_t tri_wave(std::int64_t t, std::int64_t period) {
  const std::int64_t q = positive_mod(t, period);
  return q <= period / 2 ? q : period - q;
}

std::vector<Tensor> gen_appearance(const Scenario& s, std::int64_t length, std::mt19937_64& rng) {
  struct Glyph { std::int64_t w, h; };
  static constexpr Glyph kGlyphs[] = {{7, 7}, {9, 3}, {3, 9}};
  const Glyph g = kGlyphs[s.variant % 3];
  const std::int64_t gx = rand_range(rng, 2, s.grid - 2 - g.w);
  const std::int64_t gy = rand_range(rng, 2, s.grid - 2 - g.h);
  DistractorWalk walk = DistractorWalk::start(rng, s.grid);

  std::vector<Tensor> frames;
  for (std::int64_t t = 0; t < length; ++t) {
    Raster ras(s.grid);
    ras.rect(gx, gy, g.w, g.h, 1.0);
    walk.draw(ras);
    walk.step(rng);
    frames.push_back(std::move(ras.frame));
  }
  return frames;
}

std::vector<Tensor> gen_short_motion(const Scenario& s, std::int64_t length,
                                     std::mt19937_64& rng) {
  const std::int64_t ax = rand_range(rng, 6, s.grid - 9);
  const std::int64_t ay = rand_range(rng, 6, s.grid - 9);
  const std::int64_t phase = rand_range(rng, 0, 5);
  DistractorWalk walk = DistractorWalk::start(rng, s.grid);

  std::vector<Tensor> frames;
  for (std::int64_t t = 0; t < length; ++t) {
    const std::int64_t off = tri_wave(t + phase, 6);
    std::int64_t x = ax, y = ay;
    if (s.variant % 3 == 0) x += off;
    if (s.variant % 3 == 1) y += off;
    if (s.variant % 3 == 2) { x += off; y += off; }
    Raster ras(s.grid);
    ras.rect(x, y, 4, 4, 0.9);
    walk.draw(ras);
    walk.step(rng);
    frames.push_back(std::move(ras.frame));
  }
  return frames;
}

std::vector<Tensor> gen_trajectory(const Scenario& s, std::int64_t length, std::mt19937_64& rng) {
  DistractorWalk walk = DistractorWalk::start(rng, s.grid);
  std::vector<Tensor> frames;

  if (s.variant % 4 <= 1) {
    // Square ring loop; variants differ only in direction of travel.
    const std::int64_t r = 10;
    const std::int64_t perimeter = 8 * r;
    const std::int64_t center = s.grid / 2;
    const std::int64_t p0 = rand_range(rng, 0, perimeter - 1);
    const std::int64_t dir = (s.variant % 4 == 0) ? 1 : -1;
    const std::int64_t step = std::max<std::int64_t>(1, (perimeter + length / 2) / length);
    for (std::int64_t t = 0; t < length; ++t) {
      const auto [dx, dy] = ring_offset(positive_mod(p0 + dir * step * t, perimeter), r);
      Raster ras(s.grid);
      ras.rect(center + dx - 2, center + dy - 2, 4, 4, 0.9);
      walk.draw(ras);
      walk.step(rng);
      frames.push_back(std::move(ras.frame));
    }
    return frames;
  }

  // There-and-back line sweep, horizontal or vertical.
  const std::int64_t span = s.grid - 8 - 3;
  const std::int64_t cycle = 2 * span;
  const std::int64_t anchor = rand_range(rng, 4, s.grid - 7);
  const std::int64_t p0 = rand_range(rng, 0, cycle - 1);
  const std::int64_t step = std::max<std::int64_t>(1, (cycle + length / 2) / length);
  for (std::int64_t t = 0; t < length; ++t) {
    const std::int64_t off = tri_wave(p0 + step * t, cycle);
    const std::int64_t x = (s.variant % 4 == 2) ? 4 + off : anchor;
    const std::int64_t y = (s.variant % 4 == 2) ? anchor : 4 + off;
    Raster ras(s.grid);
    ras.rect(x, y, 4, 4, 0.9);
    walk.draw(ras);
    walk.step(rng);
    frames.push_back(std::move(ras.frame));
  }
  return frames;
}

// Two objects: a bright anchor and a dimmer satellite whose relative motion
// carries the label. Positions advance on a 1/16-pixel subgrid. The approach
// path wobbles back and forth along its line of travel, so a two-frame
// window can show motion in either direction; only the net drift separates
// approach from recede.
std::vector<Tensor> gen_interaction(const Scenario& s, std::int64_t length,
                                    std::mt19937_64& rng) {
  const std::int64_t acx = rand_range(rng, 12, 19);
  const std::int64_t acy = rand_range(rng, 12, 19);
  const bool is_orbit = s.variant % 3 == 2;

  std::vector<Tensor> frames;
  if (!is_orbit) {
    // Approach trajectory (recede is its time reversal, applied by caller).
    const std::int64_t d0 = rand_range(rng, 7, 9);
    const std::int64_t u0 = rand_range(rng, 0, 8 * d0 - 1);
    const auto [sdx, sdy] = ring_offset(u0, d0);
    const std::int64_t d1 = 2;
    const std::int64_t sfx = sdx * 16, sfy = sdy * 16;           // start, 1/16 px
    const std::int64_t efx = sdx * 16 * d1 / d0, efy = sdy * 16 * d1 / d0;  // end
    const std::int64_t phase = rand_range(rng, 0, 3);
    for (std::int64_t t = 0; t < length; ++t) {
      std::int64_t lam = t * 1024 / (length - 1) + (tri_wave(t + phase, 4) - 1) * 96;
      lam = std::clamp<std::int64_t>(lam, 0, 1024);
      const std::int64_t ofx = sfx + (efx - sfx) * lam / 1024;
      const std::int64_t ofy = sfy + (efy - sfy) * lam / 1024;
      Raster ras(s.grid);
      ras.rect(acx - 2, acy - 2, 5, 5, 1.0);
      ras.rect(acx + floor_div(ofx, 16) - 2, acy + floor_div(ofy, 16) - 2, 4, 4, 0.6);
      frames.push_back(std::move(ras.frame));
    }
    return frames;
  }

  // Orbit: constant-radius ring walk around the anchor. The radius spans the
  // same distances the approach path traverses, keeping single-frame
  // statistics uninformative.
  const std::int64_t r = rand_range(rng, 2, 9);
  const std::int64_t perimeter = 8 * r;
  const std::int64_t p0 = rand_range(rng, 0, perimeter - 1);
  const std::int64_t dir = rand_below(rng, 2) == 0 ? 1 : -1;
  const std::int64_t step = std::max<std::int64_t>(1, (perimeter + length / 2) / length);
  for (std::int64_t t = 0; t < length; ++t) {
    const auto [dx, dy] = ring_offset(positive_mod(p0 + dir * step * t, perimeter), r);
    Raster ras(s.grid);
    ras.rect(acx - 2, acy - 2, 5, 5, 1.0);
    ras.rect(acx + dx - 2, acy + dy - 2, 4, 4, 0.6);
    frames.push_back(std::move(ras.frame));
  }
  return frames;
}

void add_noise(std::vector<Tensor>& frames, double noise, std::mt19937_64& rng) {
  const std::int64_t levels = std::clamp<std::int64_t>(static_cast<std::int64_t>(noise * 256.0), 0, 256);
  if (levels == 0) return;
  for (Tensor& f : frames) {
    for (std::int64_t i = 0; i < f.size(); ++i) {
      const double n = static_cast<double>(rand_below(rng, static_cast<std::uint64_t>(levels + 1))) / 256.0;
      f[i] = std::min(1.0, f[i] + n);
    }
  }
}

}  // namespace

SynthVideo generate(const Scenario& scenario, std::int64_t length, std::uint64_t seed) {
  if (length < 2) throw DataError("generate: clip length must be >= 2, got " + std::to_string(length));
  if (scenario.grid < 16) throw DataError("generate: grid too small");

  std::mt19937_64 rng(seed);
  std::vector<Tensor> frames;
  switch (scenario.kind) {
    case ScenarioKind::kAppearance: frames = gen_appearance(scenario, length, rng); break;
    case ScenarioKind::kShortMotion: frames = gen_short_motion(scenario, length, rng); break;
    case ScenarioKind::kTrajectory: frames = gen_trajectory(scenario, length, rng); break;
    case ScenarioKind::kInteraction: frames = gen_interaction(scenario, length, rng); break;
  }
  add_noise(frames, scenario.noise, rng);

  // Recede = time-reversed approach with the same seed, noise included, so
  // the two classes share every frame-level statistic exactly.
  if (scenario.kind == ScenarioKind::kInteraction && scenario.variant % 3 == 1) {
    std::reverse(frames.begin(), frames.end());
  }
  SynthVideo v;
  v.frames = std::move(frames);
  v.label = scenario.class_id;
  v.modality = Modality::kAppearance;
  return v;
}

SynthVideo frame_difference(const SynthVideo& video) {
  if (video.frames.size() < 2) {
    throw DataError("frame_difference: need at least 2 frames, got " +
                    std::to_string(video.frames.size()));
  }
  SynthVideo out;
  out.label = video.label;
  out.modality = Modality::kFrameDifference;
  for (std::size_t t = 0; t + 1 < video.frames.size(); ++t) {
    const Tensor& a = video.frames[t];
    const Tensor& b = video.frames[t + 1];
    Tensor d(a.shape());
    for (std::int64_t i = 0; i < d.size(); ++i) d[i] = std::clamp(b[i] - a[i], -1.0, 1.0);
    out.frames.push_back(std::move(d));
  }
  return out;
}

std::vector<std::int64_t> segment_sample_random(std::int64_t length, std::int64_t segments,
                                                std::mt19937_64& rng) {
  if (segments < 1) throw DataError("segment_sample: segment count must be >= 1");
  if (length < segments) {
    throw DataError("segment_sample: clip of length " + std::to_string(length) +
                    " cannot be split into " + std::to_string(segments) + " segments");
  }
  std::vector<std::int64_t> out(static_cast<std::size_t>(segments));
  for (std::int64_t t = 0; t < segments; ++t) {
    const std::int64_t lo = t * length / segments;
    const std::int64_t hi = (t + 1) * length / segments;
    out[static_cast<std::size_t>(t)] = lo + static_cast<std::int64_t>(rand_below(rng, static_cast<std::uint64_t>(hi - lo)));
  }
  return out;
}

std::vector<std::int64_t> segment_sample_equispaced(std::int64_t length, std::int64_t segments,
                                                    std::int64_t group, std::int64_t group_count) {
  if (segments < 1) throw DataError("segment_sample: segment count must be >= 1");
  if (group_count < 1 || group < 0 || group >= group_count) {
    throw DataError("segment_sample: group " + std::to_string(group) + " outside [0, " +
                    std::to_string(group_count) + ")");
  }
  if (length < segments) {
    throw DataError("segment_sample: clip of length " + std::to_string(length) +
                    " cannot be split into " + std::to_string(segments) + " segments");
  }
  std::vector<std::int64_t> out(static_cast<std::size_t>(segments));
  for (std::int64_t t = 0; t < segments; ++t) {
    const std::int64_t lo = t * length / segments;
    const std::int64_t hi = (t + 1) * length / segments;
    const std::int64_t len = hi - lo;
    out[static_cast<std::size_t>(t)] = lo + (2 * group + 1) * len / (2 * group_count);
  }
  return out;
}

namespace {

const char* kind_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kAppearance: return "appearance";
    case ScenarioKind::kShortMotion: return "short-motion";
    case ScenarioKind::kTrajectory: return "trajectory";
    case ScenarioKind::kInteraction: return "interaction";
  }
  return "appearance";
}

ScenarioKind kind_from_name(const std::string& name) {
  if (name == "appearance") return ScenarioKind::kAppearance;
  if (name == "short-motion") return ScenarioKind::kShortMotion;
  if (name == "trajectory") return ScenarioKind::kTrajectory;
  if (name == "interaction") return ScenarioKind::kInteraction;
  throw DataError("manifest: unknown scenario kind '" + name + "'");
}

}  // namespace

DatasetPreset preset_from_name(const std::string& name) {
  if (name == "interaction6") return DatasetPreset::kInteraction6;
  if (name == "trajectory4") return DatasetPreset::kTrajectory4;
  if (name == "full12") return DatasetPreset::kFull12;
  throw DataError("unknown dataset preset '" + name + "'");
}

std::string preset_name(DatasetPreset preset) {
  switch (preset) {
    case DatasetPreset::kInteraction6: return "interaction6";
    case DatasetPreset::kTrajectory4: return "trajectory4";
    case DatasetPreset::kFull12: return "full12";
  }
  return "interaction6";
}

std::vector<Scenario> preset_scenarios(DatasetPreset preset, double noise) {
  std::vector<Scenario> out;
  auto push = [&](ScenarioKind kind, std::int64_t variant) {
    Scenario s;
    s.class_id = static_cast<std::int64_t>(out.size());
    s.kind = kind;
    s.variant = variant;
    s.noise = noise;
    out.push_back(s);
  };
  switch (preset) {
    case DatasetPreset::kInteraction6:
      push(ScenarioKind::kInteraction, 0);  // approach
      push(ScenarioKind::kInteraction, 1);  // recede
      push(ScenarioKind::kInteraction, 2);  // orbit
      push(ScenarioKind::kAppearance, 0);
      push(ScenarioKind::kAppearance, 1);
      push(ScenarioKind::kAppearance, 2);
      break;
    case DatasetPreset::kTrajectory4:
      push(ScenarioKind::kTrajectory, 0);
      push(ScenarioKind::kTrajectory, 1);
      push(ScenarioKind::kTrajectory, 2);
      push(ScenarioKind::kTrajectory, 3);
      break;
    case DatasetPreset::kFull12:
      for (std::int64_t v = 0; v < 3; ++v) push(ScenarioKind::kAppearance, v);
      for (std::int64_t v = 0; v < 3; ++v) push(ScenarioKind::kShortMotion, v);
      for (std::int64_t v = 0; v < 3; ++v) push(ScenarioKind::kTrajectory, v);
      for (std::int64_t v = 0; v < 3; ++v) push(ScenarioKind::kInteraction, v);
      break;
  }
  return out;
}

DatasetSplits build_dataset(DatasetPreset preset, std::int64_t train_per_class,
                            std::int64_t test_per_class, std::int64_t length, double noise,
                            std::uint64_t seed_base) {
  const std::vector<Scenario> scenarios = preset_scenarios(preset, noise);
  const auto k = static_cast<std::int64_t>(scenarios.size());

  auto build_split = [&](std::int64_t per_class, std::uint64_t seed_offset) {
    Dataset d;
    d.class_count = k;
    d.length = length;
    d.grid = scenarios[0].grid;
    for (std::int64_t i = 0; i < per_class * k; ++i) {
      DatasetItem item;
      item.id = i;
      item.label = i % k;
      item.seed = seed_base + seed_offset + static_cast<std::uint64_t>(i);
      item.length = length;
      item.scenario = scenarios[static_cast<std::size_t>(item.label)];
      d.items.push_back(item);
    }
    return d;
  };

  // Disjoint seed ranges keep the splits disjoint as clip distributions.
  DatasetSplits splits;
  splits.train = build_split(train_per_class, 0);
  splits.test = build_split(test_per_class, 1000000);
  return splits;
}

void save_manifest(const Dataset& dataset, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_manifest: cannot open '" + path + "' for writing");
  for (const DatasetItem& item : dataset.items) {
    json line = {
        {"id", item.id},
        {"class", item.label},
        {"seed", item.seed},
        {"scenario",
         {{"kind", kind_name(item.scenario.kind)},
          {"variant", item.scenario.variant},
          {"grid", item.scenario.grid},
          {"noise", item.scenario.noise},
          {"length", item.length}}},
    };
    os << line.dump() << "\n";
  }
}

Dataset load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_manifest: cannot open '" + path + "'");
  Dataset d;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("load_manifest: bad JSON at line " + std::to_string(line_no) + ": " +
                      e.what());
    }
    DatasetItem item;
    try {
      item.id = j.at("id").get<std::int64_t>();
      item.label = j.at("class").get<std::int64_t>();
      item.seed = j.at("seed").get<std::uint64_t>();
      const json& sc = j.at("scenario");
      item.scenario.kind = kind_from_name(sc.at("kind").get<std::string>());
      item.scenario.variant = sc.at("variant").get<std::int64_t>();
      item.scenario.grid = sc.at("grid").get<std::int64_t>();
      item.scenario.noise = sc.at("noise").get<double>();
      item.length = sc.at("length").get<std::int64_t>();
      item.scenario.class_id = item.label;
    } catch (const json::exception& e) {
      throw DataError("load_manifest: missing field at line " + std::to_string(line_no) + ": " +
                      e.what());
    }
    d.items.push_back(std::move(item));
  }
  if (d.items.empty()) throw DataError("load_manifest: '" + path + "' holds no items");
  for (const DatasetItem& item : d.items) {
    d.class_count = std::max(d.class_count, item.label + 1);
    if (item.length != d.items[0].length) {
      throw DataError("load_manifest: clip lengths differ across items");
    }
  }
  d.length = d.items[0].length;
  d.grid = d.items[0].scenario.grid;
  return d;
}

SynthVideo materialize(const DatasetItem& item, Modality modality) {
  SynthVideo v = generate(item.scenario, item.length, item.seed);
  v.label = item.label;
  if (modality == Modality::kFrameDifference) return frame_difference(v);
  return v;
}

void save_raw_frames(const SynthVideo& video, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_raw_frames: cannot open '" + path + "' for writing");
  const Tensor& f0 = video.frames.at(0);
  io::write_bytes(os, "RLSD", 4);
  io::write_pod<std::uint32_t>(os, 1);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(video.frames.size()));
  io::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(f0.extent(0)));
  io::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(f0.extent(1)));
  for (const Tensor& f : video.frames) {
    io::write_bytes(os, f.data(), static_cast<std::size_t>(f.size()) * sizeof(double));
  }
}

std::vector<Tensor> load_raw_frames(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_raw_frames: cannot open '" + path + "'");
  char magic[4];
  io::read_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != "RLSD") throw FormatError("load_raw_frames: bad magic bytes");
  const auto version = io::read_pod<std::uint32_t>(is, "version");
  if (version != 1) {
    throw FormatError("load_raw_frames: unsupported version " + std::to_string(version));
  }
  const auto count = io::read_pod<std::uint32_t>(is, "frame count");
  const auto h = io::read_pod<std::uint16_t>(is, "height");
  const auto w = io::read_pod<std::uint16_t>(is, "width");
  std::vector<Tensor> frames;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor f({h, w, 1});
    io::read_bytes(is, f.data(), static_cast<std::size_t>(f.size()) * sizeof(double), "frame data");
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace relstm
