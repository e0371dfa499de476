#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "relstm/tensor.hpp"

namespace relstm {

// What kind of cue carries the label.
enum class ScenarioKind {
  kAppearance,   // a static glyph; any one frame suffices
  kShortMotion,  // a local oscillation; a short window suffices
  kTrajectory,   // a long path shape traversed over the whole clip
  kInteraction,  // two-object relative motion: approach / recede / orbit
};

enum class Modality { kAppearance, kFrameDifference };

// Generation recipe for one class. Per-clip geometry (placements, headings,
// radii) is drawn from the clip seed inside generate(); everything here is
// shared by all clips of the class.
struct Scenario {
  std::int64_t class_id = 0;
  ScenarioKind kind = ScenarioKind::kAppearance;
  std::int64_t variant = 0;
  std::int64_t grid = 32;
  double noise = 0.1;  // uniform per-pixel amplitude, quantized to 1/256 steps
};

// A labeled clip. Appearance frames are [grid x grid x 1] with values in
// [0,1]; the frame-difference modality has one frame fewer with values in
// [-1,1].
struct SynthVideo {
  std::vector<Tensor> frames;
  std::int64_t label = 0;
  Modality modality = Modality::kAppearance;
};

// Deterministic in (scenario, length, seed); rasterization is pure integer
// arithmetic on a 1/16-pixel subgrid, so clips are bitwise reproducible
// across platforms. Recede clips are the time reversal of the same-seed
// approach clip, which makes the two classes share their single-frame
// distribution exactly.
SynthVideo generate(const Scenario& scenario, std::int64_t length, std::uint64_t seed);

// Consecutive differences, clipped to [-1, 1]. Stands in for a flow stream.
SynthVideo frame_difference(const SynthVideo& video);

// ---- TSN-style segment sampling ---------------------------------------------

// Segment t of a length-L clip covers [floor(t*L/T), floor((t+1)*L/T)).
// Random mode draws uniformly inside each segment; equispaced mode picks
// position floor((group + 0.5) * len / group_count) inside each segment.
std::vector<std::int64_t> segment_sample_random(std::int64_t length, std::int64_t segments,
                                                std::mt19937_64& rng);
std::vector<std::int64_t> segment_sample_equispaced(std::int64_t length, std::int64_t segments,
                                                    std::int64_t group, std::int64_t group_count);

// ---- Dataset building --------------------------------------------------------

struct DatasetItem {
  std::int64_t id = 0;
  std::int64_t label = 0;
  std::uint64_t seed = 0;
  std::int64_t length = 0;
  Scenario scenario;
};

struct Dataset {
  std::vector<DatasetItem> items;
  std::int64_t class_count = 0;
  std::int64_t length = 0;
  std::int64_t grid = 32;
};

enum class DatasetPreset {
  kInteraction6,  // approach, recede, orbit + three appearance glyphs
  kTrajectory4,   // ring CW, ring CCW, horizontal and vertical there-and-back
  kFull12,        // three variants of each kind
};

DatasetPreset preset_from_name(const std::string& name);
std::string preset_name(DatasetPreset preset);
std::vector<Scenario> preset_scenarios(DatasetPreset preset, double noise);

// Balanced splits; train and test clips draw from disjoint seed ranges.
struct DatasetSplits {
  Dataset train;
  Dataset test;
};
DatasetSplits build_dataset(DatasetPreset preset, std::int64_t train_per_class,
                            std::int64_t test_per_class, std::int64_t length, double noise,
                            std::uint64_t seed_base);

// JSON-lines manifest, one {id, class, scenario, seed} object per line.
void save_manifest(const Dataset& dataset, const std::string& path);
Dataset load_manifest(const std::string& path);

// Rendered clip for a manifest entry in the requested modality.
SynthVideo materialize(const DatasetItem& item, Modality modality);

// Raw frame dump: 16-byte header (magic "RLSD", u32 version, u32 frame
// count, u16 height, u16 width) followed by row-major little-endian f64
// frames.
void save_raw_frames(const SynthVideo& video, const std::string& path);
std::vector<Tensor> load_raw_frames(const std::string& path);

}  // namespace relstm
