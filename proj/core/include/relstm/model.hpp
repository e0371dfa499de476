#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "relstm/autograd.hpp"
#include "relstm/rlstm.hpp"

namespace relstm {

enum class Branches { kLocal, kNonLocal, kBoth };

// How the configured dropout rate is read. Keep-probability 0.8 and
// drop-probability 0.2 describe the same layer.
enum class DropoutSemantics { kDropProbability, kKeepProbability };

enum class Padding { kValid, kSame };

// ---- Explicit k>1 spatial ops used by the feature extractor -----------------

// x: [H x W x Cin], kernel: [kh x kw x Cin x Cout], no bias. Valid padding
// shrinks the output; same padding (odd kernels) zero-pads.
ag::Var conv2d(ag::Var x, ag::Var kernel, Padding padding);

// Adaptive pooling onto an out_h x out_w grid; bin i covers rows
// [floor(i*H/out_h), floor((i+1)*H/out_h)). Max pooling routes the gradient
// to the first maximal element of each bin.
ag::Var avg_pool(ag::Var x, std::int64_t out_h, std::int64_t out_w);
ag::Var max_pool(ag::Var x, std::int64_t out_h, std::int64_t out_w);

// ---- Configuration -----------------------------------------------------------

struct ModelConfig {
  std::int64_t segments = 8;  // T
  std::int64_t input_h = 32, input_w = 32, input_c = 1;
  std::int64_t feat_h = 5, feat_w = 5, feat_c = 16;  // H, W, C after extraction
  std::int64_t classes = 6;                          // K
  double dropout = 0.2;
  DropoutSemantics dropout_semantics = DropoutSemantics::kDropProbability;
  double bn_momentum = 0.001;
  double fusion_weight = 0.5;  // weight of the appearance stream at late fusion
  std::uint64_t seed = 1;
  Branches branches = Branches::kBoth;
  Normalizer attention_norm = Normalizer::kSoftmax;

  double drop_prob() const;
  std::int64_t head_inputs() const;  // width of the vector entering the FC head
  bool has_local() const { return branches != Branches::kNonLocal; }
  bool has_nonlocal() const { return branches != Branches::kLocal; }
  void validate() const;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

// ---- The two-branch network ----------------------------------------------------

struct BNBatchStats {
  Tensor mean;
  Tensor var;
};
// Batch statistics collected during a training forward, to be folded into
// the running state in a fixed order (keeps parallel batch evaluation
// bit-identical to the serial one).
using BNStatSink = std::vector<BNBatchStats>;

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ag::ParamSet& params() { return params_; }
  const ag::ParamSet& params() const { return params_; }
  BatchNormState& bn_state() { return bn_; }
  const BatchNormState& bn_state() const { return bn_; }
  std::mt19937_64& rng() { return rng_; }
  std::string rng_state() const;
  void set_rng_state(const std::string& text);

  // Snippet [input_h x input_w x input_c] -> feature maps [H x W x C].
  // Two valid-padding 3x3 convolutions with tanh, each followed by mean
  // pooling; the second pool lands exactly on the configured grid.
  ag::Var extract_features(ag::Tape& tape, const Tensor& snippet);

  // Spatial mean per snippet, then mean over snippets. Snippet order cannot
  // matter here.
  static ag::Var local_branch(ag::Tape& tape, std::span<const ag::Var> features);

  // Normalization, flattening, the relational recurrence over t = 1..T from
  // the zero state, channel restoration, one residual 3x3 block, spatial
  // mean. Order of snippets matters through the recurrence.
  ag::Var nonlocal_branch(ag::Tape& tape, std::span<const ag::Var> features, bool train,
                          BNStatSink* bn_sink);

  // Branch vectors -> concat -> dropout (train only) -> fully connected
  // scores [K], pre-softmax.
  ag::Var classify(ag::Tape& tape, std::span<const ag::Var> branch_vectors, bool train,
                   std::mt19937_64* dropout_rng);

  // Full per-video forward on the caller's tape (training path: parameters
  // are bound for gradient accumulation).
  ag::Var video_scores(ag::Tape& tape, std::span<const Tensor> snippets, bool train,
                       std::mt19937_64* dropout_rng = nullptr, BNStatSink* bn_sink = nullptr);

  // Inference-only forward; safe to call concurrently on a frozen model.
  Tensor infer_scores(std::span<const Tensor> snippets) const;

  // Deterministic multi-group inference: group g of G samples each segment
  // at equal temporal spacing, scores are averaged across groups.
  Tensor group_scores(const std::vector<Tensor>& frames, std::int64_t groups) const;

  void apply_bn_updates(const BNStatSink& sink);

 private:
  ModelConfig cfg_;
  ag::ParamSet params_;
  BatchNormState bn_;
  std::mt19937_64 rng_;
};

// ---- Late fusion ------------------------------------------------------------------

// w * a + (1 - w) * b over pre-softmax scores.
Tensor late_fusion(const Tensor& scores_a, const Tensor& scores_b, double w);

// Deterministic tie-break: the lowest class index wins.
std::int64_t argmax_lowest(const Tensor& scores);

}  // namespace relstm
