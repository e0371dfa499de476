#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "relstm/model.hpp"
#include "relstm/synthdata.hpp"

namespace relstm {

// ---- optimizer ----------------------------------------------------------------

struct SGDConfig {
  double lr = 0.0005;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::vector<std::int64_t> milestones = {20, 26};
  double lr_factor = 0.1;
};

// base * factor^(number of milestones with epoch >= milestone).
double lr_schedule(std::int64_t epoch, double base, std::span<const std::int64_t> milestones,
                   double factor);

// Momentum SGD: v <- mu*v - lr*(g + wd*p); p <- p + v. Weight decay skips the
// normalization scale/shift parameters.
class SGDOptimizer {
 public:
  SGDOptimizer(const ag::ParamSet& params, SGDConfig cfg);

  double learning_rate(std::int64_t epoch) const;
  void step(ag::ParamSet& params, double lr);
  const SGDConfig& config() const { return cfg_; }
  const Tensor& velocity(const std::string& path) const;

 private:
  SGDConfig cfg_;
  std::map<std::string, Tensor> velocity_;
};

// ---- loss -----------------------------------------------------------------------

// -log softmax(scores)[label], stabilized with max subtraction; the gradient
// is softmax(scores) - onehot(label).
ag::Var softmax_cross_entropy(ag::Var scores, std::int64_t label);

// ---- run log --------------------------------------------------------------------

struct EpochRecord {
  std::int64_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  double wall_time_s = 0.0;
  double lr = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> records;

  // Deterministic content only (wall time stays in the JSON form), so a
  // fixed seed reproduces the CSV byte for byte.
  std::string csv() const;
  std::string json() const;
};

// ---- training ---------------------------------------------------------------------

struct TrainOptions {
  Modality stream = Modality::kAppearance;
  std::int64_t epochs = 30;
  std::int64_t batch_size = 8;
  SGDConfig sgd{};
  std::uint64_t seed = 1;
  // Workers evaluating batch clips concurrently. Gradients and normalization
  // statistics are folded in clip order whatever the count, so results are
  // bit-identical across thread counts.
  std::int64_t threads = 1;
  const Dataset* eval_data = nullptr;
  std::int64_t eval_every = 0;  // 0 = never
  std::int64_t eval_groups = 1;
};

// The full loop: per epoch, shuffled clip order, per-clip random snippet
// sampling, forward, cross entropy, backward, SGD update, scheduled learning
// rate. Throws NumericError if a non-finite loss or parameter appears.
RunLog train_stream(Model& model, const Dataset& data, const TrainOptions& opts);

// ---- evaluation ---------------------------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][pred]
  std::vector<Tensor> scores;                        // per clip, pre-softmax
  std::vector<std::int64_t> labels;
};

EvalResult evaluate_stream(const Model& model, const Dataset& data, Modality stream,
                           std::int64_t groups);

// Weighted pre-softmax fusion of an appearance-stream and a motion-stream
// model over the same clips.
struct FusedEval {
  EvalResult spatial;
  EvalResult temporal;
  EvalResult fused;
};
FusedEval evaluate_fused(const Model& spatial, const Model& temporal, const Dataset& data,
                         double fusion_weight, std::int64_t groups);

}  // namespace relstm
