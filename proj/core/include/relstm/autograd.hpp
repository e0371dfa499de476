#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "relstm/tensor.hpp"

namespace relstm::ag {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::int64_t id = -1;

  const Tensor& value() const;
};

// Named trainable tensors plus their gradient accumulators. Iteration order
// is the sorted path order, which keeps updates and serialization
// deterministic.
class ParamSet {
 public:
  Tensor& create(const std::string& path, Tensor init);
  bool has(const std::string& path) const { return entries_.count(path) != 0; }

  Tensor& value(const std::string& path);
  const Tensor& value(const std::string& path) const;
  Tensor& grad(const std::string& path);
  const Tensor& grad(const std::string& path) const;

  void zero_grad();
  std::vector<std::string> paths() const;
  std::size_t size() const { return entries_.size(); }

  template <class Fn>  // Fn(const std::string&, Tensor& value, Tensor& grad)
  void for_each(Fn&& fn) {
    for (auto& [path, vg] : entries_) fn(path, vg.first, vg.second);
  }

 private:
  std::map<std::string, std::pair<Tensor, Tensor>> entries_;
};

// Record of one training step's forward computation. Nodes are appended in
// evaluation order, so reverse creation order is a valid reverse topological
// order. Gradients accumulate with +=, letting several uses of one input
// (the four gates sharing X_t) combine correctly.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::int64_t)>;

  Var input(Tensor value);
  Var param(ParamSet& params, const std::string& path);

  // Extension point for composite modules defining their own ops
  // (convolutions, pooling, fused losses).
  Var make(Tensor value, std::vector<std::int64_t> parents, BackwardFn backward,
           const char* op_name);

  const Tensor& value(std::int64_t id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool has_grad(std::int64_t id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }
  const Tensor& grad(std::int64_t id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  void add_grad(std::int64_t id, const Tensor& g);
  const std::vector<std::int64_t>& parents(std::int64_t id) const {
    return nodes_[static_cast<std::size_t>(id)].parents;
  }

  // Reverse sweep from a scalar loss; fills the accumulators of every
  // parameter bound to this tape. Parameters that the loss never touched
  // keep a zero contribution. With accumulate_params = false the sweep stays
  // tape-local (no writes to the ParamSet), so independent tapes can run on
  // separate threads and their gradients be folded in a fixed order via
  // param_gradients().
  void backward(Var loss, bool accumulate_params = true);

  // Per-path gradient sums of this tape's bound parameters, in binding
  // order. Bound parameters the last backward never reached map to absent
  // entries.
  std::map<std::string, Tensor> param_gradients() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until first contribution
    std::vector<std::int64_t> parents;
    BackwardFn backward;
    const char* op = "";
  };

  struct ParamBinding {
    std::int64_t node_id;
    ParamSet* params;
    std::string path;
  };

  std::vector<Node> nodes_;
  std::vector<ParamBinding> bindings_;
};

// ---- Differentiable ops over tape vars -------------------------------------

Var matmul(Var a, Var b);
Var softmax_rows(Var a);
Var position_linear(Var x, Var w);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var scale(Var a, double s);
Var reshape(Var a, std::vector<std::int64_t> shape);
Var transpose(Var a);
Var reduce_mean(Var a, std::int64_t axis);
Var concat(Var a, Var b, std::int64_t axis);
Var sum_all(Var a);

// Train-mode batch norm; reports batch statistics so the caller can fold
// them into the running state in a fixed order.
Var batch_norm_train(Var x, Var gamma, Var beta, Tensor* batch_mean, Tensor* batch_var);
Var batch_norm_infer(Var x, Var gamma, Var beta, const BatchNormState& stats);

// Inverted dropout: scaling by 1/keep happens at train time, inference is a
// pass-through. The mask is drawn element by element from `rng` and stored
// on the tape for the backward rule.
Var dropout(Var x, double drop_prob, std::mt19937_64& rng, bool train);

// Xavier-Glorot uniform draw: entries from U(-b, b) with
// b = sqrt(6 / (fan_in + fan_out)), consumed in flat index order.
Tensor xavier_uniform(std::vector<std::int64_t> shape, std::int64_t fan_in, std::int64_t fan_out,
                      std::mt19937_64& rng);

// ---- Finite-difference verification ----------------------------------------

struct GradCheckFailure {
  std::string path;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::int64_t elements_checked = 0;
  double max_rel_err = 0.0;
  std::vector<GradCheckFailure> failures;

  bool ok() const { return failures.empty(); }
};

using LossBuilder = std::function<Var(Tape&, ParamSet&)>;

// Central differences (f(p+h) - f(p-h)) / 2h against the analytic gradient,
// element by element; relative error |a-n| / max(|a|,|n|,1e-8). Failures are
// reported, never thrown.
GradCheckReport grad_check(const LossBuilder& build, ParamSet& params, double h = 1e-5,
                           double tol = 1e-4);

}  // namespace relstm::ag
