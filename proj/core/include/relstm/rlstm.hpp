#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "relstm/nonlocal.hpp"

namespace relstm {

// Eight independent non-local instances, one per gate transition. The *x
// instances relate the current features to themselves (spatial reasoning);
// the *h instances relate them to the previous hidden state (temporal
// reasoning). For feature width C the hidden state has width C/2, and every
// instance embeds into C/2 and emits C/2 channels.
struct RLSTMParams {
  NonLocalParams ix, ih, fx, fh, ox, oh, gx, gh;

  void validate(std::int64_t channels) const;
};

// Hidden and cell state, both [(H*W) x C/2] in flattened row-major layout so
// position (i*W + j) corresponds to grid cell (i, j).
struct RLSTMState {
  Tensor h;
  Tensor c;

  static RLSTMState zero(std::int64_t positions, std::int64_t half_channels);
};

struct RLSTMVars {
  NonLocalVars ix, ih, fx, fh, ox, oh, gx, gh;
};

struct RLSTMStateVars {
  ag::Var h;
  ag::Var c;
};

// Parameter paths used under a given prefix, e.g. "<prefix>.ix.theta".
std::vector<std::string> rlstm_param_paths(const std::string& prefix);

// Creates the eight instances' embeddings in `params` (Xavier-Glorot
// uniform) for feature width `channels`.
void create_rlstm_params(ag::ParamSet& params, const std::string& prefix, std::int64_t channels,
                         std::mt19937_64& rng);
RLSTMVars bind_rlstm_params(ag::Tape& tape, ag::ParamSet& params, const std::string& prefix);

// ---- Tape form ---------------------------------------------------------------

// One cell update:
//   i = sigmoid(attend_ix(x,x) + attend_ih(x,h))      (f, o analogous)
//   g = tanh(attend_gx(x,x) + attend_gh(x,h))
//   c' = f.c + i.g
//   h' = o.tanh(c')
// Gate values are range-checked every step, which doubles as the NaN trap.
RLSTMStateVars rlstm_step(ag::Var x, const RLSTMStateVars& state, const RLSTMVars& params,
                          Normalizer norm = Normalizer::kSoftmax);

// Folds rlstm_step over t = 1..T starting from the all-zero state. When
// `intermediate_h` is non-null every hidden state is appended to it.
RLSTMStateVars rlstm_sequence(ag::Tape& tape, std::span<const ag::Var> xs, const RLSTMVars& params,
                              Normalizer norm = Normalizer::kSoftmax,
                              std::vector<ag::Var>* intermediate_h = nullptr);

// ---- Value form ----------------------------------------------------------------

RLSTMState rlstm_step(const Tensor& x, const RLSTMState& state, const RLSTMParams& params,
                      Normalizer norm = Normalizer::kSoftmax);
RLSTMState rlstm_sequence(std::span<const Tensor> xs, const RLSTMParams& params,
                          Normalizer norm = Normalizer::kSoftmax,
                          std::vector<Tensor>* intermediate_h = nullptr);

// Restores the spatial layout of a flattened hidden state: [(H*W) x C/2] to
// [H x W x C/2], row-major.
Tensor unflatten_hidden(const Tensor& h, const Shape3& shape);

}  // namespace relstm
