#pragma once

#include "relstm/autograd.hpp"
#include "relstm/tensor.hpp"

namespace relstm {

// How attention weights are normalized: per-row softmax over the pairwise
// exponential compatibilities (the default), or division by the position
// count N.
enum class Normalizer { kSoftmax, kUniformDenominator };

// Linear embeddings of one generalized non-local instance.
//   w_theta: [C_X x C_E]  query embedding
//   w_phi:   [C_Y x C_E]  key embedding
//   w_g:     [C_Y x C_Z]  value embedding
// No bias terms anywhere.
struct NonLocalParams {
  Tensor w_theta;
  Tensor w_phi;
  Tensor w_g;
};

// Row-stochastic pairwise weights (softmax mode): omega[i][j] is how much
// position j of the second argument contributes to output position i.
struct AttentionMatrix {
  Tensor omega;  // [N x N]
};

// Tape-side handles to one instance's embeddings.
struct NonLocalVars {
  ag::Var theta;
  ag::Var phi;
  ag::Var g;
};

// ---- Tape form (training path) ---------------------------------------------

ag::Var attention_logits(ag::Var x, ag::Var y, const NonLocalVars& params);
ag::Var attention_weights(ag::Var x, ag::Var y, const NonLocalVars& params,
                          Normalizer norm = Normalizer::kSoftmax);

// The generalized two-argument operation: queries from x, keys and values
// from y; each output row is the attention-weighted sum of embedded rows
// of y.
ag::Var attend(ag::Var x, ag::Var y, const NonLocalVars& params,
               Normalizer norm = Normalizer::kSoftmax);

// Single-argument special case (y = x).
ag::Var self_attend(ag::Var x, const NonLocalVars& params,
                    Normalizer norm = Normalizer::kSoftmax);

// ---- Value form ------------------------------------------------------------

AttentionMatrix attention_weights(const Tensor& x, const Tensor& y, const NonLocalParams& params,
                                  Normalizer norm = Normalizer::kSoftmax);
Tensor attend(const Tensor& x, const Tensor& y, const NonLocalParams& params,
              Normalizer norm = Normalizer::kSoftmax);
Tensor self_attend(const Tensor& x, const NonLocalParams& params,
                   Normalizer norm = Normalizer::kSoftmax);

}  // namespace relstm
