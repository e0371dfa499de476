#include "relstm/nonlocal.hpp"

#include <cmath>

namespace relstm {

namespace {

void check_inputs(const Tensor& x, const Tensor& y, const Tensor& w_theta, const Tensor& w_phi,
                  const Tensor& w_g) {
  if (x.rank() != 2 || y.rank() != 2) {
    throw ShapeError("attend: inputs must be rank-2, got " + x.shape_str() + " and " +
                     y.shape_str());
  }
  if (x.rows() != y.rows()) {
    throw ShapeError("attend: position counts disagree, " + x.shape_str() + " vs " +
                     y.shape_str());
  }
  if (w_theta.rank() != 2 || w_theta.rows() != x.cols()) {
    throw ShapeError("attend: query embedding " + w_theta.shape_str() + " does not accept " +
                     x.shape_str());
  }
  if (w_phi.rank() != 2 || w_phi.rows() != y.cols()) {
    throw ShapeError("attend: key embedding " + w_phi.shape_str() + " does not accept " +
                     y.shape_str());
  }
  if (w_theta.cols() != w_phi.cols()) {
    throw ShapeError("attend: embedding widths disagree, " + w_theta.shape_str() + " vs " +
                     w_phi.shape_str());
  }
  if (w_g.rank() != 2 || w_g.rows() != y.cols()) {
    throw ShapeError("attend: value embedding " + w_g.shape_str() + " does not accept " +
                     y.shape_str());
  }
}

// y = exp(x) / n, used by the uniform-denominator mode. dy/dx = y, so the
// backward rule reuses the stored output.
ag::Var exp_over_n(ag::Var x, std::int64_t n) {
  Tensor out(x.value().shape());
  const double inv = 1.0 / static_cast<double>(n);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]) * inv;
  return x.tape->make(
      std::move(out), {x.id},
      [](ag::Tape& t, std::int64_t self) {
        t.add_grad(t.parents(self)[0], relstm::hadamard(t.grad(self), t.value(self)));
      },
      "exp_over_n");
}

}  // namespace

ag::Var attention_logits(ag::Var x, ag::Var y, const NonLocalVars& params) {
  check_inputs(x.value(), y.value(), params.theta.value(), params.phi.value(), params.g.value());
  ag::Var q = ag::position_linear(x, params.theta);  // [N x C_E]
  ag::Var k = ag::position_linear(y, params.phi);    // [N x C_E]
  return ag::matmul(q, ag::transpose(k));            // [N x N]
}

ag::Var attention_weights(ag::Var x, ag::Var y, const NonLocalVars& params, Normalizer norm) {
  ag::Var logits = attention_logits(x, y, params);
  if (norm == Normalizer::kSoftmax) return ag::softmax_rows(logits);
  return exp_over_n(logits, logits.value().rows());
}

ag::Var attend(ag::Var x, ag::Var y, const NonLocalVars& params, Normalizer norm) {
  ag::Var omega = attention_weights(x, y, params, norm);
  ag::Var values = ag::position_linear(y, params.g);  // [N x C_Z]
  return ag::matmul(omega, values);
}

ag::Var self_attend(ag::Var x, const NonLocalVars& params, Normalizer norm) {
  return attend(x, x, params, norm);
}

AttentionMatrix attention_weights(const Tensor& x, const Tensor& y, const NonLocalParams& params,
                                  Normalizer norm) {
  ag::Tape tape;
  ag::Var vx = tape.input(x);
  ag::Var vy = tape.input(y);
  NonLocalVars pv{tape.input(params.w_theta), tape.input(params.w_phi), tape.input(params.w_g)};
  return AttentionMatrix{attention_weights(vx, vy, pv, norm).value()};
}

Tensor attend(const Tensor& x, const Tensor& y, const NonLocalParams& params, Normalizer norm) {
  ag::Tape tape;
  ag::Var vx = tape.input(x);
  ag::Var vy = tape.input(y);
  NonLocalVars pv{tape.input(params.w_theta), tape.input(params.w_phi), tape.input(params.w_g)};
  return attend(vx, vy, pv, norm).value();
}

Tensor self_attend(const Tensor& x, const NonLocalParams& params, Normalizer norm) {
  return attend(x, x, params, norm);
}

}  // namespace relstm
