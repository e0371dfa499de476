#include "relstm/rlstm.hpp"

#include <cmath>

namespace relstm {

namespace {

void check_instance(const NonLocalParams& p, std::int64_t c_x, std::int64_t c_y,
                    std::int64_t half, const char* name) {
  if (p.w_theta.rank() != 2 || p.w_theta.rows() != c_x || p.w_theta.cols() != half ||
      p.w_phi.rank() != 2 || p.w_phi.rows() != c_y || p.w_phi.cols() != half ||
      p.w_g.rank() != 2 || p.w_g.rows() != c_y || p.w_g.cols() != half) {
    throw ShapeError(std::string("RLSTMParams: instance ") + name + " has shapes " +
                     p.w_theta.shape_str() + ", " + p.w_phi.shape_str() + ", " +
                     p.w_g.shape_str() + "; expected [" + std::to_string(c_x) + "x" +
                     std::to_string(half) + "], [" + std::to_string(c_y) + "x" +
                     std::to_string(half) + "], [" + std::to_string(c_y) + "x" +
                     std::to_string(half) + "]");
  }
}

// Gates are sigmoid/tanh outputs. Saturation can round them to the closed
// bounds in double precision, so only values beyond the bounds (or NaN,
// which fails every comparison) indicate a numeric failure upstream.
void check_gate(const Tensor& t, double lo, double hi, const char* name) {
  for (std::int64_t i = 0; i < t.size(); ++i) {
    if (!(t[i] >= lo && t[i] <= hi)) {
      throw NumericError(std::string("rlstm_step: gate ") + name + " value " +
                         std::to_string(t[i]) + " outside [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + "]");
    }
  }
}

ag::Var gate_preact(ag::Var x, ag::Var h, const NonLocalVars& from_x, const NonLocalVars& from_h,
                    Normalizer norm) {
  return ag::add(attend(x, x, from_x, norm), attend(x, h, from_h, norm));
}

}  // namespace

void RLSTMParams::validate(std::int64_t channels) const {
  if (channels < 2 || channels % 2 != 0) {
    throw ShapeError("RLSTMParams: feature width must be even and >= 2, got " +
                     std::to_string(channels));
  }
  const std::int64_t half = channels / 2;
  check_instance(ix, channels, channels, half, "ix");
  check_instance(fx, channels, channels, half, "fx");
  check_instance(ox, channels, channels, half, "ox");
  check_instance(gx, channels, channels, half, "gx");
  check_instance(ih, channels, half, half, "ih");
  check_instance(fh, channels, half, half, "fh");
  check_instance(oh, channels, half, half, "oh");
  check_instance(gh, channels, half, half, "gh");
}

RLSTMState RLSTMState::zero(std::int64_t positions, std::int64_t half_channels) {
  return RLSTMState{Tensor({positions, half_channels}), Tensor({positions, half_channels})};
}

std::vector<std::string> rlstm_param_paths(const std::string& prefix) {
  std::vector<std::string> out;
  for (const char* inst : {"ix", "ih", "fx", "fh", "ox", "oh", "gx", "gh"}) {
    for (const char* w : {"theta", "phi", "g"}) {
      out.push_back(prefix + "." + inst + "." + w);
    }
  }
  return out;
}

void create_rlstm_params(ag::ParamSet& params, const std::string& prefix, std::int64_t channels,
                         std::mt19937_64& rng) {
  const std::int64_t half = channels / 2;
  for (const char* inst : {"ix", "ih", "fx", "fh", "ox", "oh", "gx", "gh"}) {
    const std::int64_t c_y = inst[1] == 'x' ? channels : half;
    params.create(prefix + "." + inst + ".theta",
                  ag::xavier_uniform({channels, half}, channels, half, rng));
    params.create(prefix + "." + inst + ".phi", ag::xavier_uniform({c_y, half}, c_y, half, rng));
    params.create(prefix + "." + inst + ".g", ag::xavier_uniform({c_y, half}, c_y, half, rng));
  }
}

RLSTMVars bind_rlstm_params(ag::Tape& tape, ag::ParamSet& params, const std::string& prefix) {
  auto bind = [&](const char* inst) {
    return NonLocalVars{tape.param(params, prefix + "." + inst + ".theta"),
                        tape.param(params, prefix + "." + inst + ".phi"),
                        tape.param(params, prefix + "." + inst + ".g")};
  };
  return RLSTMVars{bind("ix"), bind("ih"), bind("fx"), bind("fh"),
                   bind("ox"), bind("oh"), bind("gx"), bind("gh")};
}

RLSTMStateVars rlstm_step(ag::Var x, const RLSTMStateVars& state, const RLSTMVars& params,
                          Normalizer norm) {
  if (x.value().rank() != 2 || state.h.value().rank() != 2 ||
      x.value().rows() != state.h.value().rows()) {
    throw ShapeError("rlstm_step: features " + x.value().shape_str() +
                     " and hidden state " + state.h.value().shape_str() +
                     " must share the position count");
  }
  if (!state.h.value().same_shape(state.c.value())) {
    throw ShapeError("rlstm_step: hidden " + state.h.value().shape_str() + " and cell " +
                     state.c.value().shape_str() + " shapes differ");
  }

  ag::Var i = ag::sigmoid(gate_preact(x, state.h, params.ix, params.ih, norm));
  ag::Var f = ag::sigmoid(gate_preact(x, state.h, params.fx, params.fh, norm));
  ag::Var o = ag::sigmoid(gate_preact(x, state.h, params.ox, params.oh, norm));
  ag::Var g = ag::tanh(gate_preact(x, state.h, params.gx, params.gh, norm));
  check_gate(i.value(), 0.0, 1.0, "i");
  check_gate(f.value(), 0.0, 1.0, "f");
  check_gate(o.value(), 0.0, 1.0, "o");
  check_gate(g.value(), -1.0, 1.0, "g");

  ag::Var c = ag::add(ag::hadamard(f, state.c), ag::hadamard(i, g));
  ag::Var h = ag::hadamard(o, ag::tanh(c));
  return RLSTMStateVars{h, c};
}

RLSTMStateVars rlstm_sequence(ag::Tape& tape, std::span<const ag::Var> xs, const RLSTMVars& params,
                              Normalizer norm, std::vector<ag::Var>* intermediate_h) {
  if (xs.empty()) throw ShapeError("rlstm_sequence: empty input sequence");
  const std::int64_t positions = xs[0].value().rows();
  const std::int64_t half = params.ih.phi.value().rows();
  RLSTMStateVars state{tape.input(Tensor({positions, half})),
                       tape.input(Tensor({positions, half}))};
  for (const ag::Var& x : xs) {
    state = rlstm_step(x, state, params, norm);
    if (intermediate_h) intermediate_h->push_back(state.h);
  }
  return state;
}

RLSTMState rlstm_step(const Tensor& x, const RLSTMState& state, const RLSTMParams& params,
                      Normalizer norm) {
  if (x.rank() != 2) throw ShapeError("rlstm_step: features must be rank-2, got " + x.shape_str());
  params.validate(x.cols());
  ag::Tape tape;
  auto bind = [&](const NonLocalParams& p) {
    return NonLocalVars{tape.input(p.w_theta), tape.input(p.w_phi), tape.input(p.w_g)};
  };
  RLSTMVars pv{bind(params.ix), bind(params.ih), bind(params.fx), bind(params.fh),
               bind(params.ox), bind(params.oh), bind(params.gx), bind(params.gh)};
  RLSTMStateVars out =
      rlstm_step(tape.input(x), RLSTMStateVars{tape.input(state.h), tape.input(state.c)}, pv, norm);
  return RLSTMState{out.h.value(), out.c.value()};
}

RLSTMState rlstm_sequence(std::span<const Tensor> xs, const RLSTMParams& params, Normalizer norm,
                          std::vector<Tensor>* intermediate_h) {
  if (xs.empty()) throw ShapeError("rlstm_sequence: empty input sequence");
  params.validate(xs[0].cols());
  ag::Tape tape;
  auto bind = [&](const NonLocalParams& p) {
    return NonLocalVars{tape.input(p.w_theta), tape.input(p.w_phi), tape.input(p.w_g)};
  };
  RLSTMVars pv{bind(params.ix), bind(params.ih), bind(params.fx), bind(params.fh),
               bind(params.ox), bind(params.oh), bind(params.gx), bind(params.gh)};
  std::vector<ag::Var> vars;
  vars.reserve(xs.size());
  for (const Tensor& x : xs) vars.push_back(tape.input(x));
  std::vector<ag::Var> hs;
  RLSTMStateVars fin = rlstm_sequence(tape, vars, pv, norm, intermediate_h ? &hs : nullptr);
  if (intermediate_h) {
    for (const ag::Var& h : hs) intermediate_h->push_back(h.value());
  }
  return RLSTMState{fin.h.value(), fin.c.value()};
}

Tensor unflatten_hidden(const Tensor& h, const Shape3& shape) {
  shape.validate();
  if (h.rank() != 2 || h.rows() != shape.positions() || h.cols() != shape.c / 2) {
    throw ShapeError("unflatten_hidden: " + h.shape_str() + " does not match " +
                     std::to_string(shape.h) + "x" + std::to_string(shape.w) + " grid with " +
                     std::to_string(shape.c / 2) + " channels");
  }
  return reshape(h, {shape.h, shape.w, shape.c / 2});
}

}  // namespace relstm
