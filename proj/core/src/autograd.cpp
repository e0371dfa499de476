#include "relstm/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace relstm::ag {

namespace {

// a . b^T with ascending inner accumulation.
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double s = 0.0;
      for (std::int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      out.at(i, j) = s;
    }
  }
  return out;
}

// a^T . b with ascending inner accumulation.
Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::int64_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::int64_t kk = 0; kk < k; ++kk) {
    const double* arow = a.data() + kk * m;
    const double* brow = b.data() + kk * n;
    for (std::int64_t i = 0; i < m; ++i) {
      double* orow = out.data() + i * n;
      const double av = arow[i];
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

void require_same_tape(Var a, Var b, const char* who) {
  if (a.tape != b.tape) throw ShapeError(std::string(who) + ": operands live on different tapes");
}

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }

Tensor& ParamSet::create(const std::string& path, Tensor init) {
  auto [it, inserted] = entries_.emplace(path, std::make_pair(std::move(init), Tensor()));
  if (!inserted) throw DataError("ParamSet: duplicate parameter path '" + path + "'");
  it->second.second = Tensor(it->second.first.shape());
  return it->second.first;
}

Tensor& ParamSet::value(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw DataError("ParamSet: unknown parameter path '" + path + "'");
  return it->second.first;
}

const Tensor& ParamSet::value(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw DataError("ParamSet: unknown parameter path '" + path + "'");
  return it->second.first;
}

Tensor& ParamSet::grad(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw DataError("ParamSet: unknown parameter path '" + path + "'");
  return it->second.second;
}

const Tensor& ParamSet::grad(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw DataError("ParamSet: unknown parameter path '" + path + "'");
  return it->second.second;
}

void ParamSet::zero_grad() {
  for (auto& [path, vg] : entries_) {
    std::fill(vg.second.data(), vg.second.data() + vg.second.size(), 0.0);
  }
}

std::vector<std::string> ParamSet::paths() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [path, vg] : entries_) out.push_back(path);
  return out;
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), {}, nullptr, "input"});
  return Var{this, static_cast<std::int64_t>(nodes_.size() - 1)};
}

Var Tape::param(ParamSet& params, const std::string& path) {
  Var v = input(params.value(path));
  bindings_.push_back(ParamBinding{v.id, &params, path});
  return v;
}

Var Tape::make(Tensor value, std::vector<std::int64_t> parents, BackwardFn backward,
               const char* op_name) {
  nodes_.push_back(Node{std::move(value), Tensor(), std::move(parents), std::move(backward),
                        op_name});
  return Var{this, static_cast<std::int64_t>(nodes_.size() - 1)};
}

void Tape::add_grad(std::int64_t id, const Tensor& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!g.same_shape(n.value)) {
    throw ShapeError(std::string("Tape: gradient shape ") + g.shape_str() +
                     " does not match value shape " + n.value.shape_str() + " for op " + n.op);
  }
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  for (std::int64_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(Var loss, bool accumulate_params) {
  if (loss.tape != this) throw ShapeError("Tape: loss lives on a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("Tape: backward requires a scalar loss, got shape " +
                     loss.value().shape_str());
  }
  add_grad(loss.id, Tensor::full(loss.value().shape(), 1.0));
  for (std::int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.grad.empty() && n.backward) n.backward(*this, i);
  }
  if (!accumulate_params) return;
  for (const ParamBinding& b : bindings_) {
    const Node& n = nodes_[static_cast<std::size_t>(b.node_id)];
    if (n.grad.empty()) continue;  // parameter not reached by this loss
    Tensor& acc = b.params->grad(b.path);
    for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += n.grad[i];
  }
}

std::map<std::string, Tensor> Tape::param_gradients() const {
  std::map<std::string, Tensor> out;
  for (const ParamBinding& b : bindings_) {
    const Node& n = nodes_[static_cast<std::size_t>(b.node_id)];
    if (n.grad.empty()) continue;
    auto it = out.find(b.path);
    if (it == out.end()) {
      out.emplace(b.path, n.grad);
    } else {
      for (std::int64_t i = 0; i < n.grad.size(); ++i) it->second[i] += n.grad[i];
    }
  }
  return out;
}

// ---- op definitions ---------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  Tensor out = relstm::matmul(a.value(), b.value());
  return a.tape->make(
      std::move(out), {a.id, b.id},
      [](Tape& t, std::int64_t self) {
        const Tensor& g = t.grad(self);
        const auto& ps = t.parents(self);
        t.add_grad(ps[0], matmul_nt(g, t.value(ps[1])));
        t.add_grad(ps[1], matmul_tn(t.value(ps[0]), g));
      },
      "matmul");
}

Var softmax_rows(Var a) {
  Tensor out = relstm::softmax_rows(a.value());
  return a.tape->make(
      std::move(out), {a.id},
      [](Tape& t, std::int64_t self) {
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad(self);
        Tensor dx(y.shape());
        const std::int64_t m = y.rows(), n = y.cols();
        for (std::int64_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::int64_t j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
          for (std::int64_t j = 0; j < n; ++j) dx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
        }
        t.add_grad(t.parents(self)[0], dx);
      },
      "softmax_rows");
}

Var position_linear(Var x, Var w) {
  if (x.value().rank() != 2 || w.value().rank() != 2 || x.value().cols() != w.value().rows()) {
    throw ShapeError("position_linear: feature width " + x.value().shape_str() +
                     " does not match map " + w.value().shape_str());
  }
  return matmul(x, w);
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  Tensor out = relstm::add(a.value(), b.value());
  return a.tape->make(
      std::move(out), {a.id, b.id},
      [](Tape& t, std::int64_t self) {
        const Tensor& g = t.grad(self);
        t.add_grad(t.parents(self)[0], g);
        t.add_grad(t.parents(self)[1], g);
      },
      "add");
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  Tensor out = relstm::sub(a.value(), b.value());
  return a.tape->make(
      std::move(out), {a.id, b.id},
      [](Tape& t, std::int64_t self) {
        const Tensor& g = t.grad(self);
        t.add_grad(t.parents(self)[0], g);
        t.add_grad(t.parents(self)[1], relstm::scale(g, -1.0));
      },
      "sub");
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b, "hadamard");
  Tensor out = relstm::hadamard(a.value(), b.value());
  return a.tape->make(
      std::move(out), {a.id, b.id},
      [](Tape& t, std::int64_t self) {
        const Tensor& g = t.grad(self);
        const auto& ps = t.parents(self);
        t.add_grad(ps[0], relstm::hadamard(g, t.value(ps[1])));
        t.add_grad(ps[1], relstm::hadamard(g, t.value(ps[0])));
      },
      "hadamard");
}

Var sigmoid(Var a) {
  Tensor out = relstm::sigmoid(a.value());
  return a.tape->make(
      std::move(out), {a.id},
      [](Tape& t, std::int64_t self) {
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad(self);
        Tensor dx(y.shape());
        for (std::int64_t i = 0; i < y.size(); ++i) dx[i] = g[i] * y[i] * (1.0 - y[i]);
        t.add_grad(t.parents(self)[0], dx);
      },
      "sigmoid");
}

Var tanh(Var a) {
  Tensor out = relstm::tanh(a.value());
  return a.tape->make(
      std::move(out), {a.id},
      [](Tape& t, std::int64_t self) {
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad(self);
        Tensor dx(y.shape());
        for (std::int64_t i = 0; i < y.size(); ++i) dx[i] = g[i] * (1.0 - y[i] * y[i]);
        t.add_grad(t.parents(self)[0], dx);
      },
      "tanh");
}

Var scale(Var a, double s) {
  Tensor out = relstm::scale(a.value(), s);
  return a.tape->make(
      std::move(out), {a.id},
      [s](Tape& t, std::int64_t self) {
        t.add_grad(t.parents(self)[0], relstm::scale(t.grad(self), s));
      },
      "scale");
}

Var reshape(Var a, std::vector<std::int64_t> shape) {
  Tensor out = relstm::reshape(a.value(), shape);
  return a.tape->make(
      std::move(out), {a.id},
      [](Tape& t, std::int64_t self) {
        const std::int64_t p = t.parents(self)[0];
        t.add_grad(p, relstm::reshape(t.grad(self), t.value(p).shape()));
      },
      "reshape");
}

Var transpose(Var a) {
  Tensor out = relstm::transpose(a.value());
  return a.tape->make(
      std::move(out), {a.id},
      [](Tape& t, std::int64_t self) {
        t.add_grad(t.parents(self)[0], relstm::transpose(t.grad(self)));
      },
      "transpose");
}

Var reduce_mean(Var a, std::int64_t axis) {
  Tensor out = relstm::reduce_mean(a.value(), axis);
  return a.tape->make(
      std::move(out), {a.id},
      [axis](Tape& t, std::int64_t self) {
        const std::int64_t p = t.parents(self)[0];
        const Tensor& x = t.value(p);
        const Tensor& g = t.grad(self);
        std::int64_t outer = 1, inner = 1;
        for (std::int64_t i = 0; i < axis; ++i) outer *= x.extent(i);
        for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
        const std::int64_t len = x.extent(axis);
        const double inv = 1.0 / static_cast<double>(len);
        Tensor dx(x.shape());
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* gs = g.data() + o * inner;
          for (std::int64_t l = 0; l < len; ++l) {
            double* dst = dx.data() + (o * len + l) * inner;
            for (std::int64_t in = 0; in < inner; ++in) dst[in] = gs[in] * inv;
          }
        }
        t.add_grad(p, dx);
      },
      "reduce_mean");
}

Var concat(Var a, Var b, std::int64_t axis) {
  require_same_tape(a, b, "concat");
  Tensor out = relstm::concat(a.value(), b.value(), axis);
  return a.tape->make(
      std::move(out), {a.id, b.id},
      [axis](Tape& t, std::int64_t self) {
        const auto& ps = t.parents(self);
        const Tensor& xa = t.value(ps[0]);
        const Tensor& xb = t.value(ps[1]);
        const Tensor& g = t.grad(self);
        std::int64_t outer = 1, inner = 1;
        for (std::int64_t i = 0; i < axis; ++i) outer *= xa.extent(i);
        for (std::int64_t i = axis + 1; i < xa.rank(); ++i) inner *= xa.extent(i);
        const std::int64_t la = xa.extent(axis), lb = xb.extent(axis);
        Tensor da(xa.shape()), db(xb.shape());
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = g.data() + o * (la + lb) * inner;
          std::copy(src, src + la * inner, da.data() + o * la * inner);
          std::copy(src + la * inner, src + (la + lb) * inner, db.data() + o * lb * inner);
        }
        t.add_grad(ps[0], da);
        t.add_grad(ps[1], db);
      },
      "concat");
}

Var sum_all(Var a) {
  Tensor out = relstm::sum_all(a.value());
  return a.tape->make(
      std::move(out), {a.id},
      [](Tape& t, std::int64_t self) {
        const std::int64_t p = t.parents(self)[0];
        t.add_grad(p, Tensor::full(t.value(p).shape(), t.grad(self)[0]));
      },
      "sum_all");
}

Var batch_norm_train(Var x, Var gamma, Var beta, Tensor* batch_mean, Tensor* batch_var) {
  require_same_tape(x, gamma, "batch_norm");
  require_same_tape(x, beta, "batch_norm");
  Tensor mean, var;
  Tensor out = batch_norm_train_forward(x.value(), gamma.value(), beta.value(), &mean, &var);
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  const std::int64_t n = x.value().rows(), c = x.value().cols();
  // Save the normalized activations and inverse stddev for the backward rule.
  Tensor xhat({n, c}), inv_std({c});
  for (std::int64_t j = 0; j < c; ++j) {
    inv_std[j] = 1.0 / std::sqrt(var[j] + kBatchNormEps);
    for (std::int64_t i = 0; i < n; ++i) {
      xhat.at(i, j) = (x.value().at(i, j) - mean[j]) * inv_std[j];
    }
  }
  return x.tape->make(
      std::move(out), {x.id, gamma.id, beta.id},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::int64_t self) {
        const auto& ps = t.parents(self);
        const Tensor& g = t.grad(self);
        const Tensor& gm = t.value(ps[1]);
        const std::int64_t n = g.rows(), c = g.cols();
        Tensor dgamma({c}), dbeta({c}), dx({n, c});
        for (std::int64_t j = 0; j < c; ++j) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::int64_t i = 0; i < n; ++i) {
            sum_g += g.at(i, j);
            sum_gx += g.at(i, j) * xhat.at(i, j);
          }
          dbeta[j] = sum_g;
          dgamma[j] = sum_gx;
          const double mg = sum_g / static_cast<double>(n);
          const double mgx = sum_gx / static_cast<double>(n);
          const double k = gm[j] * inv_std[j];
          for (std::int64_t i = 0; i < n; ++i) {
            dx.at(i, j) = k * (g.at(i, j) - mg - xhat.at(i, j) * mgx);
          }
        }
        t.add_grad(ps[0], dx);
        t.add_grad(ps[1], dgamma);
        t.add_grad(ps[2], dbeta);
      },
      "batch_norm_train");
}

Var batch_norm_infer(Var x, Var gamma, Var beta, const BatchNormState& stats) {
  require_same_tape(x, gamma, "batch_norm");
  require_same_tape(x, beta, "batch_norm");
  Tensor out = batch_norm_infer_forward(x.value(), gamma.value(), beta.value(), stats);
  const std::int64_t c = x.value().cols();
  Tensor inv_std({c}), mean = stats.running_mean;
  for (std::int64_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(stats.running_var[j] + kBatchNormEps);
  return x.tape->make(
      std::move(out), {x.id, gamma.id, beta.id},
      [inv_std = std::move(inv_std), mean = std::move(mean)](Tape& t, std::int64_t self) {
        const auto& ps = t.parents(self);
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ps[0]);
        const Tensor& gm = t.value(ps[1]);
        const std::int64_t n = g.rows(), c = g.cols();
        Tensor dgamma({c}), dbeta({c}), dx({n, c});
        for (std::int64_t j = 0; j < c; ++j) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::int64_t i = 0; i < n; ++i) {
            const double xh = (x.at(i, j) - mean[j]) * inv_std[j];
            sum_g += g.at(i, j);
            sum_gx += g.at(i, j) * xh;
            dx.at(i, j) = g.at(i, j) * gm[j] * inv_std[j];
          }
          dbeta[j] = sum_g;
          dgamma[j] = sum_gx;
        }
        t.add_grad(ps[0], dx);
        t.add_grad(ps[1], dgamma);
        t.add_grad(ps[2], dbeta);
      },
      "batch_norm_infer");
}

Var dropout(Var x, double drop_prob, std::mt19937_64& rng, bool train) {
  if (drop_prob < 0.0 || drop_prob >= 1.0) {
    throw DataError("dropout: drop probability must lie in [0,1), got " + std::to_string(drop_prob));
  }
  if (!train || drop_prob == 0.0) {
    return x.tape->make(
        x.value(), {x.id},
        [](Tape& t, std::int64_t self) { t.add_grad(t.parents(self)[0], t.grad(self)); },
        "dropout_passthrough");
  }
  const double keep = 1.0 - drop_prob;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor mask(x.value().shape());
  for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = unit(rng) < keep ? 1.0 : 0.0;
  Tensor out(x.value().shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i] / keep;
  return x.tape->make(
      std::move(out), {x.id},
      [mask = std::move(mask), keep](Tape& t, std::int64_t self) {
        const Tensor& g = t.grad(self);
        Tensor dx(g.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) dx[i] = g[i] * mask[i] / keep;
        t.add_grad(t.parents(self)[0], dx);
      },
      "dropout");
}

Tensor xavier_uniform(std::vector<std::int64_t> shape, std::int64_t fan_in, std::int64_t fan_out,
                      std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

GradCheckReport grad_check(const LossBuilder& build, ParamSet& params, double h, double tol) {
  if (h <= 0.0) throw DataError("grad_check: step must be positive");

  params.zero_grad();
  {
    Tape tape;
    Var loss = build(tape, params);
    tape.backward(loss);
  }
  // Snapshot the analytic gradients before finite differences disturb anything.
  std::map<std::string, Tensor> analytic;
  params.for_each([&](const std::string& path, Tensor&, Tensor& grad) { analytic[path] = grad; });

  auto eval = [&]() {
    Tape tape;
    Var loss = build(tape, params);
    return loss.value()[0];
  };

  GradCheckReport report;
  params.for_each([&](const std::string& path, Tensor& value, Tensor&) {
    const Tensor& a = analytic[path];
    for (std::int64_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + h;
      const double up = eval();
      value[i] = saved - h;
      const double down = eval();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = std::abs(a[i] - numeric) /
                         std::max({std::abs(a[i]), std::abs(numeric), 1e-8});
      report.elements_checked++;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel > tol) {
        report.failures.push_back(GradCheckFailure{path, i, a[i], numeric, rel});
      }
    }
  });
  return report;
}

}  // namespace relstm::ag
