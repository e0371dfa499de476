#include "relstm/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "relstm/synthdata.hpp"

namespace relstm {

namespace {

using json = nlohmann::json;

struct ConvGeometry {
  std::int64_t in_h, in_w, c_in;
  std::int64_t kh, kw, c_out;
  std::int64_t pad_h, pad_w;
  std::int64_t out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, Padding padding) {
  if (x.rank() != 3 || k.rank() != 4) {
    throw ShapeError("conv2d: expected image [HxWxC] and kernel [khxkwxCinxCout], got " +
                     x.shape_str() + " and " + k.shape_str());
  }
  ConvGeometry g;
  g.in_h = x.extent(0);
  g.in_w = x.extent(1);
  g.c_in = x.extent(2);
  g.kh = k.extent(0);
  g.kw = k.extent(1);
  g.c_out = k.extent(3);
  if (k.extent(2) != g.c_in) {
    throw ShapeError("conv2d: kernel " + k.shape_str() + " does not accept " + x.shape_str());
  }
  if (padding == Padding::kSame) {
    if (g.kh % 2 == 0 || g.kw % 2 == 0) {
      throw ShapeError("conv2d: same padding requires odd kernel extents, got " + k.shape_str());
    }
    g.pad_h = (g.kh - 1) / 2;
    g.pad_w = (g.kw - 1) / 2;
    g.out_h = g.in_h;
    g.out_w = g.in_w;
  } else {
    g.pad_h = 0;
    g.pad_w = 0;
    g.out_h = g.in_h - g.kh + 1;
    g.out_w = g.in_w - g.kw + 1;
    if (g.out_h < 1 || g.out_w < 1) {
      throw ShapeError("conv2d: kernel " + k.shape_str() + " too large for " + x.shape_str());
    }
  }
  return g;
}

Tensor conv_forward(const Tensor& x, const Tensor& k, const ConvGeometry& g) {
  Tensor out({g.out_h, g.out_w, g.c_out});
  for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
      double* orow = out.data() + (oh * g.out_w + ow) * g.c_out;
      for (std::int64_t p = 0; p < g.kh; ++p) {
        const std::int64_t ih = oh + p - g.pad_h;
        if (ih < 0 || ih >= g.in_h) continue;
        for (std::int64_t q = 0; q < g.kw; ++q) {
          const std::int64_t iw = ow + q - g.pad_w;
          if (iw < 0 || iw >= g.in_w) continue;
          const double* xrow = x.data() + (ih * g.in_w + iw) * g.c_in;
          const double* krow = k.data() + (p * g.kw + q) * g.c_in * g.c_out;
          for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
            const double xv = xrow[ci];
            const double* kk = krow + ci * g.c_out;
            for (std::int64_t co = 0; co < g.c_out; ++co) orow[co] += xv * kk[co];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

ag::Var conv2d(ag::Var x, ag::Var kernel, Padding padding) {
  const ConvGeometry g = conv_geometry(x.value(), kernel.value(), padding);
  Tensor out = conv_forward(x.value(), kernel.value(), g);
  return x.tape->make(
      std::move(out), {x.id, kernel.id},
      [g](ag::Tape& t, std::int64_t self) {
        const auto& ps = t.parents(self);
        const Tensor& x = t.value(ps[0]);
        const Tensor& k = t.value(ps[1]);
        const Tensor& gr = t.grad(self);
        Tensor dx(x.shape()), dk(k.shape());
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const double* grow = gr.data() + (oh * g.out_w + ow) * g.c_out;
            for (std::int64_t p = 0; p < g.kh; ++p) {
              const std::int64_t ih = oh + p - g.pad_h;
              if (ih < 0 || ih >= g.in_h) continue;
              for (std::int64_t q = 0; q < g.kw; ++q) {
                const std::int64_t iw = ow + q - g.pad_w;
                if (iw < 0 || iw >= g.in_w) continue;
                const double* xrow = x.data() + (ih * g.in_w + iw) * g.c_in;
                double* dxrow = dx.data() + (ih * g.in_w + iw) * g.c_in;
                const std::int64_t kbase = (p * g.kw + q) * g.c_in * g.c_out;
                for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
                  const double* kk = k.data() + kbase + ci * g.c_out;
                  double* dkk = dk.data() + kbase + ci * g.c_out;
                  double acc = 0.0;
                  for (std::int64_t co = 0; co < g.c_out; ++co) {
                    acc += kk[co] * grow[co];
                    dkk[co] += xrow[ci] * grow[co];
                  }
                  dxrow[ci] += acc;
                }
              }
            }
          }
        }
        t.add_grad(ps[0], dx);
        t.add_grad(ps[1], dk);
      },
      "conv2d");
}

ag::Var avg_pool(ag::Var x, std::int64_t out_h, std::int64_t out_w) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) {
    throw ShapeError("avg_pool: expected [HxWxC], got " + xv.shape_str());
  }
  const std::int64_t in_h = xv.extent(0), in_w = xv.extent(1), c = xv.extent(2);
  if (out_h < 1 || out_w < 1 || out_h > in_h || out_w > in_w) {
    throw ShapeError("avg_pool: cannot pool " + xv.shape_str() + " onto " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  Tensor out({out_h, out_w, c});
  for (std::int64_t i = 0; i < out_h; ++i) {
    const std::int64_t r0 = i * in_h / out_h, r1 = (i + 1) * in_h / out_h;
    for (std::int64_t j = 0; j < out_w; ++j) {
      const std::int64_t c0 = j * in_w / out_w, c1 = (j + 1) * in_w / out_w;
      const double inv = 1.0 / static_cast<double>((r1 - r0) * (c1 - c0));
      double* orow = out.data() + (i * out_w + j) * c;
      for (std::int64_t r = r0; r < r1; ++r) {
        for (std::int64_t cc = c0; cc < c1; ++cc) {
          const double* xrow = xv.data() + (r * in_w + cc) * c;
          for (std::int64_t ch = 0; ch < c; ++ch) orow[ch] += xrow[ch];
        }
      }
      for (std::int64_t ch = 0; ch < c; ++ch) orow[ch] *= inv;
    }
  }
  return x.tape->make(
      std::move(out), {x.id},
      [in_h, in_w, out_h, out_w, c](ag::Tape& t, std::int64_t self) {
        const Tensor& g = t.grad(self);
        Tensor dx({in_h, in_w, c});
        for (std::int64_t i = 0; i < out_h; ++i) {
          const std::int64_t r0 = i * in_h / out_h, r1 = (i + 1) * in_h / out_h;
          for (std::int64_t j = 0; j < out_w; ++j) {
            const std::int64_t c0 = j * in_w / out_w, c1 = (j + 1) * in_w / out_w;
            const double inv = 1.0 / static_cast<double>((r1 - r0) * (c1 - c0));
            const double* grow = g.data() + (i * out_w + j) * c;
            for (std::int64_t r = r0; r < r1; ++r) {
              for (std::int64_t cc = c0; cc < c1; ++cc) {
                double* dxrow = dx.data() + (r * in_w + cc) * c;
                for (std::int64_t ch = 0; ch < c; ++ch) dxrow[ch] += grow[ch] * inv;
              }
            }
          }
        }
        t.add_grad(t.parents(self)[0], dx);
      },
      "avg_pool");
}

ag::Var max_pool(ag::Var x, std::int64_t out_h, std::int64_t out_w) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) {
    throw ShapeError("max_pool: expected [HxWxC], got " + xv.shape_str());
  }
  const std::int64_t in_h = xv.extent(0), in_w = xv.extent(1), c = xv.extent(2);
  if (out_h < 1 || out_w < 1 || out_h > in_h || out_w > in_w) {
    throw ShapeError("max_pool: cannot pool " + xv.shape_str() + " onto " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  Tensor out({out_h, out_w, c});
  // Flat source index of each bin's (first) maximum, for the backward route.
  std::vector<std::int64_t> arg(static_cast<std::size_t>(out.size()));
  for (std::int64_t i = 0; i < out_h; ++i) {
    const std::int64_t r0 = i * in_h / out_h, r1 = (i + 1) * in_h / out_h;
    for (std::int64_t j = 0; j < out_w; ++j) {
      const std::int64_t c0 = j * in_w / out_w, c1 = (j + 1) * in_w / out_w;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        std::int64_t best = (r0 * in_w + c0) * c + ch;
        double best_v = xv[best];
        for (std::int64_t r = r0; r < r1; ++r) {
          for (std::int64_t cc = c0; cc < c1; ++cc) {
            const std::int64_t idx = (r * in_w + cc) * c + ch;
            if (xv[idx] > best_v) {
              best_v = xv[idx];
              best = idx;
            }
          }
        }
        const std::int64_t oidx = (i * out_w + j) * c + ch;
        out[oidx] = best_v;
        arg[static_cast<std::size_t>(oidx)] = best;
      }
    }
  }
  return x.tape->make(
      std::move(out), {x.id},
      [arg = std::move(arg)](ag::Tape& t, std::int64_t self) {
        const Tensor& g = t.grad(self);
        const std::int64_t p = t.parents(self)[0];
        Tensor dx(t.value(p).shape());
        for (std::int64_t i = 0; i < g.size(); ++i) dx[arg[static_cast<std::size_t>(i)]] += g[i];
        t.add_grad(p, dx);
      },
      "max_pool");
}

// ---- config -------------------------------------------------------------------

double ModelConfig::drop_prob() const {
  return dropout_semantics == DropoutSemantics::kDropProbability ? dropout : 1.0 - dropout;
}

std::int64_t ModelConfig::head_inputs() const {
  return branches == Branches::kBoth ? 2 * feat_c : feat_c;
}

void ModelConfig::validate() const {
  if (segments < 1) throw DataError("config: segments must be >= 1");
  if (classes < 2) throw DataError("config: need at least 2 classes");
  Shape3{feat_h, feat_w, feat_c}.validate();
  if (input_h < 8 || input_w < 8 || input_c < 1) {
    throw DataError("config: input geometry too small");
  }
  if (fusion_weight < 0.0 || fusion_weight > 1.0) {
    throw DataError("config: fusion weight must lie in [0,1]");
  }
  if (bn_momentum < 0.0 || bn_momentum > 1.0) {
    throw DataError("config: batch-norm momentum must lie in [0,1]");
  }
  const double p = drop_prob();
  if (p < 0.0 || p >= 1.0) {
    throw DataError("config: dropout rate resolves to drop probability " + std::to_string(p) +
                    ", must lie in [0,1)");
  }
}

namespace {

const char* branches_name(Branches b) {
  switch (b) {
    case Branches::kLocal: return "local";
    case Branches::kNonLocal: return "nonlocal";
    case Branches::kBoth: return "both";
  }
  return "both";
}

Branches branches_from_name(const std::string& s) {
  if (s == "local") return Branches::kLocal;
  if (s == "nonlocal") return Branches::kNonLocal;
  if (s == "both") return Branches::kBoth;
  throw FormatError("config: unknown branches value '" + s + "'");
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) {
  json j = {
      {"attention_norm", cfg.attention_norm == Normalizer::kSoftmax ? "softmax" : "uniform"},
      {"bn_momentum", cfg.bn_momentum},
      {"branches", branches_name(cfg.branches)},
      {"classes", cfg.classes},
      {"dropout", cfg.dropout},
      {"dropout_semantics",
       cfg.dropout_semantics == DropoutSemantics::kDropProbability ? "drop" : "keep"},
      {"feat_c", cfg.feat_c},
      {"feat_h", cfg.feat_h},
      {"feat_w", cfg.feat_w},
      {"fusion_weight", cfg.fusion_weight},
      {"input_c", cfg.input_c},
      {"input_h", cfg.input_h},
      {"input_w", cfg.input_w},
      {"seed", cfg.seed},
      {"segments", cfg.segments},
  };
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: bad JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.attention_norm = j.at("attention_norm").get<std::string>() == "softmax"
                             ? Normalizer::kSoftmax
                             : Normalizer::kUniformDenominator;
    cfg.bn_momentum = j.at("bn_momentum").get<double>();
    cfg.branches = branches_from_name(j.at("branches").get<std::string>());
    cfg.classes = j.at("classes").get<std::int64_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.dropout_semantics = j.at("dropout_semantics").get<std::string>() == "drop"
                                ? DropoutSemantics::kDropProbability
                                : DropoutSemantics::kKeepProbability;
    cfg.feat_c = j.at("feat_c").get<std::int64_t>();
    cfg.feat_h = j.at("feat_h").get<std::int64_t>();
    cfg.feat_w = j.at("feat_w").get<std::int64_t>();
    cfg.fusion_weight = j.at("fusion_weight").get<double>();
    cfg.input_c = j.at("input_c").get<std::int64_t>();
    cfg.input_h = j.at("input_h").get<std::int64_t>();
    cfg.input_w = j.at("input_w").get<std::int64_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.segments = j.at("segments").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: missing field: ") + e.what());
  }
  return cfg;
}

// ---- model --------------------------------------------------------------------

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  const std::int64_t c = cfg_.feat_c, half = c / 2, mid = c / 2;

  params_.create("extractor.conv1.kernel",
                 ag::xavier_uniform({3, 3, cfg_.input_c, mid}, 9 * cfg_.input_c, 9 * mid, rng_));
  params_.create("extractor.conv2.kernel",
                 ag::xavier_uniform({3, 3, mid, c}, 9 * mid, 9 * c, rng_));

  if (cfg_.has_nonlocal()) {
    params_.create("bn.gamma", Tensor::full({c}, 1.0));
    params_.create("bn.beta", Tensor({c}));
    create_rlstm_params(params_, "rlstm", c, rng_);
    params_.create("expand.weight", ag::xavier_uniform({half, c}, half, c, rng_));
    params_.create("post.kernel", ag::xavier_uniform({3, 3, c, c}, 9 * c, 9 * c, rng_));
  }
  params_.create("head.weight",
                 ag::xavier_uniform({cfg_.head_inputs(), cfg_.classes}, cfg_.head_inputs(),
                                    cfg_.classes, rng_));
  params_.create("head.bias", Tensor({cfg_.classes}));

  bn_ = BatchNormState::init(c);
}

std::string Model::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void Model::set_rng_state(const std::string& text) {
  std::istringstream is(text);
  is >> rng_;
  if (!is) throw FormatError("model: malformed RNG state");
}

namespace {

// Binds parameters either for training (gradient accumulation) or as plain
// value copies for inference on a const model.
struct ParamBinder {
  ag::Tape& tape;
  const ag::ParamSet& values;
  ag::ParamSet* trainable;

  ag::Var operator()(const std::string& path) {
    return trainable ? tape.param(*trainable, path) : tape.input(values.value(path));
  }
};

ag::Var extractor_graph(ag::Tape& tape, const Tensor& snippet, const ModelConfig& cfg,
                        ParamBinder& bind) {
  if (snippet.rank() != 3 || snippet.extent(0) != cfg.input_h ||
      snippet.extent(1) != cfg.input_w || snippet.extent(2) != cfg.input_c) {
    throw ShapeError("extract_features: snippet " + snippet.shape_str() +
                     " does not match configured input " + std::to_string(cfg.input_h) + "x" +
                     std::to_string(cfg.input_w) + "x" + std::to_string(cfg.input_c));
  }
  const std::int64_t h1 = (cfg.input_h - 2) / 2, w1 = (cfg.input_w - 2) / 2;
  const std::int64_t h2 = h1 - 2, w2 = w1 - 2;
  if (h2 < cfg.feat_h || w2 < cfg.feat_w) {
    throw ShapeError("extract_features: input " + std::to_string(cfg.input_h) + "x" +
                     std::to_string(cfg.input_w) + " is too small for a " +
                     std::to_string(cfg.feat_h) + "x" + std::to_string(cfg.feat_w) +
                     " feature grid");
  }
  ag::Var x = tape.input(snippet);
  x = conv2d(x, bind("extractor.conv1.kernel"), Padding::kValid);
  x = ag::tanh(x);
  x = max_pool(x, h1, w1);
  x = conv2d(x, bind("extractor.conv2.kernel"), Padding::kValid);
  x = ag::tanh(x);
  return max_pool(x, cfg.feat_h, cfg.feat_w);
}

ag::Var spatial_mean(ag::Var feature_map) {
  const Tensor& v = feature_map.value();
  ag::Var flat = ag::reshape(feature_map, {v.extent(0) * v.extent(1), v.extent(2)});
  return ag::reduce_mean(flat, 0);
}

// Mean over snippets with the addends sorted per channel first, so the
// result is bitwise identical under any snippet permutation. The gradient is
// the uniform 1/T either way.
ag::Var ordered_temporal_mean(ag::Tape& tape, const std::vector<ag::Var>& vecs) {
  const std::int64_t c = vecs[0].value().size();
  const double inv = 1.0 / static_cast<double>(vecs.size());
  Tensor out(vecs[0].value().shape());
  std::vector<double> column(vecs.size());
  for (std::int64_t i = 0; i < c; ++i) {
    for (std::size_t t = 0; t < vecs.size(); ++t) column[t] = vecs[t].value()[i];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    out[i] = s * inv;
  }
  std::vector<std::int64_t> parents;
  parents.reserve(vecs.size());
  for (const ag::Var& v : vecs) parents.push_back(v.id);
  return tape.make(
      std::move(out), std::move(parents),
      [inv](ag::Tape& t, std::int64_t self) {
        const Tensor scaled = relstm::scale(t.grad(self), inv);
        for (std::int64_t p : t.parents(self)) t.add_grad(p, scaled);
      },
      "ordered_temporal_mean");
}

ag::Var local_branch_graph(ag::Tape& tape, std::span<const ag::Var> features) {
  if (features.empty()) throw ShapeError("local_branch: empty snippet list");
  std::vector<ag::Var> means;
  means.reserve(features.size());
  for (const ag::Var& f : features) means.push_back(spatial_mean(f));
  return ordered_temporal_mean(tape, means);
}

ag::Var nonlocal_branch_graph(ag::Tape& tape, std::span<const ag::Var> features,
                              const ModelConfig& cfg, ParamBinder& bind, bool train,
                              const BatchNormState& bn, BNStatSink* sink) {
  if (features.empty()) throw ShapeError("nonlocal_branch: empty snippet list");
  const std::int64_t h = cfg.feat_h, w = cfg.feat_w, c = cfg.feat_c;
  ag::Var gamma = bind("bn.gamma");
  ag::Var beta = bind("bn.beta");

  std::vector<ag::Var> xs;
  xs.reserve(features.size());
  for (const ag::Var& f : features) {
    ag::Var flat = ag::reshape(f, {h * w, c});
    if (train) {
      BNBatchStats stats;
      ag::Var normed = ag::batch_norm_train(flat, gamma, beta, &stats.mean, &stats.var);
      if (sink) sink->push_back(std::move(stats));
      xs.push_back(normed);
    } else {
      xs.push_back(ag::batch_norm_infer(flat, gamma, beta, bn));
    }
  }

  RLSTMVars cell{};
  {
    auto inst = [&](const char* name) {
      const std::string p = std::string("rlstm.") + name;
      return NonLocalVars{bind(p + ".theta"), bind(p + ".phi"), bind(p + ".g")};
    };
    cell = RLSTMVars{inst("ix"), inst("ih"), inst("fx"), inst("fh"),
                     inst("ox"), inst("oh"), inst("gx"), inst("gh")};
  }
  RLSTMStateVars fin = rlstm_sequence(tape, xs, cell, cfg.attention_norm);

  ag::Var restored = ag::position_linear(fin.h, bind("expand.weight"));  // [(HW) x C]
  ag::Var grid = ag::reshape(restored, {h, w, c});
  ag::Var residual = conv2d(ag::tanh(grid), bind("post.kernel"), Padding::kSame);
  return spatial_mean(ag::add(grid, residual));
}

ag::Var classify_graph(ag::Tape& tape, std::span<const ag::Var> branch_vectors,
                       const ModelConfig& cfg, ParamBinder& bind, bool train,
                       std::mt19937_64* dropout_rng) {
  if (branch_vectors.empty()) throw ShapeError("classify: no branch vectors");
  ag::Var v = branch_vectors[0];
  for (std::size_t i = 1; i < branch_vectors.size(); ++i) {
    v = ag::concat(v, branch_vectors[i], 0);
  }
  if (v.value().size() != cfg.head_inputs()) {
    throw ShapeError("classify: head expects " + std::to_string(cfg.head_inputs()) +
                     " inputs, got " + v.value().shape_str());
  }
  if (train && cfg.drop_prob() > 0.0) {
    if (!dropout_rng) throw DataError("classify: training forward needs a dropout RNG");
    v = ag::dropout(v, cfg.drop_prob(), *dropout_rng, true);
  }
  ag::Var row = ag::reshape(v, {1, cfg.head_inputs()});
  ag::Var scores = ag::matmul(row, bind("head.weight"));
  scores = ag::add(scores, ag::reshape(bind("head.bias"), {1, cfg.classes}));
  return ag::reshape(scores, {cfg.classes});
}

ag::Var scores_graph(ag::Tape& tape, std::span<const Tensor> snippets, const ModelConfig& cfg,
                     ParamBinder& bind, bool train, const BatchNormState& bn,
                     std::mt19937_64* dropout_rng, BNStatSink* sink) {
  if (snippets.empty()) throw ShapeError("video_scores: no snippets");
  std::vector<ag::Var> features;
  features.reserve(snippets.size());
  for (const Tensor& s : snippets) features.push_back(extractor_graph(tape, s, cfg, bind));

  std::vector<ag::Var> branch_vectors;
  if (cfg.has_local()) branch_vectors.push_back(local_branch_graph(tape, features));
  if (cfg.has_nonlocal()) {
    branch_vectors.push_back(nonlocal_branch_graph(tape, features, cfg, bind, train, bn, sink));
  }
  return classify_graph(tape, branch_vectors, cfg, bind, train, dropout_rng);
}

}  // namespace

ag::Var Model::extract_features(ag::Tape& tape, const Tensor& snippet) {
  ParamBinder bind{tape, params_, &params_};
  return extractor_graph(tape, snippet, cfg_, bind);
}

ag::Var Model::local_branch(ag::Tape& tape, std::span<const ag::Var> features) {
  return local_branch_graph(tape, features);
}

ag::Var Model::nonlocal_branch(ag::Tape& tape, std::span<const ag::Var> features, bool train,
                               BNStatSink* bn_sink) {
  ParamBinder bind{tape, params_, &params_};
  BNStatSink local_sink;
  BNStatSink* sink = bn_sink ? bn_sink : &local_sink;
  ag::Var out = nonlocal_branch_graph(tape, features, cfg_, bind, train, bn_, sink);
  if (!bn_sink && train) apply_bn_updates(local_sink);
  return out;
}

ag::Var Model::classify(ag::Tape& tape, std::span<const ag::Var> branch_vectors, bool train,
                        std::mt19937_64* dropout_rng) {
  ParamBinder bind{tape, params_, &params_};
  return classify_graph(tape, branch_vectors, cfg_, bind, train,
                        dropout_rng ? dropout_rng : &rng_);
}

ag::Var Model::video_scores(ag::Tape& tape, std::span<const Tensor> snippets, bool train,
                            std::mt19937_64* dropout_rng, BNStatSink* bn_sink) {
  ParamBinder bind{tape, params_, &params_};
  BNStatSink local_sink;
  BNStatSink* sink = bn_sink ? bn_sink : &local_sink;
  ag::Var out = scores_graph(tape, snippets, cfg_, bind, train, bn_,
                             dropout_rng ? dropout_rng : &rng_, sink);
  if (!bn_sink && train) apply_bn_updates(local_sink);
  return out;
}

Tensor Model::infer_scores(std::span<const Tensor> snippets) const {
  ag::Tape tape;
  ParamBinder bind{tape, params_, nullptr};
  return scores_graph(tape, snippets, cfg_, bind, /*train=*/false, bn_, nullptr, nullptr).value();
}

Tensor Model::group_scores(const std::vector<Tensor>& frames, std::int64_t groups) const {
  if (groups < 1) throw DataError("group_scores: group count must be >= 1");
  const auto length = static_cast<std::int64_t>(frames.size());
  if (length < cfg_.segments) {
    throw DataError("group_scores: video with " + std::to_string(length) +
                    " frames is shorter than " + std::to_string(cfg_.segments) + " segments");
  }
  Tensor sum({cfg_.classes});
  for (std::int64_t g = 0; g < groups; ++g) {
    const std::vector<std::int64_t> idx =
        segment_sample_equispaced(length, cfg_.segments, g, groups);
    std::vector<Tensor> snippets;
    snippets.reserve(idx.size());
    for (std::int64_t i : idx) snippets.push_back(frames[static_cast<std::size_t>(i)]);
    sum = relstm::add(sum, infer_scores(snippets));
  }
  return relstm::scale(sum, 1.0 / static_cast<double>(groups));
}

void Model::apply_bn_updates(const BNStatSink& sink) {
  for (const BNBatchStats& s : sink) {
    batch_norm_update(bn_, s.mean, s.var, cfg_.bn_momentum);
  }
}

Tensor late_fusion(const Tensor& scores_a, const Tensor& scores_b, double w) {
  if (w < 0.0 || w > 1.0) {
    throw DataError("late_fusion: weight must lie in [0,1], got " + std::to_string(w));
  }
  if (!scores_a.same_shape(scores_b)) {
    throw ShapeError("late_fusion: score shapes differ, " + scores_a.shape_str() + " vs " +
                     scores_b.shape_str());
  }
  Tensor out(scores_a.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = w * scores_a[i] + (1.0 - w) * scores_b[i];
  }
  return out;
}

std::int64_t argmax_lowest(const Tensor& scores) {
  std::int64_t best = 0;
  for (std::int64_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace relstm
