#include "relstm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "json.hpp"

namespace relstm {

namespace {

using njson = nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

double lr_schedule(std::int64_t epoch, double base, std::span<const std::int64_t> milestones,
                   double factor) {
  double lr = base;
  for (std::int64_t m : milestones) {
    if (epoch >= m) lr *= factor;
  }
  return lr;
}

SGDOptimizer::SGDOptimizer(const ag::ParamSet& params, SGDConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.lr < 0.0) throw DataError("sgd: learning rate must be nonnegative");
  if (!std::is_sorted(cfg_.milestones.begin(), cfg_.milestones.end())) {
    throw DataError("sgd: milestones must be sorted");
  }
  for (const std::string& p : params.paths()) {
    velocity_.emplace(p, Tensor(params.value(p).shape()));
  }
}

double SGDOptimizer::learning_rate(std::int64_t epoch) const {
  return lr_schedule(epoch, cfg_.lr, cfg_.milestones, cfg_.lr_factor);
}

const Tensor& SGDOptimizer::velocity(const std::string& path) const {
  auto it = velocity_.find(path);
  if (it == velocity_.end()) throw DataError("sgd: unknown parameter '" + path + "'");
  return it->second;
}

void SGDOptimizer::step(ag::ParamSet& params, double lr) {
  for (auto& [path, v] : velocity_) {
    Tensor& p = params.value(path);
    const Tensor& g = params.grad(path);
    if (!p.same_shape(v) || !p.same_shape(g)) {
      throw ShapeError("sgd: mismatched shapes for '" + path + "'");
    }
    // Normalization scale/shift stay out of the decay term.
    const double wd = (path == "bn.gamma" || path == "bn.beta") ? 0.0 : cfg_.weight_decay;
    for (std::int64_t i = 0; i < p.size(); ++i) {
      v[i] = cfg_.momentum * v[i] - lr * (g[i] + wd * p[i]);
      p[i] += v[i];
    }
  }
}

ag::Var softmax_cross_entropy(ag::Var scores, std::int64_t label) {
  const Tensor& s = scores.value();
  if (s.rank() != 1) {
    throw ShapeError("softmax_cross_entropy: expected a score vector, got " + s.shape_str());
  }
  if (label < 0 || label >= s.size()) {
    throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                    " outside [0, " + std::to_string(s.size()) + ")");
  }
  double mx = s[0];
  for (std::int64_t i = 1; i < s.size(); ++i) mx = std::max(mx, s[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < s.size(); ++i) sum += std::exp(s[i] - mx);
  const double loss = std::log(sum) + mx - s[label];
  return scores.tape->make(
      Tensor::scalar(loss), {scores.id},
      [label](ag::Tape& t, std::int64_t self) {
        const std::int64_t p = t.parents(self)[0];
        const Tensor& s = t.value(p);
        const double g = t.grad(self)[0];
        double mx = s[0];
        for (std::int64_t i = 1; i < s.size(); ++i) mx = std::max(mx, s[i]);
        double sum = 0.0;
        for (std::int64_t i = 0; i < s.size(); ++i) sum += std::exp(s[i] - mx);
        Tensor ds(s.shape());
        for (std::int64_t i = 0; i < s.size(); ++i) {
          ds[i] = g * (std::exp(s[i] - mx) / sum - (i == label ? 1.0 : 0.0));
        }
        t.add_grad(p, ds);
      },
      "softmax_cross_entropy");
}

std::string RunLog::csv() const {
  std::string out = "epoch,split,loss,accuracy,per_class_accuracy,lr\n";
  for (const EpochRecord& r : records) {
    out += std::to_string(r.epoch) + "," + r.split + "," + fmt_double(r.loss) + "," +
           fmt_double(r.accuracy) + ",";
    for (std::size_t i = 0; i < r.per_class_accuracy.size(); ++i) {
      if (i) out += ";";
      out += fmt_double(r.per_class_accuracy[i]);
    }
    out += "," + fmt_double(r.lr) + "\n";
  }
  return out;
}

std::string RunLog::json() const {
  njson arr = njson::array();
  for (const EpochRecord& r : records) {
    arr.push_back({{"epoch", r.epoch},
                   {"split", r.split},
                   {"loss", r.loss},
                   {"accuracy", r.accuracy},
                   {"per_class_accuracy", r.per_class_accuracy},
                   {"wall_time_s", r.wall_time_s},
                   {"lr", r.lr}});
  }
  return arr.dump(2);
}

namespace {

struct ClipResult {
  std::map<std::string, Tensor> grads;
  BNStatSink bn;
  double loss = 0.0;
  bool correct = false;
  std::int64_t label = 0;
};

struct MetricsAccumulator {
  std::vector<std::int64_t> per_class_total, per_class_correct;
  double loss_sum = 0.0;
  std::int64_t total = 0, correct = 0;

  explicit MetricsAccumulator(std::int64_t classes)
      : per_class_total(static_cast<std::size_t>(classes)),
        per_class_correct(static_cast<std::size_t>(classes)) {}

  void add(std::int64_t label, bool correct_pred, double loss) {
    ++total;
    loss_sum += loss;
    ++per_class_total[static_cast<std::size_t>(label)];
    if (correct_pred) {
      ++correct;
      ++per_class_correct[static_cast<std::size_t>(label)];
    }
  }

  std::vector<double> per_class() const {
    std::vector<double> out(per_class_total.size(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (per_class_total[i]) {
        out[i] = static_cast<double>(per_class_correct[i]) /
                 static_cast<double>(per_class_total[i]);
      }
    }
    return out;
  }
};

EvalResult metrics_from_scores(const std::vector<Tensor>& scores,
                               const std::vector<std::int64_t>& labels, std::int64_t classes) {
  EvalResult r;
  r.scores = scores;
  r.labels = labels;
  r.confusion.assign(static_cast<std::size_t>(classes),
                     std::vector<std::int64_t>(static_cast<std::size_t>(classes), 0));
  MetricsAccumulator acc(classes);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::int64_t pred = argmax_lowest(scores[i]);
    acc.add(labels[i], pred == labels[i], 0.0);
    r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred)]++;
  }
  r.accuracy = acc.total ? static_cast<double>(acc.correct) / static_cast<double>(acc.total) : 0.0;
  r.per_class_accuracy = acc.per_class();
  return r;
}

}  // namespace

RunLog train_stream(Model& model, const Dataset& data, const TrainOptions& opts) {
  if (opts.epochs < 0) throw DataError("train: epoch count must be >= 0");
  if (opts.batch_size < 1) throw DataError("train: batch size must be >= 1");
  if (opts.threads < 1) throw DataError("train: thread count must be >= 1");
  if (data.class_count != model.config().classes) {
    throw DataError("train: dataset holds " + std::to_string(data.class_count) +
                    " classes, model expects " + std::to_string(model.config().classes));
  }
  if (data.items.empty()) throw DataError("train: empty dataset");

  const std::int64_t n = static_cast<std::int64_t>(data.items.size());
  const std::int64_t segments = model.config().segments;

  // Clips are rendered once and kept; snippet choice varies per epoch.
  std::vector<std::vector<Tensor>> clips;
  std::vector<std::int64_t> labels;
  clips.reserve(static_cast<std::size_t>(n));
  for (const DatasetItem& item : data.items) {
    SynthVideo v = materialize(item, opts.stream);
    if (static_cast<std::int64_t>(v.frames.size()) < segments) {
      throw DataError("train: clip " + std::to_string(item.id) + " has " +
                      std::to_string(v.frames.size()) + " frames, fewer than " +
                      std::to_string(segments) + " segments");
    }
    clips.push_back(std::move(v.frames));
    labels.push_back(item.label);
  }

  SGDOptimizer optimizer(model.params(), opts.sgd);
  RunLog log;

  for (std::int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = optimizer.learning_rate(epoch);

    // Deterministic shuffle, independent of library distributions.
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    {
      std::mt19937_64 shuffle_rng(mix(opts.seed, 0xC0FFEEull + static_cast<std::uint64_t>(epoch)));
      for (std::int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::int64_t>(shuffle_rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      }
    }

    MetricsAccumulator metrics(model.config().classes);

    for (std::int64_t start = 0; start < n; start += opts.batch_size) {
      const std::int64_t batch_n = std::min(opts.batch_size, n - start);
      std::vector<ClipResult> results(static_cast<std::size_t>(batch_n));
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(batch_n));

      auto run_clip = [&](std::int64_t b) {
        try {
          const std::int64_t row = order[static_cast<std::size_t>(start + b)];
          const std::vector<Tensor>& frames = clips[static_cast<std::size_t>(row)];
          std::mt19937_64 clip_rng(
              mix(mix(opts.seed, static_cast<std::uint64_t>(epoch)),
                  static_cast<std::uint64_t>(data.items[static_cast<std::size_t>(row)].id)));
          const std::vector<std::int64_t> idx = segment_sample_random(
              static_cast<std::int64_t>(frames.size()), segments, clip_rng);
          std::vector<Tensor> snippets;
          snippets.reserve(idx.size());
          for (std::int64_t i : idx) snippets.push_back(frames[static_cast<std::size_t>(i)]);

          ClipResult& res = results[static_cast<std::size_t>(b)];
          res.label = labels[static_cast<std::size_t>(row)];
          ag::Tape tape;
          ag::Var scores =
              model.video_scores(tape, snippets, /*train=*/true, &clip_rng, &res.bn);
          ag::Var loss = softmax_cross_entropy(scores, res.label);
          res.loss = loss.value()[0];
          if (!std::isfinite(res.loss)) {
            throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
          }
          res.correct = argmax_lowest(scores.value()) == res.label;
          tape.backward(loss, /*accumulate_params=*/false);
          res.grads = tape.param_gradients();
        } catch (...) {
          errors[static_cast<std::size_t>(b)] = std::current_exception();
        }
      };

      if (opts.threads == 1 || batch_n == 1) {
        for (std::int64_t b = 0; b < batch_n; ++b) run_clip(b);
      } else {
        const std::int64_t workers = std::min(opts.threads, batch_n);
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (std::int64_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w]() {
            for (std::int64_t b = w; b < batch_n; b += workers) run_clip(b);
          });
        }
        for (std::thread& th : pool) th.join();
      }
      for (std::int64_t b = 0; b < batch_n; ++b) {
        if (errors[static_cast<std::size_t>(b)]) std::rethrow_exception(errors[static_cast<std::size_t>(b)]);
      }

      // Fixed-order reduction keeps any thread count bit-identical.
      model.params().zero_grad();
      for (std::int64_t b = 0; b < batch_n; ++b) {
        ClipResult& res = results[static_cast<std::size_t>(b)];
        for (auto& [path, g] : res.grads) {
          Tensor& acc = model.params().grad(path);
          for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
        }
        model.apply_bn_updates(res.bn);
        metrics.add(res.label, res.correct, res.loss);
      }
      const double inv = 1.0 / static_cast<double>(batch_n);
      model.params().for_each([&](const std::string&, Tensor&, Tensor& grad) {
        for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] *= inv;
      });
      optimizer.step(model.params(), lr);
    }

    model.params().for_each([&](const std::string& path, Tensor& value, Tensor&) {
      if (!value.all_finite()) {
        throw NumericError("train: non-finite parameter '" + path + "' after epoch " +
                           std::to_string(epoch));
      }
    });

    EpochRecord rec;
    rec.epoch = epoch;
    rec.split = "train";
    rec.loss = metrics.loss_sum / static_cast<double>(metrics.total);
    rec.accuracy = static_cast<double>(metrics.correct) / static_cast<double>(metrics.total);
    rec.per_class_accuracy = metrics.per_class();
    rec.lr = lr;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.records.push_back(std::move(rec));

    if (opts.eval_data && opts.eval_every > 0 && (epoch + 1) % opts.eval_every == 0) {
      const auto e0 = std::chrono::steady_clock::now();
      EvalResult ev = evaluate_stream(model, *opts.eval_data, opts.stream, opts.eval_groups);
      EpochRecord er;
      er.epoch = epoch;
      er.split = "test";
      er.loss = 0.0;
      er.accuracy = ev.accuracy;
      er.per_class_accuracy = ev.per_class_accuracy;
      er.lr = lr;
      er.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
      log.records.push_back(std::move(er));
    }
  }
  return log;
}

EvalResult evaluate_stream(const Model& model, const Dataset& data, Modality stream,
                           std::int64_t groups) {
  if (data.class_count != model.config().classes) {
    throw DataError("evaluate: dataset holds " + std::to_string(data.class_count) +
                    " classes, checkpoint expects " + std::to_string(model.config().classes));
  }
  std::vector<Tensor> scores;
  std::vector<std::int64_t> labels;
  scores.reserve(data.items.size());
  for (const DatasetItem& item : data.items) {
    SynthVideo v = materialize(item, stream);
    scores.push_back(model.group_scores(v.frames, groups));
    labels.push_back(item.label);
  }
  return metrics_from_scores(scores, labels, data.class_count);
}

FusedEval evaluate_fused(const Model& spatial, const Model& temporal, const Dataset& data,
                         double fusion_weight, std::int64_t groups) {
  if (spatial.config().classes != temporal.config().classes) {
    throw DataError("evaluate: checkpoints disagree on class count, " +
                    std::to_string(spatial.config().classes) + " vs " +
                    std::to_string(temporal.config().classes));
  }
  FusedEval out;
  out.spatial = evaluate_stream(spatial, data, Modality::kAppearance, groups);
  out.temporal = evaluate_stream(temporal, data, Modality::kFrameDifference, groups);
  std::vector<Tensor> fused;
  fused.reserve(out.spatial.scores.size());
  for (std::size_t i = 0; i < out.spatial.scores.size(); ++i) {
    fused.push_back(late_fusion(out.spatial.scores[i], out.temporal.scores[i], fusion_weight));
  }
  out.fused = metrics_from_scores(fused, out.spatial.labels, data.class_count);
  return out;
}

}  // namespace relstm
