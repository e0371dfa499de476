#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "relstm/model.hpp"
#include "relstm/synthdata.hpp"

using namespace relstm;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.segments = 3;
  cfg.input_h = cfg.input_w = 12;
  cfg.input_c = 1;
  cfg.feat_h = cfg.feat_w = 3;
  cfg.feat_c = 4;
  cfg.classes = 3;
  cfg.dropout = 0.0;
  cfg.seed = 5;
  return cfg;
}

std::vector<Tensor> random_snippets(const ModelConfig& cfg, std::int64_t count,
                                    std::mt19937_64& rng) {
  std::vector<Tensor> out;
  for (std::int64_t i = 0; i < count; ++i) {
    out.push_back(oracle::uniform({cfg.input_h, cfg.input_w, cfg.input_c}, 0.0, 1.0, rng));
  }
  return out;
}

void zero_param(ag::ParamSet& ps, const std::string& path) {
  Tensor& t = ps.value(path);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = 0.0;
}

}  // namespace

TEST_CASE("conv2d matches the nested-loop reference, both paddings") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor x = oracle::uniform({6, 7, 3}, -1, 1, rng);
    Tensor k = oracle::uniform({3, 3, 3, 2}, -1, 1, rng);
    ag::Tape tape;
    ag::Var valid = conv2d(tape.input(x), tape.input(k), Padding::kValid);
    ag::Var same = conv2d(tape.input(x), tape.input(k), Padding::kSame);
    CHECK(oracle::max_abs_diff(valid.value(), oracle::conv2d(x, k, 0, 0)) < 1e-10);
    CHECK(oracle::max_abs_diff(same.value(), oracle::conv2d(x, k, 1, 1)) < 1e-10);
  }
  ag::Tape tape;
  CHECK_THROWS_AS(conv2d(tape.input(Tensor({2, 2, 1})), tape.input(Tensor({3, 3, 1, 1})),
                         Padding::kValid),
                  ShapeError);
}

TEST_CASE("conv2d and avg_pool differentiate correctly") {
  std::mt19937_64 rng(2);
  ag::ParamSet ps;
  ps.create("x", oracle::uniform({5, 5, 2}, -0.5, 0.5, rng));
  ps.create("k", oracle::uniform({3, 3, 2, 3}, -0.5, 0.5, rng));
  auto build_valid = [](ag::Tape& t, ag::ParamSet& p) {
    ag::Var y = conv2d(t.param(p, "x"), t.param(p, "k"), Padding::kValid);
    return ag::sum_all(ag::hadamard(y, y));
  };
  CHECK(ag::grad_check(build_valid, ps, 1e-5, 1e-5).ok());

  auto build_same = [](ag::Tape& t, ag::ParamSet& p) {
    ag::Var y = conv2d(t.param(p, "x"), t.param(p, "k"), Padding::kSame);
    return ag::sum_all(ag::hadamard(y, y));
  };
  CHECK(ag::grad_check(build_same, ps, 1e-5, 1e-5).ok());

  ag::ParamSet pool_ps;
  pool_ps.create("x", oracle::uniform({7, 5, 2}, -0.5, 0.5, rng));
  auto build_pool = [](ag::Tape& t, ag::ParamSet& p) {
    ag::Var y = avg_pool(t.param(p, "x"), 3, 2);
    return ag::sum_all(ag::hadamard(y, y));
  };
  CHECK(ag::grad_check(build_pool, pool_ps, 1e-5, 1e-5).ok());
}

TEST_CASE("avg_pool averages exact bins") {
  Tensor x({4, 4, 1});
  for (std::int64_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  ag::Tape tape;
  ag::Var y = avg_pool(tape.input(x), 2, 2);
  CHECK(y.value()[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(y.value()[3] == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
}

TEST_CASE("extractor: zero kernels produce zero maps, geometry is enforced") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  zero_param(model.params(), "extractor.conv1.kernel");
  zero_param(model.params(), "extractor.conv2.kernel");
  std::mt19937_64 rng(3);
  Tensor snippet = oracle::uniform({12, 12, 1}, 0, 1, rng);
  ag::Tape tape;
  ag::Var f = model.extract_features(tape, snippet);
  CHECK(f.value().shape() == std::vector<std::int64_t>{3, 3, 4});
  for (std::int64_t i = 0; i < f.value().size(); ++i) CHECK(f.value()[i] == 0.0);

  CHECK_THROWS_AS(model.extract_features(tape, Tensor({8, 8, 1})), ShapeError);

  ModelConfig bad = cfg;
  bad.input_h = bad.input_w = 10;  // conv/pool chain cannot reach 3x3
  CHECK_THROWS_AS([&] {
    Model m(bad);
    ag::Tape t2;
    m.extract_features(t2, Tensor({10, 10, 1}));
  }(), ShapeError);
}

TEST_CASE("extractor: single-channel pass-through kernel keeps constants constant") {
  ModelConfig cfg = tiny_config();
  cfg.feat_c = 2;  // conv1 emits a single mid channel
  Model model(cfg);
  // Center-tap identity kernels.
  zero_param(model.params(), "extractor.conv1.kernel");
  model.params().value("extractor.conv1.kernel")[(1 * 3 + 1) * 1 + 0] = 1.0;
  zero_param(model.params(), "extractor.conv2.kernel");
  Tensor& k2 = model.params().value("extractor.conv2.kernel");
  k2[((1 * 3 + 1) * 1 + 0) * 2 + 0] = 1.0;
  k2[((1 * 3 + 1) * 1 + 0) * 2 + 1] = 1.0;

  Tensor snippet = Tensor::full({12, 12, 1}, 0.25);
  ag::Tape tape;
  ag::Var g = model.extract_features(tape, snippet);
  const double expected = std::tanh(std::tanh(0.25));
  for (std::int64_t i = 0; i < g.value().size(); ++i) {
    CHECK(g.value()[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("local branch averages space then time") {
  ag::Tape tape;
  ag::Var a = tape.input(Tensor::full({2, 2, 3}, 1.0));
  ag::Var b = tape.input(Tensor::full({2, 2, 3}, 3.0));
  std::vector<ag::Var> feats = {a, b};
  ag::Var v = Model::local_branch(tape, feats);
  CHECK(v.value().shape() == std::vector<std::int64_t>{3});
  for (std::int64_t c = 0; c < 3; ++c) CHECK(v.value()[c] == doctest::Approx(2.0));

  // Any snippet order gives the identical vector.
  std::mt19937_64 rng(4);
  std::vector<Tensor> maps;
  for (int t = 0; t < 4; ++t) maps.push_back(oracle::uniform({2, 2, 3}, -1, 1, rng));
  std::vector<ag::Var> fwd, rev;
  for (const Tensor& m : maps) fwd.push_back(tape.input(m));
  for (auto it = maps.rbegin(); it != maps.rend(); ++it) rev.push_back(tape.input(*it));
  Tensor vf = Model::local_branch(tape, fwd).value();
  Tensor vr = Model::local_branch(tape, rev).value();
  CHECK(oracle::max_abs_diff(vf, vr) < 1e-15);

  // Direct double-mean reference.
  for (std::int64_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (const Tensor& m : maps) {
      for (std::int64_t pos = 0; pos < 4; ++pos) s += m[pos * 3 + c];
    }
    CHECK(vf[c] == doctest::Approx(s / 16.0).epsilon(1e-12));
  }
}

TEST_CASE("nonlocal branch: zero recurrence weights give a zero vector") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  for (const std::string& path : rlstm_param_paths("rlstm")) zero_param(model.params(), path);

  std::mt19937_64 rng(5);
  ag::Tape tape;
  std::vector<ag::Var> feats;
  for (int t = 0; t < 3; ++t) {
    feats.push_back(tape.input(oracle::uniform({3, 3, 4}, -1, 1, rng)));
  }
  ag::Var v = model.nonlocal_branch(tape, feats, /*train=*/false, nullptr);
  CHECK(v.value().shape() == std::vector<std::int64_t>{4});
  for (std::int64_t i = 0; i < v.value().size(); ++i) CHECK(v.value()[i] == 0.0);
}

TEST_CASE("nonlocal branch is order sensitive where the local branch is not") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  std::mt19937_64 rng(6);
  std::vector<Tensor> maps;
  for (int t = 0; t < 3; ++t) maps.push_back(oracle::uniform({3, 3, 4}, -1, 1, rng));

  ag::Tape tape;
  std::vector<ag::Var> fwd, rev;
  for (const Tensor& m : maps) fwd.push_back(tape.input(m));
  for (auto it = maps.rbegin(); it != maps.rend(); ++it) rev.push_back(tape.input(*it));

  Tensor nf = model.nonlocal_branch(tape, fwd, false, nullptr).value();
  Tensor nr = model.nonlocal_branch(tape, rev, false, nullptr).value();
  CHECK(oracle::max_abs_diff(nf, nr) > 1e-6);

  Tensor lf = Model::local_branch(tape, fwd).value();
  Tensor lr = Model::local_branch(tape, rev).value();
  CHECK(oracle::max_abs_diff(lf, lr) == 0.0);
}

TEST_CASE("nonlocal branch folds running statistics in call order") {
  ModelConfig cfg = tiny_config();
  cfg.bn_momentum = 0.5;
  Model model(cfg);
  std::mt19937_64 rng(7);
  std::vector<Tensor> maps;
  for (int t = 0; t < 2; ++t) maps.push_back(oracle::uniform({3, 3, 4}, -1, 1, rng));

  ag::Tape tape;
  std::vector<ag::Var> feats;
  for (const Tensor& m : maps) feats.push_back(tape.input(m));

  BNStatSink sink;
  model.nonlocal_branch(tape, feats, /*train=*/true, &sink);
  CHECK(sink.size() == 2);
  // Deferred: nothing applied yet.
  CHECK(model.bn_state().running_mean[0] == 0.0);

  BatchNormState expected = BatchNormState::init(4);
  for (const BNBatchStats& s : sink) batch_norm_update(expected, s.mean, s.var, 0.5);
  model.apply_bn_updates(sink);
  for (std::int64_t j = 0; j < 4; ++j) {
    CHECK(model.bn_state().running_mean[j] == expected.running_mean[j]);
    CHECK(model.bn_state().running_var[j] == expected.running_var[j]);
  }
}

TEST_CASE("classify: zero head weights tie all classes, lowest index wins") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  zero_param(model.params(), "head.weight");
  zero_param(model.params(), "head.bias");
  std::mt19937_64 rng(8);
  ag::Tape tape;
  std::vector<ag::Var> vecs = {tape.input(oracle::uniform({4}, -1, 1, rng)),
                               tape.input(oracle::uniform({4}, -1, 1, rng))};
  ag::Var scores = model.classify(tape, vecs, /*train=*/false, nullptr);
  CHECK(scores.value().shape() == std::vector<std::int64_t>{3});
  for (std::int64_t k = 0; k < 3; ++k) CHECK(scores.value()[k] == 0.0);
  CHECK(argmax_lowest(scores.value()) == 0);
}

TEST_CASE("classify: keep-probability one makes train equal inference") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 1.0;
  cfg.dropout_semantics = DropoutSemantics::kKeepProbability;
  Model model(cfg);
  std::mt19937_64 rng(9);
  Tensor va = oracle::uniform({4}, -1, 1, rng);
  Tensor vb = oracle::uniform({4}, -1, 1, rng);
  ag::Tape tape;
  std::vector<ag::Var> vecs = {tape.input(va), tape.input(vb)};
  std::mt19937_64 drop_rng(1);
  Tensor train_scores = model.classify(tape, vecs, true, &drop_rng).value();
  std::vector<ag::Var> vecs2 = {tape.input(va), tape.input(vb)};
  Tensor infer_scores = model.classify(tape, vecs2, false, nullptr).value();
  CHECK(oracle::max_abs_diff(train_scores, infer_scores) == 0.0);
}

TEST_CASE("classify matches a plain matrix product") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  std::mt19937_64 rng(10);
  Tensor va = oracle::uniform({4}, -1, 1, rng);
  Tensor vb = oracle::uniform({4}, -1, 1, rng);
  ag::Tape tape;
  std::vector<ag::Var> vecs = {tape.input(va), tape.input(vb)};
  Tensor scores = model.classify(tape, vecs, false, nullptr).value();

  Tensor cat({1, 8});
  for (std::int64_t i = 0; i < 4; ++i) {
    cat[i] = va[i];
    cat[4 + i] = vb[i];
  }
  Tensor expected = oracle::matmul(cat, model.params().value("head.weight"));
  for (std::int64_t k = 0; k < 3; ++k) {
    CHECK(scores[k] ==
          doctest::Approx(expected[k] + model.params().value("head.bias")[k]).epsilon(1e-12));
  }
}

TEST_CASE("late fusion blends and validates") {
  Tensor a({3}, {1.0, 2.0, 0.0});
  Tensor b({3}, {0.0, 1.0, 4.0});
  CHECK(oracle::max_abs_diff(late_fusion(a, b, 1.0), a) == 0.0);

  Tensor mean = late_fusion(a, b, 0.5);
  CHECK(mean[0] == doctest::Approx(0.5));
  CHECK(mean[1] == doctest::Approx(1.5));
  CHECK(mean[2] == doctest::Approx(2.0));

  // 0.45/0.55 blend: 0.45*[1,2,0] + 0.55*[0,1,4] = [0.45, 1.45, 2.2].
  Tensor blend = late_fusion(a, b, 0.45);
  CHECK(argmax_lowest(blend) == 2);
  CHECK(blend[1] == doctest::Approx(1.45).epsilon(1e-12));

  CHECK_THROWS_AS(late_fusion(a, b, 1.5), DataError);
  CHECK_THROWS_AS(late_fusion(a, Tensor({2}), 0.5), ShapeError);
}

TEST_CASE("fusion argmax ignores a common score shift") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor a = oracle::uniform({5}, -2, 2, rng);
    Tensor b = oracle::uniform({5}, -2, 2, rng);
    const double w = 0.45, shift = -3.0 + static_cast<double>(rng() % 600) / 100.0;
    Tensor shifted_a(a.shape()), shifted_b(b.shape());
    for (std::int64_t i = 0; i < 5; ++i) {
      shifted_a[i] = a[i] + shift;
      shifted_b[i] = b[i] + shift;
    }
    CHECK(argmax_lowest(late_fusion(a, b, w)) ==
          argmax_lowest(late_fusion(shifted_a, shifted_b, w)));
  }
}

TEST_CASE("group inference averages per-group scores") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  std::mt19937_64 rng(12);

  // One frame per segment: every group sees the same snippets.
  std::vector<Tensor> frames = random_snippets(cfg, 3, rng);
  Tensor single = model.group_scores(frames, 1);
  Tensor doubled = model.group_scores(frames, 2);
  CHECK(oracle::max_abs_diff(single, doubled) < 1e-15);

  // Longer video: the group mean equals the direct arithmetic mean.
  std::vector<Tensor> longer = random_snippets(cfg, 12, rng);
  Tensor grouped = model.group_scores(longer, 2);
  Tensor manual({cfg.classes});
  for (std::int64_t g = 0; g < 2; ++g) {
    std::vector<Tensor> snip;
    for (std::int64_t i : segment_sample_equispaced(12, 3, g, 2)) {
      snip.push_back(longer[static_cast<std::size_t>(i)]);
    }
    manual = add(manual, model.infer_scores(snip));
  }
  manual = scale(manual, 0.5);
  CHECK(oracle::max_abs_diff(grouped, manual) < 1e-12);

  CHECK_THROWS_AS(model.group_scores(random_snippets(cfg, 2, rng), 1), DataError);
  CHECK_THROWS_AS(model.group_scores(longer, 0), DataError);
}

TEST_CASE("end-to-end gradient check on the tiny two-branch config") {
  ModelConfig cfg = tiny_config();  // H=W=3, C=4, T=3, K=3, dropout off
  Model model(cfg);
  std::mt19937_64 rng(13);
  std::vector<Tensor> snippets = random_snippets(cfg, cfg.segments, rng);

  auto build = [&](ag::Tape& tape, ag::ParamSet&) {
    std::mt19937_64 drop_rng(1);
    ag::Var scores = model.video_scores(tape, snippets, /*train=*/true, &drop_rng, nullptr);
    // Smooth scalar target over the raw scores.
    return ag::sum_all(ag::hadamard(scores, scores));
  };
  ag::GradCheckReport report = ag::grad_check(build, model.params(), 1e-5, 1e-4);
  INFO("max rel err ", report.max_rel_err, ", checked ", report.elements_checked);
  CHECK(report.ok());
}

TEST_CASE("single-branch configurations narrow the head") {
  ModelConfig local = tiny_config();
  local.branches = Branches::kLocal;
  ModelConfig nl = tiny_config();
  nl.branches = Branches::kNonLocal;
  CHECK(local.head_inputs() == 4);
  CHECK(nl.head_inputs() == 4);
  CHECK(tiny_config().head_inputs() == 8);

  Model lm(local);
  CHECK_FALSE(lm.params().has("rlstm.ix.theta"));
  std::mt19937_64 rng(14);
  std::vector<Tensor> snippets = random_snippets(local, 3, rng);
  Tensor scores = lm.infer_scores(snippets);
  CHECK(scores.shape() == std::vector<std::int64_t>{3});

  Model nm(nl);
  CHECK(nm.params().has("rlstm.ix.theta"));
  CHECK(nm.infer_scores(snippets).shape() == std::vector<std::int64_t>{3});
}

TEST_CASE("config JSON round-trips") {
  ModelConfig cfg = tiny_config();
  cfg.branches = Branches::kNonLocal;
  cfg.dropout_semantics = DropoutSemantics::kKeepProbability;
  cfg.dropout = 0.8;
  cfg.attention_norm = Normalizer::kUniformDenominator;
  ModelConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(back.drop_prob() == doctest::Approx(0.2).epsilon(1e-12));
  CHECK_THROWS_AS(config_from_json("{"), FormatError);
  CHECK_THROWS_AS(config_from_json("{}"), FormatError);
}
