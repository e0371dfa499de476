// Command-line driver: dataset generation, per-stream training, fused
// evaluation, gradient verification, and branch ablation.
//
// Exit codes: 0 success, 1 usage, 2 data/format error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "relstm/checkpoint.hpp"
#include "relstm/train.hpp"

namespace {

using json = nlohmann::json;
using namespace relstm;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << text;
}

json eval_to_json(const EvalResult& r) {
  return json{{"accuracy", r.accuracy},
              {"per_class_accuracy", r.per_class_accuracy},
              {"confusion", r.confusion}};
}

struct TrainCliOptions {
  std::string data_path;
  std::string eval_path;
  std::string stream = "appearance";
  std::string branch = "both";
  std::string attention_norm = "softmax";
  std::string dropout_semantics = "drop";
  std::string init_ckpt;
  std::string out_ckpt = "model.rlsm";
  std::string log_csv;
  std::string log_json;
  ModelConfig cfg;
  TrainOptions opts;
};

void add_train_flags(CLI::App* cmd, TrainCliOptions& o) {
  cmd->add_option("--data", o.data_path, "training manifest (JSON lines)")->required();
  cmd->add_option("--stream", o.stream, "appearance|motion")
      ->check(CLI::IsMember({"appearance", "motion"}));
  cmd->add_option("--segments", o.cfg.segments, "segments T per clip");
  cmd->add_option("--seed", o.cfg.seed, "initialization and sampling seed");
  cmd->add_option("--epochs", o.opts.epochs, "training epochs");
  cmd->add_option("--batch", o.opts.batch_size, "clips per optimizer step");
  cmd->add_option("--lr", o.opts.sgd.lr, "base learning rate");
  cmd->add_option("--momentum", o.opts.sgd.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", o.opts.sgd.weight_decay, "L2 decay coefficient");
  cmd->add_option("--milestones", o.opts.sgd.milestones, "epochs at which the rate drops")
      ->delimiter(',');
  cmd->add_option("--lr-factor", o.opts.sgd.lr_factor, "rate multiplier at each milestone");
  cmd->add_option("--dropout", o.cfg.dropout, "dropout rate before the head");
  cmd->add_option("--dropout-semantics", o.dropout_semantics,
                  "read the rate as drop or keep probability")
      ->check(CLI::IsMember({"drop", "keep"}));
  cmd->add_option("--bn-momentum", o.cfg.bn_momentum, "running-statistics momentum");
  cmd->add_option("--feat-h", o.cfg.feat_h, "feature grid height");
  cmd->add_option("--feat-w", o.cfg.feat_w, "feature grid width");
  cmd->add_option("--feat-c", o.cfg.feat_c, "feature channels (even)");
  cmd->add_option("--branch", o.branch, "local|nonlocal|both")
      ->check(CLI::IsMember({"local", "nonlocal", "both"}));
  cmd->add_option("--attention-norm", o.attention_norm,
                  "softmax or uniform attention denominator")
      ->check(CLI::IsMember({"softmax", "uniform"}));
  cmd->add_option("--threads", o.opts.threads, "batch-parallel workers (bit-identical results)");
  cmd->add_option("--init", o.init_ckpt, "checkpoint to copy parameters from");
  cmd->add_option("--eval-data", o.eval_path, "manifest for periodic evaluation");
  cmd->add_option("--eval-every", o.opts.eval_every, "evaluate every N epochs (0 = never)");
  cmd->add_option("--groups", o.opts.eval_groups, "inference groups during evaluation");
  cmd->add_option("--out", o.out_ckpt, "checkpoint output path");
  cmd->add_option("--log-csv", o.log_csv, "per-epoch CSV output path");
  cmd->add_option("--log-json", o.log_json, "run log JSON output path");
}

Model build_model(TrainCliOptions& o, const Dataset& data) {
  o.cfg.classes = data.class_count;
  o.cfg.input_h = data.grid;
  o.cfg.input_w = data.grid;
  o.cfg.input_c = 1;
  o.cfg.branches = o.branch == "local"      ? Branches::kLocal
                   : o.branch == "nonlocal" ? Branches::kNonLocal
                                            : Branches::kBoth;
  o.cfg.attention_norm =
      o.attention_norm == "softmax" ? Normalizer::kSoftmax : Normalizer::kUniformDenominator;
  o.cfg.dropout_semantics = o.dropout_semantics == "drop" ? DropoutSemantics::kDropProbability
                                                          : DropoutSemantics::kKeepProbability;
  Model model(o.cfg);
  if (!o.init_ckpt.empty()) load_params_into(model, o.init_ckpt);
  return model;
}

RunLog run_training(Model& model, TrainCliOptions& o) {
  Dataset data = load_manifest(o.data_path);
  Dataset eval_data;
  o.opts.stream = o.stream == "motion" ? Modality::kFrameDifference : Modality::kAppearance;
  o.opts.seed = o.cfg.seed;
  if (!o.eval_path.empty()) {
    eval_data = load_manifest(o.eval_path);
    o.opts.eval_data = &eval_data;
  }
  RunLog log = train_stream(model, data, o.opts);
  save_checkpoint(model, o.out_ckpt);
  if (!o.log_csv.empty()) write_text(o.log_csv, log.csv());
  if (!o.log_json.empty()) write_text(o.log_json, log.json());
  return log;
}

int run_grad_check(double step, double tol) {
  // Attention + cell unroll + tiny end-to-end model; the unit suites carry
  // the full per-primitive sweep.
  std::mt19937_64 rng(7);
  int failures = 0;
  auto report = [&](const char* what, const ag::GradCheckReport& r) {
    std::printf("%-28s %s (checked %lld elements, max rel err %.3g)\n", what,
                r.ok() ? "PASS" : "FAIL", static_cast<long long>(r.elements_checked),
                r.max_rel_err);
    if (!r.ok()) ++failures;
  };

  {
    ag::ParamSet ps;
    ps.create("x", ag::xavier_uniform({5, 4}, 5, 4, rng));
    ps.create("y", ag::xavier_uniform({5, 3}, 5, 3, rng));
    ps.create("theta", ag::xavier_uniform({4, 2}, 4, 2, rng));
    ps.create("phi", ag::xavier_uniform({3, 2}, 3, 2, rng));
    ps.create("g", ag::xavier_uniform({3, 2}, 3, 2, rng));
    auto build = [](ag::Tape& t, ag::ParamSet& p) {
      NonLocalVars nv{t.param(p, "theta"), t.param(p, "phi"), t.param(p, "g")};
      ag::Var z = attend(t.param(p, "x"), t.param(p, "y"), nv);
      return ag::sum_all(ag::hadamard(z, z));
    };
    report("attention operation", ag::grad_check(build, ps, step, tol));
  }
  {
    ag::ParamSet ps;
    create_rlstm_params(ps, "cell", 4, rng);
    std::vector<Tensor> xs;
    for (int t = 0; t < 3; ++t) xs.push_back(ag::xavier_uniform({4, 4}, 4, 4, rng));
    auto build = [&xs](ag::Tape& t, ag::ParamSet& p) {
      RLSTMVars cell = bind_rlstm_params(t, p, "cell");
      std::vector<ag::Var> vars;
      for (const Tensor& x : xs) vars.push_back(t.input(x));
      RLSTMStateVars fin = rlstm_sequence(t, vars, cell);
      return ag::sum_all(ag::hadamard(fin.h, fin.h));
    };
    report("relational cell, T=3", ag::grad_check(build, ps, step, tol));
  }
  {
    ModelConfig cfg;
    cfg.segments = 3;
    cfg.input_h = cfg.input_w = 12;
    cfg.feat_h = cfg.feat_w = 3;
    cfg.feat_c = 4;
    cfg.classes = 3;
    cfg.dropout = 0.0;
    cfg.seed = 11;
    Model model(cfg);
    Scenario sc;
    sc.kind = ScenarioKind::kInteraction;
    sc.variant = 0;
    sc.grid = 12;
    sc.noise = 0.05;
    SynthVideo clip = generate(sc, 6, 21);
    std::vector<Tensor> snippets(clip.frames.begin(), clip.frames.begin() + 3);
    std::mt19937_64 drop_rng(3);
    auto build = [&](ag::Tape& t, ag::ParamSet&) {
      ag::Var scores = model.video_scores(t, snippets, /*train=*/true, &drop_rng, nullptr);
      return softmax_cross_entropy(scores, 1);
    };
    report("two-branch model, tiny", ag::grad_check(build, model.params(), step, tol));
  }
  return failures == 0 ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relational LSTM video classification toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write dataset manifests");
  std::string gen_preset = "interaction6", gen_out = ".";
  std::int64_t gen_train = 100, gen_test = 50, gen_length = 24;
  double gen_noise = 0.1;
  std::uint64_t gen_seed = 7;
  gen->add_option("--preset", gen_preset, "interaction6|trajectory4|full12")
      ->check(CLI::IsMember({"interaction6", "trajectory4", "full12"}));
  gen->add_option("--train-per-class", gen_train, "training clips per class");
  gen->add_option("--test-per-class", gen_test, "test clips per class");
  gen->add_option("--length", gen_length, "frames per clip");
  gen->add_option("--noise", gen_noise, "per-pixel noise amplitude");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--out", gen_out, "output directory");
  std::int64_t gen_dump_raw = 0;
  gen->add_option("--dump-raw", gen_dump_raw, "also write the first N train clips as .rlsd dumps");

  // train
  auto* train = app.add_subcommand("train", "train one stream");
  TrainCliOptions tr;
  add_train_flags(train, tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate checkpoints, optionally fused");
  std::string ev_data, ev_spatial, ev_temporal, ev_out;
  double ev_weight = 0.5;
  std::int64_t ev_groups = 4;
  ev->add_option("--data", ev_data, "evaluation manifest")->required();
  ev->add_option("--spatial", ev_spatial, "appearance-stream checkpoint");
  ev->add_option("--temporal", ev_temporal, "motion-stream checkpoint");
  ev->add_option("--fusion-weight", ev_weight, "weight of the spatial stream");
  ev->add_option("--groups", ev_groups, "equispaced inference groups");
  ev->add_option("--out", ev_out, "metrics JSON output path");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  double gc_step = 1e-5, gc_tol = 1e-4;
  gc->add_option("--step", gc_step, "central-difference step");
  gc->add_option("--tol", gc_tol, "relative-error tolerance");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate one branch configuration");
  TrainCliOptions abo;
  std::string ab_test;
  add_train_flags(ab, abo);
  ab->add_option("--test", ab_test, "test manifest for the ablation report")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      DatasetSplits splits = build_dataset(preset_from_name(gen_preset), gen_train, gen_test,
                                           gen_length, gen_noise, gen_seed);
      std::filesystem::create_directories(gen_out);
      const std::string train_path = gen_out + "/train.jsonl";
      const std::string test_path = gen_out + "/test.jsonl";
      save_manifest(splits.train, train_path);
      save_manifest(splits.test, test_path);
      std::printf("wrote %zu train clips to %s\n", splits.train.items.size(), train_path.c_str());
      std::printf("wrote %zu test clips to %s\n", splits.test.items.size(), test_path.c_str());
      for (std::int64_t i = 0; i < gen_dump_raw && i < static_cast<std::int64_t>(splits.train.items.size()); ++i) {
        const DatasetItem& item = splits.train.items[static_cast<std::size_t>(i)];
        const std::string raw_path = gen_out + "/clip_" + std::to_string(item.id) + ".rlsd";
        save_raw_frames(materialize(item, Modality::kAppearance), raw_path);
        std::printf("wrote %s\n", raw_path.c_str());
      }
    } else if (train->parsed()) {
      Dataset data = load_manifest(tr.data_path);
      Model model = build_model(tr, data);
      RunLog log = run_training(model, tr);
      if (!log.records.empty()) {
        const EpochRecord& last = log.records.back();
        std::printf("final epoch %lld: loss %.4f accuracy %.4f\n",
                    static_cast<long long>(last.epoch), last.loss, last.accuracy);
      }
      std::printf("checkpoint written to %s\n", tr.out_ckpt.c_str());
    } else if (ev->parsed()) {
      if (ev_spatial.empty() && ev_temporal.empty()) {
        std::fprintf(stderr, "eval: need --spatial and/or --temporal\n");
        return kExitUsage;
      }
      Dataset data = load_manifest(ev_data);
      json out;
      if (!ev_spatial.empty() && !ev_temporal.empty()) {
        Model spatial = load_checkpoint(ev_spatial);
        Model temporal = load_checkpoint(ev_temporal);
        FusedEval r = evaluate_fused(spatial, temporal, data, ev_weight, ev_groups);
        out = {{"spatial", eval_to_json(r.spatial)},
               {"temporal", eval_to_json(r.temporal)},
               {"fused", eval_to_json(r.fused)},
               {"fusion_weight", ev_weight},
               {"groups", ev_groups}};
        std::printf("spatial %.4f  temporal %.4f  fused %.4f\n", r.spatial.accuracy,
                    r.temporal.accuracy, r.fused.accuracy);
      } else {
        const bool is_spatial = !ev_spatial.empty();
        Model model = load_checkpoint(is_spatial ? ev_spatial : ev_temporal);
        EvalResult r = evaluate_stream(
            model, data, is_spatial ? Modality::kAppearance : Modality::kFrameDifference,
            ev_groups);
        out = {{is_spatial ? "spatial" : "temporal", eval_to_json(r)}, {"groups", ev_groups}};
        std::printf("%s %.4f\n", is_spatial ? "spatial" : "temporal", r.accuracy);
      }
      if (!ev_out.empty()) write_text(ev_out, out.dump(2));
    } else if (gc->parsed()) {
      return run_grad_check(gc_step, gc_tol);
    } else if (ab->parsed()) {
      Dataset data = load_manifest(abo.data_path);
      Dataset test = load_manifest(ab_test);
      Model model = build_model(abo, data);
      RunLog log = run_training(model, abo);
      EvalResult r = evaluate_stream(model, test, abo.opts.stream, abo.opts.eval_groups);
      json out = {{"branch", abo.branch},
                  {"test", eval_to_json(r)},
                  {"final_train_accuracy",
                   log.records.empty() ? 0.0 : log.records.back().accuracy}};
      std::printf("%s\n", out.dump(2).c_str());
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitOk;
}
