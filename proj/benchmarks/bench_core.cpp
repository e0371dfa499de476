#include <benchmark/benchmark.h>

#include <random>

#include "relstm/model.hpp"
#include "relstm/rlstm.hpp"

namespace {

using namespace relstm;

Tensor random_tensor(std::vector<std::int64_t> shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({n, n}, rng);
  const Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_Attend(benchmark::State& state) {
  const std::int64_t positions = state.range(0);
  const std::int64_t c = 16, half = 8;
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({positions, c}, rng);
  const NonLocalParams params{random_tensor({c, half}, rng), random_tensor({c, half}, rng),
                              random_tensor({c, half}, rng)};
  for (auto _ : state) {
    Tensor z = self_attend(x, params);
    benchmark::DoNotOptimize(z.data());
  }
  state.SetItemsProcessed(state.iterations() * positions * positions);
}
BENCHMARK(BM_Attend)->Arg(16)->Arg(36)->Arg(64)->Arg(256);

void BM_CellStep(benchmark::State& state) {
  const std::int64_t positions = state.range(0);
  const std::int64_t c = 16, half = 8;
  std::mt19937_64 rng(3);
  ag::ParamSet ps;
  create_rlstm_params(ps, "cell", c, rng);
  const Tensor x = random_tensor({positions, c}, rng);
  const Tensor h = random_tensor({positions, half}, rng);
  const Tensor cc = random_tensor({positions, half}, rng);
  for (auto _ : state) {
    ag::Tape tape;
    RLSTMVars cell = bind_rlstm_params(tape, ps, "cell");
    RLSTMStateVars out = rlstm_step(
        tape.input(x), RLSTMStateVars{tape.input(h), tape.input(cc)}, cell);
    benchmark::DoNotOptimize(out.h.value().data());
  }
}
BENCHMARK(BM_CellStep)->Arg(16)->Arg(36)->Arg(64);

void BM_VideoForwardBackward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.segments = state.range(0);
  cfg.feat_h = cfg.feat_w = 4;
  cfg.feat_c = 16;
  cfg.classes = 6;
  cfg.dropout = 0.0;
  Model model(cfg);
  std::mt19937_64 rng(4);
  std::vector<Tensor> snippets;
  for (std::int64_t t = 0; t < cfg.segments; ++t) {
    snippets.push_back(random_tensor({cfg.input_h, cfg.input_w, 1}, rng));
  }
  for (auto _ : state) {
    ag::Tape tape;
    ag::Var scores = model.video_scores(tape, snippets, /*train=*/true, &rng, nullptr);
    ag::Var loss = ag::sum_all(ag::hadamard(scores, scores));
    tape.backward(loss, /*accumulate_params=*/false);
    benchmark::DoNotOptimize(tape.param_gradients());
  }
}
BENCHMARK(BM_VideoForwardBackward)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
