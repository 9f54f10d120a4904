#include <benchmark/benchmark.h>

#include <sstream>

#include "fixtures.hpp"
#include "ict/consistency.hpp"
#include "ict/ensemble.hpp"
#include "ict/lens.hpp"
#include "ict/toymodel.hpp"
#include "ict/tuning.hpp"

using namespace ict;

static void BM_LayerLogits(benchmark::State& state) {
  Rng rng(1);
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto unembed = testing::random_tensor(rng, {32000, d});
  const auto hidden = testing::random_tensor(rng, {d});
  for (auto _ : state) benchmark::DoNotOptimize(layer_logits(hidden.values(), unembed));
}
BENCHMARK(BM_LayerLogits)->Arg(256)->Arg(1024);

static void BM_InternalConsistency(benchmark::State& state) {
  AgreementVector a;
  for (int i = 0; i < 31; ++i) a.bits.push_back(i % 3 != 0);
  for (auto _ : state) benchmark::DoNotOptimize(internal_consistency(a));
}
BENCHMARK(BM_InternalConsistency);

static void BM_VoteScIc(benchmark::State& state) {
  Rng rng(2);
  std::vector<PathRecord> paths(static_cast<std::size_t>(state.range(0)));
  for (auto& p : paths) {
    p.answer = rng.coin();
    p.ic = rng.uniform();
  }
  for (auto _ : state) benchmark::DoNotOptimize(vote_sc_ic(paths));
}
BENCHMARK(BM_VoteScIc)->Arg(20)->Arg(40);

static void BM_TuneWeights(benchmark::State& state) {
  Rng rng(3);
  const auto qs = testing::informative_questions(rng, 500, 20, 31, 10);
  TuneConfig cfg;
  cfg.iterations = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(tune_weights(qs, cfg));
}
BENCHMARK(BM_TuneWeights)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_ToyForward(benchmark::State& state) {
  toy::ToyConfig cfg;
  cfg.pre_norm = true;
  const auto params = toy::ToyParams::init(cfg);
  const std::vector<toy::Token> tokens(static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(toy::forward_with_trace(tokens, params));
}
BENCHMARK(BM_ToyForward)->Arg(16)->Arg(54);

static void BM_TraceRoundTrip(benchmark::State& state) {
  Rng rng(4);
  testing::TraceSpec spec;
  spec.records = 200;
  spec.layers = 8;
  spec.hidden = 64;
  spec.vocab = 100;
  spec.seq_len = 40;
  const auto set = testing::random_trace(rng, spec);
  for (auto _ : state) {
    std::stringstream s;
    write_trace(set, s);
    benchmark::DoNotOptimize(read_trace(s));
  }
}
BENCHMARK(BM_TraceRoundTrip)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
