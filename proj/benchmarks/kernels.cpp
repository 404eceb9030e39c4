// OpenMP kernels against their serial references at the paper's problem size
// (m = 250, n = 500). Set OMP_NUM_THREADS to compare thread counts.

#include "nlreg/classical.hpp"
#include "nlreg/datagen.hpp"
#include "nlreg/funcs.hpp"
#include "nlreg/nlista.hpp"

#include <benchmark/benchmark.h>

using namespace nlreg;

namespace {

struct Fixture {
  GenerationConfig config;
  Dictionary dict;
  NlistaModel model;
  InstanceSet batch;

  Fixture() {
    config.seed = 2021;
    dict = generate_dictionary(config);
    const auto& f = get_function("2x+cos(x)");
    model = make_model(dict.A, f.id(), 16);
    batch = generate_set(config, f, dict, SampleSet::Train, 0, 64);
  }
};

Fixture& fixture() {
  static Fixture fx;
  return fx;
}

void BM_ForwardBatch(benchmark::State& state) {
  auto& fx = fixture();
  const int depth = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(fx.model, fx.batch.y, nullptr, depth));
}

void BM_ForwardBatchSerial(benchmark::State& state) {
  auto& fx = fixture();
  const int depth = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch_serial(fx.model, fx.batch.y, depth));
}

void BM_BackwardBatch(benchmark::State& state) {
  auto& fx = fixture();
  const int depth = static_cast<int>(state.range(0));
  BatchTape tape;
  Matrix grad;
  mse_loss(forward_batch(fx.model, fx.batch.y, &tape, depth), fx.batch.x_star, &grad);
  for (auto _ : state) benchmark::DoNotOptimize(backward_batch(fx.model, tape, grad, {GammaGradient::Exact, 0}));
}

void BM_BackwardBatchSerial(benchmark::State& state) {
  auto& fx = fixture();
  const int depth = static_cast<int>(state.range(0));
  Matrix grad;
  mse_loss(forward_batch(fx.model, fx.batch.y, nullptr, depth), fx.batch.x_star, &grad);
  for (auto _ : state)
    benchmark::DoNotOptimize(backward_batch_serial(fx.model, fx.batch.y, grad, depth, {GammaGradient::Exact, 0}));
}

void BM_GenerateSet(benchmark::State& state) {
  auto& fx = fixture();
  const auto& f = get_function("2x+cos(x)");
  for (auto _ : state)
    benchmark::DoNotOptimize(generate_set(fx.config, f, fx.dict, SampleSet::Train, 0, state.range(0)));
}

void BM_GenerateSetSerial(benchmark::State& state) {
  auto& fx = fixture();
  const auto& f = get_function("2x+cos(x)");
  for (auto _ : state)
    benchmark::DoNotOptimize(generate_set_serial(fx.config, f, fx.dict, SampleSet::Train, 0, state.range(0)));
}

void BM_SolveBatch(benchmark::State& state) {
  auto& fx = fixture();
  const auto& f = get_function("2x+cos(x)");
  const auto id = static_cast<SolverId>(state.range(0));
  ClassicalConfig c = default_config(id, f.id());
  c.record_timing = false;
  for (auto _ : state) benchmark::DoNotOptimize(solve_batch(id, fx.batch, f, c));
  state.SetLabel(std::string(solver_name(id)));
}

void BM_SolveBatchSerial(benchmark::State& state) {
  auto& fx = fixture();
  const auto& f = get_function("2x+cos(x)");
  const auto id = static_cast<SolverId>(state.range(0));
  ClassicalConfig c = default_config(id, f.id());
  c.record_timing = false;
  for (auto _ : state) benchmark::DoNotOptimize(solve_batch_serial(id, fx.batch, f, c));
  state.SetLabel(std::string(solver_name(id)));
}

}  // namespace

BENCHMARK(BM_ForwardBatch)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBatchSerial)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardBatch)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardBatchSerial)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateSet)->Arg(64)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateSetSerial)->Arg(64)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SolveBatch)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SolveBatchSerial)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
