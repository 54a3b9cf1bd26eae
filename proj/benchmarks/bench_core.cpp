#include <benchmark/benchmark.h>

#include "gaitstage/layers.hpp"
#include "gaitstage/model.hpp"
#include "gaitstage/training.hpp"

using namespace gaitstage;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(values));
}

void BM_Conv1dForward(benchmark::State& state) {
  Rng rng(1);
  Conv1d conv = Conv1d::init(8, 16, 3, 1, rng);
  Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 8, 98}, rng);
  for (auto _ : state) {
    Tensor y = conv.forward(x);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_Conv1dForward)->Arg(16)->Arg(150);

void BM_EncoderBlockForward(benchmark::State& state) {
  Rng rng(2);
  EncoderBlock blk = EncoderBlock::init(16, 2, rng);
  CounterRng drop(0);
  Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 22, 16}, rng);
  for (auto _ : state) {
    Tensor y = blk.forward(x, 0.0, false, drop);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_EncoderBlockForward)->Arg(16)->Arg(150);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig config;  // full-size defaults
  const HybridModel model = build_model(config, 3);
  Rng rng(4);
  Tensor batch = random_tensor({static_cast<std::size_t>(state.range(0)), 18, 100}, rng);
  for (auto _ : state) {
    Tensor y = forward(model, batch);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_ModelForward)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_ModelTrainStep(benchmark::State& state) {
  ModelConfig config;
  HybridModel model = build_model(config, 5);
  Rng rng(6);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor batch = random_tensor({n, 18, 100}, rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 4);
  auto params = model.parameters();
  NadamOptimizer optimizer(params);
  CounterRng drop(7);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &drop;
    Tensor loss = cross_entropy(forward(model, batch, opts), labels);
    tape.backward(loss);
    optimizer.step();
    optimizer.zero_grad();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_ModelTrainStep)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_NadamStep(benchmark::State& state) {
  Rng rng(8);
  std::vector<Tensor> params;
  for (int i = 0; i < 10; ++i) {
    Tensor p = random_tensor({100, 100}, rng);
    p.set_requires_grad(true);
    auto g = p.grad_mut();
    for (double& v : g) v = rng.uniform(-1.0, 1.0);
    params.push_back(p);
  }
  NadamOptimizer optimizer(params);
  for (auto _ : state) {
    optimizer.step();
    benchmark::DoNotOptimize(params[0].values().data());
  }
}
BENCHMARK(BM_NadamStep);

}  // namespace

BENCHMARK_MAIN();
