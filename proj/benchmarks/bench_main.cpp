#include <benchmark/benchmark.h>

#include <random>

#include "stonet/model.hpp"
#include "stonet/train.hpp"

using namespace stonet;

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = u(gen);
  return Tensor({rows, cols}, std::move(v));
}

struct Desk {
  ObservationSeries series;
  NeighborGraph graph;
};

Desk desk(std::size_t nodes) {
  PdeSpec spec;
  spec.source.amplitude = 20.0;
  const auto movie = simulate(spec, initial_field(spec, InitialCondition{}, 1), 30 * 5, 5);
  Desk d;
  d.series = sample_nodes(movie, spec, random_points(spec, DomainKind::kPlane, nodes, 2));
  d.graph = build_epsilon_graph(d.series.points, default_epsilon(d.series.points));
  return d;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

static void BM_BuildGraph(benchmark::State& state) {
  PdeSpec spec;
  const auto pts = random_points(spec, DomainKind::kPlane, static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(build_epsilon_graph(pts, 0.15));
}
BENCHMARK(BM_BuildGraph)->Arg(64)->Arg(512)->Arg(2048);

static void BM_KernelUpdate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Desk d = desk(n);
  Rng rng(4);
  EncoderConfig cfg;
  Encoder enc(cfg, rng);
  const std::size_t frames = 12, width = enc.cycles()[0][0].self_in.in_features();
  const Tensor v = random_tensor(frames * n, cfg.d, 5), f = random_tensor(frames * n, width, 6);
  const KernelStep step = flat_step(d.graph, frames);
  for (auto _ : state) benchmark::DoNotOptimize(kernel_update(v, f, step, enc.cycles()[0][0], cfg.activation));
}
BENCHMARK(BM_KernelUpdate)->Arg(64)->Arg(256);

static void BM_ForwardBackward(benchmark::State& state) {
  const Desk d = desk(static_cast<std::size_t>(state.range(0)));
  ModelConfig mc;
  StoNet model(mc, 1);
  fit_normalization(model, d.series, d.series.n_times());
  const std::vector<std::size_t> starts = {0, 2};
  LossConfig lc;
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    const WindowBatch b = model.make_batch(d.series, starts, d.graph);
    const ModelOutput out = model.forward(b, d.series.points, d.graph);
    const auto loss = composite_loss(out.state.v_enc, out.v_dec, b.inputs, b.targets, b.mask_out,
                                     model.projector(), lc, b.nodes);
    tape.backward(loss.total);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Forecast(benchmark::State& state) {
  const Desk d = desk(64);
  ModelConfig mc;
  StoNet model(mc, 1);
  fit_normalization(model, d.series, d.series.n_times());
  const ObservationSeries history = d.series.slice_times(0, 12);
  const std::vector<double> horizon(d.series.times.begin() + 12, d.series.times.begin() + 24);
  for (auto _ : state) benchmark::DoNotOptimize(model.forecast(history, horizon, history.points, d.graph));
}
BENCHMARK(BM_Forecast)->Unit(benchmark::kMillisecond);

static void BM_SimulateHeat(benchmark::State& state) {
  PdeSpec spec;
  spec.source.amplitude = 20.0;
  const auto u0 = initial_field(spec, InitialCondition{}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(simulate(spec, u0, 100, 5));
}
BENCHMARK(BM_SimulateHeat)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
