#include <benchmark/benchmark.h>

#include <span>

#include "evts/dynamic_graph.hpp"
#include "evts/evts_data.hpp"
#include "evts/flat_batching.hpp"
#include "evts/focal_cl.hpp"
#include "evts/stfe.hpp"

using namespace evts;

namespace {

std::vector<WindowSample> windows(std::size_t batch, std::size_t n, std::size_t history,
                                  std::size_t horizon, Rng& rng) {
  std::vector<WindowSample> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    WindowSample& w = out[b];
    w.inputs = Tensor({n, history});
    w.targets = Tensor({n, horizon});
    for (auto& v : w.inputs.values()) v = rng.normal();
    for (auto& v : w.targets.values()) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) w.variable_ids.push_back(i);
    w.ref_time = 24 * b;
  }
  return out;
}

GraphParams graph_params(std::size_t n_vars, Rng& rng) {
  GraphConfig gc;
  gc.n_vars = n_vars;
  gc.steps_per_day = 288;
  return GraphParams::init(gc, rng);
}

void BM_DilatedConv(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0));
  Rng rng(0);
  Tensor x({rows, 13, 32});
  for (auto& v : x.values()) v = rng.normal();
  Tensor kernel({32, 32, 2}), bias({32});
  for (auto& v : kernel.values()) v = rng.normal(0.0, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(conv1d_forward(x, kernel, bias, 2));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_DilatedConv)->Arg(64)->Arg(256)->Arg(1024);

void BM_StfeForward(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  StfeParams p = StfeParams::init(StfeConfig{}, rng);
  GraphParams gp = graph_params(n, rng);
  const FlatBatch flat = flatten(windows(16, n, 12, 12, rng), n / 2);
  for (auto _ : state) {
    GraphBuilder b;
    benchmark::DoNotOptimize(stfe_forward(flat, b.assemble(gp, flat), p, Mode::Evaluation));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(flat.num_rows()));
}
BENCHMARK(BM_StfeForward)->Arg(10)->Arg(40);

void BM_StfeForwardBackward(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  StfeParams p = StfeParams::init(StfeConfig{}, rng);
  GraphParams gp = graph_params(n, rng);
  const FlatBatch flat = flatten(windows(16, n, 12, 12, rng), n / 2);
  for (auto _ : state) {
    GraphBuilder b;
    ForwardCache cache;
    const StfeOutput out = stfe_forward(flat, b.assemble(gp, flat), p, Mode::Training, &cache);
    b.backward(gp, stfe_backward(cache, out.features, out.forecast, p));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(flat.num_rows()));
}
BENCHMARK(BM_StfeForwardBackward)->Arg(10)->Arg(40);

void BM_ContrastiveLoss(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  Tensor z({rows, 16}), za({rows, 16});
  for (auto& v : z.values()) v = rng.normal();
  for (auto& v : za.values()) v = rng.normal();
  std::vector<std::size_t> sub(rows);
  std::vector<std::uint8_t> expanding(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    sub[i] = i / 10;
    expanding[i] = i % 10 >= 7;
  }
  const ContrastiveBundle bundle =
      make_bundle(z, za, focal_temperatures(expanding, 0.5, 0.3));
  for (auto _ : state)
    benchmark::DoNotOptimize(focal_contrastive_loss(bundle, sub, NegativeFilter::SameSubgraph));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * rows));
}
BENCHMARK(BM_ContrastiveLoss)->Arg(160)->Arg(640);

}  // namespace

BENCHMARK_MAIN();
