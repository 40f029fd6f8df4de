#include <gtest/gtest.h>

#include <cmath>

#include "evts/dynamic_graph.hpp"
#include "evts/stfe.hpp"
#include "test_util.hpp"

using namespace evts;
using evts::test::max_abs_diff;
using evts::test::random_graph;
using evts::test::random_tensor;
using evts::test::random_weights;
using evts::test::random_windows;
using evts::test::tiny_stfe_config;

namespace {

void zero_biases(StfeParams& p) {
  p.embed_bias.value.fill(0.0);
  for (auto& lp : p.layers) {
    lp.filter_bias.value.fill(0.0);
    lp.gate_bias.value.fill(0.0);
    lp.skip_bias.value.fill(0.0);
  }
  p.head1_bias.value.fill(0.0);
  p.head2_bias.value.fill(0.0);
}

// Rows of `a` selected by [begin, end) of a flat batch.
Tensor row_slice(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t w = a.dim(1);
  Tensor out({end - begin, w});
  std::copy(a.data() + begin * w, a.data() + end * w, out.data());
  return out;
}

}  // namespace

TEST(StfeConfig, DefaultShapeLedger) {
  const StfeConfig cfg;
  EXPECT_EQ(cfg.receptive_field(), 13u);
  EXPECT_EQ(cfg.padding(), 1u);
  EXPECT_EQ(cfg.dilations(), (std::vector<std::size_t>{1, 2, 1, 2, 1, 2, 1, 2}));
  EXPECT_EQ(cfg.temporal_lengths(),
            (std::vector<std::size_t>{13, 12, 10, 9, 7, 6, 4, 3, 1}));
}

TEST(StfeConfig, LedgerEndsAtOneForOtherConfigs) {
  for (std::size_t k : {2u, 3u})
    for (std::size_t q : {1u, 2u, 3u})
      for (std::size_t m : {1u, 2u, 3u}) {
        StfeConfig cfg;
        cfg.kernel_size = k;
        cfg.dilation_rate = q;
        cfg.blocks = m;
        cfg.history = 1;
        EXPECT_EQ(cfg.temporal_lengths().back(), 1u) << k << " " << q << " " << m;
        // Longer windows keep the excess steps; the skip path reads the last one.
        cfg.history = cfg.receptive_field() + 2;
        EXPECT_EQ(cfg.padding(), 0u);
        EXPECT_EQ(cfg.temporal_lengths().back(), 3u);
      }
  StfeConfig bad;
  bad.cheb_order = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(StfeParams, CanonicalNames) {
  Rng rng(0);
  StfeParams p = StfeParams::init(StfeConfig{}, rng);
  std::vector<std::string> names;
  p.for_each([&](const std::string& n, Parameter&) { names.push_back(n); });
  EXPECT_EQ(names.front(), "stfe.embed.weight");
  EXPECT_NE(std::find(names.begin(), names.end(), "stfe.block2.layer1.filter"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "stfe.block4.layer2.cheb3"), names.end());
  EXPECT_EQ(names.back(), "head.fc2.bias");
}

TEST(StfeForward, OutputShapes) {
  Rng rng(1);
  StfeParams p = StfeParams::init(StfeConfig{}, rng);
  const auto windows = random_windows(rng, {3, 5}, 12, 12);
  const FlatBatch flat = flatten(windows, 3);
  const HolisticGraph g = random_graph(flat, rng);
  const StfeOutput out = stfe_forward(flat, g, p, Mode::Training);
  EXPECT_EQ(out.features.shape(), (std::vector<std::size_t>{8, 32}));
  EXPECT_EQ(out.forecast.shape(), (std::vector<std::size_t>{8, 12}));
  EXPECT_TRUE(out.forecast.all_finite());
  EXPECT_THROW(stfe_forward(Tensor({8, 11}), g, p, Mode::Training), ShapeError);
}

TEST(StfeForward, ZeroInputIsAFixedPoint) {
  Rng rng(2);
  StfeParams p = StfeParams::init(tiny_stfe_config(), rng);
  zero_biases(p);
  auto windows = random_windows(rng, {2, 3}, 6, 3);
  for (auto& w : windows) w.inputs.fill(0.0);
  const FlatBatch flat = flatten(windows, 2);
  const HolisticGraph g = random_graph(flat, rng);
  for (Mode mode : {Mode::Training, Mode::Evaluation}) {
    const StfeOutput out = stfe_forward(flat, g, p, mode);
    EXPECT_EQ(out.features.max_abs(), 0.0);
    EXPECT_EQ(out.forecast.max_abs(), 0.0);
  }
}

TEST(StfeForward, IdentityChebyshevDecouplesTheGraph) {
  Rng rng(3);
  StfeParams p = StfeParams::init(tiny_stfe_config(), rng);
  for (auto& lp : p.layers) {
    lp.cheb[0].value.fill(0.0);
    for (std::size_t c = 0; c < 4; ++c) lp.cheb[0].value.at(c, c) = 1.0;
    lp.cheb[1].value.fill(0.0);
  }
  const auto windows = random_windows(rng, {3, 4}, 6, 3);
  const FlatBatch flat = flatten(windows, 2);
  const StfeOutput a = stfe_forward(flat, random_graph(flat, rng), p, Mode::Evaluation);
  const StfeOutput b = stfe_forward(flat, random_graph(flat, rng), p, Mode::Evaluation);
  EXPECT_EQ(a.features, b.features);
}

TEST(StfeForward, EvaluationModeIsolatesSubgraphs) {
  Rng rng(4);
  StfeParams p = StfeParams::init(tiny_stfe_config(), rng);
  const auto windows = random_windows(rng, {3, 4}, 6, 3);
  const FlatBatch both = flatten(windows, 2);
  const HolisticGraph g = random_graph(both, rng);
  const StfeOutput joint = stfe_forward(both, g, p, Mode::Evaluation);

  const std::vector<WindowSample> alone_batch = {windows[1]};
  const FlatBatch alone = flatten(alone_batch, 2);
  const Tensor block = g.block(1);
  const HolisticGraph ga =
      assemble_graph(alone, [&](std::span<const std::size_t>, std::size_t) { return block; });
  const StfeOutput single = stfe_forward(alone, ga, p, Mode::Evaluation);
  EXPECT_LE(max_abs_diff(row_slice(joint.features, 3, 7), single.features), 1e-10);
}

TEST(StfeForward, TrainingModeNormalizesPerChannel) {
  Rng rng(5);
  StfeConfig cfg = tiny_stfe_config();
  cfg.bn_eps = 1e-14;
  StfeParams p = StfeParams::init(cfg, rng);
  for (auto& lp : p.layers)
    for (std::size_t c = 0; c < 4; ++c) {
      lp.bn_gamma.value[c] = 0.5 + c;
      lp.bn_beta.value[c] = -1.0 + c;
    }
  const auto windows = random_windows(rng, {3, 4, 2}, 6, 3);
  const FlatBatch flat = flatten(windows, 2);
  ForwardCache cache;
  stfe_forward(flat, random_graph(flat, rng), p, Mode::Training, &cache);
  // y = gamma * xhat + beta, so xhat having zero mean and unit variance is the
  // per-channel mean beta / variance gamma^2 statement.
  for (const LayerCache& lc : cache.layers) {
    const std::size_t M = lc.xhat.size() / 4;
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t r = 0; r < M; ++r) s += lc.xhat[r * 4 + c];
      const double mean = s / M;
      for (std::size_t r = 0; r < M; ++r) s2 += std::pow(lc.xhat[r * 4 + c] - mean, 2);
      EXPECT_NEAR(mean, 0.0, 1e-6);
      EXPECT_NEAR(s2 / M, 1.0, 1e-6);
    }
  }
}

TEST(StfeForward, RunningStatisticsOnlyMoveInTraining) {
  Rng rng(6);
  StfeParams p = StfeParams::init(tiny_stfe_config(), rng);
  const auto windows = random_windows(rng, {3, 4}, 6, 3);
  const FlatBatch flat = flatten(windows, 2);
  const HolisticGraph g = random_graph(flat, rng);
  const Tensor mean0 = p.layers[0].running_mean, var0 = p.layers[0].running_var;
  stfe_forward(flat, g, p, Mode::Evaluation);
  EXPECT_EQ(p.layers[0].running_mean, mean0);
  EXPECT_EQ(p.layers[0].running_var, var0);
  stfe_forward(flat, g, p, Mode::Training);
  EXPECT_NE(p.layers[0].running_mean, mean0);
  EXPECT_NE(p.layers[0].running_var, var0);
}

TEST(Chebyshev, RecursionMatchesExplicitPolynomial) {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + rng.index(8);
    const Tensor L = normalized_laplacian(random_weights(n, rng));
    const Tensor x = random_tensor({n, 3}, rng);
    const std::vector<Tensor> th = {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng),
                                    random_tensor({3, 2}, rng)};
    // x T1 + (L x) T2 + ((2 L^2 - I) x) T3.
    const Tensor lx = matmul(L, x);
    Tensor t3 = matmul(L, lx);
    for (std::size_t i = 0; i < t3.size(); ++i) t3[i] = 2.0 * t3[i] - x[i];
    Tensor expect = matmul(x, th[0]);
    expect.add_(matmul(lx, th[1]));
    expect.add_(matmul(t3, th[2]));
    EXPECT_LE(max_abs_diff(chebyshev_conv(L, x, th), expect), 1e-10);
  }
}

TEST(OutputHead, HandComputedSingleHiddenUnit) {
  Rng rng(8);
  StfeConfig cfg = tiny_stfe_config(6, 2);
  cfg.head_channels = 1;
  StfeParams p = StfeParams::init(cfg, rng);
  p.head1_weight.value = Tensor({4, 1}, {1.0, -1.0, 0.5, 2.0});
  p.head1_bias.value = Tensor({1}, {0.25});
  p.head2_weight.value = Tensor({1, 2}, {3.0, -2.0});
  p.head2_bias.value = Tensor({2}, {1.0, 0.0});
  const Tensor h({1, 4}, {1.0, 2.0, 4.0, 0.5});
  // hidden = 1 - 2 + 2 + 1 + 0.25 = 2.25
  const Tensor y = output_head(h, p);
  EXPECT_DOUBLE_EQ(y[0], 3.0 * 2.25 + 1.0);
  EXPECT_DOUBLE_EQ(y[1], -2.0 * 2.25);
  const Tensor neg({1, 4}, {-5.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(output_head(neg, p), Tensor({1, 2}, {1.0, 0.0}));
}

TEST(StfeBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(9);
  StfeParams p = StfeParams::init(tiny_stfe_config(), rng);
  const auto windows = random_windows(rng, {2, 3}, 6, 3);
  const FlatBatch flat = flatten(windows, 2);
  ForwardCache cache;
  stfe_forward(flat, random_graph(flat, rng), p, Mode::Training, &cache);
  const auto d_w = stfe_backward(cache, Tensor({5, 4}), Tensor({5, 3}), p);
  p.for_each([](const std::string& n, Parameter& q) { EXPECT_EQ(q.grad.max_abs(), 0.0) << n; });
  for (const auto& d : d_w) EXPECT_EQ(d.max_abs(), 0.0);
}

TEST(StfeBackward, RejectsEvaluationCache) {
  Rng rng(10);
  StfeParams p = StfeParams::init(tiny_stfe_config(), rng);
  const auto windows = random_windows(rng, {2}, 6, 3);
  const FlatBatch flat = flatten(windows, 2);
  ForwardCache cache;
  stfe_forward(flat, random_graph(flat, rng), p, Mode::Evaluation, &cache);
  EXPECT_THROW(stfe_backward(cache, Tensor({2, 4}), Tensor(), p), std::logic_error);
}

TEST(StfeBackward, QuadraticProbePassesGradientCheck) {
  Rng rng(11);
  StfeParams p = StfeParams::init(tiny_stfe_config(), rng);
  GraphConfig gc;
  gc.n_vars = 3;
  gc.steps_per_day = 4;
  gc.node_dim = 3;
  gc.time_dim = 2;
  gc.init_std = 0.6;
  const auto windows = random_windows(rng, {2, 3}, 6, 3);
  const FlatBatch flat = flatten(windows, 2);
  // Screen the graph so no raw score lies within 1e-3 of the gate.
  GraphParams gp;
  for (std::uint64_t seed = 0;; ++seed) {
    Rng g(seed);
    gp = GraphParams::init(gc, g);
    bool ok = true;
    for (std::size_t b = 0; b < flat.num_subgraphs(); ++b) {
      const Tensor raw = build_adjacency(gp, flat.variables_of(b), flat.ref_time[b]);
      for (double v : raw.values()) ok = ok && std::abs(v) > 1e-3;
    }
    if (ok) break;
    ASSERT_LT(seed, 1000u);
  }
  auto loss = [&] {
    GraphBuilder b;
    const StfeOutput out = stfe_forward(flat, b.assemble(gp, flat), p, Mode::Training);
    double s = 0.0;
    for (double v : out.features.values()) s += 0.5 * v * v;
    return s;
  };
  GraphBuilder builder;
  ForwardCache cache;
  const StfeOutput out = stfe_forward(flat, builder.assemble(gp, flat), p, Mode::Training, &cache);
  p.for_each([](const std::string&, Parameter& q) { q.zero_grad(); });
  gp.for_each([](const std::string&, Parameter& q) { q.zero_grad(); });
  const auto d_w = stfe_backward(cache, out.features, Tensor(), p);
  builder.backward(gp, d_w);

  std::vector<GradGroup> groups;
  auto add = [&](const std::string& n, Parameter& q) {
    if (n.rfind("head.", 0) != 0) groups.push_back({n, &q.value, &q.grad});
  };
  p.for_each(add);
  gp.for_each(add);
  GradCheckOptions opts;
  opts.eps = 1e-5;
  opts.rel_tol = 1e-4;
  const GradCheckReport rep = finite_diff_check(loss, groups, opts);
  EXPECT_TRUE(rep.passed()) << rep.summary();
  EXPECT_GT(gp.node_emb.grad.max_abs(), 0.0);
}
