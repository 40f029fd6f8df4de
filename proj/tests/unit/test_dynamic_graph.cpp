#include <gtest/gtest.h>

#include <cmath>

#include "evts/dynamic_graph.hpp"
#include "test_util.hpp"

using namespace evts;
using evts::test::max_abs_diff;
using evts::test::random_tensor;
using evts::test::random_weights;

namespace {

GraphConfig small_config(std::size_t n_vars = 5) {
  GraphConfig cfg;
  cfg.n_vars = n_vars;
  cfg.steps_per_day = 6;
  cfg.node_dim = 3;
  cfg.time_dim = 2;
  cfg.init_std = 0.5;
  return cfg;
}

double sum_product(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(TimeSlots, ModularArithmetic) {
  GraphConfig cfg = small_config();
  EXPECT_EQ(tod_slot(cfg, 6), 0u);
  EXPECT_EQ(dow_slot(cfg, 6), 1u);
  EXPECT_EQ(tod_slot(cfg, 13), 1u);
  EXPECT_EQ(dow_slot(cfg, 13), 2u);
  EXPECT_EQ(dow_slot(cfg, 6 * 7 + 5), 0u);
}

TEST(TimeEmbedding, PeriodicOverAWeek) {
  Rng rng(0);
  const GraphParams p = GraphParams::init(small_config(), rng);
  const Tensor a = time_embedding(p, 9);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(a, time_embedding(p, 9 + 7 * 6 * 3));
  EXPECT_NE(a, time_embedding(p, 10));
}

TEST(BuildAdjacency, GramMatrixExamples) {
  Rng rng(1);
  GraphParams p = GraphParams::init(small_config(), rng);
  const std::vector<std::size_t> one = {2};
  const Tensor single = build_adjacency(p, one, 3);
  ASSERT_EQ(single.shape(), (std::vector<std::size_t>{1, 1}));
  EXPECT_GE(single[0], 0.0);

  for (std::size_t k = 0; k < 3; ++k) p.node_emb.value.at(1, k) = p.node_emb.value.at(0, k);
  const std::vector<std::size_t> twins = {0, 1};
  const Tensor t = build_adjacency(p, twins, 4);
  EXPECT_EQ(t.at(0, 0), t.at(0, 1));
  EXPECT_EQ(t.at(1, 0), t.at(1, 1));
  EXPECT_EQ(t.at(0, 0), t.at(1, 1));

  p.tod.value.fill(0.0);
  p.dow.value.fill(0.0);
  p.node_emb.value.fill(0.0);
  p.node_emb.value.at(0, 0) = 1.0;
  p.node_emb.value.at(1, 1) = 2.0;
  const Tensor o = build_adjacency(p, twins, 0);
  EXPECT_EQ(o.at(0, 1), 0.0);
  EXPECT_EQ(o.at(1, 0), 0.0);
  EXPECT_EQ(o.at(1, 1), 4.0);
}

TEST(BuildAdjacency, SymmetricAndMatchesNaiveOracle) {
  Rng rng(2);
  const GraphParams p = GraphParams::init(small_config(), rng);
  const std::vector<std::size_t> ids = {4, 0, 2};
  const std::size_t t = 17;
  const Tensor raw = build_adjacency(p, ids, t);
  const Tensor et = time_embedding(p, t);
  for (std::size_t a = 0; a < ids.size(); ++a)
    for (std::size_t b = 0; b < ids.size(); ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k)
        s += p.node_emb.value.at(ids[a], k) * p.node_emb.value.at(ids[b], k);
      for (std::size_t k = 0; k < et.size(); ++k) s += et[k] * et[k];
      EXPECT_NEAR(raw.at(a, b), s, 1e-12);
      EXPECT_EQ(raw.at(a, b), raw.at(b, a));
    }
  const std::vector<std::size_t> bad = {5};
  EXPECT_THROW(build_adjacency(p, bad, 0), ShapeError);
}

TEST(Sparsify, HardGateExamples) {
  const Tensor raw({3, 3}, {5.0, 2.0, -1.0, 2.0, 7.0, 0.0, -1.0, 0.0, 1.0});
  const Tensor w = sparsify(raw);
  EXPECT_NEAR(w.at(0, 1), 0.88079708, 1e-8);
  EXPECT_EQ(w.at(0, 2), 0.0);
  EXPECT_EQ(w.at(1, 2), 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(w.at(i, i), 0.0);
  EXPECT_EQ(sparsify(Tensor({4, 4})), Tensor({4, 4}));
}

TEST(Sparsify, OutputsAreZeroOrAboveHalf) {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor raw = random_tensor({6, 6}, rng, 2.0);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < i; ++j) raw.at(i, j) = raw.at(j, i);
    const Tensor w = sparsify(raw);
    for (double v : w.values()) EXPECT_TRUE(v == 0.0 || (v > 0.5 && v < 1.0)) << v;
  }
}

TEST(Sparsify, GradientIsZeroThroughDroppedEntries) {
  const Tensor raw({2, 2}, {1.0, -0.5, 0.8, 2.0});
  const Tensor d = sparsify_backward(raw, Tensor({2, 2}, 1.0));
  EXPECT_EQ(d.at(0, 0), 0.0);
  EXPECT_EQ(d.at(0, 1), 0.0);
  const double s = 1.0 / (1.0 + std::exp(-0.8));
  EXPECT_NEAR(d.at(1, 0), s * (1.0 - s), 1e-15);
}

TEST(NormalizedLaplacian, HandExamples) {
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(normalized_laplacian(Tensor({3, 3})), eye);
  const Tensor two = normalized_laplacian(Tensor({2, 2}, {0, 1, 1, 0}));
  EXPECT_NEAR(max_abs_diff(two, Tensor({2, 2}, {1, -1, -1, 1})), 0.0, 1e-15);
  // Eigenvalues {0, 2} through quadratic forms on the eigenvectors.
  const auto quad = [&](double a, double b) {
    return a * (two.at(0, 0) * a + two.at(0, 1) * b) + b * (two.at(1, 0) * a + two.at(1, 1) * b);
  };
  EXPECT_NEAR(quad(1, 1), 0.0, 1e-15);
  EXPECT_NEAR(quad(1, -1) / 2.0, 2.0, 1e-15);
}

TEST(NormalizedLaplacian, RejectsAsymmetricWeights) {
  EXPECT_THROW(normalized_laplacian(Tensor({2, 2}, {0, 1, 1.1, 0})), std::invalid_argument);
  EXPECT_NO_THROW(normalized_laplacian(Tensor({2, 2}, {0, 1, 1 + 1e-12, 0})));
}

TEST(NormalizedLaplacian, QuadraticFormWithinSpectralBounds) {
  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.index(8);
    const Tensor L = normalized_laplacian(random_weights(n, rng));
    const Tensor x = random_tensor({n, 1}, rng, 3.0);
    const Tensor lx = matmul(L, x);
    const double q = sum_product(x, lx), norm2 = sum_product(x, x);
    EXPECT_GE(q, -1e-9);
    EXPECT_LE(q, 2.0 * norm2 + 1e-9);
  }
}

TEST(NormalizedLaplacian, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor w = random_weights(5, rng, 0.0);
  const Tensor P = random_tensor({5, 5}, rng);
  const Tensor dw = normalized_laplacian_backward(w, P);
  // Perturb symmetric pairs together so the input stays valid.
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) {
      if (w.at(i, j) == 0.0) continue;
      const double h = 1e-6, orig = w.at(i, j);
      w.at(i, j) = w.at(j, i) = orig + h;
      const double up = sum_product(P, normalized_laplacian(w));
      w.at(i, j) = w.at(j, i) = orig - h;
      const double down = sum_product(P, normalized_laplacian(w));
      w.at(i, j) = w.at(j, i) = orig;
      EXPECT_NEAR((up - down) / (2 * h), dw.at(i, j) + dw.at(j, i), 1e-7);
    }
}

TEST(GraphPipeline, GradientPassesFiniteDifferenceCheck) {
  const GraphConfig cfg = small_config(6);
  const std::vector<std::size_t> ids = {0, 1, 3, 5};
  const std::size_t t = 11;
  // Screen seeds so no raw score sits within 1e-3 of the gate.
  GraphParams p;
  for (std::uint64_t seed = 0;; ++seed) {
    Rng rng(seed);
    p = GraphParams::init(cfg, rng);
    const Tensor raw = build_adjacency(p, ids, t);
    bool ok = true;
    for (double v : raw.values()) ok = ok && std::abs(v) > 1e-3;
    if (ok) break;
    ASSERT_LT(seed, 1000u);
  }
  Rng data(99);
  const Tensor X = random_tensor({4, 3}, data);
  const Tensor P = random_tensor({4, 3}, data);
  auto loss = [&] {
    const Tensor L = normalized_laplacian(sparsify(build_adjacency(p, ids, t)));
    return sum_product(P, matmul(L, X));
  };
  // dL/dLhat = P X^T.
  Tensor d_lap({4, 4});
  gemm_acc(P, false, X, true, d_lap);
  const Tensor raw = build_adjacency(p, ids, t);
  const Tensor w = sparsify(raw);
  p.node_emb.zero_grad();
  p.tod.zero_grad();
  p.dow.zero_grad();
  build_adjacency_backward(p, ids, t,
                           sparsify_backward(raw, normalized_laplacian_backward(w, d_lap)));
  const std::vector<GradGroup> groups = {{"graph.node_emb", &p.node_emb.value, &p.node_emb.grad},
                                         {"graph.tod", &p.tod.value, &p.tod.grad},
                                         {"graph.dow", &p.dow.value, &p.dow.grad}};
  GradCheckOptions opts;
  opts.eps = 1e-6;
  opts.rel_tol = 1e-4;
  const GradCheckReport rep = finite_diff_check(loss, groups, opts);
  EXPECT_TRUE(rep.passed()) << rep.summary();
  EXPECT_GT(p.tod.grad.max_abs(), 0.0);
}

TEST(GraphBuilder, AssemblesSharedBlocksAndChecksGradientCount) {
  Rng rng(6);
  GraphParams p = GraphParams::init(small_config(), rng);
  WindowSample a, b;
  a.inputs = random_tensor({3, 4}, rng);
  a.targets = random_tensor({3, 2}, rng);
  a.variable_ids = {0, 1, 2};
  a.ref_time = 5;
  b = a;
  b.inputs = random_tensor({3, 4}, rng);
  const std::vector<WindowSample> batch = {a, b};
  const FlatBatch flat = flatten(batch, 2);
  GraphBuilder builder;
  const HolisticGraph g = builder.assemble(p, flat);
  EXPECT_EQ(g.blocks.size(), 1u);
  EXPECT_EQ(g.blocks[0], learned_adjacency(p, a.variable_ids, 5));
  const std::vector<Tensor> none;
  EXPECT_THROW(builder.backward(p, none), ShapeError);
}
