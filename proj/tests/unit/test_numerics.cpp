#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "evts/numerics.hpp"
#include "test_util.hpp"

using namespace evts;
using evts::test::max_abs_diff;
using evts::test::random_tensor;

namespace {

// Direct summation: out[o][t] = sum_{c,kappa} w[o][c][kappa] * x[c][t + kappa*d].
Tensor naive_conv(const Tensor& x, const Tensor& w, std::size_t d) {
  const std::size_t co = w.dim(0), ci = w.dim(1), k = w.dim(2), T = x.dim(1);
  const std::size_t tout = T - d * (k - 1);
  Tensor out({co, tout});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t t = 0; t < tout; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t kk = 0; kk < k; ++kk) s += w.at(o, c, kk) * x.at(c, t + kk * d);
      out.at(o, t) = s;
    }
  return out;
}

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  t.at(1, 2, 3) = 5.0;
  EXPECT_EQ(t[23], 5.0);
  EXPECT_THROW(t.dim(3), ShapeError);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
  EXPECT_EQ(t.reshaped({6, 4}).at(5, 3), 5.0);
}

TEST(Tensor, AddRequiresSameShape) {
  Tensor a({2, 2}, 1.0), b({4}, 1.0);
  EXPECT_THROW(a.add_(b), ShapeError);
  Tensor c({2, 2}, 2.0);
  a.add_(c, 0.5);
  EXPECT_EQ(a.at(1, 1), 2.0);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, NamedSplitsAreIndependentAndStable) {
  Rng root(3);
  Rng x1 = root.split("x"), x2 = root.split("x"), y = root.split("y");
  int same = 0;
  for (int i = 0; i < 50; ++i) {
    const double vx = x1.uniform();
    EXPECT_EQ(vx, x2.uniform());
    same += vx == y.uniform();
  }
  EXPECT_EQ(same, 0);
}

TEST(Rng, BetaStaysInUnitInterval) {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = r.beta(0.2, 0.2);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(DilatedConv, OutputLengthShrinks) {
  Tensor x({1, 12}, 1.0), w({1, 1, 2}, 1.0);
  EXPECT_EQ(dilated_conv1d(x, w, 1).dim(1), 11u);
  EXPECT_EQ(dilated_conv1d(x, w, 2).dim(1), 10u);
}

TEST(DilatedConv, IdentityImpulse) {
  Rng r(0);
  const Tensor x = random_tensor({3, 9}, r);
  Tensor w({3, 3, 1});
  for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 0) = 1.0;
  EXPECT_EQ(dilated_conv1d(x, w, 1), x);
}

TEST(DilatedConv, HandExample) {
  const Tensor x({1, 4}, {1, 2, 3, 4});
  const Tensor w({1, 1, 2}, {1, 1});
  const Tensor y = dilated_conv1d(x, w, 2);
  ASSERT_EQ(y.dim(1), 2u);
  EXPECT_EQ(y.at(0, 0), 4.0);
  EXPECT_EQ(y.at(0, 1), 6.0);
}

TEST(DilatedConv, MatchesDirectSummation) {
  Rng r(11);
  for (std::size_t d : {1, 2, 3}) {
    const Tensor x = random_tensor({4, 15}, r), w = random_tensor({5, 4, 3}, r);
    EXPECT_LT(max_abs_diff(dilated_conv1d(x, w, d), naive_conv(x, w, d)), 1e-12);
  }
}

TEST(DilatedConv, ErrorsNameTheLayer) {
  Tensor x({2, 5}), w({1, 3, 2});
  EXPECT_THROW(dilated_conv1d(x, w, 1, "block1"), ShapeError);
  Tensor w2({1, 2, 2});
  try {
    dilated_conv1d(x, w2, 5, "block3.layer2");
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("block3.layer2"), std::string::npos);
  }
}

TEST(DilatedConv, LinearInInputAndKernel) {
  Rng r(5);
  const Tensor x = random_tensor({3, 10}, r), y = random_tensor({3, 10}, r);
  const Tensor w = random_tensor({2, 3, 2}, r), v = random_tensor({2, 3, 2}, r);
  const double a = 1.7, b = -0.3;
  Tensor xy = x;
  for (std::size_t i = 0; i < xy.size(); ++i) xy[i] = a * x[i] + b * y[i];
  Tensor lhs = dilated_conv1d(xy, w, 2);
  Tensor rhs = dilated_conv1d(x, w, 2), ry = dilated_conv1d(y, w, 2);
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * rhs[i] + b * ry[i];
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);

  Tensor wv = w;
  for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = a * w[i] + b * v[i];
  lhs = dilated_conv1d(x, wv, 2);
  rhs = dilated_conv1d(x, w, 2);
  ry = dilated_conv1d(x, v, 2);
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * rhs[i] + b * ry[i];
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(BatchedConv, MatchesPerSampleConvolution) {
  Rng r(2);
  const std::size_t N = 3, T = 9, Ci = 4, Co = 5, d = 2;
  const Tensor x = random_tensor({N, T, Ci}, r), w = random_tensor({Co, Ci, 2}, r);
  const Tensor b = random_tensor({Co}, r);
  const Tensor y = conv1d_forward(x, w, b, d);
  ASSERT_EQ(y.shape(), (std::vector<std::size_t>{N, T - d, Co}));
  for (std::size_t n = 0; n < N; ++n) {
    Tensor xs({Ci, T});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < Ci; ++c) xs.at(c, t) = x.at(n, t, c);
    const Tensor ys = naive_conv(xs, w, d);
    for (std::size_t t = 0; t < T - d; ++t)
      for (std::size_t o = 0; o < Co; ++o) EXPECT_NEAR(y.at(n, t, o), ys.at(o, t) + b[o], 1e-12);
  }
}

TEST(BatchedConv, BackwardPassesGradientCheck) {
  Rng r(4);
  const std::size_t N = 2, T = 7, Ci = 3, Co = 2, d = 2;
  Tensor x = random_tensor({N, T, Ci}, r), w = random_tensor({Co, Ci, 2}, r);
  Tensor b = random_tensor({Co}, r);
  const Tensor probe = random_tensor({N, T - d, Co}, r);
  auto loss = [&] {
    const Tensor y = conv1d_forward(x, w, b, d);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += probe[i] * y[i];
    return s;
  };
  Tensor dx(x.shape()), dw(w.shape()), db(b.shape());
  conv1d_backward(im2col_dilated(x, 2, d), x.shape(), w, probe, d, &dx, dw, db);
  const GradGroup groups[] = {{"x", &x, &dx}, {"w", &w, &dw}, {"b", &b, &db}};
  const GradCheckReport rep = finite_diff_check(loss, groups);
  EXPECT_TRUE(rep.passed()) << rep.summary();
}

TEST(Gemm, MatchesTripleLoopWithTransposes) {
  Rng r(9);
  const Tensor a = random_tensor({4, 3}, r), b = random_tensor({3, 5}, r);
  const Tensor at = random_tensor({3, 4}, r), bt = random_tensor({5, 3}, r);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      const Tensor& A = ta ? at : a;
      const Tensor& B = tb ? bt : b;
      Tensor out({4, 5}, 1.0);
      gemm_acc(A, ta, B, tb, out, 2.0);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < 3; ++k)
            s += (ta ? A.at(k, i) : A.at(i, k)) * (tb ? B.at(j, k) : B.at(k, j));
          EXPECT_NEAR(out.at(i, j), 1.0 + 2.0 * s, 1e-12);
        }
    }
  Tensor bad({4, 4});
  EXPECT_THROW(gemm_acc(a, false, b, false, bad), ShapeError);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  Rng r(1);
  Tensor p = random_tensor({10}, r);
  const Tensor before = p;
  AdamState s = AdamState::like(p);
  adam_step(p, Tensor(p.shape()), s, AdamOptions{});
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepByHand) {
  // m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1.
  Tensor p({1}, 1.0), g({1}, 1.0);
  AdamState s = AdamState::like(p);
  adam_step(p, g, s, AdamOptions{0.1, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(s.m[0], 0.1, 1e-15);
  EXPECT_NEAR(s.v[0], 0.001, 1e-15);
}

TEST(Adam, TwoStepsDifferFromOneDoubledStep) {
  Tensor p1({1}, 1.0), p2({1}, 1.0), g({1}, 0.5);
  AdamState s1 = AdamState::like(p1), s2 = AdamState::like(p2);
  adam_step(p1, g, s1, AdamOptions{0.1});
  adam_step(p1, g, s1, AdamOptions{0.1});
  adam_step(p2, g, s2, AdamOptions{0.2});
  EXPECT_NE(p1[0], p2[0]);
}

TEST(Adam, NonFiniteGradientNamesTheGroup) {
  Tensor p({2}, 1.0), g({2}, 0.0);
  g[1] = std::numeric_limits<double>::quiet_NaN();
  AdamState s = AdamState::like(p);
  try {
    adam_step(p, g, s, AdamOptions{}, "stfe.embed.weight");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("stfe.embed.weight"), std::string::npos);
  }
}

TEST(GradCheck, QuadraticPassesTightTolerance) {
  Rng r(3);
  Tensor p = random_tensor({50}, r);
  Tensor g(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2.0 * p[i];
  auto loss = [&] {
    double s = 0.0;
    for (double v : p.values()) s += v * v;
    return s;
  };
  GradCheckOptions opts;
  opts.rel_tol = 1e-6;
  const GradGroup groups[] = {{"p", &p, &g}};
  EXPECT_TRUE(finite_diff_check(loss, groups, opts).passed());
}

TEST(GradCheck, ScaledGradientFails) {
  Rng r(3);
  Tensor p = random_tensor({20}, r);
  Tensor g(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2.02 * p[i];
  auto loss = [&] {
    double s = 0.0;
    for (double v : p.values()) s += v * v;
    return s;
  };
  const GradGroup groups[] = {{"p", &p, &g}};
  const GradCheckReport rep = finite_diff_check(loss, groups);
  EXPECT_FALSE(rep.passed());
  EXPECT_NEAR(rep.groups[0].max_rel_error, 0.01 / 1.01, 1e-6);
}

TEST(GradCheck, SubsamplesLargeGroupsAndRestoresValues) {
  Rng r(8);
  Tensor p = random_tensor({1000}, r);
  const Tensor before = p;
  Tensor g(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2.0 * p[i];
  auto loss = [&] {
    double s = 0.0;
    for (double v : p.values()) s += v * v;
    return s;
  };
  const GradGroup groups[] = {{"p", &p, &g}};
  const GradCheckReport rep = finite_diff_check(loss, groups);
  EXPECT_EQ(rep.groups[0].checked, 256u);
  EXPECT_EQ(p, before);
}
