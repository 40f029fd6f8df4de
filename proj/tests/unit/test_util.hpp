#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "evts/dynamic_graph.hpp"
#include "evts/flat_batching.hpp"
#include "evts/focal_cl.hpp"
#include "evts/numerics.hpp"
#include "evts/stfe.hpp"

namespace evts::test {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// C=4, M=1, L=2, k=2, q=2, J=2 extractor on short windows.
inline StfeConfig tiny_stfe_config(std::size_t history = 6, std::size_t horizon = 3) {
  StfeConfig cfg;
  cfg.channels = 4;
  cfg.blocks = 1;
  cfg.layers = 2;
  cfg.kernel_size = 2;
  cfg.dilation_rate = 2;
  cfg.cheb_order = 2;
  cfg.head_channels = 5;
  cfg.history = history;
  cfg.horizon = horizon;
  return cfg;
}

/// One window per entry of `sizes`, variables 0..n-1, random values.
inline std::vector<WindowSample> random_windows(Rng& rng, const std::vector<std::size_t>& sizes,
                                                std::size_t history, std::size_t horizon,
                                                std::size_t max_ref_time = 1000) {
  std::vector<WindowSample> out;
  for (std::size_t n : sizes) {
    WindowSample w;
    w.inputs = random_tensor({n, history}, rng);
    w.targets = random_tensor({n, horizon}, rng);
    for (std::size_t i = 0; i < n; ++i) w.variable_ids.push_back(i);
    w.ref_time = rng.index(max_ref_time);
    out.push_back(std::move(w));
  }
  return out;
}

/// Random symmetric nonnegative weights with zero diagonal; each node is
/// isolated with probability `isolate_prob`.
inline Tensor random_weights(std::size_t n, Rng& rng, double isolate_prob = 0.2) {
  Tensor w({n, n});
  std::vector<bool> isolated(n);
  for (std::size_t i = 0; i < n; ++i) isolated[i] = rng.uniform() < isolate_prob;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (isolated[i] || isolated[j] || rng.uniform() < 0.3) ? 0.0 : rng.uniform();
      w.at(i, j) = w.at(j, i) = v;
    }
  return w;
}

/// Holistic graph whose block for each subgraph is random_weights.
inline HolisticGraph random_graph(const FlatBatch& flat, Rng& rng) {
  return assemble_graph(flat, [&](std::span<const std::size_t> ids, std::size_t) {
    return random_weights(ids.size(), rng);
  });
}

/// Direct evaluation of the filtered InfoNCE objective without stabilization.
inline double naive_contrastive(const Tensor& s, const std::vector<double>& tau,
                                const std::vector<std::size_t>& subgraph, bool filter) {
  const std::size_t n = s.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j == i || !filter || subgraph[j] != subgraph[i]) denom += std::exp(s.at(i, j) / tau[i]);
    total += -std::log(std::exp(s.at(i, i) / tau[i]) / denom);
  }
  return total / static_cast<double>(n);
}

}  // namespace evts::test
