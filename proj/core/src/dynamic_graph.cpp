#include "evts/dynamic_graph.hpp"

#include <cmath>

namespace evts {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_ids(const GraphParams& params, std::span<const std::size_t> ids) {
  for (std::size_t v : ids)
    if (v >= params.cfg.n_vars)
      throw ShapeError("graph: variable id " + std::to_string(v) + " outside embedding table of " +
                       std::to_string(params.cfg.n_vars));
}

Tensor time_augmented_embeddings(const GraphParams& params, std::span<const std::size_t> ids,
                                 std::size_t ref_time) {
  const std::size_t dn = params.cfg.node_dim, dp = params.cfg.time_dim;
  const std::size_t width = dn + 2 * dp;
  const Tensor et = time_embedding(params, ref_time);
  Tensor out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t k = 0; k < dn; ++k) out.at(i, k) = params.node_emb.value.at(ids[i], k);
    for (std::size_t k = 0; k < 2 * dp; ++k) out.at(i, dn + k) = et[k];
  }
  return out;
}

}  // namespace

void GraphConfig::validate() const {
  if (n_vars == 0) throw ConfigError("graph: n_vars must be >= 1");
  if (steps_per_day == 0) throw ConfigError("steps_per_day: must be >= 1");
  if (node_dim == 0) throw ConfigError("node_dim: must be >= 1");
  if (time_dim == 0) throw ConfigError("time_dim: must be >= 1");
}

GraphParams GraphParams::init(const GraphConfig& cfg, Rng& rng) {
  cfg.validate();
  auto normal = [&](std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal(0.0, cfg.init_std);
    return Parameter(std::move(t));
  };
  GraphParams p;
  p.cfg = cfg;
  p.node_emb = normal({cfg.n_vars, cfg.node_dim});
  p.tod = normal({cfg.steps_per_day, cfg.time_dim});
  p.dow = normal({7, cfg.time_dim});
  return p;
}

std::size_t tod_slot(const GraphConfig& cfg, std::size_t ref_time) {
  return ref_time % cfg.steps_per_day;
}

std::size_t dow_slot(const GraphConfig& cfg, std::size_t ref_time) {
  return (ref_time / cfg.steps_per_day) % 7;
}

Tensor time_embedding(const GraphParams& params, std::size_t ref_time) {
  const std::size_t dp = params.cfg.time_dim;
  const std::size_t tr = tod_slot(params.cfg, ref_time), dr = dow_slot(params.cfg, ref_time);
  Tensor et({2 * dp});
  for (std::size_t k = 0; k < dp; ++k) {
    et[k] = params.tod.value.at(tr, k);
    et[dp + k] = params.dow.value.at(dr, k);
  }
  return et;
}

Tensor build_adjacency(const GraphParams& params, std::span<const std::size_t> variable_ids,
                       std::size_t ref_time) {
  check_ids(params, variable_ids);
  const Tensor et = time_augmented_embeddings(params, variable_ids, ref_time);
  const std::size_t n = variable_ids.size();
  Tensor raw({n, n});
  gemm_acc(et, false, et, true, raw);
  // Exact symmetry regardless of GEMM summation order.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) raw.at(j, i) = raw.at(i, j);
  return raw;
}

void build_adjacency_backward(GraphParams& params, std::span<const std::size_t> variable_ids,
                              std::size_t ref_time, const Tensor& d_raw) {
  const std::size_t n = variable_ids.size();
  if (d_raw.rank() != 2 || d_raw.dim(0) != n || d_raw.dim(1) != n)
    throw ShapeError("build_adjacency_backward: gradient shape mismatch");
  const Tensor et = time_augmented_embeddings(params, variable_ids, ref_time);
  Tensor sym({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym.at(i, j) = d_raw.at(i, j) + d_raw.at(j, i);
  Tensor d_et({n, et.dim(1)});
  gemm_acc(sym, false, et, false, d_et);

  const std::size_t dn = params.cfg.node_dim, dp = params.cfg.time_dim;
  const std::size_t tr = tod_slot(params.cfg, ref_time), dr = dow_slot(params.cfg, ref_time);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dn; ++k) params.node_emb.grad.at(variable_ids[i], k) += d_et.at(i, k);
    for (std::size_t k = 0; k < dp; ++k) {
      params.tod.grad.at(tr, k) += d_et.at(i, dn + k);
      params.dow.grad.at(dr, k) += d_et.at(i, dn + dp + k);
    }
  }
}

Tensor sparsify(const Tensor& raw) {
  const std::size_t n = raw.dim(0);
  Tensor w({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && raw.at(i, j) > 0.0) w.at(i, j) = sigmoid(raw.at(i, j));
  return w;
}

Tensor sparsify_backward(const Tensor& raw, const Tensor& d_weights) {
  const std::size_t n = raw.dim(0);
  Tensor d({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && raw.at(i, j) > 0.0) {
        const double s = sigmoid(raw.at(i, j));
        d.at(i, j) = d_weights.at(i, j) * s * (1.0 - s);
      }
  return d;
}

namespace {

std::vector<double> inv_sqrt_degree(const Tensor& weights) {
  const std::size_t n = weights.dim(0);
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += weights.at(i, j);
    s[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  return s;
}

}  // namespace

Tensor normalized_laplacian(const Tensor& weights) {
  if (weights.rank() != 2 || weights.dim(0) != weights.dim(1))
    throw ShapeError("normalized_laplacian: square matrix expected, got " +
                     shape_string(weights.shape()));
  const std::size_t n = weights.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(weights.at(i, j) - weights.at(j, i)) > 1e-9)
        throw std::invalid_argument("normalized_laplacian: weights not symmetric at (" +
                                    std::to_string(i) + ", " + std::to_string(j) + ")");
  const std::vector<double> s = inv_sqrt_degree(weights);
  Tensor L({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      L.at(i, j) = (i == j ? 1.0 : 0.0) - weights.at(i, j) * s[i] * s[j];
  return L;
}

Tensor normalized_laplacian_backward(const Tensor& weights, const Tensor& d_laplacian) {
  const std::size_t n = weights.dim(0);
  const std::vector<double> s = inv_sqrt_degree(weights);
  // L = I - N with N_ij = A_ij s_i s_j and s_i = deg_i^{-1/2}.
  Tensor dA({n, n});
  std::vector<double> ds(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dN = -d_laplacian.at(i, j);
      dA.at(i, j) += dN * s[i] * s[j];
      ds[i] += dN * weights.at(i, j) * s[j];
      ds[j] += dN * weights.at(i, j) * s[i];
    }
  for (std::size_t i = 0; i < n; ++i) {
    if (s[i] == 0.0) continue;
    const double d_deg = ds[i] * (-0.5) * s[i] * s[i] * s[i];
    for (std::size_t j = 0; j < n; ++j) dA.at(i, j) += d_deg;
  }
  return dA;
}

HolisticGraph GraphBuilder::assemble(const GraphParams& params, const FlatBatch& flat) {
  records_.clear();
  return assemble_graph(flat, [&](std::span<const std::size_t> ids, std::size_t ref_time) {
    Record r{std::vector<std::size_t>(ids.begin(), ids.end()), ref_time,
             build_adjacency(params, ids, ref_time)};
    Tensor w = sparsify(r.raw);
    records_.push_back(std::move(r));
    return w;
  });
}

void GraphBuilder::backward(GraphParams& params, std::span<const Tensor> d_weights) const {
  if (d_weights.size() != records_.size())
    throw ShapeError("GraphBuilder::backward: expected " + std::to_string(records_.size()) +
                     " block gradients, got " + std::to_string(d_weights.size()));
  for (std::size_t k = 0; k < records_.size(); ++k) {
    const Record& r = records_[k];
    const Tensor d_raw = sparsify_backward(r.raw, d_weights[k]);
    build_adjacency_backward(params, r.ids, r.ref_time, d_raw);
  }
}

Tensor learned_adjacency(const GraphParams& params, std::span<const std::size_t> variable_ids,
                         std::size_t ref_time) {
  return sparsify(build_adjacency(params, variable_ids, ref_time));
}

}  // namespace evts
