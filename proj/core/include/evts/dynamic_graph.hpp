#pragma once

// Learnable time-aware adjacency. Node embeddings are concatenated with a
// joint time-of-day / day-of-week embedding, scored by inner products, and
// gated to positive correlations before Laplacian normalization.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "evts/flat_batching.hpp"
#include "evts/numerics.hpp"

namespace evts {

struct GraphConfig {
  std::size_t n_vars = 0;
  std::size_t steps_per_day = 24;
  std::size_t node_dim = 20;
  std::size_t time_dim = 10;  // per table; e_t has 2 * time_dim entries
  double init_std = 0.1;

  void validate() const;
};

struct GraphParams {
  GraphConfig cfg;
  Parameter node_emb;  // n_vars x node_dim
  Parameter tod;       // steps_per_day x time_dim
  Parameter dow;       // 7 x time_dim

  static GraphParams init(const GraphConfig& cfg, Rng& rng);

  template <class F>
  void for_each(F&& f) {
    f("graph.node_emb", node_emb);
    f("graph.tod", tod);
    f("graph.dow", dow);
  }
};

std::size_t tod_slot(const GraphConfig& cfg, std::size_t ref_time);
std::size_t dow_slot(const GraphConfig& cfg, std::size_t ref_time);

/// e_t = [tod row, dow row], length 2 * time_dim.
Tensor time_embedding(const GraphParams& params, std::size_t ref_time);

/// Pre-gate scores E_t * E_t^T with E_t = [E[ids], e_t] (n x n, symmetric).
Tensor build_adjacency(const GraphParams& params, std::span<const std::size_t> variable_ids,
                       std::size_t ref_time);
/// Accumulates d(raw) into the node and time embedding gradients.
void build_adjacency_backward(GraphParams& params, std::span<const std::size_t> variable_ids,
                              std::size_t ref_time, const Tensor& d_raw);

/// Zero diagonal; sigmoid(raw_ij) where raw_ij > 0, else 0.
Tensor sparsify(const Tensor& raw);
Tensor sparsify_backward(const Tensor& raw, const Tensor& d_weights);

/// I - D^{-1/2} A D^{-1/2}; zero-degree nodes get D^{-1/2} = 0.
Tensor normalized_laplacian(const Tensor& weights);
Tensor normalized_laplacian_backward(const Tensor& weights, const Tensor& d_laplacian);

/// Builds the holistic graph of a flat batch from the current parameters and
/// remembers what it needs to push block gradients back into them.
class GraphBuilder {
 public:
  HolisticGraph assemble(const GraphParams& params, const FlatBatch& flat);
  /// d_weights holds one gradient per unique block of the last assembled graph.
  void backward(GraphParams& params, std::span<const Tensor> d_weights) const;

 private:
  struct Record {
    std::vector<std::size_t> ids;
    std::size_t ref_time;
    Tensor raw;
  };
  std::vector<Record> records_;
};

/// Adjacency weights of the given variables at a slot (export/inspection).
Tensor learned_adjacency(const GraphParams& params, std::span<const std::size_t> variable_ids,
                         std::size_t ref_time);

}  // namespace evts
