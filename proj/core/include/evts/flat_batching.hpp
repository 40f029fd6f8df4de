#pragma once

// Flat batching: a mini-batch of windows with different variable counts is
// flattened into B' univariate rows, and the per-window graphs are kept as a
// block-diagonal "holistic" graph with one isolated subgraph per window.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evts/evts_data.hpp"
#include "evts/numerics.hpp"

namespace evts {

struct FlatBatch {
  Tensor rows;     // B' x H
  Tensor targets;  // B' x Q
  std::vector<std::size_t> subgraph_id;   // B'
  std::vector<std::size_t> variable_id;   // B'
  std::vector<std::uint8_t> expanding;    // B'
  std::vector<double> loss_mask;          // B', 0 for padded rows
  std::vector<std::size_t> ref_time;      // B
  std::vector<std::size_t> offsets;       // B + 1

  std::size_t num_rows() const { return subgraph_id.size(); }
  std::size_t num_subgraphs() const { return ref_time.size(); }
  std::size_t history() const { return rows.dim(1); }
  std::size_t horizon() const { return targets.dim(1); }
  std::size_t subgraph_size(std::size_t b) const { return offsets[b + 1] - offsets[b]; }
  std::span<const std::size_t> variables_of(std::size_t b) const {
    return std::span<const std::size_t>(variable_id).subspan(offsets[b], subgraph_size(b));
  }
};

/// Variables with index >= n_continual are flagged as expanding.
FlatBatch flatten(std::span<const WindowSample> batch, std::size_t n_continual);

/// Splits B' x Q row values back into one n_b x Q matrix per subgraph.
std::vector<Tensor> unflatten(const FlatBatch& flat, const Tensor& row_values);

bool same_subgraph(const FlatBatch& flat, std::size_t i, std::size_t j);

/// Block-diagonal adjacency kept as per-subgraph dense blocks. Subgraphs with
/// the same (variable set, reference time) share one stored block.
struct HolisticGraph {
  std::vector<std::size_t> offsets;  // B + 1, shared with the FlatBatch
  std::vector<Tensor> blocks;        // unique n x n weight blocks
  std::vector<std::size_t> block_of; // subgraph -> index into blocks

  std::size_t num_subgraphs() const { return block_of.size(); }
  std::size_t num_rows() const { return offsets.back(); }
  const Tensor& block(std::size_t b) const { return blocks[block_of[b]]; }
  /// Materialized B' x B' matrix; for inspection and tests only.
  Tensor dense() const;
};

using AdjacencyProvider =
    std::function<Tensor(std::span<const std::size_t> variable_ids, std::size_t ref_time)>;

HolisticGraph assemble_graph(const FlatBatch& flat, const AdjacencyProvider& provider);

/// JSON description of a batch layout (offsets, ids, flags, ref times).
std::string batch_layout_json(const FlatBatch& flat);

}  // namespace evts
