#include "evts/flat_batching.hpp"

#include <algorithm>
#include <map>
#include <utility>

#include "json.hpp"

namespace evts {

FlatBatch flatten(std::span<const WindowSample> batch, std::size_t n_continual) {
  if (batch.empty()) throw ShapeError("flatten: empty batch");
  const std::size_t H = batch.front().inputs.dim(1);
  const std::size_t Q = batch.front().targets.dim(1);
  std::size_t total = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& w = batch[b];
    if (w.inputs.dim(1) != H || w.targets.dim(1) != Q)
      throw ShapeError("flatten: sample " + std::to_string(b) + " has H/Q " +
                       std::to_string(w.inputs.dim(1)) + "/" + std::to_string(w.targets.dim(1)) +
                       ", batch uses " + std::to_string(H) + "/" + std::to_string(Q));
    if (w.inputs.dim(0) != w.n_rows() || w.targets.dim(0) != w.n_rows())
      throw ShapeError("flatten: sample " + std::to_string(b) + " row count mismatch");
    if (!w.row_mask.empty() && w.row_mask.size() != w.n_rows())
      throw ShapeError("flatten: sample " + std::to_string(b) + " row mask size mismatch");
    if (!std::is_sorted(w.variable_ids.begin(), w.variable_ids.end()) ||
        std::adjacent_find(w.variable_ids.begin(), w.variable_ids.end()) != w.variable_ids.end())
      throw ShapeError("flatten: sample " + std::to_string(b) +
                       " variable ids must be strictly increasing");
    total += w.n_rows();
  }

  FlatBatch flat;
  flat.rows = Tensor({total, H});
  flat.targets = Tensor({total, Q});
  flat.subgraph_id.reserve(total);
  flat.variable_id.reserve(total);
  flat.expanding.reserve(total);
  flat.loss_mask.reserve(total);
  flat.offsets.push_back(0);
  std::size_t r = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& w = batch[b];
    for (std::size_t i = 0; i < w.n_rows(); ++i, ++r) {
      std::copy_n(w.inputs.data() + i * H, H, flat.rows.data() + r * H);
      std::copy_n(w.targets.data() + i * Q, Q, flat.targets.data() + r * Q);
      flat.subgraph_id.push_back(b);
      flat.variable_id.push_back(w.variable_ids[i]);
      flat.expanding.push_back(w.variable_ids[i] >= n_continual ? 1 : 0);
      flat.loss_mask.push_back(w.row_mask.empty() ? 1.0 : w.row_mask[i]);
    }
    flat.ref_time.push_back(w.ref_time);
    flat.offsets.push_back(r);
  }
  return flat;
}

std::vector<Tensor> unflatten(const FlatBatch& flat, const Tensor& row_values) {
  if (row_values.rank() != 2 || row_values.dim(0) != flat.num_rows())
    throw ShapeError("unflatten: expected " + std::to_string(flat.num_rows()) + " rows, got " +
                     shape_string(row_values.shape()));
  const std::size_t width = row_values.dim(1);
  std::vector<Tensor> out;
  out.reserve(flat.num_subgraphs());
  for (std::size_t b = 0; b < flat.num_subgraphs(); ++b) {
    const std::size_t n = flat.subgraph_size(b);
    std::vector<double> data(row_values.data() + flat.offsets[b] * width,
                             row_values.data() + flat.offsets[b + 1] * width);
    out.emplace_back(std::vector<std::size_t>{n, width}, std::move(data));
  }
  return out;
}

bool same_subgraph(const FlatBatch& flat, std::size_t i, std::size_t j) {
  if (i >= flat.num_rows() || j >= flat.num_rows())
    throw std::out_of_range("same_subgraph: row index out of range (B' = " +
                            std::to_string(flat.num_rows()) + ")");
  return flat.subgraph_id[i] == flat.subgraph_id[j];
}

Tensor HolisticGraph::dense() const {
  const std::size_t n = num_rows();
  Tensor out({n, n});
  for (std::size_t b = 0; b < num_subgraphs(); ++b) {
    const Tensor& blk = block(b);
    const std::size_t o = offsets[b], m = offsets[b + 1] - offsets[b];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) out.at(o + i, o + j) = blk.at(i, j);
  }
  return out;
}

HolisticGraph assemble_graph(const FlatBatch& flat, const AdjacencyProvider& provider) {
  HolisticGraph g;
  g.offsets = flat.offsets;
  g.block_of.reserve(flat.num_subgraphs());
  std::map<std::pair<std::vector<std::size_t>, std::size_t>, std::size_t> memo;
  for (std::size_t b = 0; b < flat.num_subgraphs(); ++b) {
    const auto ids = flat.variables_of(b);
    auto key = std::make_pair(std::vector<std::size_t>(ids.begin(), ids.end()), flat.ref_time[b]);
    auto it = memo.find(key);
    if (it == memo.end()) {
      Tensor blk = provider(ids, flat.ref_time[b]);
      if (blk.rank() != 2 || blk.dim(0) != ids.size() || blk.dim(1) != ids.size())
        throw ShapeError("assemble_graph: subgraph " + std::to_string(b) + " expects a " +
                         std::to_string(ids.size()) + " x " + std::to_string(ids.size()) +
                         " block, provider returned " + shape_string(blk.shape()));
      it = memo.emplace(std::move(key), g.blocks.size()).first;
      g.blocks.push_back(std::move(blk));
    }
    g.block_of.push_back(it->second);
  }
  return g;
}

std::string batch_layout_json(const FlatBatch& flat) {
  nlohmann::json j;
  j["num_rows"] = flat.num_rows();
  j["num_subgraphs"] = flat.num_subgraphs();
  j["history"] = flat.history();
  j["horizon"] = flat.horizon();
  j["offsets"] = flat.offsets;
  j["ref_time"] = flat.ref_time;
  j["subgraph_id"] = flat.subgraph_id;
  j["variable_id"] = flat.variable_id;
  std::vector<bool> expanding(flat.expanding.begin(), flat.expanding.end());
  j["expanding"] = expanding;
  j["loss_mask"] = flat.loss_mask;
  return j.dump(2);
}

}  // namespace evts
