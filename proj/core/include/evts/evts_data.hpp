#pragma once

// Expanding-variate datasets: synthetic generation, variable partitioning,
// train1/train2/valid/test splits, sliding windows and z-score scaling.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evts/numerics.hpp"

namespace evts {

enum class ExpansionMode { Area, Spatial, Internal };

std::string to_string(ExpansionMode mode);
ExpansionMode parse_expansion_mode(std::string_view s);

using Coord = std::array<double, 2>;

/// Half-open range of time steps.
struct StepRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end > begin ? end - begin : 0; }
  bool operator==(const StepRange&) const = default;
};

struct SplitSpec {
  StepRange train1;
  StepRange train2;
  StepRange valid;
  StepRange test;
};

struct SynthConfig {
  std::size_t n_continual = 8;
  std::size_t n_expanding = 4;
  std::size_t steps_per_day = 24;
  std::size_t days_p1 = 30;
  std::size_t days_p2 = 3;
  std::size_t days_valid = 2;
  std::size_t days_test = 7;
  // Number of consecutive expansions; the expanding set is split into this
  // many groups that join at evenly spaced steps inside P2.
  std::size_t expansion_stages = 1;
  ExpansionMode mode = ExpansionMode::Internal;

  double area_km = 100.0;
  double sigma_km = 20.0;
  double coupling = 0.6;
  double persistence = 0.95;
  double process_noise = 0.3;
  double obs_noise = 0.1;
  double amp_min = 2.0;
  double amp_max = 6.0;
  double level = 0.0;

  std::uint64_t seed = 0;

  std::size_t total_steps() const {
    return steps_per_day * (days_p1 + days_p2 + days_valid + days_test);
  }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Time x variable matrix with its expansion schedule. Columns are ordered
/// so that every stage's variable set is a prefix of the next one: the
/// continual variables V1 come first, then each expansion group in turn.
struct EvtsDataset {
  std::size_t n_steps = 0;
  std::size_t n_vars = 0;
  std::size_t steps_per_day = 24;
  // n_steps x n_vars, row-major. Unobserved cells may still hold the
  // generator's counterfactual values; only fully_observed() exposes them.
  std::vector<double> values;
  std::vector<std::uint8_t> observed;   // n_steps x n_vars
  std::vector<std::int64_t> labels;     // external id of each column
  std::vector<std::size_t> stage_sizes; // cumulative variable counts per stage
  std::vector<std::size_t> expansion_steps;  // first step of stages 1..S
  std::optional<std::vector<Coord>> coords;
  SplitSpec split;
  // Counterfactual copy with expanding variables observed before they join.
  bool fully_observed = false;

  double value(std::size_t t, std::size_t v) const { return values[t * n_vars + v]; }
  double& value(std::size_t t, std::size_t v) { return values[t * n_vars + v]; }
  bool is_observed(std::size_t t, std::size_t v) const { return observed[t * n_vars + v] != 0; }

  std::size_t n_continual() const { return stage_sizes.front(); }
  std::size_t expansion_step() const { return expansion_steps.front(); }
  bool is_expanding(std::size_t v) const { return v >= n_continual(); }
  /// Number of variables scheduled to be present at step t.
  std::size_t active_vars_at(std::size_t t) const;
  /// First step at which variable v is scheduled to be observed.
  std::size_t joins_at(std::size_t v) const;

  /// Throws ConfigError when the schedule, mask and splits are inconsistent.
  void validate() const;
};

/// Continual and expanding sets over the generator's sensor indices.
/// `continual` is ascending; `expanding` is in the order sensors join.
struct VariablePartition {
  std::vector<std::size_t> continual;
  std::vector<std::size_t> expanding;
};

/// area: the n_continual sensors with the smallest x; spatial: the ones nearest
/// `anchor` (default: the sensor nearest the centroid); internal: uniform random.
VariablePartition partition_variables(const std::optional<std::vector<Coord>>& coords,
                                      std::size_t n_total, ExpansionMode mode,
                                      std::size_t n_continual, Rng& rng,
                                      std::optional<Coord> anchor = std::nullopt);

EvtsDataset generate_synthetic(const SynthConfig& cfg);

/// Same data with every cell observed from step 0: the counterfactual used to
/// train the oracle reference.
EvtsDataset fully_observed(const EvtsDataset& dataset);

struct WindowSample {
  Tensor inputs;   // n x H
  Tensor targets;  // n x Q
  std::vector<std::size_t> variable_ids;
  std::size_t ref_time = 0;  // step of the last historical observation
  // Per-row loss weight; empty means every row counts. Padded rows carry 0.
  std::vector<double> row_mask;

  std::size_t n_rows() const { return variable_ids.size(); }
};

/// Stride-1 windows whose H+Q steps lie inside `range`. Each window covers the
/// largest stage prefix of variables observed at every one of its steps;
/// windows without any complete prefix are skipped.
std::vector<WindowSample> make_windows(const EvtsDataset& dataset, StepRange range,
                                       std::size_t history, std::size_t horizon);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-variable z-score statistics from observed cells: continual variables
/// over `continual_range`, expanding variables over `expanding_range`.
NormStats compute_norm_stats(const EvtsDataset& dataset, StepRange continual_range,
                             StepRange expanding_range);
/// Training-range statistics (train1 for V1, train2 for the expanding set).
NormStats compute_norm_stats(const EvtsDataset& dataset);

EvtsDataset normalize(const EvtsDataset& dataset, const NormStats& stats);
/// rows[i] belongs to variable_ids[i]; returns values in physical units.
Tensor denormalize(const Tensor& rows, std::span<const std::size_t> variable_ids,
                   const NormStats& stats);

}  // namespace evts
