#pragma once

// On-disk formats: dataset (manifest.json + values.csv), JSON checkpoints,
// metric reports and training curves, learned adjacency CSV.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "evts/evts_data.hpp"
#include "evts/train_eval.hpp"

namespace evts {

/// Missing, unreadable or malformed files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes <dir>/manifest.json and <dir>/values.csv. The manifest records the
/// schedule, variable labels, continual membership, coordinates, splits and
/// the training-range normalization statistics.
void save_dataset(const EvtsDataset& dataset, const std::string& dir);
EvtsDataset load_dataset(const std::string& dir);

std::string values_csv(const EvtsDataset& dataset);

struct Checkpoint {
  TrainConfig config;
  std::size_t n_vars = 0;
  std::size_t n_continual = 0;
  std::size_t steps_per_day = 0;
  Model model;
};

/// JSON mapping canonical parameter and buffer names to shape + row-major
/// data. Doubles are written in shortest round-trip form, so save/load is
/// bit-exact.
std::string checkpoint_json(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string metrics_json(const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> parse_metrics_json(const std::string& text);
/// One row per (report, group): strategy, variant, alpha, seed, group, mae,
/// rmse, delta_mae, delta_rmse, afmae. Absent values are empty cells.
std::string metrics_csv(const std::vector<MetricsReport>& reports);
/// epoch, train_loss, train_cl, val_mae.
std::string curves_csv(const std::vector<EpochRecord>& curves);
std::string matrix_csv(const Tensor& m);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace evts
