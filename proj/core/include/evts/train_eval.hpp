#pragma once

// Training loop, imbalance strategies, ablation ladder and the metric suite.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evts/dynamic_graph.hpp"
#include "evts/evts_data.hpp"
#include "evts/flat_batching.hpp"
#include "evts/focal_cl.hpp"
#include "evts/numerics.hpp"
#include "evts/stfe.hpp"

namespace evts {

enum class Variant { Flats, FlatsCl, FlatsNf, Focal };
enum class Strategy { Stev, Fptm, Oversample, Augment };

std::string to_string(Variant v);
std::string to_string(Strategy s);
Variant parse_variant(std::string_view s);
Strategy parse_strategy(std::string_view s);

/// Raised when the training loss or a gradient becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::size_t patience = 10;
  std::size_t max_epochs = 150;
  double tau = 0.5;
  double alpha = 0.3;
  Variant variant = Variant::Focal;
  Strategy strategy = Strategy::Stev;
  AugmentConfig augment;
  bool cosine_similarity = false;
  StfeConfig stfe;  // history/horizon live here
  std::size_t node_dim = 20;
  std::size_t time_dim = 10;
  std::size_t proj_dim = 32;
  double embed_init_std = 0.1;
  // Train on the pre-expansion period and variable set only (the "before"
  // model for forgetting measurements).
  bool pre_expansion_only = false;
  std::uint64_t seed = 0;

  std::size_t history() const { return stfe.history; }
  std::size_t horizon() const { return stfe.horizon; }
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Contrastive settings implied by a variant; flats has none.
struct ObjectiveSpec {
  bool contrastive = false;
  NegativeFilter filter = NegativeFilter::None;
  double tau = 0.5;
  double alpha = 1.0;
  bool cosine = false;
};
ObjectiveSpec objective_for(const TrainConfig& cfg);

struct Model {
  GraphParams graph;
  StfeParams stfe;
  ProjParams proj;

  static Model init(const TrainConfig& cfg, std::size_t n_vars, std::size_t steps_per_day,
                    Rng& rng);

  template <class F>
  void for_each(F&& f) {
    graph.for_each(f);
    stfe.for_each(f);
    proj.for_each(f);
  }
  template <class F>
  void for_each_buffer(F&& f) {
    stfe.for_each_buffer(f);
  }
  std::vector<NamedParameter> named_parameters();
  void zero_grad();
};

/// Normalized dataset plus the window pools used by training and evaluation.
struct PreparedData {
  EvtsDataset normalized;
  NormStats stats;
  std::vector<WindowSample> train_pre;   // train1 windows
  std::vector<WindowSample> train_post;  // train2 windows
  std::vector<WindowSample> valid;
  std::vector<WindowSample> test;

  std::size_t n_vars() const { return normalized.n_vars; }
  std::size_t n_continual() const { return normalized.n_continual(); }
};

PreparedData prepare_data(const EvtsDataset& dataset, const TrainConfig& cfg);

/// Zero-pads a window to `n_total` rows (ids 0..n_total-1); padded rows get
/// mask 0. The window's variables must be the prefix 0..n-1.
WindowSample pad_window(const WindowSample& w, std::size_t n_total);

/// Duplicate of a window whose expanding rows are mixed with a random partner
/// row of the same window, lambda ~ Beta(beta, beta).
WindowSample mixup_expanding(const WindowSample& w, std::size_t n_continual, double beta,
                             Rng& rng);

/// The training pool after applying the strategy (before per-epoch shuffling).
std::vector<WindowSample> build_training_pool(const PreparedData& data, const TrainConfig& cfg,
                                              Rng& rng);

/// The first mini-batch the trainer would draw for cfg.seed (debug dumps).
std::vector<WindowSample> first_training_batch(const PreparedData& data, const TrainConfig& cfg);

struct BatchLoss {
  double total = 0.0;
  double contrastive = 0.0;
  double forecast = 0.0;
};

/// Joint objective of one flattened batch. `aug_rows` is the augmented view
/// (ignored when the objective has no contrastive term). With `backward`,
/// parameter gradients are zeroed and then filled.
BatchLoss batch_objective(Model& model, const FlatBatch& flat, const Tensor& aug_rows,
                          const ObjectiveSpec& spec, bool backward);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_cl = 0.0;  // 0 for variants without the contrastive term
  double val_mae = 0.0;
};

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);
  /// Records the metric of the next epoch; returns true if it is a new best.
  bool update(double metric);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  std::size_t epochs() const { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t bad_epochs_ = 0;
  double best_ = 0.0;
};

struct TrainResult {
  Model model;  // best-validation parameters
  std::vector<EpochRecord> curves;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const PreparedData& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});
TrainResult train(const EvtsDataset& dataset, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Evaluation-mode forecasts (physical units) for a list of windows.
std::vector<Tensor> predict(Model& model, std::span<const WindowSample> windows,
                            const NormStats& stats, std::size_t n_continual,
                            std::size_t batch_size = 64);

struct GroupMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t cells = 0;
};

struct MetricsReport {
  std::string strategy;
  std::string variant;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::optional<GroupMetrics> continual;
  std::optional<GroupMetrics> expanding;
  std::optional<GroupMetrics> overall;
  std::optional<double> delta_mae;
  std::optional<double> delta_rmse;
  std::optional<double> afmae;
  std::vector<EpochRecord> curves;
  std::size_t best_epoch = 0;
  std::string config_json;
};

/// Accumulates |err| and err^2 per group over every (variable, window, step).
class MetricAccumulator {
 public:
  void add(double prediction, double target, bool expanding);
  std::optional<GroupMetrics> continual() const;
  std::optional<GroupMetrics> expanding() const;
  std::optional<GroupMetrics> overall() const;

 private:
  struct Sums {
    double abs = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
    std::optional<GroupMetrics> metrics() const;
  };
  Sums cont_, exp_, all_;
};

/// Group metrics of a model over a window list (physical units).
MetricsReport evaluate(Model& model, std::span<const WindowSample> windows,
                       const NormStats& stats, std::size_t n_continual);
double validation_mae(Model& model, std::span<const WindowSample> windows,
                      const NormStats& stats, std::size_t n_continual);

/// (e_model - e_oracle) / e_oracle; throws ConfigError if e_oracle <= 0.
double delta_gap(double e_model, double e_oracle);
/// mae_new - mae_old.
double afmae(double mae_new, double mae_old);

/// Fills delta_mae / delta_rmse from an oracle report's overall metrics.
void attach_oracle(MetricsReport& report, const MetricsReport& oracle);
/// Fills afmae from a pre-expansion model's report on the continual group.
void attach_old(MetricsReport& report, const MetricsReport& old_report);

/// Throws std::logic_error if RMSE < MAE or overall lies outside the groups.
void check_report_invariants(const MetricsReport& report);

struct StrategyRun {
  TrainResult trained;
  MetricsReport report;
};

/// Trains with cfg.strategy and evaluates on the test split.
StrategyRun run_strategy(const EvtsDataset& dataset, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {});

/// Variant-major table: for each of flats, flats_cl, flats_nf, focal, one
/// report per seed.
std::vector<MetricsReport> run_ablation(const EvtsDataset& dataset, const TrainConfig& base,
                                        std::span<const std::uint64_t> seeds);

/// Focal variant at each alpha (alpha-major), one report per seed.
std::vector<MetricsReport> run_alpha_sweep(const EvtsDataset& dataset, const TrainConfig& base,
                                           std::span<const double> alphas,
                                           std::span<const std::uint64_t> seeds);

}  // namespace evts
