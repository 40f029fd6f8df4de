#pragma once

// Contrastive auxiliary objective: augmentation of the flat rows, projection
// into a similarity space, InfoNCE with same-subgraph negative filtering and
// per-row focal temperatures, and the joint objective with the forecast MAE.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evts/flat_batching.hpp"
#include "evts/numerics.hpp"

namespace evts {

enum class AugmentMethod { Jitter, Mixup, Hybrid };

std::string to_string(AugmentMethod m);
AugmentMethod parse_augment_method(std::string_view s);

struct AugmentConfig {
  AugmentMethod method = AugmentMethod::Hybrid;
  double jitter_std = 0.1;  // fraction of the row's standard deviation
  double drift_max = 0.1;   // fraction of the row's standard deviation
  std::size_t quant_levels = 20;
  double mixup_beta = 0.2;

  void validate() const;
};

// Per-row transforms. Each operates on a single row of H values.
void jitter_row(std::span<double> row, double std_fraction, Rng& rng);
void drift_row(std::span<double> row, double max_fraction, Rng& rng);
void quantize_row(std::span<double> row, std::size_t levels);

/// Augmented view of flat.rows (B' x H). Mixup partners come from the same
/// subgraph; metadata of the batch is unchanged.
Tensor augment(const FlatBatch& flat, const AugmentConfig& cfg, Rng& rng);

struct ProjParams {
  Parameter weight;  // C_out x d_z
  Parameter bias;    // d_z

  static ProjParams init(std::size_t in_dim, std::size_t out_dim, Rng& rng);

  template <class F>
  void for_each(F&& f) {
    f("proj.weight", weight);
    f("proj.bias", bias);
  }
};

/// Z = H * W + b.
Tensor project(const Tensor& features, const ProjParams& params);
/// Accumulates weight/bias gradients; returns dL/dH.
Tensor project_backward(const Tensor& features, const Tensor& d_z, ProjParams& params);

/// tau for continual rows, alpha * tau for expanding rows.
std::vector<double> focal_temperatures(std::span<const std::uint8_t> expanding, double tau,
                                       double alpha);

enum class NegativeFilter {
  None,          // denominator over every row j
  SameSubgraph,  // drop j != i that share i's subgraph
};

struct ContrastiveBundle {
  Tensor z;      // B' x d_z
  Tensor z_aug;  // B' x d_z
  Tensor s;      // B' x B', s_ij = <z_i, z_aug_j> (after row normalization if cosine)
  std::vector<double> tau;
  bool cosine = false;
};

ContrastiveBundle make_bundle(Tensor z, Tensor z_aug, std::vector<double> tau,
                              bool cosine = false);

struct ContrastiveLoss {
  double value = 0.0;
  std::vector<double> per_row;
  Tensor d_z;
  Tensor d_z_aug;
};

/// Mean over rows of -log(exp(s_ii/tau_i) / sum_{j in D_i} exp(s_ij/tau_i)),
/// where D_i always contains i.
ContrastiveLoss focal_contrastive_loss(const ContrastiveBundle& bundle,
                                       std::span<const std::size_t> subgraph_id,
                                       NegativeFilter filter);

struct ForecastLoss {
  double value = 0.0;
  Tensor d_forecast;
};

/// Mean |yhat - y| over unmasked rows and all horizon steps.
ForecastLoss forecast_mae(const Tensor& forecast, const Tensor& target,
                          std::span<const double> row_mask = {});

struct JointLoss {
  double total = 0.0;
  double contrastive = 0.0;
  double forecast = 0.0;
  Tensor d_forecast;
};

JointLoss joint_loss(const Tensor& forecast, const Tensor& target, double contrastive,
                     std::span<const double> row_mask = {});

}  // namespace evts
