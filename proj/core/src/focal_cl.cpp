#include "evts/focal_cl.hpp"

#include <algorithm>
#include <cmath>

namespace evts {

std::string to_string(AugmentMethod m) {
  switch (m) {
    case AugmentMethod::Jitter: return "jitter";
    case AugmentMethod::Mixup: return "mixup";
    case AugmentMethod::Hybrid: return "hybrid";
  }
  return "hybrid";
}

AugmentMethod parse_augment_method(std::string_view s) {
  if (s == "jitter") return AugmentMethod::Jitter;
  if (s == "mixup") return AugmentMethod::Mixup;
  if (s == "hybrid") return AugmentMethod::Hybrid;
  throw ConfigError("augment_method: expected jitter|mixup|hybrid, got '" + std::string(s) + "'");
}

void AugmentConfig::validate() const {
  if (quant_levels < 2) throw ConfigError("quant_levels: must be >= 2");
  if (!(jitter_std >= 0.0)) throw ConfigError("jitter_std: must be >= 0");
  if (!(drift_max >= 0.0)) throw ConfigError("drift_max: must be >= 0");
  if (!(mixup_beta > 0.0)) throw ConfigError("mixup_beta: must be > 0");
}

namespace {

double row_std(std::span<const double> row) {
  double mean = 0.0;
  for (double v : row) mean += v;
  mean /= static_cast<double>(row.size());
  double sq = 0.0;
  for (double v : row) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(row.size()));
}

}  // namespace

void jitter_row(std::span<double> row, double std_fraction, Rng& rng) {
  const double sd = std_fraction * row_std(row);
  if (sd == 0.0) return;
  for (double& v : row) v += rng.normal(0.0, sd);
}

void drift_row(std::span<double> row, double max_fraction, Rng& rng) {
  std::vector<double> walk(row.size());
  double acc = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    acc += rng.normal();
    walk[i] = acc;
    peak = std::max(peak, std::abs(acc));
  }
  const double target = max_fraction * row_std(row);
  if (peak == 0.0 || target == 0.0) return;
  for (std::size_t i = 0; i < row.size(); ++i) row[i] += walk[i] * target / peak;
}

void quantize_row(std::span<double> row, std::size_t levels) {
  if (levels < 2) throw ConfigError("quant_levels: must be >= 2");
  const auto [lo_it, hi_it] = std::minmax_element(row.begin(), row.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) return;
  const double step = (hi - lo) / static_cast<double>(levels - 1);
  for (double& v : row) {
    const double k = std::round((v - lo) / step);
    v = lo + std::clamp(k, 0.0, static_cast<double>(levels - 1)) * step;
  }
}

Tensor augment(const FlatBatch& flat, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!flat.rows.all_finite()) throw std::invalid_argument("augment: non-finite rows");
  Tensor out = flat.rows;
  const std::size_t H = flat.history();
  auto row = [&](Tensor& t, std::size_t i) { return std::span<double>(t.data() + i * H, H); };
  switch (cfg.method) {
    case AugmentMethod::Jitter:
      for (std::size_t i = 0; i < flat.num_rows(); ++i) jitter_row(row(out, i), cfg.jitter_std, rng);
      break;
    case AugmentMethod::Hybrid:
      for (std::size_t i = 0; i < flat.num_rows(); ++i) {
        drift_row(row(out, i), cfg.drift_max, rng);
        quantize_row(row(out, i), cfg.quant_levels);
      }
      break;
    case AugmentMethod::Mixup:
      for (std::size_t i = 0; i < flat.num_rows(); ++i) {
        const std::size_t b = flat.subgraph_id[i];
        const std::size_t j = flat.offsets[b] + rng.index(flat.subgraph_size(b));
        const double lambda = rng.beta(cfg.mixup_beta, cfg.mixup_beta);
        for (std::size_t h = 0; h < H; ++h)
          out.at(i, h) = lambda * flat.rows.at(i, h) + (1.0 - lambda) * flat.rows.at(j, h);
      }
      break;
  }
  return out;
}

ProjParams ProjParams::init(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  Tensor w({in_dim, out_dim}), b({out_dim});
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  for (auto& v : b.values()) v = rng.uniform(-bound, bound);
  return {Parameter(std::move(w)), Parameter(std::move(b))};
}

Tensor project(const Tensor& features, const ProjParams& params) {
  if (features.rank() != 2 || features.dim(1) != params.weight.value.dim(0))
    throw ShapeError("project: features " + shape_string(features.shape()) +
                     " vs weight " + shape_string(params.weight.value.shape()));
  const std::size_t N = features.dim(0), D = params.weight.value.dim(1);
  Tensor z({N, D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) z.at(i, d) = params.bias.value[d];
  gemm_acc(features, false, params.weight.value, false, z);
  return z;
}

Tensor project_backward(const Tensor& features, const Tensor& d_z, ProjParams& params) {
  gemm_acc(features, true, d_z, false, params.weight.grad);
  for (std::size_t i = 0; i < d_z.dim(0); ++i)
    for (std::size_t d = 0; d < d_z.dim(1); ++d) params.bias.grad[d] += d_z.at(i, d);
  Tensor d_h(features.shape());
  gemm_acc(d_z, false, params.weight.value, true, d_h);
  return d_h;
}

std::vector<double> focal_temperatures(std::span<const std::uint8_t> expanding, double tau,
                                       double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha: must be in (0, 1]");
  if (!(tau > 0.0)) throw ConfigError("tau: must be > 0");
  std::vector<double> out(expanding.size());
  for (std::size_t i = 0; i < expanding.size(); ++i) out[i] = expanding[i] ? alpha * tau : tau;
  return out;
}

namespace {

Tensor normalize_rows(const Tensor& z, std::vector<double>& norms) {
  Tensor out = z;
  const std::size_t N = z.dim(0), D = z.dim(1);
  norms.assign(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    double sq = 0.0;
    for (std::size_t d = 0; d < D; ++d) sq += z.at(i, d) * z.at(i, d);
    norms[i] = std::max(std::sqrt(sq), 1e-12);
    for (std::size_t d = 0; d < D; ++d) out.at(i, d) /= norms[i];
  }
  return out;
}

// Gradient through u = z / |z| given dL/du.
Tensor normalize_rows_backward(const Tensor& u, const std::vector<double>& norms,
                               const Tensor& d_u) {
  Tensor d_z = d_u;
  const std::size_t N = u.dim(0), D = u.dim(1);
  for (std::size_t i = 0; i < N; ++i) {
    double dot = 0.0;
    for (std::size_t d = 0; d < D; ++d) dot += u.at(i, d) * d_u.at(i, d);
    for (std::size_t d = 0; d < D; ++d)
      d_z.at(i, d) = (d_u.at(i, d) - u.at(i, d) * dot) / norms[i];
  }
  return d_z;
}

}  // namespace

ContrastiveBundle make_bundle(Tensor z, Tensor z_aug, std::vector<double> tau, bool cosine) {
  if (!z.same_shape(z_aug) || z.rank() != 2)
    throw ShapeError("make_bundle: z and z_aug must share a [B' x d] shape");
  if (tau.size() != z.dim(0)) throw ShapeError("make_bundle: one temperature per row");
  ContrastiveBundle b;
  const std::size_t N = z.dim(0);
  b.s = Tensor({N, N});
  if (cosine) {
    std::vector<double> n1, n2;
    gemm_acc(normalize_rows(z, n1), false, normalize_rows(z_aug, n2), true, b.s);
  } else {
    gemm_acc(z, false, z_aug, true, b.s);
  }
  b.z = std::move(z);
  b.z_aug = std::move(z_aug);
  b.tau = std::move(tau);
  b.cosine = cosine;
  return b;
}

ContrastiveLoss focal_contrastive_loss(const ContrastiveBundle& bundle,
                                       std::span<const std::size_t> subgraph_id,
                                       NegativeFilter filter) {
  const std::size_t N = bundle.s.dim(0);
  if (subgraph_id.size() != N) throw ShapeError("focal_contrastive_loss: one subgraph id per row");
  if (!bundle.s.all_finite()) throw std::invalid_argument("focal_contrastive_loss: non-finite S");
  ContrastiveLoss out;
  out.per_row.assign(N, 0.0);
  Tensor d_s({N, N});
  const double inv_n = 1.0 / static_cast<double>(N);
  std::vector<double> logits(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double tau = bundle.tau[i];
    if (!(tau > 0.0)) throw std::invalid_argument("focal_contrastive_loss: temperature must be > 0");
    auto in_denominator = [&](std::size_t j) {
      return j == i || filter == NegativeFilter::None || subgraph_id[j] != subgraph_id[i];
    };
    double peak = -INFINITY;
    for (std::size_t j = 0; j < N; ++j)
      if (in_denominator(j)) {
        logits[j] = bundle.s.at(i, j) / tau;
        peak = std::max(peak, logits[j]);
      }
    double sum = 0.0;
    for (std::size_t j = 0; j < N; ++j)
      if (in_denominator(j)) sum += std::exp(logits[j] - peak);
    const double lse = peak + std::log(sum);
    out.per_row[i] = lse - logits[i];
    for (std::size_t j = 0; j < N; ++j)
      if (in_denominator(j)) {
        const double p = std::exp(logits[j] - lse);
        d_s.at(i, j) = (p - (j == i ? 1.0 : 0.0)) * inv_n / tau;
      }
  }
  for (double l : out.per_row) out.value += l;
  out.value *= inv_n;

  if (bundle.cosine) {
    std::vector<double> n1, n2;
    const Tensor u = normalize_rows(bundle.z, n1), u_aug = normalize_rows(bundle.z_aug, n2);
    Tensor d_u(u.shape()), d_u_aug(u.shape());
    gemm_acc(d_s, false, u_aug, false, d_u);
    gemm_acc(d_s, true, u, false, d_u_aug);
    out.d_z = normalize_rows_backward(u, n1, d_u);
    out.d_z_aug = normalize_rows_backward(u_aug, n2, d_u_aug);
  } else {
    out.d_z = Tensor(bundle.z.shape());
    out.d_z_aug = Tensor(bundle.z.shape());
    gemm_acc(d_s, false, bundle.z_aug, false, out.d_z);
    gemm_acc(d_s, true, bundle.z, false, out.d_z_aug);
  }
  return out;
}

ForecastLoss forecast_mae(const Tensor& forecast, const Tensor& target,
                          std::span<const double> row_mask) {
  if (!forecast.same_shape(target) || forecast.rank() != 2)
    throw ShapeError("forecast_mae: forecast " + shape_string(forecast.shape()) + " vs target " +
                     shape_string(target.shape()));
  const std::size_t N = forecast.dim(0), Q = forecast.dim(1);
  if (!row_mask.empty() && row_mask.size() != N)
    throw ShapeError("forecast_mae: one mask entry per row");
  double weight = 0.0;
  for (std::size_t i = 0; i < N; ++i) weight += row_mask.empty() ? 1.0 : row_mask[i];
  ForecastLoss out;
  out.d_forecast = Tensor(forecast.shape());
  if (weight == 0.0) return out;
  const double scale = 1.0 / (weight * static_cast<double>(Q));
  for (std::size_t i = 0; i < N; ++i) {
    const double m = row_mask.empty() ? 1.0 : row_mask[i];
    if (m == 0.0) continue;
    for (std::size_t q = 0; q < Q; ++q) {
      const double e = forecast.at(i, q) - target.at(i, q);
      out.value += m * std::abs(e);
      out.d_forecast.at(i, q) = m * scale * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0));
    }
  }
  out.value *= scale;
  return out;
}

JointLoss joint_loss(const Tensor& forecast, const Tensor& target, double contrastive,
                     std::span<const double> row_mask) {
  ForecastLoss f = forecast_mae(forecast, target, row_mask);
  JointLoss j;
  j.contrastive = contrastive;
  j.forecast = f.value;
  j.total = contrastive + f.value;
  j.d_forecast = std::move(f.d_forecast);
  return j;
}

}  // namespace evts
