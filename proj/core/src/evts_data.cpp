#include "evts/evts_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace evts {

std::string to_string(ExpansionMode mode) {
  switch (mode) {
    case ExpansionMode::Area: return "area";
    case ExpansionMode::Spatial: return "spatial";
    case ExpansionMode::Internal: return "internal";
  }
  return "internal";
}

ExpansionMode parse_expansion_mode(std::string_view s) {
  if (s == "area") return ExpansionMode::Area;
  if (s == "spatial") return ExpansionMode::Spatial;
  if (s == "internal") return ExpansionMode::Internal;
  throw ConfigError("expansion_mode: expected area|spatial|internal, got '" + std::string(s) +
                    "'");
}

void SynthConfig::validate() const {
  auto need = [](bool ok, const char* key, const std::string& why) {
    if (!ok) throw ConfigError(std::string(key) + ": " + why);
  };
  need(n_continual >= 1, "n_continual", "must be >= 1");
  need(n_expanding >= 1, "n_expanding", "must be >= 1");
  need(steps_per_day >= 1, "steps_per_day", "must be >= 1");
  need(days_p1 >= 1, "days_p1", "must be >= 1");
  need(days_p2 >= 1, "days_p2", "must be >= 1");
  need(days_valid >= 1, "days_valid", "must be >= 1");
  need(days_test >= 1, "days_test", "must be >= 1");
  need(5 * days_p2 <= days_p1, "days_p2", "post-expansion period must be <= 0.2 * days_p1");
  need(expansion_stages >= 1 && expansion_stages <= n_expanding, "expansion_stages",
       "must be in [1, n_expanding]");
  need(days_p2 * steps_per_day >= expansion_stages, "expansion_stages",
       "more stages than post-expansion steps");
  need(sigma_km > 0.0, "sigma_km", "must be > 0");
  need(coupling >= 0.0 && coupling <= 1.0, "coupling", "must be in [0, 1]");
  need(persistence >= 0.0 && persistence < 1.0, "persistence", "must be in [0, 1)");
  need(process_noise >= 0.0, "process_noise", "must be >= 0");
  need(obs_noise >= 0.0, "obs_noise", "must be >= 0");
  need(amp_min >= 0.0 && amp_max >= amp_min, "amp_max", "need 0 <= amp_min <= amp_max");
}

std::size_t EvtsDataset::active_vars_at(std::size_t t) const {
  std::size_t n = stage_sizes.front();
  for (std::size_t s = 0; s < expansion_steps.size(); ++s)
    if (t >= expansion_steps[s]) n = stage_sizes[s + 1];
  return n;
}

std::size_t EvtsDataset::joins_at(std::size_t v) const {
  for (std::size_t s = 0; s < stage_sizes.size(); ++s)
    if (v < stage_sizes[s]) return s == 0 ? 0 : expansion_steps[s - 1];
  throw ShapeError("variable " + std::to_string(v) + " out of range");
}

void EvtsDataset::validate() const {
  if (values.size() != n_steps * n_vars || observed.size() != n_steps * n_vars)
    throw ConfigError("dataset: value/mask size does not match " + std::to_string(n_steps) +
                      " x " + std::to_string(n_vars));
  if (stage_sizes.size() != expansion_steps.size() + 1 || stage_sizes.empty())
    throw ConfigError("dataset: need one stage size per expansion step plus one");
  if (stage_sizes.back() != n_vars)
    throw ConfigError("dataset: last stage must contain all variables");
  if (!std::is_sorted(stage_sizes.begin(), stage_sizes.end()) ||
      std::adjacent_find(stage_sizes.begin(), stage_sizes.end()) != stage_sizes.end() ||
      stage_sizes.front() == 0)
    throw ConfigError("dataset: stage sizes must be strictly increasing and positive");
  if (!std::is_sorted(expansion_steps.begin(), expansion_steps.end()) ||
      (!expansion_steps.empty() && expansion_steps.back() >= n_steps))
    throw ConfigError("dataset: expansion steps must be ordered and inside the series");
  if (labels.size() != n_vars) throw ConfigError("dataset: need one label per variable");
  if (coords && coords->size() != n_vars) throw ConfigError("dataset: need one coord per variable");
  const auto& s = split;
  if (!(s.train1.begin <= s.train1.end && s.train1.end <= s.train2.begin &&
        s.train2.end <= s.valid.begin && s.valid.end <= s.test.begin && s.test.end <= n_steps &&
        s.train2.begin <= s.train2.end && s.valid.begin <= s.valid.end &&
        s.test.begin <= s.test.end))
    throw ConfigError("dataset: splits must be ordered, disjoint and inside the series");
  if (!expansion_steps.empty() && s.train1.end != expansion_steps.front())
    throw ConfigError("dataset: train1 must end at the expansion step");
  for (std::size_t v = 0; v < n_vars && !fully_observed; ++v) {
    const std::size_t join = joins_at(v);
    for (std::size_t t = 0; t < std::min(join, n_steps); ++t)
      if (is_observed(t, v))
        throw ConfigError("dataset: variable " + std::to_string(v) +
                          " observed before it joins at step " + std::to_string(join));
  }
}

VariablePartition partition_variables(const std::optional<std::vector<Coord>>& coords,
                                      std::size_t n_total, ExpansionMode mode,
                                      std::size_t n_continual, Rng& rng,
                                      std::optional<Coord> anchor) {
  if (n_continual == 0 || n_continual >= n_total)
    throw ConfigError("n_continual must be in [1, total variables)");
  if (mode != ExpansionMode::Internal && !coords)
    throw ConfigError("expansion_mode " + to_string(mode) + " requires variable coordinates");
  if (coords && coords->size() != n_total)
    throw ShapeError("partition_variables: coords size does not match variable count");

  std::vector<std::size_t> order(n_total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  switch (mode) {
    case ExpansionMode::Area: {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return (*coords)[a][0] < (*coords)[b][0];
      });
      break;
    }
    case ExpansionMode::Spatial: {
      Coord center = anchor.value_or(Coord{0.0, 0.0});
      if (!anchor) {
        Coord centroid{0.0, 0.0};
        for (const auto& c : *coords) {
          centroid[0] += c[0] / static_cast<double>(n_total);
          centroid[1] += c[1] / static_cast<double>(n_total);
        }
        double best = INFINITY;
        for (const auto& c : *coords) {
          const double d = std::hypot(c[0] - centroid[0], c[1] - centroid[1]);
          if (d < best) {
            best = d;
            center = c;
          }
        }
      }
      std::vector<double> dist(n_total);
      for (std::size_t i = 0; i < n_total; ++i)
        dist[i] = std::hypot((*coords)[i][0] - center[0], (*coords)[i][1] - center[1]);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
      break;
    }
    case ExpansionMode::Internal:
      rng.shuffle(order.begin(), order.end());
      break;
  }
  VariablePartition p;
  p.continual.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_continual));
  p.expanding.assign(order.begin() + static_cast<std::ptrdiff_t>(n_continual), order.end());
  std::sort(p.continual.begin(), p.continual.end());
  return p;
}

EvtsDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_continual + cfg.n_expanding;
  const std::size_t T = cfg.total_steps();
  const std::size_t spd = cfg.steps_per_day;
  Rng root(cfg.seed);

  std::vector<Coord> sensor_xy(n);
  {
    Rng r = root.split("coords");
    for (auto& c : sensor_xy) {
      c[0] = r.uniform(0.0, cfg.area_km);
      c[1] = r.uniform(0.0, cfg.area_km);
    }
  }

  // Row-normalized Gaussian affinity, no self loops.
  std::vector<double> P(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = sensor_xy[i][0] - sensor_xy[j][0];
      const double dy = sensor_xy[i][1] - sensor_xy[j][1];
      P[i * n + j] = std::exp(-(dx * dx + dy * dy) / (cfg.sigma_km * cfg.sigma_km));
      row += P[i * n + j];
    }
    if (row > 0.0)
      for (std::size_t j = 0; j < n; ++j) P[i * n + j] /= row;
  }

  std::vector<double> amp(n), phase(n);
  {
    Rng r = root.split("seasonality");
    for (std::size_t i = 0; i < n; ++i) {
      amp[i] = r.uniform(cfg.amp_min, cfg.amp_max);
      phase[i] = r.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }

  std::vector<double> raw(T * n);
  {
    Rng latent_rng = root.split("latent");
    Rng obs_rng = root.split("observation");
    std::vector<double> latent(n, 0.0), next(n);
    for (std::size_t t = 0; t < T; ++t) {
      const double slot = static_cast<double>(t % spd) / static_cast<double>(spd);
      for (std::size_t i = 0; i < n; ++i) {
        raw[t * n + i] = cfg.level + latent[i] +
                         amp[i] * std::sin(2.0 * std::numbers::pi * slot + phase[i]) +
                         obs_rng.normal(0.0, cfg.obs_noise);
      }
      for (std::size_t i = 0; i < n; ++i) {
        double diffused = 0.0;
        for (std::size_t j = 0; j < n; ++j) diffused += P[i * n + j] * latent[j];
        next[i] = cfg.persistence * ((1.0 - cfg.coupling) * latent[i] + cfg.coupling * diffused) +
                  latent_rng.normal(0.0, cfg.process_noise);
      }
      latent.swap(next);
    }
  }

  Rng part_rng = root.split("partition");
  const VariablePartition part =
      partition_variables(sensor_xy, n, cfg.mode, cfg.n_continual, part_rng);

  std::vector<std::size_t> column_sensor = part.continual;
  column_sensor.insert(column_sensor.end(), part.expanding.begin(), part.expanding.end());

  EvtsDataset ds;
  ds.n_steps = T;
  ds.n_vars = n;
  ds.steps_per_day = spd;
  ds.values.resize(T * n);
  ds.observed.assign(T * n, 1);
  ds.labels.resize(n);
  std::vector<Coord> col_xy(n);
  for (std::size_t v = 0; v < n; ++v) {
    ds.labels[v] = static_cast<std::int64_t>(column_sensor[v]);
    col_xy[v] = sensor_xy[column_sensor[v]];
    for (std::size_t t = 0; t < T; ++t) ds.value(t, v) = raw[t * n + column_sensor[v]];
  }
  ds.coords = std::move(col_xy);

  const std::size_t p1_end = cfg.days_p1 * spd;
  const std::size_t p2_len = cfg.days_p2 * spd;
  const std::size_t S = cfg.expansion_stages;
  ds.stage_sizes.push_back(cfg.n_continual);
  for (std::size_t s = 0; s < S; ++s) {
    ds.expansion_steps.push_back(p1_end + s * (p2_len / S));
    ds.stage_sizes.push_back(cfg.n_continual + (cfg.n_expanding * (s + 1)) / S);
  }
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t join = ds.joins_at(v);
    for (std::size_t t = 0; t < join; ++t) ds.observed[t * n + v] = 0;
  }

  const std::size_t valid_end = p1_end + p2_len + cfg.days_valid * spd;
  ds.split.train1 = {0, p1_end};
  ds.split.train2 = {p1_end, p1_end + p2_len};
  ds.split.valid = {p1_end + p2_len, valid_end};
  ds.split.test = {valid_end, T};
  ds.validate();
  return ds;
}

EvtsDataset fully_observed(const EvtsDataset& dataset) {
  EvtsDataset out = dataset;
  std::fill(out.observed.begin(), out.observed.end(), std::uint8_t{1});
  out.fully_observed = true;
  return out;
}

std::vector<WindowSample> make_windows(const EvtsDataset& dataset, StepRange range,
                                       std::size_t history, std::size_t horizon) {
  if (history == 0 || horizon == 0) throw ConfigError("history and horizon must be >= 1");
  std::vector<WindowSample> out;
  const std::size_t span = history + horizon;
  range.end = std::min(range.end, dataset.n_steps);
  if (range.length() < span) return out;
  auto complete = [&](std::size_t start, std::size_t n) {
    for (std::size_t t = start; t < start + span; ++t)
      for (std::size_t v = 0; v < n; ++v)
        if (!dataset.is_observed(t, v)) return false;
    return true;
  };
  for (std::size_t start = range.begin; start + span <= range.end; ++start) {
    std::size_t n = 0;
    for (auto it = dataset.stage_sizes.rbegin(); it != dataset.stage_sizes.rend(); ++it)
      if (complete(start, *it)) {
        n = *it;
        break;
      }
    if (n == 0) continue;
    WindowSample w;
    w.inputs = Tensor({n, history});
    w.targets = Tensor({n, horizon});
    w.variable_ids.resize(n);
    std::iota(w.variable_ids.begin(), w.variable_ids.end(), std::size_t{0});
    w.ref_time = start + history - 1;
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t h = 0; h < history; ++h) w.inputs.at(v, h) = dataset.value(start + h, v);
      for (std::size_t q = 0; q < horizon; ++q)
        w.targets.at(v, q) = dataset.value(start + history + q, v);
    }
    out.push_back(std::move(w));
  }
  return out;
}

NormStats compute_norm_stats(const EvtsDataset& dataset, StepRange continual_range,
                             StepRange expanding_range) {
  NormStats stats;
  stats.mean.resize(dataset.n_vars);
  stats.stddev.resize(dataset.n_vars);
  for (std::size_t v = 0; v < dataset.n_vars; ++v) {
    const StepRange r = dataset.is_expanding(v) ? expanding_range : continual_range;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = r.begin; t < std::min(r.end, dataset.n_steps); ++t)
      if (dataset.is_observed(t, v)) {
        sum += dataset.value(t, v);
        ++count;
      }
    if (count == 0)
      throw ConfigError("normalization: no observed cells for variable " + std::to_string(v) +
                        " in its statistics range");
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t t = r.begin; t < std::min(r.end, dataset.n_steps); ++t)
      if (dataset.is_observed(t, v)) {
        const double d = dataset.value(t, v) - mean;
        sq += d * d;
      }
    stats.mean[v] = mean;
    stats.stddev[v] = std::max(std::sqrt(sq / static_cast<double>(count)), 1e-6);
  }
  return stats;
}

NormStats compute_norm_stats(const EvtsDataset& dataset) {
  return compute_norm_stats(dataset, dataset.split.train1, dataset.split.train2);
}

EvtsDataset normalize(const EvtsDataset& dataset, const NormStats& stats) {
  if (stats.mean.size() != dataset.n_vars || stats.stddev.size() != dataset.n_vars)
    throw ShapeError("normalize: statistics do not match the variable count");
  EvtsDataset out = dataset;
  for (std::size_t t = 0; t < dataset.n_steps; ++t)
    for (std::size_t v = 0; v < dataset.n_vars; ++v)
      out.value(t, v) = (dataset.value(t, v) - stats.mean[v]) / stats.stddev[v];
  return out;
}

Tensor denormalize(const Tensor& rows, std::span<const std::size_t> variable_ids,
                   const NormStats& stats) {
  if (rows.rank() != 2 || rows.dim(0) != variable_ids.size())
    throw ShapeError("denormalize: one row per variable id expected");
  Tensor out = rows;
  const std::size_t width = rows.dim(1);
  for (std::size_t i = 0; i < variable_ids.size(); ++i) {
    const std::size_t v = variable_ids[i];
    for (std::size_t j = 0; j < width; ++j)
      out.at(i, j) = rows.at(i, j) * stats.stddev[v] + stats.mean[v];
  }
  return out;
}

}  // namespace evts
