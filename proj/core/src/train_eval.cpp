#include "evts/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evts/run_config.hpp"

namespace evts {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Flats: return "flats";
    case Variant::FlatsCl: return "flats_cl";
    case Variant::FlatsNf: return "flats_nf";
    case Variant::Focal: return "focal";
  }
  return "focal";
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Stev: return "stev";
    case Strategy::Fptm: return "fptm";
    case Strategy::Oversample: return "oversample";
    case Strategy::Augment: return "augment";
  }
  return "stev";
}

Variant parse_variant(std::string_view s) {
  if (s == "flats") return Variant::Flats;
  if (s == "flats_cl") return Variant::FlatsCl;
  if (s == "flats_nf") return Variant::FlatsNf;
  if (s == "focal") return Variant::Focal;
  throw ConfigError("variant: expected flats|flats_cl|flats_nf|focal, got '" + std::string(s) +
                    "'");
}

Strategy parse_strategy(std::string_view s) {
  if (s == "stev") return Strategy::Stev;
  if (s == "fptm") return Strategy::Fptm;
  if (s == "oversample") return Strategy::Oversample;
  if (s == "augment") return Strategy::Augment;
  throw ConfigError("strategy: expected stev|fptm|oversample|augment, got '" + std::string(s) +
                    "'");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* key, const std::string& why) {
    if (!ok) throw ConfigError(std::string(key) + ": " + why);
  };
  need(batch_size >= 1, "batch_size", "must be >= 1");
  need(std::isfinite(lr) && lr > 0.0, "lr", "must be > 0");
  need(patience >= 1, "patience", "must be >= 1");
  need(max_epochs >= 1, "max_epochs", "must be >= 1");
  need(std::isfinite(tau) && tau > 0.0, "tau", "must be > 0");
  need(alpha > 0.0 && alpha <= 1.0, "alpha", "must be in (0, 1]");
  need(node_dim >= 1, "node_dim", "must be >= 1");
  need(time_dim >= 1, "time_dim", "must be >= 1");
  need(proj_dim >= 1, "proj_dim", "must be >= 1");
  need(embed_init_std > 0.0, "embed_init_std", "must be > 0");
  need(strategy != Strategy::Fptm || variant == Variant::Flats, "variant",
       "strategy fptm has no contrastive path; use variant flats");
  need(!pre_expansion_only || strategy == Strategy::Stev, "pre_expansion_only",
       "only supported with strategy stev");
  stfe.validate();
  augment.validate();
}

ObjectiveSpec objective_for(const TrainConfig& cfg) {
  ObjectiveSpec s;
  s.tau = cfg.tau;
  s.cosine = cfg.cosine_similarity;
  switch (cfg.variant) {
    case Variant::Flats: break;
    case Variant::FlatsCl:
      s.contrastive = true;
      s.filter = NegativeFilter::None;
      break;
    case Variant::FlatsNf:
      s.contrastive = true;
      s.filter = NegativeFilter::SameSubgraph;
      break;
    case Variant::Focal:
      s.contrastive = true;
      s.filter = NegativeFilter::SameSubgraph;
      s.alpha = cfg.alpha;
      break;
  }
  return s;
}

Model Model::init(const TrainConfig& cfg, std::size_t n_vars, std::size_t steps_per_day,
                  Rng& rng) {
  GraphConfig g;
  g.n_vars = n_vars;
  g.steps_per_day = steps_per_day;
  g.node_dim = cfg.node_dim;
  g.time_dim = cfg.time_dim;
  g.init_std = cfg.embed_init_std;
  Model m;
  Rng gr = rng.split("graph"), sr = rng.split("stfe"), pr = rng.split("proj");
  m.graph = GraphParams::init(g, gr);
  m.stfe = StfeParams::init(cfg.stfe, sr);
  m.proj = ProjParams::init(cfg.stfe.channels, cfg.proj_dim, pr);
  return m;
}

std::vector<NamedParameter> Model::named_parameters() {
  std::vector<NamedParameter> out;
  for_each([&](const std::string& name, Parameter& p) { out.push_back({name, &p}); });
  return out;
}

void Model::zero_grad() {
  for_each([](const std::string&, Parameter& p) { p.zero_grad(); });
}

namespace {

WindowSample restrict_to_prefix(const WindowSample& w, std::size_t n) {
  if (w.n_rows() <= n) return w;
  WindowSample out;
  const std::size_t H = w.inputs.dim(1), Q = w.targets.dim(1);
  out.inputs = Tensor({n, H});
  out.targets = Tensor({n, Q});
  std::copy_n(w.inputs.data(), n * H, out.inputs.data());
  std::copy_n(w.targets.data(), n * Q, out.targets.data());
  out.variable_ids.assign(w.variable_ids.begin(), w.variable_ids.begin() + n);
  out.ref_time = w.ref_time;
  if (!w.row_mask.empty()) out.row_mask.assign(w.row_mask.begin(), w.row_mask.begin() + n);
  return out;
}

}  // namespace

PreparedData prepare_data(const EvtsDataset& dataset, const TrainConfig& cfg) {
  dataset.validate();
  PreparedData d;
  d.stats = compute_norm_stats(dataset);
  d.normalized = normalize(dataset, d.stats);
  const auto& sp = dataset.split;
  const std::size_t H = cfg.history(), Q = cfg.horizon();
  d.train_pre = make_windows(d.normalized, sp.train1, H, Q);
  d.train_post = make_windows(d.normalized, sp.train2, H, Q);
  d.valid = make_windows(d.normalized, sp.valid, H, Q);
  d.test = make_windows(d.normalized, sp.test, H, Q);
  if (cfg.pre_expansion_only) {
    const std::size_t n1 = dataset.n_continual();
    d.train_post.clear();
    for (auto* pool : {&d.train_pre, &d.valid, &d.test})
      for (auto& w : *pool) w = restrict_to_prefix(w, n1);
  }
  if (d.valid.empty()) throw ConfigError("days_valid: validation split yields no windows");
  if (d.test.empty()) throw ConfigError("days_test: test split yields no windows");
  return d;
}

WindowSample pad_window(const WindowSample& w, std::size_t n_total) {
  const std::size_t n = w.n_rows();
  if (n > n_total) throw ShapeError("pad_window: window already has more rows than the target");
  for (std::size_t i = 0; i < n; ++i)
    if (w.variable_ids[i] != i)
      throw ShapeError("pad_window: window variables must be the prefix 0..n-1");
  const std::size_t H = w.inputs.dim(1), Q = w.targets.dim(1);
  WindowSample out;
  out.inputs = Tensor({n_total, H});
  out.targets = Tensor({n_total, Q});
  std::copy_n(w.inputs.data(), n * H, out.inputs.data());
  std::copy_n(w.targets.data(), n * Q, out.targets.data());
  out.variable_ids.resize(n_total);
  std::iota(out.variable_ids.begin(), out.variable_ids.end(), std::size_t{0});
  out.ref_time = w.ref_time;
  out.row_mask.assign(n_total, 0.0);
  for (std::size_t i = 0; i < n; ++i) out.row_mask[i] = w.row_mask.empty() ? 1.0 : w.row_mask[i];
  return out;
}

WindowSample mixup_expanding(const WindowSample& w, std::size_t n_continual, double beta,
                             Rng& rng) {
  WindowSample out = w;
  const std::size_t n = w.n_rows(), H = w.inputs.dim(1), Q = w.targets.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    if (w.variable_ids[i] < n_continual) continue;
    const std::size_t j = rng.index(n);
    const double lambda = rng.beta(beta, beta);
    for (std::size_t h = 0; h < H; ++h)
      out.inputs.at(i, h) = lambda * w.inputs.at(i, h) + (1.0 - lambda) * w.inputs.at(j, h);
    for (std::size_t q = 0; q < Q; ++q)
      out.targets.at(i, q) = lambda * w.targets.at(i, q) + (1.0 - lambda) * w.targets.at(j, q);
  }
  return out;
}

std::vector<WindowSample> build_training_pool(const PreparedData& data, const TrainConfig& cfg,
                                              Rng& rng) {
  std::vector<WindowSample> pool;
  const auto& pre = data.train_pre;
  const auto& post = data.train_post;
  switch (cfg.strategy) {
    case Strategy::Stev:
      pool = pre;
      pool.insert(pool.end(), post.begin(), post.end());
      break;
    case Strategy::Fptm:
      for (const auto* src : {&pre, &post})
        for (const auto& w : *src)
          pool.push_back(w.n_rows() < data.n_vars() ? pad_window(w, data.n_vars()) : w);
      break;
    case Strategy::Oversample:
      pool = pre;
      pool.insert(pool.end(), post.begin(), post.end());
      pool.insert(pool.end(), post.begin(), post.end());
      break;
    case Strategy::Augment:
      pool = pre;
      pool.insert(pool.end(), post.begin(), post.end());
      for (const auto& w : post)
        pool.push_back(mixup_expanding(w, data.n_continual(), cfg.augment.mixup_beta, rng));
      break;
  }
  return pool;
}

std::vector<WindowSample> first_training_batch(const PreparedData& data, const TrainConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng pool_rng = root.split("pool");
  Rng shuffle_rng = root.split("shuffle");
  const std::vector<WindowSample> pool = build_training_pool(data, cfg, pool_rng);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_rng.shuffle(order.begin(), order.end());
  std::vector<WindowSample> batch;
  for (std::size_t i = 0; i < std::min(cfg.batch_size, order.size()); ++i)
    batch.push_back(pool[order[i]]);
  return batch;
}

BatchLoss batch_objective(Model& model, const FlatBatch& flat, const Tensor& aug_rows,
                          const ObjectiveSpec& spec, bool backward) {
  GraphBuilder builder;
  const HolisticGraph graph = builder.assemble(model.graph, flat);
  ForwardCache c1;
  const StfeOutput out1 = stfe_forward(flat, graph, model.stfe, Mode::Training, &c1);

  BatchLoss loss;
  ForwardCache c2;
  StfeOutput out2;
  ContrastiveLoss cl;
  if (spec.contrastive) {
    if (!aug_rows.same_shape(flat.rows))
      throw ShapeError("batch_objective: augmented view " + shape_string(aug_rows.shape()) +
                       " does not match rows " + shape_string(flat.rows.shape()));
    // The augmented pass must not leak into the running normalization stats.
    std::vector<Tensor> saved;
    model.stfe.for_each_buffer([&](const std::string&, Tensor& t) { saved.push_back(t); });
    out2 = stfe_forward(aug_rows, graph, model.stfe, Mode::Training, &c2);
    std::size_t k = 0;
    model.stfe.for_each_buffer([&](const std::string&, Tensor& t) { t = saved[k++]; });

    const std::vector<double> tau = focal_temperatures(flat.expanding, spec.tau, spec.alpha);
    ContrastiveBundle bundle = make_bundle(project(out1.features, model.proj),
                                           project(out2.features, model.proj), tau, spec.cosine);
    cl = focal_contrastive_loss(bundle, flat.subgraph_id, spec.filter);
    loss.contrastive = cl.value;
  }
  JointLoss joint = joint_loss(out1.forecast, flat.targets, loss.contrastive, flat.loss_mask);
  loss.forecast = joint.forecast;
  loss.total = joint.total;
  if (!backward) return loss;

  model.zero_grad();
  Tensor d_h1 = spec.contrastive ? project_backward(out1.features, cl.d_z, model.proj)
                                 : Tensor(out1.features.shape());
  std::vector<Tensor> d_blocks = stfe_backward(c1, d_h1, joint.d_forecast, model.stfe);
  if (spec.contrastive) {
    const Tensor d_h2 = project_backward(out2.features, cl.d_z_aug, model.proj);
    const std::vector<Tensor> d_aug = stfe_backward(c2, d_h2, Tensor{}, model.stfe);
    for (std::size_t b = 0; b < d_blocks.size(); ++b) d_blocks[b].add_(d_aug[b]);
  }
  builder.backward(model.graph, d_blocks);
  return loss;
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ConfigError("patience: must be >= 1");
}

bool EarlyStopping::update(double metric) {
  ++epoch_;
  if (epoch_ == 1 || metric < best_) {
    best_ = metric;
    best_epoch_ = epoch_;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

TrainResult train(const PreparedData& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng init_rng = root.split("init");
  Rng pool_rng = root.split("pool");
  Rng shuffle_rng = root.split("shuffle");
  Rng aug_rng = root.split("augment");

  Model model = Model::init(cfg, data.n_vars(), data.normalized.steps_per_day, init_rng);
  const std::vector<WindowSample> pool = build_training_pool(data, cfg, pool_rng);
  if (pool.empty()) throw ConfigError("days_p1: training split yields no windows");

  const ObjectiveSpec spec = objective_for(cfg);
  AdamOptimizer optimizer(AdamOptions{cfg.lr});
  const std::vector<NamedParameter> params = model.named_parameters();
  EarlyStopping stopper(cfg.patience);

  TrainResult result{model, {}, 0, false};
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<WindowSample> batch;
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0, cl_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      ++global_step;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(pool[order[i]]);
      const FlatBatch flat = flatten(batch, data.n_continual());
      const Tensor aug = spec.contrastive ? augment(flat, cfg.augment, aug_rng) : Tensor{};
      const BatchLoss loss = batch_objective(model, flat, aug, spec, true);
      const std::string where = "epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(global_step);
      if (!std::isfinite(loss.total))
        throw DivergenceError("training diverged at " + where + ": non-finite loss");
      try {
        optimizer.step(params);
      } catch (const std::runtime_error& e) {
        throw DivergenceError("training diverged at " + where + ": " + e.what());
      }
      loss_sum += loss.total;
      cl_sum += loss.contrastive;
      ++n_batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_batches);
    rec.train_cl = cl_sum / static_cast<double>(n_batches);
    rec.val_mae = validation_mae(model, data.valid, data.stats, data.n_continual());
    if (!std::isfinite(rec.val_mae))
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                            ": non-finite validation MAE");
    result.curves.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.update(rec.val_mae)) result.model = model;
    if (stopper.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  return result;
}

TrainResult train(const EvtsDataset& dataset, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  return train(prepare_data(dataset, cfg), cfg, on_epoch);
}

std::vector<Tensor> predict(Model& model, std::span<const WindowSample> windows,
                            const NormStats& stats, std::size_t n_continual,
                            std::size_t batch_size) {
  std::vector<Tensor> out;
  out.reserve(windows.size());
  const AdjacencyProvider provider = [&](std::span<const std::size_t> ids, std::size_t t) {
    return learned_adjacency(model.graph, ids, t);
  };
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const auto chunk = windows.subspan(start, std::min(batch_size, windows.size() - start));
    const FlatBatch flat = flatten(chunk, n_continual);
    const HolisticGraph graph = assemble_graph(flat, provider);
    const StfeOutput y = stfe_forward(flat, graph, model.stfe, Mode::Evaluation);
    std::vector<Tensor> parts = unflatten(flat, y.forecast);
    for (std::size_t b = 0; b < parts.size(); ++b)
      out.push_back(denormalize(parts[b], chunk[b].variable_ids, stats));
  }
  return out;
}

std::optional<GroupMetrics> MetricAccumulator::Sums::metrics() const {
  if (n == 0) return std::nullopt;
  const double count = static_cast<double>(n);
  return GroupMetrics{abs / count, std::sqrt(sq / count), n};
}

void MetricAccumulator::add(double prediction, double target, bool expanding) {
  const double e = prediction - target;
  for (Sums* s : {expanding ? &exp_ : &cont_, &all_}) {
    s->abs += std::abs(e);
    s->sq += e * e;
    ++s->n;
  }
}

std::optional<GroupMetrics> MetricAccumulator::continual() const { return cont_.metrics(); }
std::optional<GroupMetrics> MetricAccumulator::expanding() const { return exp_.metrics(); }
std::optional<GroupMetrics> MetricAccumulator::overall() const { return all_.metrics(); }

MetricsReport evaluate(Model& model, std::span<const WindowSample> windows,
                       const NormStats& stats, std::size_t n_continual) {
  const std::vector<Tensor> preds = predict(model, windows, stats, n_continual);
  MetricAccumulator acc;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const WindowSample& win = windows[w];
    const Tensor target = denormalize(win.targets, win.variable_ids, stats);
    for (std::size_t i = 0; i < win.n_rows(); ++i) {
      if (!win.row_mask.empty() && win.row_mask[i] == 0.0) continue;
      const bool expanding = win.variable_ids[i] >= n_continual;
      for (std::size_t q = 0; q < target.dim(1); ++q)
        acc.add(preds[w].at(i, q), target.at(i, q), expanding);
    }
  }
  MetricsReport r;
  r.continual = acc.continual();
  r.expanding = acc.expanding();
  r.overall = acc.overall();
  return r;
}

double validation_mae(Model& model, std::span<const WindowSample> windows,
                      const NormStats& stats, std::size_t n_continual) {
  const MetricsReport r = evaluate(model, windows, stats, n_continual);
  if (!r.overall) throw ConfigError("days_valid: validation split yields no cells");
  return r.overall->mae;
}

double delta_gap(double e_model, double e_oracle) {
  if (!(e_oracle > 0.0)) throw ConfigError("delta_gap: oracle error must be > 0");
  return (e_model - e_oracle) / e_oracle;
}

double afmae(double mae_new, double mae_old) { return mae_new - mae_old; }

void attach_oracle(MetricsReport& report, const MetricsReport& oracle) {
  if (!report.overall || !oracle.overall)
    throw std::invalid_argument("attach_oracle: both reports need overall metrics");
  report.delta_mae = delta_gap(report.overall->mae, oracle.overall->mae);
  report.delta_rmse = delta_gap(report.overall->rmse, oracle.overall->rmse);
}

void attach_old(MetricsReport& report, const MetricsReport& old_report) {
  if (!report.continual || !old_report.continual)
    throw std::invalid_argument("attach_old: both reports need continual-group metrics");
  report.afmae = afmae(report.continual->mae, old_report.continual->mae);
}

void check_report_invariants(const MetricsReport& report) {
  const double tol = 1e-12;
  for (const auto* g : {&report.continual, &report.expanding, &report.overall})
    if (*g && (*g)->rmse < (*g)->mae * (1.0 - tol))
      throw std::logic_error("metrics: RMSE below MAE");
  if (report.continual && report.expanding && report.overall) {
    for (auto pick : {+[](const GroupMetrics& g) { return g.mae; },
                      +[](const GroupMetrics& g) { return g.rmse; }}) {
      const double a = pick(*report.continual), b = pick(*report.expanding);
      const double o = pick(*report.overall);
      const double slack = tol * std::max({std::abs(a), std::abs(b), 1.0});
      if (o < std::min(a, b) - slack || o > std::max(a, b) + slack)
        throw std::logic_error("metrics: overall outside the group range");
    }
  }
}

StrategyRun run_strategy(const EvtsDataset& dataset, const TrainConfig& cfg,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  const PreparedData data = prepare_data(dataset, cfg);
  StrategyRun run{train(data, cfg, on_epoch), {}};
  run.report = evaluate(run.trained.model, data.test, data.stats, data.n_continual());
  run.report.strategy = to_string(cfg.strategy);
  run.report.variant = to_string(cfg.variant);
  run.report.alpha = objective_for(cfg).alpha;
  run.report.seed = cfg.seed;
  run.report.curves = run.trained.curves;
  run.report.best_epoch = run.trained.best_epoch;
  run.report.config_json = train_config_json(cfg);
  check_report_invariants(run.report);
  return run;
}

std::vector<MetricsReport> run_ablation(const EvtsDataset& dataset, const TrainConfig& base,
                                        std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
  std::vector<MetricsReport> out;
  for (Variant v : {Variant::Flats, Variant::FlatsCl, Variant::FlatsNf, Variant::Focal})
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.variant = v;
      cfg.seed = seed;
      out.push_back(run_strategy(dataset, cfg).report);
    }
  return out;
}

std::vector<MetricsReport> run_alpha_sweep(const EvtsDataset& dataset, const TrainConfig& base,
                                           std::span<const double> alphas,
                                           std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
  if (alphas.empty()) throw ConfigError("sweep_alpha: need at least one value");
  for (double a : alphas)
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("sweep_alpha: every value must be in (0, 1]");
  std::vector<MetricsReport> out;
  for (double a : alphas)
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.variant = Variant::Focal;
      cfg.alpha = a;
      cfg.seed = seed;
      out.push_back(run_strategy(dataset, cfg).report);
    }
  return out;
}

}  // namespace evts
