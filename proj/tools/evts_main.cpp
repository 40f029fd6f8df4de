// evts: generate datasets, train, evaluate, run ablations and export graphs.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evts/io.hpp"
#include "evts/run_config.hpp"
#include "evts/train_eval.hpp"

namespace fs = std::filesystem;
using namespace evts;

namespace {

std::string default_out_dir() {
  const char* env = std::getenv("EVTS_OUT_DIR");
  return env && *env ? env : "evts_out";
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  return cfg;
}

std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("sweep_alpha: '" + item + "' is not a number");
    }
    if (used != item.size()) throw ConfigError("sweep_alpha: '" + item + "' is not a number");
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("sweep_alpha: every value must be in (0, 1]");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("sweep_alpha: empty list");
  return out;
}

void print_epoch(const EpochRecord& r) {
  std::fprintf(stderr, "epoch %3zu  loss %.6f  cl %.6f  val_mae %.6f\n", r.epoch, r.train_loss,
               r.train_cl, r.val_mae);
}

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

int cmd_gen(const std::string& config_path, const std::string& out) {
  RunConfig cfg = load_config(config_path);
  cfg.synth.validate();
  const EvtsDataset ds = generate_synthetic(cfg.synth);
  save_dataset(ds, out);
  // The counterfactual copy keeps the expanding variables' pre-expansion
  // values, which the main dataset marks as unobserved.
  save_dataset(fully_observed(ds), join(out, "oracle"));
  std::printf("steps %zu  |V1| %zu  |V2| %zu  expansion step %zu\n", ds.n_steps,
              ds.n_continual(), ds.n_vars, ds.expansion_step());
  std::printf("wrote %s, %s and %s\n", join(out, "manifest.json").c_str(),
              join(out, "values.csv").c_str(), join(out, "oracle").c_str());
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::string> variant, strategy;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
  std::string dump_batch;
  bool oracle = false;
  bool pre_expansion_only = false;
  bool quiet = false;
};

TrainConfig train_config_from(const TrainArgs& a) {
  TrainConfig cfg = load_config(a.config).train;
  if (a.variant) cfg.variant = parse_variant(*a.variant);
  if (a.strategy) cfg.strategy = parse_strategy(*a.strategy);
  if (a.seed) cfg.seed = *a.seed;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  if (a.pre_expansion_only) cfg.pre_expansion_only = true;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = train_config_from(a);
  const EvtsDataset ds = load_dataset(a.oracle ? join(a.data, "oracle") : a.data);
  if (a.oracle && !ds.fully_observed)
    throw FormatError(a.data + "/oracle: not a fully observed dataset");
  const PreparedData data = prepare_data(ds, cfg);
  if (!a.dump_batch.empty()) {
    const auto batch = first_training_batch(data, cfg);
    write_text(a.dump_batch, batch_layout_json(flatten(batch, data.n_continual())) + "\n");
  }
  const TrainResult result =
      train(data, cfg, a.quiet ? EpochCallback{} : EpochCallback(print_epoch));
  Checkpoint ckpt{cfg, ds.n_vars, ds.n_continual(), ds.steps_per_day, result.model};
  const fs::path out(a.out);
  save_checkpoint(ckpt, join(out, "checkpoint.json"));
  write_text(join(out, "curves.csv"), curves_csv(result.curves));
  std::printf("epochs %zu  best epoch %zu  best val_mae %.6f%s\n", result.curves.size(),
              result.best_epoch, result.curves[result.best_epoch - 1].val_mae,
              result.early_stopped ? "  (early stop)" : "");
  std::printf("wrote %s and %s\n", join(out, "checkpoint.json").c_str(),
              join(out, "curves.csv").c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out,
             const std::string& oracle_report, const std::string& old_report,
             const std::string& curves_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const EvtsDataset ds = load_dataset(data_dir);
  if (ckpt.n_vars != ds.n_vars || ckpt.n_continual != ds.n_continual() ||
      ckpt.steps_per_day != ds.steps_per_day)
    throw ConfigError("checkpoint: trained for " + std::to_string(ckpt.n_vars) + " variables (" +
                      std::to_string(ckpt.n_continual) + " continual, " +
                      std::to_string(ckpt.steps_per_day) + " steps/day), dataset has " +
                      std::to_string(ds.n_vars) + " (" + std::to_string(ds.n_continual()) +
                      ", " + std::to_string(ds.steps_per_day) + ")");
  const PreparedData data = prepare_data(ds, ckpt.config);
  MetricsReport r = evaluate(ckpt.model, data.test, data.stats, data.n_continual());
  r.strategy = to_string(ckpt.config.strategy);
  r.variant = to_string(ckpt.config.variant);
  r.alpha = objective_for(ckpt.config).alpha;
  r.seed = ckpt.config.seed;
  r.config_json = train_config_json(ckpt.config);
  if (!curves_path.empty()) {
    // Reattach the training curves so metrics.json is self-contained.
    std::istringstream in(read_text(curves_path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      EpochRecord e;
      if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &e.epoch, &e.train_loss, &e.train_cl,
                      &e.val_mae) != 4)
        throw FormatError("curves: malformed line '" + line + "'");
      r.curves.push_back(e);
    }
  }
  if (!oracle_report.empty()) {
    const auto oracle = parse_metrics_json(read_text(oracle_report));
    if (oracle.empty()) throw FormatError("oracle report: no entries");
    attach_oracle(r, oracle.front());
  }
  if (!old_report.empty()) {
    const auto old = parse_metrics_json(read_text(old_report));
    if (old.empty()) throw FormatError("old report: no entries");
    attach_old(r, old.front());
  }
  check_report_invariants(r);
  const fs::path dir(out);
  write_text(join(dir, "metrics.json"), metrics_json({r}));
  write_text(join(dir, "metrics.csv"), metrics_csv({r}));
  for (auto [name, g] : {std::pair{"continual", r.continual}, std::pair{"expanding", r.expanding},
                         std::pair{"overall", r.overall}})
    if (g) std::printf("%-10s MAE %.6f  RMSE %.6f\n", name, g->mae, g->rmse);
  if (r.delta_mae) std::printf("delta MAE %+.4f%%  delta RMSE %+.4f%%\n", 100 * *r.delta_mae,
                               100 * *r.delta_rmse);
  if (r.afmae) std::printf("AFMAE %+.6f\n", *r.afmae);
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir, const std::string& out,
               std::size_t n_seeds, std::optional<std::string> sweep) {
  if (n_seeds == 0) throw ConfigError("seeds: need at least one seed");
  TrainConfig base = load_config(config_path).train;
  base.validate();
  const EvtsDataset ds = load_dataset(data_dir);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(base.seed + i);
  std::vector<MetricsReport> reports;
  if (sweep) {
    const std::vector<double> alphas = parse_alpha_list(*sweep);
    reports = run_alpha_sweep(ds, base, alphas, seeds);
  } else {
    reports = run_ablation(ds, base, seeds);
  }
  const fs::path dir(out);
  write_text(join(dir, "metrics.json"), metrics_json(reports));
  write_text(join(dir, "metrics.csv"), metrics_csv(reports));
  for (const MetricsReport& r : reports)
    std::printf("%-8s alpha %.2f seed %-4llu expanding MAE %.6f  overall MAE %.6f\n",
                r.variant.c_str(), r.alpha, static_cast<unsigned long long>(r.seed),
                r.expanding ? r.expanding->mae : NAN, r.overall ? r.overall->mae : NAN);
  return 0;
}

int cmd_export_graph(const std::string& checkpoint, std::size_t slot, std::size_t n,
                     const std::string& out) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  if (n == 0) n = ckpt.n_vars;
  if (n > ckpt.n_vars)
    throw ConfigError("variables: checkpoint has only " + std::to_string(ckpt.n_vars));
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  const Tensor a = learned_adjacency(ckpt.model.graph, ids, slot);
  const std::string path = join(fs::path(out), "adjacency.csv");
  write_text(path, matrix_csv(a));
  std::printf("wrote %s (%zu x %zu, slot %zu)\n", path.c_str(), n, n, slot);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expanding-variate time series forecasting toolkit"};
  app.require_subcommand(1);
  const std::string out_default = default_out_dir();

  std::string gen_config, gen_out = out_default;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic expanding-variate dataset");
  gen->add_option("-c,--config", gen_config, "Flat JSON run config");
  gen->add_option("-o,--out", gen_out, "Output directory")->capture_default_str();

  TrainArgs ta;
  ta.out = out_default;
  auto* tr = app.add_subcommand("train", "Train a model and write checkpoint.json + curves.csv");
  tr->add_option("-c,--config", ta.config, "Flat JSON run config");
  tr->add_option("-d,--data", ta.data, "Dataset directory")->required();
  tr->add_option("-o,--out", ta.out, "Output directory")->capture_default_str();
  tr->add_option("--variant", ta.variant, "flats | flats_cl | flats_nf | focal");
  tr->add_option("--strategy", ta.strategy, "stev | fptm | oversample | augment");
  tr->add_option("--seed", ta.seed, "Training seed");
  tr->add_option("--max-epochs", ta.max_epochs, "Epoch cap");
  tr->add_option("--dump-batch", ta.dump_batch, "Write the first batch layout as JSON");
  tr->add_flag("--oracle", ta.oracle, "Train on <data>/oracle, the fully observed counterfactual");
  tr->add_flag("--pre-expansion-only", ta.pre_expansion_only,
               "Train on the pre-expansion period and variables only");
  tr->add_flag("-q,--quiet", ta.quiet, "No per-epoch progress");

  std::string ev_ckpt, ev_data, ev_out = out_default, ev_oracle, ev_old, ev_curves;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("-k,--checkpoint", ev_ckpt, "checkpoint.json")->required();
  ev->add_option("-d,--data", ev_data, "Dataset directory")->required();
  ev->add_option("-o,--out", ev_out, "Output directory")->capture_default_str();
  ev->add_option("--oracle-report", ev_oracle, "metrics.json of an oracle model (fills delta)");
  ev->add_option("--old-report", ev_old, "metrics.json of a pre-expansion model (fills AFMAE)");
  ev->add_option("--curves", ev_curves, "curves.csv to embed in the report");

  std::string ab_config, ab_data, ab_out = out_default;
  std::size_t ab_seeds = 3;
  std::optional<std::string> ab_sweep;
  auto* ab = app.add_subcommand("ablate", "Variant ladder or alpha sweep over seeds");
  ab->add_option("-c,--config", ab_config, "Flat JSON run config");
  ab->add_option("-d,--data", ab_data, "Dataset directory")->required();
  ab->add_option("-o,--out", ab_out, "Output directory")->capture_default_str();
  ab->add_option("--seeds", ab_seeds, "Number of seeds (base seed + i)")->capture_default_str();
  ab->add_option("--sweep-alpha", ab_sweep, "Comma list of alpha values; run the sweep")
      ->expected(0, 1)
      ->default_str("0.05,0.1,0.3,0.5,0.7,1.0");

  std::string xg_ckpt, xg_out = out_default;
  std::size_t xg_slot = 0, xg_vars = 0;
  auto* xg = app.add_subcommand("export-graph", "Write the learned adjacency at a time step");
  xg->add_option("-k,--checkpoint", xg_ckpt, "checkpoint.json")->required();
  xg->add_option("--slot", xg_slot, "Reference time step")->capture_default_str();
  xg->add_option("--variables", xg_vars, "Leading variables to include (0 = all)");
  xg->add_option("-o,--out", xg_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(gen_config, gen_out);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_out, ev_oracle, ev_old, ev_curves);
    if (*ab) {
      if (ab->count("--sweep-alpha") && (!ab_sweep || ab_sweep->empty()))
        ab_sweep = "0.05,0.1,0.3,0.5,0.7,1.0";
      return cmd_ablate(ab_config, ab_data, ab_out, ab_seeds, ab_sweep);
    }
    if (*xg) return cmd_export_graph(xg_ckpt, xg_slot, xg_vars, xg_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
