#include "evts/io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "evts/run_config.hpp"
#include "json.hpp"

namespace evts {
namespace {

using json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(where + ": bad number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

json range_json(StepRange r) { return json::array({r.begin, r.end}); }

StepRange range_from(const json& j) {
  return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
}

json tensor_json(const Tensor& t) {
  json data = json::array();
  for (double v : t.values()) data.push_back(v);
  return json{{"shape", t.shape()}, {"data", std::move(data)}};
}

void load_tensor(const json& entry, Tensor& into, const std::string& name) {
  const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
  if (shape != into.shape())
    throw FormatError("checkpoint: '" + name + "' has shape " + shape_string(shape) +
                      ", model expects " + shape_string(into.shape()));
  const json& data = entry.at("data");
  if (!data.is_array() || data.size() != into.size())
    throw FormatError("checkpoint: '" + name + "' has the wrong number of values");
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (!data[i].is_number()) throw FormatError("checkpoint: '" + name + "' holds a non-number");
    into[i] = data[i].get<double>();
  }
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

json group_json(const std::optional<GroupMetrics>& g) {
  if (!g) return nullptr;
  return json{{"mae", g->mae}, {"rmse", g->rmse}, {"cells", g->cells}};
}

std::optional<GroupMetrics> group_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return GroupMetrics{j.at("mae").get<double>(), j.at("rmse").get<double>(),
                      j.at("cells").get<std::size_t>()};
}

}  // namespace

void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << text;
  if (!out) throw FormatError("write to '" + path + "' failed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string values_csv(const EvtsDataset& ds) {
  std::string out;
  for (std::size_t v = 0; v < ds.n_vars; ++v) {
    if (v) out += ',';
    out += std::to_string(ds.labels[v]);
  }
  out += '\n';
  for (std::size_t t = 0; t < ds.n_steps; ++t) {
    for (std::size_t v = 0; v < ds.n_vars; ++v) {
      if (v) out += ',';
      if (ds.is_observed(t, v)) out += fmt(ds.value(t, v));
    }
    out += '\n';
  }
  return out;
}

void save_dataset(const EvtsDataset& ds, const std::string& dir) {
  ds.validate();
  const NormStats stats = compute_norm_stats(ds);
  json m;
  m["format"] = "evts-dataset/1";
  m["n_steps"] = ds.n_steps;
  m["n_vars"] = ds.n_vars;
  m["steps_per_day"] = ds.steps_per_day;
  m["stage_sizes"] = ds.stage_sizes;
  m["expansion_steps"] = ds.expansion_steps;
  m["labels"] = ds.labels;
  json continual = json::array();
  for (std::size_t v = 0; v < ds.n_vars; ++v) continual.push_back(!ds.is_expanding(v));
  m["continual"] = continual;
  if (ds.coords) {
    json c = json::array();
    for (const Coord& xy : *ds.coords) c.push_back({xy[0], xy[1]});
    m["coords"] = c;
  } else {
    m["coords"] = nullptr;
  }
  m["split"] = {{"train1", range_json(ds.split.train1)},
                {"train2", range_json(ds.split.train2)},
                {"valid", range_json(ds.split.valid)},
                {"test", range_json(ds.split.test)}};
  m["fully_observed"] = ds.fully_observed;
  m["norm"] = {{"mean", stats.mean}, {"std", stats.stddev}};
  const std::filesystem::path base(dir);
  write_text((base / "manifest.json").string(), m.dump(2) + "\n");
  write_text((base / "values.csv").string(), values_csv(ds));
}

EvtsDataset load_dataset(const std::string& dir) {
  const std::filesystem::path base(dir);
  EvtsDataset ds;
  try {
    const json m = json::parse(read_text((base / "manifest.json").string()));
    ds.n_steps = m.at("n_steps").get<std::size_t>();
    ds.n_vars = m.at("n_vars").get<std::size_t>();
    ds.steps_per_day = m.at("steps_per_day").get<std::size_t>();
    ds.stage_sizes = m.at("stage_sizes").get<std::vector<std::size_t>>();
    ds.expansion_steps = m.at("expansion_steps").get<std::vector<std::size_t>>();
    ds.labels = m.at("labels").get<std::vector<std::int64_t>>();
    if (!m.at("coords").is_null()) {
      std::vector<Coord> coords;
      for (const auto& c : m.at("coords")) coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
      ds.coords = std::move(coords);
    }
    const json& s = m.at("split");
    ds.split = {range_from(s.at("train1")), range_from(s.at("train2")), range_from(s.at("valid")),
                range_from(s.at("test"))};
    ds.fully_observed = m.value("fully_observed", false);
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }

  const std::string csv = read_text((base / "values.csv").string());
  ds.values.assign(ds.n_steps * ds.n_vars, 0.0);
  ds.observed.assign(ds.n_steps * ds.n_vars, 0);
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("values.csv: empty file");
  if (split_line(line).size() != ds.n_vars)
    throw FormatError("values.csv: header does not have " + std::to_string(ds.n_vars) + " columns");
  std::size_t t = 0;
  while (std::getline(in, line)) {
    if (t >= ds.n_steps) throw FormatError("values.csv: more rows than n_steps");
    const auto cells = split_line(line);
    if (cells.size() != ds.n_vars)
      throw FormatError("values.csv: row " + std::to_string(t) + " has " +
                        std::to_string(cells.size()) + " cells");
    for (std::size_t v = 0; v < ds.n_vars; ++v) {
      if (cells[v].empty()) continue;
      ds.value(t, v) = parse_double(cells[v], "values.csv row " + std::to_string(t));
      ds.observed[t * ds.n_vars + v] = 1;
    }
    ++t;
  }
  if (t != ds.n_steps) throw FormatError("values.csv: expected " + std::to_string(ds.n_steps) + " rows");
  try {
    ds.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
  return ds;
}

std::string checkpoint_json(const Checkpoint& ckpt) {
  json j;
  j["format"] = "evts-checkpoint/1";
  j["n_vars"] = ckpt.n_vars;
  j["n_continual"] = ckpt.n_continual;
  j["steps_per_day"] = ckpt.steps_per_day;
  j["config"] = json::parse(train_config_json(ckpt.config));
  Model& model = const_cast<Model&>(ckpt.model);
  json params = json::object();
  model.for_each([&](const std::string& name, Parameter& p) { params[name] = tensor_json(p.value); });
  json buffers = json::object();
  model.for_each_buffer([&](const std::string& name, Tensor& t) { buffers[name] = tensor_json(t); });
  j["parameters"] = std::move(params);
  j["buffers"] = std::move(buffers);
  return j.dump() + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint: malformed JSON: " + std::string(e.what()));
  }
  Checkpoint ckpt;
  try {
    if (j.at("format") != "evts-checkpoint/1") throw FormatError("checkpoint: unknown format");
    ckpt.n_vars = j.at("n_vars").get<std::size_t>();
    ckpt.n_continual = j.at("n_continual").get<std::size_t>();
    ckpt.steps_per_day = j.at("steps_per_day").get<std::size_t>();
    ckpt.config = parse_train_config(j.at("config").dump());
    ckpt.config.validate();
    Rng rng(0);
    ckpt.model = Model::init(ckpt.config, ckpt.n_vars, ckpt.steps_per_day, rng);
    const json& params = j.at("parameters");
    const json& buffers = j.at("buffers");
    std::size_t n_params = 0, n_buffers = 0;
    ckpt.model.for_each([&](const std::string& name, Parameter& p) {
      if (!params.contains(name)) throw FormatError("checkpoint: missing parameter '" + name + "'");
      load_tensor(params.at(name), p.value, name);
      p.zero_grad();
      ++n_params;
    });
    ckpt.model.for_each_buffer([&](const std::string& name, Tensor& t) {
      if (!buffers.contains(name)) throw FormatError("checkpoint: missing buffer '" + name + "'");
      load_tensor(buffers.at(name), t, name);
      ++n_buffers;
    });
    if (params.size() != n_params || buffers.size() != n_buffers)
      throw FormatError("checkpoint: entries that the model does not have");
  } catch (const json::exception& e) {
    throw FormatError("checkpoint: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint: " + std::string(e.what()));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_text(path, checkpoint_json(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_text(path)); }

std::string metrics_json(const std::vector<MetricsReport>& reports) {
  json arr = json::array();
  for (const MetricsReport& r : reports) {
    json j;
    j["strategy"] = r.strategy;
    j["variant"] = r.variant;
    j["alpha"] = r.alpha;
    j["seed"] = r.seed;
    j["groups"] = {{"continual", group_json(r.continual)},
                   {"expanding", group_json(r.expanding)},
                   {"overall", group_json(r.overall)}};
    j["delta_mae"] = opt_json(r.delta_mae);
    j["delta_rmse"] = opt_json(r.delta_rmse);
    j["afmae"] = opt_json(r.afmae);
    j["best_epoch"] = r.best_epoch;
    json curves = json::array();
    for (const EpochRecord& e : r.curves)
      curves.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"train_cl", e.train_cl},
                        {"val_mae", e.val_mae}});
    j["curves"] = std::move(curves);
    j["config"] = r.config_json.empty() ? json(nullptr) : json::parse(r.config_json);
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::vector<MetricsReport> parse_metrics_json(const std::string& text) {
  std::vector<MetricsReport> out;
  try {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw FormatError("metrics: expected a JSON array of reports");
    for (const json& j : arr) {
      MetricsReport r;
      r.strategy = j.at("strategy").get<std::string>();
      r.variant = j.at("variant").get<std::string>();
      r.alpha = j.at("alpha").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      const json& g = j.at("groups");
      r.continual = group_from(g.at("continual"));
      r.expanding = group_from(g.at("expanding"));
      r.overall = group_from(g.at("overall"));
      r.delta_mae = opt_from(j, "delta_mae");
      r.delta_rmse = opt_from(j, "delta_rmse");
      r.afmae = opt_from(j, "afmae");
      r.best_epoch = j.value("best_epoch", std::size_t{0});
      if (j.contains("curves"))
        for (const json& e : j.at("curves"))
          r.curves.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                              e.at("train_cl").get<double>(), e.at("val_mae").get<double>()});
      if (j.contains("config") && !j.at("config").is_null()) r.config_json = j.at("config").dump(2);
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError("metrics: " + std::string(e.what()));
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "strategy,variant,alpha,seed,group,mae,rmse,delta_mae,delta_rmse,afmae\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const MetricsReport& r : reports) {
    const std::pair<const char*, const std::optional<GroupMetrics>*> groups[] = {
        {"continual", &r.continual}, {"expanding", &r.expanding}, {"overall", &r.overall}};
    for (const auto& [name, g] : groups) {
      out += r.strategy + ',' + r.variant + ',' + fmt(r.alpha) + ',' + std::to_string(r.seed) +
             ',' + name + ',';
      out += *g ? fmt((*g)->mae) + ',' + fmt((*g)->rmse) : std::string(",");
      out += ',' + opt(r.delta_mae) + ',' + opt(r.delta_rmse) + ',' + opt(r.afmae) + '\n';
    }
  }
  return out;
}

std::string curves_csv(const std::vector<EpochRecord>& curves) {
  std::string out = "epoch,train_loss,train_cl,val_mae\n";
  for (const EpochRecord& e : curves)
    out += std::to_string(e.epoch) + ',' + fmt(e.train_loss) + ',' + fmt(e.train_cl) + ',' +
           fmt(e.val_mae) + '\n';
  return out;
}

std::string matrix_csv(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("matrix_csv: expected a matrix");
  std::string out;
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) {
      if (j) out += ',';
      out += fmt(m.at(i, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace evts
