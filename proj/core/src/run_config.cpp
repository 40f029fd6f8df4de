#include "evts/run_config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include "json.hpp"

namespace evts {
namespace {

using json = nlohmann::ordered_json;

template <class T>
T convert(const std::string& key, const json& v) {
  auto bad = [&](const char* what) {
    return ConfigError(key + ": expected " + what + ", got " + v.dump());
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw bad("a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (v.is_number_unsigned()) return v.get<T>();
    if (v.is_number_integer()) throw bad("a non-negative integer");
    throw bad("an integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw bad("a number");
    return v.get<T>();
  } else {
    static_assert(std::is_same_v<T, std::string>);
    if (!v.is_string()) throw bad("a string");
    return v.get<std::string>();
  }
}

struct Field {
  std::string key;
  bool training = false;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <class Access>
Field plain(const char* key, bool training, Access access) {
  return {key, training,
          [key, access](RunConfig& c, const json& v) {
            auto& ref = access(c);
            ref = convert<std::remove_reference_t<decltype(ref)>>(key, v);
          },
          [access](const RunConfig& c) { return json(access(const_cast<RunConfig&>(c))); }};
}

template <class Access, class Parse>
Field named(const char* key, bool training, Access access, Parse parse) {
  return {key, training,
          [key, access, parse](RunConfig& c, const json& v) {
            access(c) = parse(convert<std::string>(key, v));
          },
          [access](const RunConfig& c) {
            return json(to_string(access(const_cast<RunConfig&>(c))));
          }};
}

#define EVTS_S(member) [](RunConfig& c) -> auto& { return c.synth.member; }
#define EVTS_T(member) [](RunConfig& c) -> auto& { return c.train.member; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      plain("n_continual", false, EVTS_S(n_continual)),
      plain("n_expanding", false, EVTS_S(n_expanding)),
      plain("steps_per_day", false, EVTS_S(steps_per_day)),
      plain("days_p1", false, EVTS_S(days_p1)),
      plain("days_p2", false, EVTS_S(days_p2)),
      plain("days_valid", false, EVTS_S(days_valid)),
      plain("days_test", false, EVTS_S(days_test)),
      plain("expansion_stages", false, EVTS_S(expansion_stages)),
      named("expansion_mode", false, EVTS_S(mode), parse_expansion_mode),
      plain("area_km", false, EVTS_S(area_km)),
      plain("sigma_km", false, EVTS_S(sigma_km)),
      plain("coupling", false, EVTS_S(coupling)),
      plain("persistence", false, EVTS_S(persistence)),
      plain("process_noise", false, EVTS_S(process_noise)),
      plain("obs_noise", false, EVTS_S(obs_noise)),
      plain("amp_min", false, EVTS_S(amp_min)),
      plain("amp_max", false, EVTS_S(amp_max)),
      plain("level", false, EVTS_S(level)),
      plain("data_seed", false, EVTS_S(seed)),

      plain("batch_size", true, EVTS_T(batch_size)),
      plain("lr", true, EVTS_T(lr)),
      plain("patience", true, EVTS_T(patience)),
      plain("max_epochs", true, EVTS_T(max_epochs)),
      plain("tau", true, EVTS_T(tau)),
      plain("alpha", true, EVTS_T(alpha)),
      named("variant", true, EVTS_T(variant), parse_variant),
      named("strategy", true, EVTS_T(strategy), parse_strategy),
      named("augment_method", true, EVTS_T(augment.method), parse_augment_method),
      plain("jitter_std", true, EVTS_T(augment.jitter_std)),
      plain("drift_max", true, EVTS_T(augment.drift_max)),
      plain("quant_levels", true, EVTS_T(augment.quant_levels)),
      plain("mixup_beta", true, EVTS_T(augment.mixup_beta)),
      plain("cosine_similarity", true, EVTS_T(cosine_similarity)),
      plain("history", true, EVTS_T(stfe.history)),
      plain("horizon", true, EVTS_T(stfe.horizon)),
      plain("channels", true, EVTS_T(stfe.channels)),
      plain("blocks", true, EVTS_T(stfe.blocks)),
      plain("layers", true, EVTS_T(stfe.layers)),
      plain("kernel_size", true, EVTS_T(stfe.kernel_size)),
      plain("dilation_rate", true, EVTS_T(stfe.dilation_rate)),
      plain("cheb_order", true, EVTS_T(stfe.cheb_order)),
      plain("head_channels", true, EVTS_T(stfe.head_channels)),
      plain("bn_momentum", true, EVTS_T(stfe.bn_momentum)),
      plain("bn_eps", true, EVTS_T(stfe.bn_eps)),
      plain("node_dim", true, EVTS_T(node_dim)),
      plain("time_dim", true, EVTS_T(time_dim)),
      plain("proj_dim", true, EVTS_T(proj_dim)),
      plain("embed_init_std", true, EVTS_T(embed_init_std)),
      plain("pre_expansion_only", true, EVTS_T(pre_expansion_only)),
      plain("seed", true, EVTS_T(seed)),
  };
  return table;
}

#undef EVTS_S
#undef EVTS_T

json parse_object(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  return doc;
}

void apply(RunConfig& cfg, const json& doc, bool training_only) {
  for (const auto& [key, value] : doc.items()) {
    const Field* f = nullptr;
    for (const Field& candidate : fields())
      if (candidate.key == key && (candidate.training || !training_only)) f = &candidate;
    if (!f) throw ConfigError(key + ": unknown configuration key");
    f->set(cfg, value);
  }
}

std::string dump(const RunConfig& cfg, bool training_only) {
  json doc = json::object();
  for (const Field& f : fields())
    if (f.training || !training_only) doc[f.key] = f.get(cfg);
  return doc.dump(2);
}

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  train.validate();
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_run_config(std::string_view json_text) {
  RunConfig cfg;
  apply(cfg, parse_object(json_text), false);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& cfg) { return dump(cfg, false); }

std::string train_config_json(const TrainConfig& cfg) {
  RunConfig rc;
  rc.train = cfg;
  return dump(rc, true);
}

TrainConfig parse_train_config(std::string_view json_text) {
  RunConfig cfg;
  apply(cfg, parse_object(json_text), true);
  return cfg.train;
}

}  // namespace evts
