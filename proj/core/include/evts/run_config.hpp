#pragma once

// Flat JSON run configuration: dataset generation keys plus training keys.
// Every key has a default; unknown keys are rejected.

#include <string>
#include <string_view>
#include <vector>

#include "evts/evts_data.hpp"
#include "evts/train_eval.hpp"

namespace evts {

struct RunConfig {
  SynthConfig synth;
  TrainConfig train;

  void validate() const;
};

/// Keys in document order.
std::vector<std::string> run_config_keys();

/// Missing keys keep their defaults. Throws ConfigError naming an unknown key
/// or a value of the wrong type.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::string& path);

/// Full document with every key, stable order, shortest round-trip numbers.
std::string to_json(const RunConfig& cfg);
/// The training keys only.
std::string train_config_json(const TrainConfig& cfg);
TrainConfig parse_train_config(std::string_view json_text);

}  // namespace evts
