#pragma once

#include <string>

#include "neurodecode/augment.hpp"
#include "neurodecode/dataio.hpp"
#include "neurodecode/model_config.hpp"
#include "neurodecode/training.hpp"

namespace neurodecode {

// Everything a command needs, serialized as one JSON document. Fields missing
// from a config file keep their defaults; command-line flags override last.
struct RunConfig {
  ModelConfig model;
  AugmentConfig augment;
  OptimConfig optim;
  SynthSpec synth;
  std::string data_path = "data";
  std::string out_dir = "out";
  uint64_t seed = 1234;

  bool operator==(const RunConfig&) const = default;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

RunConfig load_run_config_file(const std::string& path);
void write_run_config_file(const RunConfig& cfg, const std::string& path);

}  // namespace neurodecode
