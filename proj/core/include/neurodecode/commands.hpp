#pragma once

#include <string>

#include "neurodecode/runconfig.hpp"

namespace neurodecode {

// Command implementations behind the CLI, callable in-process. Each returns
// a process exit code: 0 success, 2 config error, 3 I/O error, 4 divergence,
// 5 checkpoint/config mismatch, 6 trial shorter than the patch size.

struct TrainFlags {
  bool no_augment = false;  // zero all stochastic augmentations
  bool no_align = false;    // freeze session adapters at identity
  std::string resume_from;
  bool quiet = false;
};

struct DecodeFlags {
  bool with_frames = false;  // also print per-frame argmax indices
  int64_t trial_index = 0;
};

int cmd_gen_data(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg, const TrainFlags& flags = {});
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, Split split);
int cmd_decode(const RunConfig& cfg, const std::string& checkpoint,
               const std::string& trial_path, const DecodeFlags& flags = {});

}  // namespace neurodecode
