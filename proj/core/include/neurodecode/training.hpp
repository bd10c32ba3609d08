#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "neurodecode/augment.hpp"
#include "neurodecode/ctc.hpp"
#include "neurodecode/dataio.hpp"
#include "neurodecode/model.hpp"
#include "neurodecode/weights_io.hpp"

namespace neurodecode {

struct OptimConfig {
  double base_lr = 1e-3;
  double day_lr = 5e-3;          // session-adapter group
  double weight_decay = 0.01;
  double day_weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t warmup_steps = 500;
  int64_t epochs = 20;
  int64_t batch_size = 16;
  bool swa_enabled = false;
  int64_t swa_last_k = 5;
  double grad_clip = 1.0;
  double entropy_lambda = 0.05;
  bool entropy_literal_sign = false;
  uint64_t seed = 1234;

  void validate() const;
  bool operator==(const OptimConfig&) const = default;
};

struct GroupLr {
  double base = 0.0;
  double day = 0.0;
};

// Linear warmup to each group's target over warmup_steps, then constant.
GroupLr lr_schedule(int64_t step, const OptimConfig& cfg);

// Decoupled weight decay plus Adam moment update, two parameter groups
// (session adapters vs everything else). Parameters whose grad buffer was
// never touched in the backward pass are left completely unchanged.
class AdamW {
 public:
  AdamW(std::vector<ParamInfo> params, const OptimConfig& cfg);

  struct StepResult {
    bool applied = false;    // false when a non-finite gradient skipped the step
    double grad_norm = 0.0;  // pre-clip global norm
    bool clipped = false;
  };
  StepResult step(const GroupLr& lr);
  void zero_grad();

  int64_t steps_taken() const { return steps_; }
  void set_steps_taken(int64_t s) { steps_ = s; }

  // Moment tensors under optim.m. / optim.v. names, for checkpointing.
  std::vector<std::pair<std::string, Tensor>> state_tensors() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors);

 private:
  std::vector<ParamInfo> params_;
  std::vector<Tensor> m_, v_;
  OptimConfig cfg_;
  int64_t steps_ = 0;
};

// Uniform average of snapshots (name -> tensor lists with identical shapes);
// throws naming the first mismatching tensor.
std::vector<std::pair<std::string, Tensor>> swa_average(
    const std::deque<std::vector<std::pair<std::string, Tensor>>>& snapshots);

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double ctc = 0.0;
  double entropy_term = 0.0;
  double val_cer = 0.0;        // micro
  double val_cer_macro = 0.0;
  double lr_base = 0.0;
  double lr_day = 0.0;
  double wall_seconds = 0.0;
  int64_t zeroed_trials = 0;
  int64_t skipped_steps = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int64_t best_epoch = -1;
  double best_val_cer = 0.0;
  std::string best_path;
  std::string last_path;
  std::string swa_path;  // empty unless SWA ran
  double swa_val_cer = 0.0;
};

struct TrainOptions {
  bool freeze_alignment = false;    // Table-3 "w/o alignment" arm
  std::string resume_from;          // checkpoint path; empty = fresh start
  bool quiet = false;
};

// Full optimization loop: augmented training passes, per-epoch greedy-decode
// validation, best-checkpoint retention, optional SWA. Writes best.ckpt,
// last.ckpt, optional swa.ckpt and history.jsonl under out_dir. Throws
// DivergenceError on NaN loss with the last good checkpoint retained.
TrainResult train_loop(const Dataset& ds, const ModelConfig& mcfg,
                       const AugmentConfig& acfg, const OptimConfig& ocfg,
                       uint64_t seed, const std::string& out_dir,
                       const TrainOptions& opts = {});

// Micro/macro greedy CER of a model over one split (smoothing-only pipeline).
struct CerPair {
  double micro = 0.0;
  double macro_mean = 0.0;
};
CerPair validation_cer(DecoderModel& model, const Dataset& ds, Split split,
                       const AugmentConfig& acfg, int64_t batch_size);

// Checkpoint I/O on top of the weight-file container.
void write_checkpoint(const std::string& path, const DecoderModel& model,
                      const AdamW* optimizer, int64_t epoch, double val_cer,
                      uint64_t seed);

struct CheckpointMeta {
  int64_t epoch = -1;
  double val_cer = 0.0;
  uint64_t seed = 0;
  int64_t optim_steps = 0;
  ModelConfig model_config;
};
CheckpointMeta read_checkpoint_meta(const std::string& path);

// Restores model weights (and optimizer state when given) from a checkpoint.
CheckpointMeta load_checkpoint(const std::string& path, DecoderModel& model,
                               AdamW* optimizer);

}  // namespace neurodecode
