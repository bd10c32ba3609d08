#pragma once

#include <cstdint>
#include <string>

namespace neurodecode {

// Architecture hyperparameters; the defaults are the full-scale configuration.
struct ModelConfig {
  int64_t channels = 512;      // input feature channels C
  int64_t num_sessions = 45;   // per-day alignment adapters
  int64_t d_model = 512;
  int64_t num_blocks = 6;
  int64_t heads = 8;
  int64_t d_ff = 2048;         // 4x expansion
  int64_t conv_kernel = 31;    // depthwise kernel size
  int64_t patch_size = 14;     // P
  int64_t stride = 4;          // S
  double dropout = 0.1;
  int64_t vocab_size = 129;    // 128 character codes + blank
  int64_t max_pos_len = 5000;  // sinusoidal table rows

  // Throws ConfigError on invalid combinations (d_model % heads, strides...).
  void validate() const;

  // Token count for a trial with `frames` valid frames: floor((T-P)/S) + 1.
  int64_t token_count(int64_t frames) const;

  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct ParamCount {
  int64_t with_adapters = 0;
  int64_t adapters = 0;
  int64_t without_adapters = 0;
};

// Exact trainable-parameter count implied by the configuration, reported with
// and without the session adapters.
ParamCount count_parameters(const ModelConfig& cfg);

}  // namespace neurodecode
