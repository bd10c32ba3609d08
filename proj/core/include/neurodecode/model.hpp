#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurodecode/model_config.hpp"
#include "neurodecode/ops.hpp"
#include "neurodecode/rng.hpp"
#include "neurodecode/tensor.hpp"

namespace neurodecode {

struct ParamInfo {
  std::string name;
  Tensor tensor;
  bool day_group = false;  // session-adapter parameter group
};

struct ForwardResult {
  Tensor log_probs;                   // [B, N, V]
  std::vector<int64_t> token_lengths; // valid tokens per trial
};

namespace detail {

struct Linear {
  Tensor w, b;
  Tensor forward(const Tensor& x) const { return ops::add(ops::matmul(x, w), b); }
};

struct Norm {
  Tensor gamma, beta;
  Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
};

struct FeedForward {
  Norm ln;
  Linear w1, w2;
};

struct Attention {
  Norm ln;
  Linear wq, wk, wv, wo;
};

struct ConvModule {
  Norm ln;
  Linear pw1, pw2;
  Tensor dw_kernel, dw_bias;
  Tensor bn_gamma, bn_beta;
  Tensor bn_running_mean, bn_running_var;  // state, not trained
  int64_t bn_batches_seen = 0;
};

struct ConformerBlock {
  FeedForward ffn1, ffn2;
  Attention attn;
  ConvModule conv;
  Norm out_ln;
};

}  // namespace detail

// The decoder network: per-session alignment, strided patch embedding with
// fixed sinusoidal positions, a Conformer stack, and the character head
// producing CTC log-probabilities.
class DecoderModel {
 public:
  DecoderModel(ModelConfig cfg, Dtype dtype, uint64_t seed,
               bool freeze_alignment = false);

  // x: [B, T, C]; valid_frames: per-trial valid frame counts (<= T);
  // rng required in train mode (dropout draws). Throws TrialTooShortError
  // when a trial has fewer valid frames than the patch size.
  ForwardResult forward(const Tensor& x, const std::vector<int>& session_ids,
                        const std::vector<int64_t>& valid_frames, Mode mode,
                        RngStream* rng = nullptr);

  // Session alignment alone: silu(x W_d + b_d) per trial. At initialization
  // this equals silu(x) exactly.
  Tensor align(const Tensor& x, const std::vector<int>& session_ids) const;

  // Patch embedding alone (eval mode, positions added, padded rows zeroed);
  // exposes the tokenization for inspection.
  Tensor embed_tokens(const Tensor& x, const std::vector<int>& session_ids,
                      const std::vector<int64_t>& valid_frames) const;

  const ModelConfig& config() const { return cfg_; }
  Dtype dtype() const { return dtype_; }
  bool alignment_frozen() const { return freeze_alignment_; }

  // Trainable parameters (excludes frozen adapters) and state buffers
  // (batch-norm running statistics), under stable dot-separated names.
  const std::vector<ParamInfo>& parameters() const { return params_; }
  std::vector<ParamInfo>& parameters() { return params_; }
  const std::vector<ParamInfo>& buffers() const { return buffers_; }
  std::vector<ParamInfo>& buffers() { return buffers_; }

  // All named tensors (parameters then buffers), for serialization.
  std::vector<ParamInfo> named_tensors() const;

  // Sum of parameter sizes in the live registry (cross-check for the
  // config-arithmetic count_parameters()).
  int64_t registered_parameter_count() const;

  // Resets batch-norm running statistics (stochastic weight averaging
  // recalibrates them with a kBnRecalib pass over training data).
  void reset_bn_running_stats();

 private:
  Tensor embed(const Tensor& x, const std::vector<int>& session_ids, Mode mode,
               RngStream* rng, const Tensor& token_mask) const;
  Tensor run_block(detail::ConformerBlock& block, const Tensor& x,
                   const Tensor& token_mask, const Tensor& attn_mask, Mode mode,
                   RngStream* rng);

  ModelConfig cfg_;
  Dtype dtype_;
  bool freeze_alignment_;

  std::vector<Tensor> align_w_, align_b_;
  Tensor patch_w_, patch_b_;
  Tensor pos_table_;  // fixed sinusoidal, never trained
  std::vector<detail::ConformerBlock> blocks_;
  detail::Linear head1_, head2_;

  std::vector<ParamInfo> params_;
  std::vector<ParamInfo> buffers_;
};

// Fixed interleaved sin/cos table, rows = positions, base 10000.
Tensor sinusoidal_table(int64_t max_len, int64_t d_model, Dtype dtype);

}  // namespace neurodecode
