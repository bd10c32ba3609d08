#pragma once

#include <string>
#include <vector>

#include "neurodecode/tensor.hpp"
#include "neurodecode/vocab.hpp"

namespace neurodecode {

struct CtcBatch {
  Tensor log_probs;                       // [B, N, V], normalized rows
  std::vector<int64_t> input_lengths;     // valid frames per trial, <= N
  std::vector<std::vector<int>> targets;  // tokens in [1, V-1]
};

struct LossBreakdown {
  double ctc = 0.0;
  double entropy_term = 0.0;  // mean per-frame entropy H over valid frames
  double total = 0.0;
  double lambda = 0.05;
  int64_t zeroed_trials = 0;  // infeasible trials contributing 0

  // Graph node carrying the combined objective; call backward() on it.
  Tensor total_tensor;
};

struct CtcLossOptions {
  double lambda = 0.05;
  // Default objective is ctc - lambda * H (an entropy bonus discouraging
  // over-peaked outputs). Setting literal_sign adds +lambda * H instead.
  bool literal_sign = false;
  bool include_entropy = true;
};

// Per-trial negative log marginal over all blank-augmented alignments, mean
// over the batch; the gradient w.r.t. log_probs is analytic (forward-backward
// posteriors). Trials whose input length cannot admit the target contribute
// zero loss and gradient and are counted in zeroed_trials.
//
// Returns the scalar CTC tensor (autodiff node). Throws on blank tokens in a
// target or rows with |logsumexp| > 1e-3 over the valid frames.
Tensor ctc_loss(const CtcBatch& batch, int64_t* zeroed_trials = nullptr);

// Mean Shannon entropy of the output distributions over valid frames,
// composed from differentiable primitives.
Tensor entropy_regularizer(const Tensor& log_probs,
                           const std::vector<int64_t>& input_lengths);

// ctc_loss plus the entropy term under `opts`, with scalars extracted.
LossBreakdown ctc_objective(const CtcBatch& batch, const CtcLossOptions& opts);

// Exhaustive path enumeration; refuses N' > 10. Returns +inf when no frame
// path collapses to the target.
double brute_force_ctc(const Tensor& log_probs, const std::vector<int>& target);

// Per-frame argmax over the first valid_length frames, collapse repeats,
// drop blanks, decode to text.
std::string greedy_decode(const Tensor& log_probs, int64_t valid_length,
                          const CharVocab& vocab = CharVocab());
// Token-level variant used by --with-frames diagnostics.
std::vector<int> greedy_frame_argmax(const Tensor& log_probs, int64_t valid_length);

}  // namespace neurodecode
