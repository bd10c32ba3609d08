#pragma once

#include <vector>

#include "neurodecode/tensor.hpp"

namespace neurodecode {
class RngStream;

enum class Mode { kTrain, kEval, kBnRecalib };

namespace ops {

// ---------------------------------------------------------------------------
// Elementwise and structural primitives. Every op returns a fresh tensor and,
// when gradients are enabled and an input requires grad, records a backward
// closure so composite layers inherit verified gradients.
// ---------------------------------------------------------------------------

// b must have the same shape as a, or a shape that is a suffix of a's
// (trailing-dimension broadcast, e.g. bias [D] added to [B,N,D]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);

Tensor scalar_mul(const Tensor& a, double c);
Tensor scalar_add(const Tensor& a, double c);

// a: [*, M, K]; b: [K, N] (shared) or [*, K, N] with equal leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swap the last two dimensions (copying).
Tensor transpose_last(const Tensor& a);
// [B, N, H, D] -> [B, H, N, D] (multi-head split/merge).
Tensor permute_0213(const Tensor& a);
// Metadata-only: shares the value buffer.
Tensor reshape(const Tensor& a, Shape shape);

Tensor exp(const Tensor& a);
Tensor sum_all(const Tensor& a);             // -> [1]
Tensor sum_last(const Tensor& a);            // [*, D] -> [*]

// Zeroes the rows of x whose mask entry is 0; mask has x's shape minus the
// last dimension. A select, not a multiply, so poisoned padding (NaN) never
// reaches the output.
Tensor mask_rows(const Tensor& x, const Tensor& mask);

// ---------------------------------------------------------------------------
// Neural-net primitives.
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
// Last dimension split in half: out = a * sigmoid(b).
Tensor glu(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Per-channel statistics over mask-valid (b, t) positions only; padded
// positions pass through zeroed. Train mode updates running stats in place
// with `momentum`; kBnRecalib accumulates an exact cumulative average
// (stochastic weight averaging recalibration); kEval uses running stats.
Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     const Tensor& valid_mask, Tensor& running_mean,
                     Tensor& running_var, int64_t& batches_seen, Mode mode,
                     double momentum = 0.1, double eps = 1e-5);

// x: [B, T, D], kernel: [K, D], optional bias [D]; same padding with
// left pad ceil((K-1)/2) and right pad floor((K-1)/2).
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// Train mode zeroes each element with probability p and scales survivors by
// 1/(1-p); eval is the identity. Requires 0 <= p < 1.
Tensor dropout(const Tensor& x, double p, RngStream& rng, Mode mode);

// [B, T, C] -> [B, N, P*C] with N = floor((T-P)/S) + 1.
Tensor unfold_patches(const Tensor& x, int64_t patch, int64_t stride);

// Per-trial linear map: trial i uses weights[session_ids[i]] (C x C) and
// biases[session_ids[i]] (C). Gradients flow only to the sessions present.
Tensor session_linear(const Tensor& x, const std::vector<int>& session_ids,
                      const std::vector<Tensor>& weights,
                      const std::vector<Tensor>& biases);

}  // namespace ops
}  // namespace neurodecode
