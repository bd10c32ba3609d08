#include "neurodecode/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "neurodecode/ops.hpp"

namespace neurodecode {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Minimum frame count that admits the target: one frame per label plus a
// mandatory blank between adjacent repeats.
int64_t min_frames(const std::vector<int>& target) {
  int64_t need = static_cast<int64_t>(target.size());
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

// Contiguous double snapshot of a tensor, the working representation of the
// DP regardless of the input dtype.
std::vector<double> to_doubles(const Tensor& t) {
  std::vector<double> out(static_cast<size_t>(t.numel()));
  dispatch_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto v = t.data<T>();
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(v[i]);
  });
  return out;
}

void validate_batch(const CtcBatch& batch, const std::vector<double>& lpd) {
  const Tensor& lp = batch.log_probs;
  if (lp.rank() != 3) {
    throw ShapeError("ctc_loss: expected log_probs [B,N,V], got " + shape_str(lp.shape()));
  }
  const int64_t bsz = lp.dim(0), frames = lp.dim(1), vocab = lp.dim(2);
  if (static_cast<int64_t>(batch.input_lengths.size()) != bsz ||
      static_cast<int64_t>(batch.targets.size()) != bsz) {
    throw ShapeError("ctc_loss: batch size mismatch between log_probs, lengths and targets");
  }
  for (int64_t i = 0; i < bsz; ++i) {
    if (batch.input_lengths[static_cast<size_t>(i)] > frames) {
      throw std::invalid_argument("ctc_loss: input length exceeds frame count for trial " +
                                  std::to_string(i));
    }
    for (int tok : batch.targets[static_cast<size_t>(i)]) {
      if (tok <= 0 || tok >= vocab) {
        throw std::invalid_argument("ctc_loss: target token " + std::to_string(tok) +
                                    " outside [1, " + std::to_string(vocab - 1) +
                                    "] for trial " + std::to_string(i));
      }
    }
    // Normalization guard over valid frames.
    for (int64_t t = 0; t < batch.input_lengths[static_cast<size_t>(i)]; ++t) {
      double lse = kNegInf;
      for (int64_t v = 0; v < vocab; ++v)
        lse = log_add(lse, lpd[static_cast<size_t>((i * frames + t) * vocab + v)]);
      if (std::abs(lse) > 1e-3) {
        throw std::invalid_argument("ctc_loss: log_probs row is not normalized (trial " +
                                    std::to_string(i) + ", frame " + std::to_string(t) +
                                    ", logsumexp " + std::to_string(lse) + ")");
      }
    }
  }
}

// Forward-backward for one trial; returns the negative log marginal and
// accumulates -posterior into grad (layout [frames, vocab], caller scales).
double trial_ctc(const double* lp_trial, int64_t vocab, int64_t t_len,
                 const std::vector<int>& target, double* grad) {
  const int64_t L = static_cast<int64_t>(target.size());
  const int64_t S = 2 * L + 1;
  auto ext_label = [&](int64_t s) -> int { return (s % 2 == 0) ? 0 : target[static_cast<size_t>(s / 2)]; };
  auto lpv = [&](int64_t t, int v) -> double { return lp_trial[t * vocab + v]; };

  std::vector<double> alpha(static_cast<size_t>(t_len * S), kNegInf);
  alpha[0] = lpv(0, 0);
  if (S > 1) alpha[1] = lpv(0, ext_label(1));
  for (int64_t t = 1; t < t_len; ++t) {
    for (int64_t s = 0; s < S; ++s) {
      double acc = alpha[static_cast<size_t>((t - 1) * S + s)];
      if (s >= 1) acc = log_add(acc, alpha[static_cast<size_t>((t - 1) * S + s - 1)]);
      if (s >= 2 && ext_label(s) != 0 && ext_label(s) != ext_label(s - 2)) {
        acc = log_add(acc, alpha[static_cast<size_t>((t - 1) * S + s - 2)]);
      }
      if (acc != kNegInf) acc += lpv(t, ext_label(s));
      alpha[static_cast<size_t>(t * S + s)] = acc;
    }
  }
  double log_p = alpha[static_cast<size_t>((t_len - 1) * S + S - 1)];
  if (S > 1) log_p = log_add(log_p, alpha[static_cast<size_t>((t_len - 1) * S + S - 2)]);

  if (grad == nullptr) return -log_p;

  // beta excludes the emission at t, so alpha + beta is the log mass of all
  // paths passing through (t, s).
  std::vector<double> beta(static_cast<size_t>(t_len * S), kNegInf);
  beta[static_cast<size_t>((t_len - 1) * S + S - 1)] = 0.0;
  if (S > 1) beta[static_cast<size_t>((t_len - 1) * S + S - 2)] = 0.0;
  for (int64_t t = t_len - 2; t >= 0; --t) {
    for (int64_t s = 0; s < S; ++s) {
      double acc = beta[static_cast<size_t>((t + 1) * S + s)] + lpv(t + 1, ext_label(s));
      if (s + 1 < S) {
        acc = log_add(acc, beta[static_cast<size_t>((t + 1) * S + s + 1)] + lpv(t + 1, ext_label(s + 1)));
      }
      if (s + 2 < S && ext_label(s + 2) != 0 && ext_label(s + 2) != ext_label(s)) {
        acc = log_add(acc, beta[static_cast<size_t>((t + 1) * S + s + 2)] + lpv(t + 1, ext_label(s + 2)));
      }
      beta[static_cast<size_t>(t * S + s)] = acc;
    }
  }

  for (int64_t t = 0; t < t_len; ++t) {
    for (int64_t s = 0; s < S; ++s) {
      const double gamma = alpha[static_cast<size_t>(t * S + s)] +
                           beta[static_cast<size_t>(t * S + s)] - log_p;
      if (gamma == kNegInf) continue;
      grad[t * vocab + ext_label(s)] -= std::exp(gamma);
    }
  }
  return -log_p;
}

}  // namespace

Tensor ctc_loss(const CtcBatch& batch, int64_t* zeroed_trials) {
  const Tensor& lp = batch.log_probs;
  const std::vector<double> lpd = to_doubles(lp);
  validate_batch(batch, lpd);
  const int64_t bsz = lp.dim(0), frames = lp.dim(1), vocab = lp.dim(2);

  const bool needs_grad = grad_enabled() && lp.requires_grad();
  auto grad_buf = needs_grad
                      ? std::make_shared<std::vector<double>>(static_cast<size_t>(lp.numel()))
                      : nullptr;

  double loss_sum = 0.0;
  int64_t zeroed = 0;
  for (int64_t i = 0; i < bsz; ++i) {
    const auto& target = batch.targets[static_cast<size_t>(i)];
    const int64_t t_len = batch.input_lengths[static_cast<size_t>(i)];
    if (t_len < min_frames(target) || t_len <= 0) {
      ++zeroed;  // zero-infinity: no loss, no gradient
      continue;
    }
    double* g = grad_buf ? grad_buf->data() + i * frames * vocab : nullptr;
    loss_sum += trial_ctc(lpd.data() + i * frames * vocab, vocab, t_len, target, g);
  }
  if (zeroed_trials) *zeroed_trials = zeroed;

  Tensor out = Tensor::make_node({1}, lp.dtype(), "ctc_loss", {lp});
  out.set(0, loss_sum / static_cast<double>(bsz));
  if (needs_grad && out.requires_grad()) {
    Tensor lpv = lp;
    const double inv_b = 1.0 / static_cast<double>(bsz);
    out.impl()->backward_fn = [lpv, grad_buf, inv_b](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const double upstream = static_cast<double>(node.grad_values<T>()[0]);
        auto dl = lpv.impl()->grad_values<T>();
        const auto& g = *grad_buf;
        for (size_t i = 0; i < dl.size(); ++i)
          dl[i] += static_cast<T>(upstream * inv_b * g[i]);
      });
    };
  }
  return out;
}

Tensor entropy_regularizer(const Tensor& log_probs,
                           const std::vector<int64_t>& input_lengths) {
  if (log_probs.rank() != 3) {
    throw ShapeError("entropy_regularizer: expected [B,N,V], got " +
                     shape_str(log_probs.shape()));
  }
  const int64_t bsz = log_probs.dim(0), frames = log_probs.dim(1);
  Tensor mask = Tensor::zeros({bsz, frames}, log_probs.dtype());
  int64_t valid = 0;
  for (int64_t i = 0; i < bsz; ++i) {
    for (int64_t t = 0; t < std::min(frames, input_lengths[static_cast<size_t>(i)]); ++t) {
      mask.set(i * frames + t, 1.0);
      ++valid;
    }
  }
  if (valid == 0) throw std::invalid_argument("entropy_regularizer: no valid frames");

  // H = -mean over valid frames of sum_v p * log p.
  Tensor p = ops::exp(log_probs);
  Tensor plp = ops::mul(p, log_probs);
  Tensor per_frame = ops::sum_last(plp);           // [B, N]
  Tensor masked = ops::mul(per_frame, mask);       // padded frames zeroed
  return ops::scalar_mul(ops::sum_all(masked), -1.0 / static_cast<double>(valid));
}

LossBreakdown ctc_objective(const CtcBatch& batch, const CtcLossOptions& opts) {
  LossBreakdown breakdown;
  breakdown.lambda = opts.lambda;
  Tensor ctc = ctc_loss(batch, &breakdown.zeroed_trials);
  breakdown.ctc = ctc.item();
  if (opts.include_entropy && opts.lambda != 0.0) {
    Tensor entropy = entropy_regularizer(batch.log_probs, batch.input_lengths);
    breakdown.entropy_term = entropy.item();
    const double sign = opts.literal_sign ? opts.lambda : -opts.lambda;
    breakdown.total_tensor = ops::add(ctc, ops::scalar_mul(entropy, sign));
  } else {
    breakdown.total_tensor = ctc;
  }
  breakdown.total = breakdown.total_tensor.item();
  return breakdown;
}

double brute_force_ctc(const Tensor& log_probs, const std::vector<int>& target) {
  if (log_probs.rank() != 2) {
    throw ShapeError("brute_force_ctc: expected [N,V], got " + shape_str(log_probs.shape()));
  }
  const int64_t frames = log_probs.dim(0), vocab = log_probs.dim(1);
  if (frames > 10) {
    throw std::invalid_argument("brute_force_ctc: refusing N' = " + std::to_string(frames) +
                                " > 10 (exponential enumeration)");
  }
  double total = kNegInf;
  std::vector<int> path(static_cast<size_t>(frames), 0);
  while (true) {
    // Collapse repeats then drop blanks; compare to target.
    bool matches = true;
    size_t ti = 0;
    int prev = -1;
    for (int64_t t = 0; t < frames && matches; ++t) {
      const int s = path[static_cast<size_t>(t)];
      if (s != prev && s != 0) {
        if (ti >= target.size() || target[ti] != s) {
          matches = false;
        } else {
          ++ti;
        }
      }
      prev = s;
    }
    if (matches && ti == target.size()) {
      double lp = 0.0;
      for (int64_t t = 0; t < frames; ++t)
        lp += log_probs.at(t * vocab + path[static_cast<size_t>(t)]);
      total = log_add(total, lp);
    }
    // Next path in lexicographic order.
    int64_t pos = frames - 1;
    while (pos >= 0 && ++path[static_cast<size_t>(pos)] == vocab) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return total == kNegInf ? std::numeric_limits<double>::infinity() : -total;
}

std::vector<int> greedy_frame_argmax(const Tensor& log_probs, int64_t valid_length) {
  if (log_probs.rank() != 2) {
    throw ShapeError("greedy_decode: expected [N,V], got " + shape_str(log_probs.shape()));
  }
  const int64_t frames = log_probs.dim(0), vocab = log_probs.dim(1);
  const int64_t n = std::min(frames, valid_length);
  std::vector<int> best(static_cast<size_t>(std::max<int64_t>(n, 0)));
  for (int64_t t = 0; t < n; ++t) {
    int arg = 0;
    double mx = log_probs.at(t * vocab);
    for (int64_t v = 1; v < vocab; ++v) {
      const double x = log_probs.at(t * vocab + v);
      if (x > mx) {
        mx = x;
        arg = static_cast<int>(v);
      }
    }
    best[static_cast<size_t>(t)] = arg;
  }
  return best;
}

std::string greedy_decode(const Tensor& log_probs, int64_t valid_length,
                          const CharVocab& vocab) {
  const auto best = greedy_frame_argmax(log_probs, valid_length);
  std::vector<int> tokens;
  int prev = -1;
  for (int s : best) {
    if (s != prev && s != 0) tokens.push_back(s);
    prev = s;
  }
  return vocab.decode(tokens);
}

}  // namespace neurodecode
