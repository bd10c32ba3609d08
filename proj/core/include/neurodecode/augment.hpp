#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurodecode/ops.hpp"
#include "neurodecode/rng.hpp"
#include "neurodecode/tensor.hpp"

namespace neurodecode {

// The eight feature-space augmentation hyperparameters plus per-op enables.
// Defaults are the published training configuration; the random-walk scale
// has no published value and defaults to disabled.
struct AugmentConfig {
  double sigma_white = 1.0;
  double sigma_offset = 0.2;
  double sigma_walk = 0.0;  // no published value; 0 disables the op
  int64_t max_cut = 3;
  double warp_alpha = 0.10;
  int64_t n_masks = 2;
  int64_t mask_len = 20;
  double p_drop = 0.05;
  double smooth_sigma = 2.0;
  int64_t smooth_support = 100;

  bool enable_white = true;
  bool enable_offset = true;
  bool enable_walk = true;
  bool enable_cut = true;
  bool enable_warp = true;
  bool enable_mask = true;
  bool enable_drop = true;
  bool enable_smooth = true;

  void validate() const;
  // All stochastic ops disabled (the "w/o augmentation" arm); smoothing stays.
  void disable_stochastic();

  bool operator==(const AugmentConfig&) const = default;
};

struct AugmentedBatch {
  Tensor features;                      // [B, T, C]
  std::vector<int64_t> valid_lengths;   // updated by cutoff/warp
  std::vector<std::vector<std::string>> applied;  // per-trial op log
  std::vector<std::string> skips;       // per-trial skip diagnostics
};

// All ops mutate `x` in place on the valid range [0, valid_len) of each
// trial and never read or write padded frames.
void white_noise(Tensor& x, const std::vector<int64_t>& valid, double sigma, RngStream& rng);
void constant_offset(Tensor& x, const std::vector<int64_t>& valid, double sigma, RngStream& rng);
void random_walk_noise(Tensor& x, const std::vector<int64_t>& valid, double sigma, RngStream& rng);
// Drops k ~ U{0..max_cut} leading frames of one trial; returns new valid length.
int64_t temporal_cutoff(Tensor& x, int64_t trial, int64_t valid_len, int64_t max_cut,
                        RngStream& rng);
// Resamples the valid segment by w ~ U(1-alpha, 1+alpha); returns new length.
int64_t time_warp(Tensor& x, int64_t trial, int64_t valid_len, double alpha, RngStream& rng);
void time_mask(Tensor& x, int64_t trial, int64_t valid_len, int64_t n_masks,
               int64_t mask_len, RngStream& rng);
void channel_dropout(Tensor& x, int64_t trial, int64_t valid_len, double p_drop,
                     RngStream& rng);

// Normalized Gaussian taps (sum 1); even supports center between samples.
std::vector<double> gaussian_kernel(double sigma, int64_t support);
void gaussian_smooth(Tensor& x, const std::vector<int64_t>& valid, double sigma,
                     int64_t support);

// Train mode: white noise, constant offset, random walk, temporal cutoff,
// time warp, time mask, channel dropout, then Gaussian smoothing. Eval mode:
// smoothing only. Trials whose cutoff/warp would drop below min_len are
// skipped for that op and logged, never fatal.
AugmentedBatch apply_pipeline(const Tensor& features, std::vector<int64_t> valid_lengths,
                              const AugmentConfig& cfg, Mode mode, RngStream& rng,
                              int64_t min_len);

}  // namespace neurodecode
