#include "neurodecode/augment.hpp"

#include <algorithm>
#include <cmath>

#include "neurodecode/error.hpp"

namespace neurodecode {

void AugmentConfig::validate() const {
  if (sigma_white < 0 || sigma_offset < 0 || sigma_walk < 0 || smooth_sigma <= 0) {
    throw ConfigError("augment: sigmas must be non-negative (smoothing strictly positive)");
  }
  if (p_drop < 0 || p_drop >= 1) throw ConfigError("augment: p_drop must be in [0, 1)");
  if (warp_alpha < 0 || warp_alpha >= 1) throw ConfigError("augment: warp_alpha must be in [0, 1)");
  if (max_cut < 0 || n_masks < 0 || mask_len < 0) {
    throw ConfigError("augment: counts must be non-negative");
  }
  if (smooth_support < 1) throw ConfigError("augment: smooth_support must be >= 1");
}

void AugmentConfig::disable_stochastic() {
  enable_white = enable_offset = enable_walk = false;
  enable_cut = enable_warp = enable_mask = enable_drop = false;
}

namespace {

// In-place elementwise visitor over the valid range of each trial.
template <typename F>
void for_valid_rows(Tensor& x, const std::vector<int64_t>& valid, F&& fn) {
  const int64_t bsz = x.dim(0), tlen = x.dim(1), c = x.dim(2);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto data = x.data<T>();
    for (int64_t b = 0; b < bsz; ++b) {
      const int64_t v = std::min(tlen, valid[static_cast<size_t>(b)]);
      fn(b, v, [&, b](int64_t t, int64_t ch) -> double {
        return static_cast<double>(data[static_cast<size_t>((b * tlen + t) * c + ch)]);
      }, [&, b](int64_t t, int64_t ch, double val) {
        data[static_cast<size_t>((b * tlen + t) * c + ch)] = static_cast<T>(val);
      });
    }
  });
}

}  // namespace

void white_noise(Tensor& x, const std::vector<int64_t>& valid, double sigma, RngStream& rng) {
  if (sigma == 0.0) return;
  const int64_t c = x.dim(2);
  for_valid_rows(x, valid, [&](int64_t, int64_t v, auto get, auto set) {
    for (int64_t t = 0; t < v; ++t)
      for (int64_t ch = 0; ch < c; ++ch) set(t, ch, get(t, ch) + sigma * rng.normal());
  });
}

void constant_offset(Tensor& x, const std::vector<int64_t>& valid, double sigma, RngStream& rng) {
  if (sigma == 0.0) return;
  const int64_t c = x.dim(2);
  std::vector<double> delta(static_cast<size_t>(c));
  for_valid_rows(x, valid, [&](int64_t, int64_t v, auto get, auto set) {
    for (int64_t ch = 0; ch < c; ++ch) delta[static_cast<size_t>(ch)] = sigma * rng.normal();
    for (int64_t t = 0; t < v; ++t)
      for (int64_t ch = 0; ch < c; ++ch) set(t, ch, get(t, ch) + delta[static_cast<size_t>(ch)]);
  });
}

void random_walk_noise(Tensor& x, const std::vector<int64_t>& valid, double sigma, RngStream& rng) {
  if (sigma == 0.0) return;
  const int64_t c = x.dim(2);
  std::vector<double> walk(static_cast<size_t>(c));
  for_valid_rows(x, valid, [&](int64_t, int64_t v, auto get, auto set) {
    std::fill(walk.begin(), walk.end(), 0.0);
    for (int64_t t = 0; t < v; ++t) {
      for (int64_t ch = 0; ch < c; ++ch) {
        walk[static_cast<size_t>(ch)] += sigma * rng.normal();
        set(t, ch, get(t, ch) + walk[static_cast<size_t>(ch)]);
      }
    }
  });
}

int64_t temporal_cutoff(Tensor& x, int64_t trial, int64_t valid_len, int64_t max_cut,
                        RngStream& rng) {
  if (max_cut == 0) return valid_len;
  const int64_t k = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(max_cut) + 1));
  if (k == 0) return valid_len;
  const int64_t tlen = x.dim(1), c = x.dim(2);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* base = x.data<T>().data() + trial * tlen * c;
    std::copy(base + k * c, base + valid_len * c, base);
    std::fill(base + (valid_len - k) * c, base + valid_len * c, T(0));
  });
  return valid_len - k;
}

int64_t time_warp(Tensor& x, int64_t trial, int64_t valid_len, double alpha, RngStream& rng) {
  if (alpha == 0.0) return valid_len;
  const double w = 1.0 - alpha + 2.0 * alpha * rng.uniform();
  const int64_t warped = static_cast<int64_t>(std::llround(w * static_cast<double>(valid_len)));
  const int64_t tlen = x.dim(1), c = x.dim(2);
  const int64_t kept = std::min(warped, tlen);  // truncate to the buffer
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* base = x.data<T>().data() + trial * tlen * c;
    std::vector<T> src(base, base + valid_len * c);
    for (int64_t i = 0; i < kept; ++i) {
      double pos = 0.0;
      if (warped > 1) {
        pos = static_cast<double>(i) * static_cast<double>(valid_len - 1) /
              static_cast<double>(warped - 1);
      }
      const int64_t lo = static_cast<int64_t>(pos);
      const int64_t hi = std::min(lo + 1, valid_len - 1);
      const double frac = pos - static_cast<double>(lo);
      for (int64_t ch = 0; ch < c; ++ch) {
        const double a = static_cast<double>(src[static_cast<size_t>(lo * c + ch)]);
        const double b = static_cast<double>(src[static_cast<size_t>(hi * c + ch)]);
        base[i * c + ch] = frac == 0.0 ? src[static_cast<size_t>(lo * c + ch)]
                                       : static_cast<T>(a + frac * (b - a));
      }
    }
    if (kept < valid_len) {
      std::fill(base + kept * c, base + valid_len * c, T(0));
    }
  });
  return kept;
}

void time_mask(Tensor& x, int64_t trial, int64_t valid_len, int64_t n_masks,
               int64_t mask_len, RngStream& rng) {
  if (n_masks == 0 || mask_len == 0 || valid_len <= 0) return;
  const int64_t tlen = x.dim(1), c = x.dim(2);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* base = x.data<T>().data() + trial * tlen * c;
    for (int64_t m = 0; m < n_masks; ++m) {
      const int64_t len = std::min<int64_t>(
          valid_len, 1 + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(mask_len))));
      const int64_t start =
          static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(valid_len - len + 1)));
      std::fill(base + start * c, base + (start + len) * c, T(0));
    }
  });
}

void channel_dropout(Tensor& x, int64_t trial, int64_t valid_len, double p_drop,
                     RngStream& rng) {
  if (p_drop == 0.0) return;
  const int64_t tlen = x.dim(1), c = x.dim(2);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* base = x.data<T>().data() + trial * tlen * c;
    for (int64_t ch = 0; ch < c; ++ch) {
      if (rng.uniform() >= p_drop) continue;
      for (int64_t t = 0; t < valid_len; ++t) base[t * c + ch] = T(0);
    }
  });
}

std::vector<double> gaussian_kernel(double sigma, int64_t support) {
  std::vector<double> taps(static_cast<size_t>(support));
  const double center = static_cast<double>(support - 1) / 2.0;
  double sum = 0.0;
  for (int64_t k = 0; k < support; ++k) {
    const double z = (static_cast<double>(k) - center) / sigma;
    taps[static_cast<size_t>(k)] = std::exp(-0.5 * z * z);
    sum += taps[static_cast<size_t>(k)];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

void gaussian_smooth(Tensor& x, const std::vector<int64_t>& valid, double sigma,
                     int64_t support) {
  const std::vector<double> taps = gaussian_kernel(sigma, support);
  // Negligible taps are skipped; with the published sigma/support most of the
  // kernel is numerically zero.
  int64_t k_first = 0, k_last = support - 1;
  while (k_first < k_last && taps[static_cast<size_t>(k_first)] < 1e-14) ++k_first;
  while (k_last > k_first && taps[static_cast<size_t>(k_last)] < 1e-14) --k_last;
  const int64_t pad_left = support / 2;  // ceil((K-1)/2)

  const int64_t bsz = x.dim(0), tlen = x.dim(1), c = x.dim(2);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto data = x.data<T>();
    std::vector<double> row(static_cast<size_t>(c));
    std::vector<T> out;
    for (int64_t b = 0; b < bsz; ++b) {
      const int64_t v = std::min(tlen, valid[static_cast<size_t>(b)]);
      T* base = data.data() + b * tlen * c;
      out.assign(static_cast<size_t>(v * c), T(0));
      for (int64_t t = 0; t < v; ++t) {
        std::fill(row.begin(), row.end(), 0.0);
        const int64_t lo = std::max(k_first, pad_left - t);
        const int64_t hi = std::min(k_last, v - 1 - t + pad_left);
        for (int64_t k = lo; k <= hi; ++k) {
          const double w = taps[static_cast<size_t>(k)];
          const T* src = base + (t + k - pad_left) * c;
          for (int64_t ch = 0; ch < c; ++ch) row[static_cast<size_t>(ch)] += w * src[ch];
        }
        for (int64_t ch = 0; ch < c; ++ch)
          out[static_cast<size_t>(t * c + ch)] = static_cast<T>(row[static_cast<size_t>(ch)]);
      }
      std::copy(out.begin(), out.end(), base);
    }
  });
}

AugmentedBatch apply_pipeline(const Tensor& features, std::vector<int64_t> valid_lengths,
                              const AugmentConfig& cfg, Mode mode, RngStream& rng,
                              int64_t min_len) {
  cfg.validate();
  if (features.rank() != 3) {
    throw ShapeError("apply_pipeline: expected [B,T,C], got " + shape_str(features.shape()));
  }
  const int64_t bsz = features.dim(0);
  AugmentedBatch batch;
  batch.features = features.clone();
  batch.valid_lengths = std::move(valid_lengths);
  batch.applied.resize(static_cast<size_t>(bsz));

  auto log_all = [&](const char* name) {
    for (auto& ops_log : batch.applied) ops_log.emplace_back(name);
  };

  if (mode == Mode::kTrain) {
    if (cfg.enable_white && cfg.sigma_white > 0) {
      RngStream s = rng.fork("white");
      white_noise(batch.features, batch.valid_lengths, cfg.sigma_white, s);
      log_all("white_noise");
    }
    if (cfg.enable_offset && cfg.sigma_offset > 0) {
      RngStream s = rng.fork("offset");
      constant_offset(batch.features, batch.valid_lengths, cfg.sigma_offset, s);
      log_all("constant_offset");
    }
    if (cfg.enable_walk && cfg.sigma_walk > 0) {
      RngStream s = rng.fork("walk");
      random_walk_noise(batch.features, batch.valid_lengths, cfg.sigma_walk, s);
      log_all("random_walk_noise");
    }
    if (cfg.enable_cut && cfg.max_cut > 0) {
      RngStream s = rng.fork("cut");
      for (int64_t b = 0; b < bsz; ++b) {
        RngStream ts = s.fork("trial", static_cast<uint64_t>(b));
        const int64_t v = batch.valid_lengths[static_cast<size_t>(b)];
        if (v - cfg.max_cut < min_len) {
          batch.skips.push_back("trial " + std::to_string(b) +
                                ": temporal_cutoff skipped (valid " + std::to_string(v) +
                                ", min " + std::to_string(min_len) + ")");
          continue;
        }
        batch.valid_lengths[static_cast<size_t>(b)] =
            temporal_cutoff(batch.features, b, v, cfg.max_cut, ts);
        batch.applied[static_cast<size_t>(b)].emplace_back("temporal_cutoff");
      }
    }
    if (cfg.enable_warp && cfg.warp_alpha > 0) {
      RngStream s = rng.fork("warp");
      for (int64_t b = 0; b < bsz; ++b) {
        RngStream ts = s.fork("trial", static_cast<uint64_t>(b));
        const int64_t v = batch.valid_lengths[static_cast<size_t>(b)];
        // Peek the warped length with a copy of the stream to decide skips.
        RngStream peek = ts;
        const double w = 1.0 - cfg.warp_alpha + 2.0 * cfg.warp_alpha * peek.uniform();
        const int64_t warped = static_cast<int64_t>(std::llround(w * static_cast<double>(v)));
        if (warped < min_len) {
          batch.skips.push_back("trial " + std::to_string(b) + ": time_warp skipped (" +
                                std::to_string(warped) + " < " + std::to_string(min_len) + ")");
          continue;
        }
        batch.valid_lengths[static_cast<size_t>(b)] =
            time_warp(batch.features, b, v, cfg.warp_alpha, ts);
        batch.applied[static_cast<size_t>(b)].emplace_back("time_warp");
      }
    }
    if (cfg.enable_mask && cfg.n_masks > 0) {
      RngStream s = rng.fork("mask");
      for (int64_t b = 0; b < bsz; ++b) {
        RngStream ts = s.fork("trial", static_cast<uint64_t>(b));
        time_mask(batch.features, b, batch.valid_lengths[static_cast<size_t>(b)],
                  cfg.n_masks, cfg.mask_len, ts);
        batch.applied[static_cast<size_t>(b)].emplace_back("time_mask");
      }
    }
    if (cfg.enable_drop && cfg.p_drop > 0) {
      RngStream s = rng.fork("chdrop");
      for (int64_t b = 0; b < bsz; ++b) {
        RngStream ts = s.fork("trial", static_cast<uint64_t>(b));
        channel_dropout(batch.features, b, batch.valid_lengths[static_cast<size_t>(b)],
                        cfg.p_drop, ts);
        batch.applied[static_cast<size_t>(b)].emplace_back("channel_dropout");
      }
    }
  }

  if (cfg.enable_smooth) {
    gaussian_smooth(batch.features, batch.valid_lengths, cfg.smooth_sigma, cfg.smooth_support);
    log_all("gaussian_smooth");
  }
  return batch;
}

}  // namespace neurodecode
