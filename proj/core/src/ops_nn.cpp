#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "neurodecode/ops.hpp"
#include "neurodecode/rng.hpp"
#include "neurodecode/threading.hpp"

namespace neurodecode::ops {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatRM<T>>;

template <typename T>
inline T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

std::vector<uint8_t> mask_to_bools(const Tensor& mask) {
  std::vector<uint8_t> m(static_cast<size_t>(mask.numel()));
  for (int64_t i = 0; i < mask.numel(); ++i) m[static_cast<size_t>(i)] = mask.at(i) != 0.0;
  return m;
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::make_node(x.shape(), x.dtype(), "sigmoid", {x});
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.data<T>();
    auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = stable_sigmoid(xv[i]);
  });
  if (out.requires_grad()) {
    Tensor xv = x, ov = out;
    out.impl()->backward_fn = [xv, ov](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        auto y = ov.data<T>();
        auto dx = xv.impl()->grad_values<T>();
        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
      });
    };
  }
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = Tensor::make_node(x.shape(), x.dtype(), "silu", {x});
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.data<T>();
    auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * stable_sigmoid(xv[i]);
  });
  if (out.requires_grad()) {
    Tensor xv = x;
    out.impl()->backward_fn = [xv](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        auto xs = xv.data<T>();
        auto dx = xv.impl()->grad_values<T>();
        for (size_t i = 0; i < g.size(); ++i) {
          const T s = stable_sigmoid(xs[i]);
          dx[i] += g[i] * s * (T(1) + xs[i] * (T(1) - s));
        }
      });
    };
  }
  return out;
}

Tensor glu(const Tensor& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) % 2 != 0) {
    throw ShapeError("glu: last dimension must be even, got " + shape_str(x.shape()));
  }
  const int64_t two_d = x.dim(x.rank() - 1);
  const int64_t d = two_d / 2;
  const int64_t rows = x.numel() / two_d;
  Shape out_shape = x.shape();
  out_shape.back() = d;
  Tensor out = Tensor::make_node(std::move(out_shape), x.dtype(), "glu", {x});
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xp = x.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* a = xp + r * two_d;
      const T* b = a + d;
      T* o = op + r * d;
      for (int64_t j = 0; j < d; ++j) o[j] = a[j] * stable_sigmoid(b[j]);
    }
  });
  if (out.requires_grad()) {
    Tensor xv = x;
    out.impl()->backward_fn = [xv, rows, d, two_d](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        const T* xp = xv.data<T>().data();
        T* dx = xv.impl()->grad_values<T>().data();
        for (int64_t r = 0; r < rows; ++r) {
          const T* a = xp + r * two_d;
          const T* b = a + d;
          T* da = dx + r * two_d;
          T* db = da + d;
          const T* go = g + r * d;
          for (int64_t j = 0; j < d; ++j) {
            const T s = stable_sigmoid(b[j]);
            da[j] += go[j] * s;
            db[j] += go[j] * a[j] * s * (T(1) - s);
          }
        }
      });
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int64_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: parameter length does not match feature dim " +
                     std::to_string(d));
  }
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::make_node(x.shape(), x.dtype(), "layer_norm", {x, gamma, beta});

  // Saved for backward: normalized values and per-row inverse stddev.
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xp = x.data<T>().data();
    const T* gp = gamma.data<T>().data();
    const T* bp = beta.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = xp + r * d;
      double mean = 0.0;
      for (int64_t j = 0; j < d; ++j) mean += row[j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double c = row[j] - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<size_t>(r)] = is;
      for (int64_t j = 0; j < d; ++j) {
        const double xh = (row[j] - mean) * is;
        (*xhat)[static_cast<size_t>(r * d + j)] = xh;
        op[r * d + j] = static_cast<T>(xh * gp[j] + bp[j]);
      }
    }
  });

  if (out.requires_grad()) {
    Tensor xv = x, gv = gamma, bv = beta;
    out.impl()->backward_fn = [xv, gv, bv, xhat, inv_std, rows, d](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        const T* gp = gv.data<T>().data();
        T* dx = xv.requires_grad() ? xv.impl()->grad_values<T>().data() : nullptr;
        T* dg = gv.requires_grad() ? gv.impl()->grad_values<T>().data() : nullptr;
        T* db = bv.requires_grad() ? bv.impl()->grad_values<T>().data() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          const double is = (*inv_std)[static_cast<size_t>(r)];
          double sum_gg = 0.0, sum_ggx = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double gg = static_cast<double>(g[r * d + j]) * gp[j];
            sum_gg += gg;
            sum_ggx += gg * (*xhat)[static_cast<size_t>(r * d + j)];
          }
          const double m1 = sum_gg / d, m2 = sum_ggx / d;
          for (int64_t j = 0; j < d; ++j) {
            const double xh = (*xhat)[static_cast<size_t>(r * d + j)];
            const double gg = static_cast<double>(g[r * d + j]) * gp[j];
            if (dx) dx[r * d + j] += static_cast<T>(is * (gg - m1 - xh * m2));
            if (dg) dg[j] += static_cast<T>(g[r * d + j] * xh);
            if (db) db[j] += g[r * d + j];
          }
        }
      });
    };
  }
  return out;
}

Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     const Tensor& valid_mask, Tensor& running_mean,
                     Tensor& running_var, int64_t& batches_seen, Mode mode,
                     double momentum, double eps) {
  if (x.rank() != 3) throw ShapeError("batch_norm_1d: expected [B,T,D], got " + shape_str(x.shape()));
  const int64_t bsz = x.dim(0), tlen = x.dim(1), d = x.dim(2);
  if (gamma.numel() != d || beta.numel() != d || running_mean.numel() != d ||
      running_var.numel() != d) {
    throw ShapeError("batch_norm_1d: parameter length does not match channels " +
                     std::to_string(d));
  }
  const auto mb = mask_to_bools(valid_mask);
  if (static_cast<int64_t>(mb.size()) != bsz * tlen) {
    throw ShapeError("batch_norm_1d: mask shape mismatch");
  }
  int64_t n_valid = 0;
  for (uint8_t m : mb) n_valid += m;
  if (n_valid == 0) throw std::invalid_argument("batch_norm_1d: no valid positions");

  const bool use_batch_stats = (mode != Mode::kEval);
  std::vector<double> mean(static_cast<size_t>(d)), var(static_cast<size_t>(d));
  if (use_batch_stats) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* xp = x.data<T>().data();
      for (int64_t r = 0; r < bsz * tlen; ++r) {
        if (!mb[static_cast<size_t>(r)]) continue;
        for (int64_t c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += xp[r * d + c];
      }
      for (auto& m : mean) m /= static_cast<double>(n_valid);
      for (int64_t r = 0; r < bsz * tlen; ++r) {
        if (!mb[static_cast<size_t>(r)]) continue;
        for (int64_t c = 0; c < d; ++c) {
          const double dv = xp[r * d + c] - mean[static_cast<size_t>(c)];
          var[static_cast<size_t>(c)] += dv * dv;
        }
      }
      for (auto& v : var) v /= static_cast<double>(n_valid);
    });
    // Update running statistics (unbiased variance, as conventional).
    const double bessel = n_valid > 1 ? static_cast<double>(n_valid) / (n_valid - 1) : 1.0;
    if (mode == Mode::kTrain) {
      for (int64_t c = 0; c < d; ++c) {
        running_mean.set(c, (1.0 - momentum) * running_mean.at(c) + momentum * mean[static_cast<size_t>(c)]);
        running_var.set(c, (1.0 - momentum) * running_var.at(c) + momentum * var[static_cast<size_t>(c)] * bessel);
      }
    } else {  // kBnRecalib: exact cumulative average across the pass
      ++batches_seen;
      const double a = 1.0 / static_cast<double>(batches_seen);
      for (int64_t c = 0; c < d; ++c) {
        running_mean.set(c, (1.0 - a) * running_mean.at(c) + a * mean[static_cast<size_t>(c)]);
        running_var.set(c, (1.0 - a) * running_var.at(c) + a * var[static_cast<size_t>(c)] * bessel);
      }
    }
  } else {
    for (int64_t c = 0; c < d; ++c) {
      mean[static_cast<size_t>(c)] = running_mean.at(c);
      var[static_cast<size_t>(c)] = running_var.at(c);
    }
  }

  std::vector<double> inv_std(static_cast<size_t>(d));
  for (int64_t c = 0; c < d; ++c)
    inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);

  Tensor out = Tensor::make_node(x.shape(), x.dtype(), "batch_norm_1d", {x, gamma, beta});
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xp = x.data<T>().data();
    const T* gp = gamma.data<T>().data();
    const T* bp = beta.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t r = 0; r < bsz * tlen; ++r) {
      if (!mb[static_cast<size_t>(r)]) continue;  // padded rows stay zero
      for (int64_t c = 0; c < d; ++c) {
        const double xh = (xp[r * d + c] - mean[static_cast<size_t>(c)]) *
                          inv_std[static_cast<size_t>(c)];
        (*xhat)[static_cast<size_t>(r * d + c)] = xh;
        op[r * d + c] = static_cast<T>(xh * gp[c] + bp[c]);
      }
    }
  });

  if (out.requires_grad()) {
    Tensor xv = x, gv = gamma, bv = beta;
    auto mask_copy = std::make_shared<std::vector<uint8_t>>(mb);
    const int64_t rows = bsz * tlen;
    out.impl()->backward_fn = [xv, gv, bv, xhat, inv_std, mask_copy, rows, d,
                               n_valid, use_batch_stats](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        const T* gp = gv.data<T>().data();
        T* dx = xv.requires_grad() ? xv.impl()->grad_values<T>().data() : nullptr;
        T* dg = gv.requires_grad() ? gv.impl()->grad_values<T>().data() : nullptr;
        T* db = bv.requires_grad() ? bv.impl()->grad_values<T>().data() : nullptr;
        std::vector<double> sum_g(static_cast<size_t>(d)), sum_gx(static_cast<size_t>(d));
        for (int64_t r = 0; r < rows; ++r) {
          if (!(*mask_copy)[static_cast<size_t>(r)]) continue;
          for (int64_t c = 0; c < d; ++c) {
            sum_g[static_cast<size_t>(c)] += g[r * d + c];
            sum_gx[static_cast<size_t>(c)] +=
                g[r * d + c] * (*xhat)[static_cast<size_t>(r * d + c)];
          }
        }
        if (dg || db) {
          for (int64_t c = 0; c < d; ++c) {
            if (dg) dg[c] += static_cast<T>(sum_gx[static_cast<size_t>(c)]);
            if (db) db[c] += static_cast<T>(sum_g[static_cast<size_t>(c)]);
          }
        }
        if (dx) {
          for (int64_t r = 0; r < rows; ++r) {
            if (!(*mask_copy)[static_cast<size_t>(r)]) continue;
            for (int64_t c = 0; c < d; ++c) {
              const double is = inv_std[static_cast<size_t>(c)];
              const double gc = g[r * d + c];
              if (use_batch_stats) {
                const double m1 = sum_g[static_cast<size_t>(c)] / n_valid;
                const double m2 = sum_gx[static_cast<size_t>(c)] / n_valid;
                const double xh = (*xhat)[static_cast<size_t>(r * d + c)];
                dx[r * d + c] += static_cast<T>(gp[c] * is * (gc - m1 - xh * m2));
              } else {
                dx[r * d + c] += static_cast<T>(gp[c] * is * gc);
              }
            }
          }
        }
      });
    };
  }
  return out;
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  if (x.rank() != 3) throw ShapeError("depthwise_conv1d: expected [B,T,D], got " + shape_str(x.shape()));
  if (kernel.rank() != 2 || kernel.dim(1) != x.dim(2)) {
    throw ShapeError("depthwise_conv1d: kernel " + shape_str(kernel.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  const int64_t bsz = x.dim(0), tlen = x.dim(1), d = x.dim(2);
  const int64_t k = kernel.dim(0);
  const int64_t pad_left = (k - 1 + 1) / 2;  // ceil((K-1)/2)
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != d) throw ShapeError("depthwise_conv1d: bias length mismatch");

  std::vector<Tensor> parents = {x, kernel};
  if (has_bias) parents.push_back(bias);
  Tensor out = Tensor::make_node(x.shape(), x.dtype(), "depthwise_conv1d", std::move(parents));

  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xp = x.data<T>().data();
    const T* wp = kernel.data<T>().data();
    const T* bp = has_bias ? bias.data<T>().data() : nullptr;
    T* op = out.data<T>().data();
    parallel_for(bsz, [&](int64_t b) {
      for (int64_t t = 0; t < tlen; ++t) {
        T* orow = op + (b * tlen + t) * d;
        const int64_t k_lo = std::max<int64_t>(0, pad_left - t);
        const int64_t k_hi = std::min<int64_t>(k, tlen + pad_left - t);
        for (int64_t kk = k_lo; kk < k_hi; ++kk) {
          const T* xrow = xp + (b * tlen + (t + kk - pad_left)) * d;
          const T* wrow = wp + kk * d;
          for (int64_t c = 0; c < d; ++c) orow[c] += wrow[c] * xrow[c];
        }
        if (bp)
          for (int64_t c = 0; c < d; ++c) orow[c] += bp[c];
      }
    });
  });

  if (out.requires_grad()) {
    Tensor xv = x, wv = kernel, bv = bias;
    out.impl()->backward_fn = [xv, wv, bv, bsz, tlen, d, k, pad_left,
                               has_bias](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        const T* xp = xv.data<T>().data();
        const T* wp = wv.data<T>().data();
        T* dx = xv.requires_grad() ? xv.impl()->grad_values<T>().data() : nullptr;
        T* dw = wv.requires_grad() ? wv.impl()->grad_values<T>().data() : nullptr;
        T* db = (has_bias && bv.requires_grad()) ? bv.impl()->grad_values<T>().data() : nullptr;
        for (int64_t b = 0; b < bsz; ++b) {
          for (int64_t t = 0; t < tlen; ++t) {
            const T* grow = g + (b * tlen + t) * d;
            const int64_t k_lo = std::max<int64_t>(0, pad_left - t);
            const int64_t k_hi = std::min<int64_t>(k, tlen + pad_left - t);
            for (int64_t kk = k_lo; kk < k_hi; ++kk) {
              const int64_t s = t + kk - pad_left;
              const T* wrow = wp + kk * d;
              const T* xrow = xp + (b * tlen + s) * d;
              if (dx) {
                T* dxrow = dx + (b * tlen + s) * d;
                for (int64_t c = 0; c < d; ++c) dxrow[c] += wrow[c] * grow[c];
              }
              if (dw) {
                T* dwrow = dw + kk * d;
                for (int64_t c = 0; c < d; ++c) dwrow[c] += xrow[c] * grow[c];
              }
            }
            if (db)
              for (int64_t c = 0; c < d; ++c) db[c] += grow[c];
          }
        }
      });
    };
  }
  return out;
}

namespace {

Tensor softmax_impl(const Tensor& x, bool log_domain) {
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / d;
  const char* name = log_domain ? "log_softmax" : "softmax";
  Tensor out = Tensor::make_node(x.shape(), x.dtype(), name, {x});
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xp = x.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = xp + r * d;
      double mx = row[0];
      for (int64_t j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(row[j]));
      double z = 0.0;
      for (int64_t j = 0; j < d; ++j) z += std::exp(row[j] - mx);
      if (log_domain) {
        const double lz = std::log(z) + mx;
        for (int64_t j = 0; j < d; ++j) op[r * d + j] = static_cast<T>(row[j] - lz);
      } else {
        for (int64_t j = 0; j < d; ++j)
          op[r * d + j] = static_cast<T>(std::exp(row[j] - mx) / z);
      }
    }
  });
  if (out.requires_grad()) {
    Tensor xv = x, ov = out;
    out.impl()->backward_fn = [xv, ov, rows, d, log_domain](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        const T* y = ov.data<T>().data();
        T* dx = xv.impl()->grad_values<T>().data();
        for (int64_t r = 0; r < rows; ++r) {
          double s = 0.0;
          if (log_domain) {
            for (int64_t j = 0; j < d; ++j) s += g[r * d + j];
            for (int64_t j = 0; j < d; ++j)
              dx[r * d + j] += static_cast<T>(g[r * d + j] - std::exp(y[r * d + j]) * s);
          } else {
            for (int64_t j = 0; j < d; ++j) s += static_cast<double>(g[r * d + j]) * y[r * d + j];
            for (int64_t j = 0; j < d; ++j)
              dx[r * d + j] += static_cast<T>(y[r * d + j] * (g[r * d + j] - s));
          }
        }
      });
    };
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& x) { return softmax_impl(x, false); }
Tensor log_softmax(const Tensor& x) { return softmax_impl(x, true); }

Tensor dropout(const Tensor& x, double p, RngStream& rng, Mode mode) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout: p must be in [0, 1), got " + std::to_string(p));
  }
  if (mode != Mode::kTrain || p == 0.0) return x;

  Tensor out = Tensor::make_node(x.shape(), x.dtype(), "dropout", {x});
  auto keep = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(x.numel()));
  const double scale = 1.0 / (1.0 - p);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.data<T>();
    auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) {
      const bool k = rng.uniform() >= p;
      (*keep)[i] = k;
      ov[i] = k ? static_cast<T>(xv[i] * scale) : T(0);
    }
  });
  if (out.requires_grad()) {
    Tensor xv = x;
    out.impl()->backward_fn = [xv, keep, scale](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        auto dx = xv.impl()->grad_values<T>();
        for (size_t i = 0; i < g.size(); ++i) {
          if ((*keep)[i]) dx[i] += static_cast<T>(g[i] * scale);
        }
      });
    };
  }
  return out;
}

Tensor unfold_patches(const Tensor& x, int64_t patch, int64_t stride) {
  if (x.rank() != 3) throw ShapeError("unfold_patches: expected [B,T,C], got " + shape_str(x.shape()));
  if (patch < 1 || stride < 1 || stride > patch) {
    throw std::invalid_argument("unfold_patches: require 1 <= stride <= patch");
  }
  const int64_t bsz = x.dim(0), tlen = x.dim(1), c = x.dim(2);
  if (tlen < patch) {
    throw ShapeError("unfold_patches: sequence length " + std::to_string(tlen) +
                     " shorter than patch " + std::to_string(patch));
  }
  const int64_t n = (tlen - patch) / stride + 1;
  Tensor out = Tensor::make_node({bsz, n, patch * c}, x.dtype(), "unfold_patches", {x});
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xp = x.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t b = 0; b < bsz; ++b)
      for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < patch; ++p) {
          const T* src = xp + (b * tlen + i * stride + p) * c;
          T* dst = op + (b * n + i) * patch * c + p * c;
          std::copy(src, src + c, dst);
        }
  });
  if (out.requires_grad()) {
    Tensor xv = x;
    out.impl()->backward_fn = [xv, bsz, tlen, c, n, patch, stride](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        T* dx = xv.impl()->grad_values<T>().data();
        for (int64_t b = 0; b < bsz; ++b)
          for (int64_t i = 0; i < n; ++i)
            for (int64_t p = 0; p < patch; ++p) {
              const T* src = g + (b * n + i) * patch * c + p * c;
              T* dst = dx + (b * tlen + i * stride + p) * c;
              for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
            }
      });
    };
  }
  return out;
}

Tensor session_linear(const Tensor& x, const std::vector<int>& session_ids,
                      const std::vector<Tensor>& weights,
                      const std::vector<Tensor>& biases) {
  if (x.rank() != 3) throw ShapeError("session_linear: expected [B,T,C], got " + shape_str(x.shape()));
  const int64_t bsz = x.dim(0), tlen = x.dim(1), c = x.dim(2);
  if (static_cast<int64_t>(session_ids.size()) != bsz) {
    throw ShapeError("session_linear: got " + std::to_string(session_ids.size()) +
                     " session ids for batch of " + std::to_string(bsz));
  }
  if (weights.size() != biases.size()) {
    throw ShapeError("session_linear: weight/bias table size mismatch");
  }
  for (int id : session_ids) {
    if (id < 0 || id >= static_cast<int>(weights.size())) {
      throw std::out_of_range("session_linear: session id " + std::to_string(id) +
                              " out of range [0, " + std::to_string(weights.size()) + ")");
    }
  }

  std::vector<Tensor> parents;
  parents.reserve(1 + 2 * weights.size());
  parents.push_back(x);
  for (const auto& w : weights) parents.push_back(w);
  for (const auto& b : biases) parents.push_back(b);
  Tensor out = Tensor::make_node(x.shape(), x.dtype(), "session_linear", std::move(parents));

  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xp = x.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t b = 0; b < bsz; ++b) {
      const int d = session_ids[static_cast<size_t>(b)];
      MapCM<T> X(xp + b * tlen * c, tlen, c);
      MapCM<T> W(weights[static_cast<size_t>(d)].data<T>().data(), c, c);
      MapM<T> O(op + b * tlen * c, tlen, c);
      O.noalias() = X * W;
      const T* bias = biases[static_cast<size_t>(d)].data<T>().data();
      for (int64_t t = 0; t < tlen; ++t)
        for (int64_t j = 0; j < c; ++j) op[(b * tlen + t) * c + j] += bias[j];
    }
  });

  if (out.requires_grad()) {
    Tensor xv = x;
    auto ws = weights;
    auto bs = biases;
    auto ids = session_ids;
    out.impl()->backward_fn = [xv, ws, bs, ids, bsz, tlen, c](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        const T* xp = xv.data<T>().data();
        T* dx = xv.requires_grad() ? xv.impl()->grad_values<T>().data() : nullptr;
        for (int64_t b = 0; b < bsz; ++b) {
          const int d = ids[static_cast<size_t>(b)];
          MapCM<T> G(g + b * tlen * c, tlen, c);
          MapCM<T> X(xp + b * tlen * c, tlen, c);
          if (dx) {
            MapCM<T> W(ws[static_cast<size_t>(d)].data<T>().data(), c, c);
            MapM<T> dX(dx + b * tlen * c, tlen, c);
            dX.noalias() += G * W.transpose();
          }
          if (ws[static_cast<size_t>(d)].requires_grad()) {
            MapM<T> dW(ws[static_cast<size_t>(d)].impl()->grad_values<T>().data(), c, c);
            dW.noalias() += X.transpose() * G;
          }
          if (bs[static_cast<size_t>(d)].requires_grad()) {
            T* db = bs[static_cast<size_t>(d)].impl()->grad_values<T>().data();
            for (int64_t t = 0; t < tlen; ++t)
              for (int64_t j = 0; j < c; ++j) db[j] += g[(b * tlen + t) * c + j];
          }
        }
      });
    };
  }
  return out;
}

}  // namespace neurodecode::ops
