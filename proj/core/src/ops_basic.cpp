#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "neurodecode/ops.hpp"
#include "neurodecode/threading.hpp"

namespace neurodecode::ops {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatRM<T>>;

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                     " vs " + dtype_name(b.dtype()) + ")");
  }
}

// Returns true if b broadcasts as a suffix of a (equal shapes included).
bool suffix_broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  for (size_t i = 0; i < b.size(); ++i) {
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  }
  return true;
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

enum class BinKind { kAdd, kMul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  check_same_dtype(a, b, name);
  if (!suffix_broadcastable(a.shape(), b.shape())) {
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not compatible");
  }
  Tensor out = Tensor::make_node(a.shape(), a.dtype(), name, {a, b});
  const int64_t nb = b.numel();
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.data<T>();
    auto bv = b.data<T>();
    auto ov = out.data<T>();
    if (kind == BinKind::kAdd) {
      for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i % nb];
    } else {
      for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i % nb];
    }
  });
  if (out.requires_grad()) {
    Tensor av = a, bv = b;
    out.impl()->backward_fn = [av, bv, kind, nb](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        if (av.requires_grad()) {
          auto da = av.impl()->grad_values<T>();
          if (kind == BinKind::kAdd) {
            add_into<T>(da, g);
          } else {
            auto bvals = bv.data<T>();
            for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bvals[i % nb];
          }
        }
        if (bv.requires_grad()) {
          auto db = bv.impl()->grad_values<T>();
          if (kind == BinKind::kAdd) {
            for (size_t i = 0; i < g.size(); ++i) db[i % nb] += g[i];
          } else {
            auto avals = av.data<T>();
            for (size_t i = 0; i < g.size(); ++i) db[i % nb] += g[i] * avals[i];
          }
        }
      });
    };
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kAdd, "add"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kMul, "mul"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scalar_mul(b, -1.0)); }

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out = Tensor::make_node(a.shape(), a.dtype(), "scalar_mul", {a});
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.data<T>();
    auto ov = out.data<T>();
    const T cc = static_cast<T>(c);
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * cc;
  });
  if (out.requires_grad()) {
    Tensor av = a;
    out.impl()->backward_fn = [av, c](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        auto da = av.impl()->grad_values<T>();
        const T cc = static_cast<T>(c);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * cc;
      });
    };
  }
  return out;
}

Tensor scalar_add(const Tensor& a, double c) {
  Tensor out = Tensor::make_node(a.shape(), a.dtype(), "scalar_add", {a});
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.data<T>();
    auto ov = out.data<T>();
    const T cc = static_cast<T>(c);
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + cc;
  });
  if (out.requires_grad()) {
    Tensor av = a;
    out.impl()->backward_fn = [av](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        add_into<T>(av.impl()->grad_values<T>(), std::span<const T>(g.data(), g.size()));
      });
    };
  }
  return out;
}

namespace {

struct MatmulDims {
  int64_t batch;  // product of leading dims of a
  int64_t m, k, n;
  bool shared_b;  // b is rank 2, reused across the batch
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  MatmulDims d;
  d.m = a.dim(a.rank() - 2);
  d.k = a.dim(a.rank() - 1);
  d.batch = a.numel() / (d.m * d.k);
  d.shared_b = (b.rank() == 2);
  const int64_t bk = b.dim(b.rank() - 2);
  d.n = b.dim(b.rank() - 1);
  if (bk != d.k) {
    throw ShapeError("matmul: inner dimensions do not match, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  if (!d.shared_b) {
    const int64_t b_batch = b.numel() / (bk * d.n);
    if (b_batch != d.batch || a.rank() != b.rank()) {
      throw ShapeError("matmul: leading dimensions do not match, " +
                       shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
  }
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "matmul");
  const MatmulDims d = matmul_dims(a, b);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(d.n);
  Tensor out = Tensor::make_node(std::move(out_shape), a.dtype(), "matmul", {a, b});

  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* ap = a.data<T>().data();
    const T* bp = b.data<T>().data();
    T* op = out.data<T>().data();
    parallel_for(d.batch, [&](int64_t i) {
      MapCM<T> A(ap + i * d.m * d.k, d.m, d.k);
      MapCM<T> B(bp + (d.shared_b ? 0 : i * d.k * d.n), d.k, d.n);
      MapM<T> C(op + i * d.m * d.n, d.m, d.n);
      C.noalias() = A * B;
    });
  });

  if (out.requires_grad()) {
    Tensor av = a, bv = b;
    out.impl()->backward_fn = [av, bv, d](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        const T* gp = g.data();
        const T* ap = av.data<T>().data();
        const T* bp = bv.data<T>().data();
        if (av.requires_grad()) {
          T* dap = av.impl()->grad_values<T>().data();
          parallel_for(d.batch, [&](int64_t i) {
            MapCM<T> G(gp + i * d.m * d.n, d.m, d.n);
            MapCM<T> B(bp + (d.shared_b ? 0 : i * d.k * d.n), d.k, d.n);
            MapM<T> dA(dap + i * d.m * d.k, d.m, d.k);
            dA.noalias() += G * B.transpose();
          });
        }
        if (bv.requires_grad()) {
          T* dbp = bv.impl()->grad_values<T>().data();
          if (d.shared_b) {
            // Shared weight: accumulate serially for a deterministic sum order.
            MapM<T> dB(dbp, d.k, d.n);
            for (int64_t i = 0; i < d.batch; ++i) {
              MapCM<T> A(ap + i * d.m * d.k, d.m, d.k);
              MapCM<T> G(gp + i * d.m * d.n, d.m, d.n);
              dB.noalias() += A.transpose() * G;
            }
          } else {
            parallel_for(d.batch, [&](int64_t i) {
              MapCM<T> A(ap + i * d.m * d.k, d.m, d.k);
              MapCM<T> G(gp + i * d.m * d.n, d.m, d.n);
              MapM<T> dB(dbp + i * d.k * d.n, d.k, d.n);
              dB.noalias() += A.transpose() * G;
            });
          }
        }
      });
    };
  }
  return out;
}

Tensor transpose_last(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose_last: rank must be >= 2");
  const int64_t m = a.dim(a.rank() - 2);
  const int64_t n = a.dim(a.rank() - 1);
  const int64_t batch = a.numel() / (m * n);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::make_node(std::move(out_shape), a.dtype(), "transpose_last", {a});
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* ap = a.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t i = 0; i < batch; ++i) {
      const T* src = ap + i * m * n;
      T* dst = op + i * m * n;
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) dst[c * m + r] = src[r * n + c];
    }
  });
  if (out.requires_grad()) {
    Tensor av = a;
    out.impl()->backward_fn = [av, batch, m, n](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* gp = node.grad_values<T>().data();
        T* dap = av.impl()->grad_values<T>().data();
        for (int64_t i = 0; i < batch; ++i) {
          const T* g = gp + i * m * n;   // [n, m]
          T* da = dap + i * m * n;       // [m, n]
          for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < m; ++c) da[c * n + r] += g[r * m + c];
        }
      });
    };
  }
  return out;
}

Tensor permute_0213(const Tensor& a) {
  if (a.rank() != 4) throw ShapeError("permute_0213: expected rank 4, got " + shape_str(a.shape()));
  const int64_t b = a.dim(0), n = a.dim(1), h = a.dim(2), d = a.dim(3);
  Tensor out = Tensor::make_node({b, h, n, d}, a.dtype(), "permute_0213", {a});
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* ap = a.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < n; ++j)
        for (int64_t k = 0; k < h; ++k) {
          const T* src = ap + ((i * n + j) * h + k) * d;
          T* dst = op + ((i * h + k) * n + j) * d;
          std::copy(src, src + d, dst);
        }
  });
  if (out.requires_grad()) {
    Tensor av = a;
    out.impl()->backward_fn = [av, b, n, h, d](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* gp = node.grad_values<T>().data();
        T* dap = av.impl()->grad_values<T>().data();
        for (int64_t i = 0; i < b; ++i)
          for (int64_t k = 0; k < h; ++k)
            for (int64_t j = 0; j < n; ++j) {
              const T* g = gp + ((i * h + k) * n + j) * d;
              T* da = dap + ((i * n + j) * h + k) * d;
              for (int64_t x = 0; x < d; ++x) da[x] += g[x];
            }
      });
    };
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = a.dtype();
  impl->data = a.impl()->data;  // metadata-only view
  impl->op = "reshape";
  if (grad_enabled() && a.requires_grad()) {
    impl->requires_grad = true;
    impl->parent_list = {a};
    Tensor av = a;
    impl->backward_fn = [av](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        add_into<T>(av.impl()->grad_values<T>(), std::span<const T>(g.data(), g.size()));
      });
    };
  }
  return Tensor(std::move(impl));
}

Tensor exp(const Tensor& a) {
  Tensor out = Tensor::make_node(a.shape(), a.dtype(), "exp", {a});
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.data<T>();
    auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
  });
  if (out.requires_grad()) {
    Tensor av = a, ov = out;
    out.impl()->backward_fn = [av, ov](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        auto g = node.grad_values<T>();
        auto y = ov.data<T>();
        auto da = av.impl()->grad_values<T>();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * y[i];
      });
    };
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::make_node({1}, a.dtype(), "sum_all", {a});
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.data<T>();
    // Accumulate in double for a stable, order-fixed reduction.
    double acc = 0.0;
    for (T v : av) acc += static_cast<double>(v);
    out.data<T>()[0] = static_cast<T>(acc);
  });
  if (out.requires_grad()) {
    Tensor av = a;
    out.impl()->backward_fn = [av](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T g = node.grad_values<T>()[0];
        auto da = av.impl()->grad_values<T>();
        for (auto& v : da) v += g;
      });
    };
  }
  return out;
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("sum_last: rank must be >= 1");
  const int64_t d = a.dim(a.rank() - 1);
  const int64_t rows = a.numel() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out = Tensor::make_node(std::move(out_shape), a.dtype(), "sum_last", {a});
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* ap = a.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(ap[r * d + j]);
      op[r] = static_cast<T>(acc);
    }
  });
  if (out.requires_grad()) {
    Tensor av = a;
    out.impl()->backward_fn = [av, rows, d](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        T* da = av.impl()->grad_values<T>().data();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) da[r * d + j] += g[r];
      });
    };
  }
  return out;
}

Tensor mask_rows(const Tensor& x, const Tensor& mask) {
  if (x.rank() < 1) throw ShapeError("mask_rows: x must have rank >= 1");
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / d;
  if (mask.numel() != rows) {
    throw ShapeError("mask_rows: mask " + shape_str(mask.shape()) +
                     " does not cover the rows of " + shape_str(x.shape()));
  }
  Tensor out = Tensor::make_node(x.shape(), x.dtype(), "mask_rows", {x});
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xp = x.data<T>().data();
    T* op = out.data<T>().data();
    for (int64_t r = 0; r < rows; ++r) {
      if (mask.at(r) != 0.0) {
        std::copy(xp + r * d, xp + (r + 1) * d, op + r * d);
      }  // else: leave zero-initialized
    }
  });
  if (out.requires_grad()) {
    Tensor xv = x, mv = mask;
    out.impl()->backward_fn = [xv, mv, rows, d](TensorImpl& node) {
      dispatch_dtype(node.dtype, [&](auto tag) {
        using T = decltype(tag);
        const T* g = node.grad_values<T>().data();
        T* dx = xv.impl()->grad_values<T>().data();
        for (int64_t r = 0; r < rows; ++r) {
          if (mv.at(r) != 0.0)
            for (int64_t j = 0; j < d; ++j) dx[r * d + j] += g[r * d + j];
        }
      });
    };
  }
  return out;
}

}  // namespace neurodecode::ops
