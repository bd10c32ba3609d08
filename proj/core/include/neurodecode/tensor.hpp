#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "neurodecode/error.hpp"

namespace neurodecode {

class RngStream;

enum class Dtype { f32, f64 };

inline size_t dtype_size(Dtype dt) { return dt == Dtype::f32 ? 4 : 8; }
const char* dtype_name(Dtype dt);

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense value storage; one vector per dtype so typed access stays checked.
using Buffer = std::variant<std::vector<float>, std::vector<double>>;
using BufferPtr = std::shared_ptr<Buffer>;

BufferPtr make_buffer(Dtype dt, int64_t n);

struct TensorImpl;

// Dense row-major tensor handle with optional reverse-mode gradient.
//
// A Tensor is a cheap shared handle. Values are written once by the op that
// produces them and treated as immutable afterwards; the exceptions are leaf
// parameters, which optimizers update in place between steps. Ops record a
// backward closure on the result when gradients are enabled, so calling
// backward() on a scalar fills `grad()` on every contributing tensor with
// requires_grad set.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, Dtype dt = Dtype::f32, bool requires_grad = false);
  static Tensor full(Shape shape, double value, Dtype dt = Dtype::f32);
  static Tensor from(std::span<const double> values, Shape shape, Dtype dt = Dtype::f32);
  static Tensor identity(int64_t n, Dtype dt = Dtype::f32);
  // Uniform in [lo, hi); draws in row-major order from `rng`.
  static Tensor uniform(Shape shape, double lo, double hi, RngStream& rng,
                        Dtype dt = Dtype::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int i) const;
  int rank() const;
  int64_t numel() const;
  Dtype dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  // Typed access; throws on dtype mismatch.
  template <typename T>
  std::span<T> data();
  template <typename T>
  std::span<const T> data() const;

  // Element read/write as double regardless of dtype (slow path, tests/IO).
  double at(int64_t linear_index) const;
  void set(int64_t linear_index, double value);
  double item() const;  // requires numel() == 1

  // Gradient tensor (no graph); undefined handle when no grad accumulated.
  Tensor grad() const;
  void clear_grad();

  // Reverse-mode sweep from a scalar; accumulates into leaf grads.
  void backward();

  // Same data buffer, detached from the autodiff graph.
  Tensor detach() const;
  // Deep value copy, no graph, no grad.
  Tensor clone() const;

  const char* op_name() const;
  const std::vector<Tensor>& parents() const;

  TensorImpl* impl() const { return impl_.get(); }

  // Internal: allocate a graph node with fresh storage.
  static Tensor make_node(Shape shape, Dtype dt, const char* op,
                          std::vector<Tensor> parents);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
  Shape shape;
  Dtype dtype = Dtype::f32;
  BufferPtr data;
  BufferPtr grad;  // lazily allocated, same shape/dtype as data
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor> parent_list;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(TensorImpl&)> backward_fn;

  int64_t numel() const { return shape_numel(shape); }

  template <typename T>
  std::span<T> values() {
    return std::span<T>(std::get<std::vector<T>>(*data));
  }
  template <typename T>
  std::span<const T> values() const {
    return std::span<const T>(std::get<std::vector<T>>(*data));
  }
  // Gradient buffer, allocated zero-filled on first use.
  template <typename T>
  std::span<T> grad_values() {
    ensure_grad();
    return std::span<T>(std::get<std::vector<T>>(*grad));
  }
  void ensure_grad();
};

// Scoped switch disabling graph construction (eval-mode forward passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Calls f with a value of the scalar type matching dt.
template <typename F>
decltype(auto) dispatch_dtype(Dtype dt, F&& f) {
  if (dt == Dtype::f32) return f(float{});
  return f(double{});
}

}  // namespace neurodecode
