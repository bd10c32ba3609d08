#include "neurodecode/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "neurodecode/rng.hpp"

namespace neurodecode {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

BufferPtr make_buffer(Dtype dt, int64_t n) {
  if (dt == Dtype::f32) {
    return std::make_shared<Buffer>(std::vector<float>(static_cast<size_t>(n), 0.0f));
  }
  return std::make_shared<Buffer>(std::vector<double>(static_cast<size_t>(n), 0.0));
}

void TensorImpl::ensure_grad() {
  if (!grad) grad = make_buffer(dtype, numel());
}

Tensor Tensor::make_node(Shape shape, Dtype dt, const char* op,
                         std::vector<Tensor> parents) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dt;
  impl->data = make_buffer(dt, impl->numel());
  impl->op = op;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) {
      if (p.defined() && p.requires_grad()) {
        impl->requires_grad = true;
        break;
      }
    }
    if (impl->requires_grad) impl->parent_list = std::move(parents);
  }
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, Dtype dt, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dt;
  impl->data = make_buffer(dt, impl->numel());
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from(std::span<const double> values, Shape shape, Dtype dt) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("Tensor::from: value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  Tensor t = zeros(std::move(shape), dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::identity(int64_t n, Dtype dt) {
  Tensor t = zeros({n, n}, dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (int64_t i = 0; i < n; ++i) d[static_cast<size_t>(i * n + i)] = T(1);
  });
  return t;
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, RngStream& rng, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  dispatch_dtype(dt, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (auto& v : d) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  });
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int64_t Tensor::numel() const { return impl_->numel(); }
Dtype Tensor::dtype() const { return impl_->dtype; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

template <typename T>
std::span<T> Tensor::data() {
  if (!std::holds_alternative<std::vector<T>>(*impl_->data)) {
    throw ShapeError(std::string("Tensor::data: dtype mismatch, tensor is ") +
                     dtype_name(impl_->dtype));
  }
  return impl_->values<T>();
}

template <typename T>
std::span<const T> Tensor::data() const {
  if (!std::holds_alternative<std::vector<T>>(*impl_->data)) {
    throw ShapeError(std::string("Tensor::data: dtype mismatch, tensor is ") +
                     dtype_name(impl_->dtype));
  }
  return static_cast<const TensorImpl*>(impl_.get())->values<T>();
}

template std::span<float> Tensor::data<float>();
template std::span<double> Tensor::data<double>();
template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;

double Tensor::at(int64_t i) const {
  return dispatch_dtype(impl_->dtype, [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(impl_->values<T>()[static_cast<size_t>(i)]);
  });
}

void Tensor::set(int64_t i, double value) {
  dispatch_dtype(impl_->dtype, [&](auto tag) {
    using T = decltype(tag);
    impl_->values<T>()[static_cast<size_t>(i)] = static_cast<T>(value);
  });
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("Tensor::item: tensor has " + std::to_string(numel()) +
                     " elements, expected 1");
  }
  return at(0);
}

Tensor Tensor::grad() const {
  if (!impl_->grad) return Tensor();
  auto g = std::make_shared<TensorImpl>();
  g->shape = impl_->shape;
  g->dtype = impl_->dtype;
  g->data = impl_->grad;
  return Tensor(std::move(g));
}

void Tensor::clear_grad() { impl_->grad.reset(); }

Tensor Tensor::detach() const {
  auto d = std::make_shared<TensorImpl>();
  d->shape = impl_->shape;
  d->dtype = impl_->dtype;
  d->data = impl_->data;
  return Tensor(std::move(d));
}

Tensor Tensor::clone() const {
  auto c = std::make_shared<TensorImpl>();
  c->shape = impl_->shape;
  c->dtype = impl_->dtype;
  c->data = std::make_shared<Buffer>(*impl_->data);
  return Tensor(std::move(c));
}

const char* Tensor::op_name() const { return impl_->op; }
const std::vector<Tensor>& Tensor::parents() const { return impl_->parent_list; }

void Tensor::backward() {
  if (numel() != 1) {
    throw ShapeError("backward: can only start from a scalar, got shape " +
                     shape_str(impl_->shape));
  }
  // Iterative post-order DFS for a deterministic topological order.
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (!visited.insert(impl_.get()).second) return;
  stack.push_back({impl_.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parent_list.size()) {
      TensorImpl* p = f.node->parent_list[f.next_parent++].impl();
      if (p && p->requires_grad && visited.insert(p).second) {
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  // Seed d(loss)/d(loss) = 1.
  dispatch_dtype(impl_->dtype, [&](auto tag) {
    using T = decltype(tag);
    impl_->grad_values<T>()[0] = T(1);
  });

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      node->backward_fn(*node);
      node->backward_fn = nullptr;  // release saved tensors
    }
  }
}

}  // namespace neurodecode
