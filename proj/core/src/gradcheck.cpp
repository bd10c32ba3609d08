#include "neurodecode/gradcheck.hpp"

#include <cmath>
#include <unordered_set>
#include <vector>

namespace neurodecode {

namespace {

// Walks the graph below `root` in post-order (inputs before consumers) and
// throws at the first non-finite node, which is therefore the op that
// introduced the bad value.
void check_graph_finite(const Tensor& root) {
  struct Frame {
    const TensorImpl* node;
    size_t next;
  };
  std::vector<Frame> stack{{root.impl(), 0}};
  std::unordered_set<const TensorImpl*> seen{root.impl()};
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parent_list.size()) {
      const Tensor& p = f.node->parent_list[f.next++];
      if (p.defined() && seen.insert(p.impl()).second) stack.push_back({p.impl(), 0});
      continue;
    }
    bool finite = true;
    dispatch_dtype(f.node->dtype, [&](auto tag) {
      using T = decltype(tag);
      for (T v : f.node->values<T>()) {
        if (!std::isfinite(static_cast<double>(v))) {
          finite = false;
          break;
        }
      }
    });
    if (!finite) {
      throw std::runtime_error(std::string("gradient_check: non-finite intermediate produced by op '") +
                               f.node->op + "'");
    }
    stack.pop_back();
  }
}

}  // namespace

double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double h) {
  if (x.dtype() != Dtype::f64) {
    throw std::invalid_argument("gradient_check: input must be f64");
  }

  // Analytic pass.
  Tensor probe = x.clone().set_requires_grad(true);
  Tensor loss = f(probe);
  if (loss.numel() != 1) {
    throw std::invalid_argument("gradient_check: f must be scalar-valued");
  }
  check_graph_finite(loss);
  loss.backward();
  Tensor analytic = probe.grad();
  if (!analytic.defined()) {
    // f ignores x entirely; the zero gradient matches differences trivially.
    analytic = Tensor::zeros(x.shape(), Dtype::f64);
  }

  // Numeric pass, one coordinate at a time.
  double max_rel = 0.0;
  Tensor work = x.clone();
  NoGradGuard no_grad;
  auto w = work.data<double>();
  for (int64_t i = 0; i < work.numel(); ++i) {
    const double orig = w[static_cast<size_t>(i)];
    w[static_cast<size_t>(i)] = orig + h;
    const double fp = f(work).item();
    w[static_cast<size_t>(i)] = orig - h;
    const double fm = f(work).item();
    w[static_cast<size_t>(i)] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("gradient_check: non-finite value during numeric probe at coordinate " +
                               std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.at(i);
    const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

double gradient_check_inplace(const std::function<Tensor()>& loss, Tensor param,
                              double h) {
  if (param.dtype() != Dtype::f64) {
    throw std::invalid_argument("gradient_check_inplace: parameter must be f64");
  }
  param.clear_grad();
  Tensor l = loss();
  check_graph_finite(l);
  l.backward();
  Tensor analytic = param.grad();
  if (!analytic.defined()) analytic = Tensor::zeros(param.shape(), Dtype::f64);
  analytic = analytic.clone();
  param.clear_grad();

  double max_rel = 0.0;
  NoGradGuard no_grad;
  auto w = param.data<double>();
  for (int64_t i = 0; i < param.numel(); ++i) {
    const double orig = w[static_cast<size_t>(i)];
    w[static_cast<size_t>(i)] = orig + h;
    const double fp = loss().item();
    w[static_cast<size_t>(i)] = orig - h;
    const double fm = loss().item();
    w[static_cast<size_t>(i)] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.at(i);
    max_rel = std::max(max_rel, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  return max_rel;
}

}  // namespace neurodecode
