#pragma once

#include <functional>

#include "neurodecode/tensor.hpp"

namespace neurodecode {

// Compares the reverse-mode gradient of a scalar-valued f against central
// finite differences at step h, one coordinate of x at a time. Returns the
// max over coordinates of |analytic - numeric| / max(1, |analytic|).
//
// f must be deterministic and x must be f64. Throws if any intermediate of
// the analytic pass is non-finite, naming the producing op.
double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double h = 1e-5);

// Variant for parameters living inside a stateful module: `loss` rebuilds the
// forward pass reading `param` in place; the analytic gradient is taken from
// param.grad() after backward, the numeric one by perturbing param's values
// directly. param is restored before returning.
double gradient_check_inplace(const std::function<Tensor()>& loss, Tensor param,
                              double h = 1e-5);

}  // namespace neurodecode
