#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "grela/tensor.hpp"

namespace grela {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every
// coordinate of x. f is evaluated on perturbed copies; x is left untouched.
// Throws NumericError if any evaluation is non-finite.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;  // "<param>[<index>] analytic=... numeric=..."
};

// Compares tape gradients of loss_fn() against central differences for every
// coordinate of every named parameter, perturbing parameter storage in place
// (and restoring it). Coordinates whose analytic gradient is below
// skip_below in magnitude are skipped. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|).
// With extrapolate set, the numeric estimate is the Richardson combination
// (4 D(h/2) - D(h)) / 3 of two central differences, which cancels the h^2
// error term and allows a larger h (less cancellation noise).
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                double h, double skip_below = 1e-8, bool extrapolate = false);

}  // namespace grela
