#pragma once

#include <functional>
#include <vector>

#include "railkd/tensor.hpp"

namespace railkd {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns the max over all coordinates of every input of
/// |analytic - numeric| / max(1, |numeric|). Inputs are not modified.
double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5);

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

}  // namespace railkd
