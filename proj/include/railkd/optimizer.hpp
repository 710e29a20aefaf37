#pragma once

#include <vector>

#include "railkd/tensor.hpp"

namespace railkd {

/// Adam with bias correction. Moment buffers mirror the parameter shapes.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double learning_rate = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update from the accumulated gradients. Throws NumericError
  /// if any parameter becomes non-finite.
  void step();
  void zero_grad();

  std::size_t steps_taken() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

}  // namespace railkd
