#include "railkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "railkd/errors.hpp"

namespace railkd {

double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step) {
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) {
    auto leaf = t.detach();
    leaf.set_requires_grad(true);
    leaves.push_back(leaf);
  }
  {
    const Tensor loss = f(leaves);
    if (loss.numel() != 1) throw ContractError("grad_check: function must return a scalar");
    loss.backward();
  }

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& leaf : leaves) {
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double plus = f(leaves).item();
      values[i] = original - step;
      const double minus = f(leaves).item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = leaf.has_grad() ? leaf.grad()[i] : 0.0;
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  return grad_check([&f](const std::vector<Tensor>& in) { return f(in[0]); },
                    std::vector<Tensor>{x}, step);
}

}  // namespace railkd
