#pragma once

#include <span>
#include <vector>

#include "railkd/tensor.hpp"

namespace railkd {

// Elementwise, shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);

/// x[..., d] + bias[d]
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// [p x q] * [q x r]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched [B x p x q] * [B x q x r]
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[in x out] (+ bias[out]); leading dims are flattened.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// Swap the last two axes (rank 2 or 3).
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);

/// Over the last axis, with max subtraction.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
/// tanh approximation
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

/// Rows of table[V x d] for each id -> [ids.size() x d].
Tensor embedding(const Tensor& table, std::span<const int> ids);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces one axis (removed from the result shape).
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);

/// Concatenation along the last axis; leading dims must agree.
Tensor concat(std::span<const Tensor> parts);
/// New axis inserted at `axis`; all parts share one shape.
Tensor stack(std::span<const Tensor> parts, int axis);

/// x / ||x||_2 along the last axis. Throws NumericError when a row norm is
/// at or below eps.
inline constexpr double kNormEps = 1e-12;
Tensor l2_normalize(const Tensor& x, double eps = kNormEps);

/// out[i] = x[i, index[i]] for x[N x C].
Tensor pick(const Tensor& x, std::span<const int> index);

}  // namespace railkd
