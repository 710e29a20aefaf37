#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "railkd/rng.hpp"
#include "railkd/tensor.hpp"

namespace railkd {

/// Teacher layers chosen for one epoch (or one batch in per-batch mode).
struct LayerSelection {
  std::vector<int> teacher_indices;  // strictly increasing, each in [1, n]
  int epoch = 0;
  std::uint64_t seed = 0;
};

/// k distinct layers drawn uniformly without replacement from
/// [1, n_intermediate], sorted ascending. Advances `rng`.
std::vector<int> random_select(int n_intermediate, int k, Rng& rng);

/// Selection for one epoch: a fresh generator seeded with `seed ^ epoch`.
LayerSelection epoch_selection(int n_intermediate, int k, std::uint64_t seed, int epoch);

enum class MappingScheme { skip, last, custom };

struct FixedMapping {
  /// (student_layer, teacher_layer), student layers 1..m in order.
  std::vector<std::pair<int, int>> pairs;
  MappingScheme scheme = MappingScheme::custom;

  std::vector<int> teacher_indices() const;
};

/// PKD-style deterministic mapping. skip: teacher layer i * floor((n+1)/(m+1))
/// for student layer i; last: the final m teacher intermediate layers.
FixedMapping fixed_mapping(int n_intermediate, int m_intermediate, MappingScheme scheme);
/// Validates a hand-written mapping against both models.
FixedMapping custom_mapping(std::vector<int> teacher_indices, int n_intermediate);

/// Row-stochastic [(m-1) x (n-1)] matrix of ALP attention weights.
struct AlpWeights {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;

  double at(std::size_t i, std::size_t j) const { return weights[i * cols + j]; }
  /// Throws ContractError when any entry is negative or a row sum is off by
  /// more than `tol`.
  void validate(double tol = 1e-9) const;
  static AlpWeights from_tensor(const Tensor& w);
};

/// weights[i][j] = softmax_j(<student_i, teacher_j>). Accepts [k x u] with
/// [n x u], or batched [B x k x u] with [B x n x u]. Differentiable.
Tensor alp_attention(const Tensor& student, const Tensor& teacher);

}  // namespace railkd
