#include "railkd/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "railkd/errors.hpp"
#include "railkd/ops.hpp"

namespace railkd {

std::vector<int> random_select(int n_intermediate, int k, Rng& rng) {
  if (k < 1 || k > n_intermediate) {
    throw ConfigError("random_select: need 1 <= k <= n, got k=" + std::to_string(k) +
                      ", n=" + std::to_string(n_intermediate));
  }
  std::vector<int> pool(static_cast<std::size_t>(n_intermediate));
  std::iota(pool.begin(), pool.end(), 1);
  // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(i, static_cast<std::int64_t>(n_intermediate) - 1));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

LayerSelection epoch_selection(int n_intermediate, int k, std::uint64_t seed, int epoch) {
  Rng rng(seed ^ static_cast<std::uint64_t>(epoch));
  return {random_select(n_intermediate, k, rng), epoch, seed};
}

std::vector<int> FixedMapping::teacher_indices() const {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.second);
  return out;
}

FixedMapping fixed_mapping(int n_intermediate, int m_intermediate, MappingScheme scheme) {
  if (m_intermediate < 1 || m_intermediate > n_intermediate) {
    throw ConfigError("fixed_mapping: student has " + std::to_string(m_intermediate) +
                      " intermediate layers, teacher only " + std::to_string(n_intermediate));
  }
  FixedMapping m;
  m.scheme = scheme;
  switch (scheme) {
    case MappingScheme::skip: {
      const int stride = (n_intermediate + 1) / (m_intermediate + 1);
      for (int i = 1; i <= m_intermediate; ++i) m.pairs.emplace_back(i, i * stride);
      break;
    }
    case MappingScheme::last:
      for (int i = 1; i <= m_intermediate; ++i) {
        m.pairs.emplace_back(i, n_intermediate - m_intermediate + i);
      }
      break;
    case MappingScheme::custom:
      throw ConfigError("fixed_mapping: use custom_mapping for explicit layer lists");
  }
  return m;
}

FixedMapping custom_mapping(std::vector<int> teacher_indices, int n_intermediate) {
  FixedMapping m;
  m.scheme = MappingScheme::custom;
  for (std::size_t i = 0; i < teacher_indices.size(); ++i) {
    const int t = teacher_indices[i];
    if (t < 1 || t > n_intermediate) {
      throw ConfigError("custom mapping: teacher layer " + std::to_string(t) + " outside [1, " +
                        std::to_string(n_intermediate) + "]");
    }
    if (i > 0 && t <= teacher_indices[i - 1]) {
      throw ConfigError("custom mapping: teacher layers must be strictly increasing");
    }
    m.pairs.emplace_back(static_cast<int>(i) + 1, t);
  }
  if (m.pairs.empty()) throw ConfigError("custom mapping: empty layer list");
  return m;
}

void AlpWeights::validate(double tol) const {
  if (weights.size() != rows * cols) throw ContractError("AlpWeights: size mismatch");
  for (std::size_t i = 0; i < rows; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double w = at(i, j);
      if (!(w >= 0.0)) throw ContractError("AlpWeights: negative or NaN entry");
      total += w;
    }
    if (std::abs(total - 1.0) > tol) {
      throw ContractError("AlpWeights: row " + std::to_string(i) + " sums to " +
                          std::to_string(total));
    }
  }
}

AlpWeights AlpWeights::from_tensor(const Tensor& w) {
  if (w.rank() != 2) throw DimensionError("AlpWeights expects a matrix, got " + shape_str(w.shape()));
  AlpWeights out{w.dim(0), w.dim(1), std::vector<double>(w.data().begin(), w.data().end())};
  out.validate();
  return out;
}

Tensor alp_attention(const Tensor& student, const Tensor& teacher) {
  if (student.rank() != teacher.rank() || (student.rank() != 2 && student.rank() != 3) ||
      student.dim(-1) != teacher.dim(-1) ||
      (student.rank() == 3 && student.dim(0) != teacher.dim(0))) {
    throw DimensionError("alp_attention: student " + shape_str(student.shape()) +
                         " and teacher " + shape_str(teacher.shape()) +
                         " must share rank, batch and width");
  }
  const Tensor scores = student.rank() == 2 ? matmul(student, transpose(teacher))
                                            : bmm(student, transpose(teacher));
  return softmax(scores);
}

}  // namespace railkd
