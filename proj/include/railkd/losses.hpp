#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "railkd/checkpoint.hpp"
#include "railkd/mapping.hpp"
#include "railkd/tensor.hpp"

namespace railkd {

enum class Method { none, vanilla, pkd_skip, pkd_last, alp, rail_l, rail_c };

/// Canonical CLI spelling ("rail-l", "pkd-skip", ...).
std::string to_string(Method method);
/// Accepts both "rail-l" and "rail_l" spellings.
Method method_from_string(const std::string& name);
bool uses_projection(Method method);

struct LossWeights {
  double ce = 1.0;
  double kd = 0.0;
  double ild = 0.0;
};

struct DistillConfig {
  Method method = Method::rail_l;
  double lambda1 = 1.0 / 3.0;
  double lambda2 = 1.0 / 3.0;
  double lambda3 = 1.0 / 3.0;
  /// Per student-layer weights; empty means all ones.
  std::vector<double> alpha;
  int proj_dim = 128;
  double temperature = 1.0;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int patience = 5;
  bool early_stopping = true;
  std::uint64_t seed = 0;
  /// Redraw RAIL selections every batch instead of every epoch.
  bool per_batch_selection = false;
  /// One projection pair per student slot instead of one shared pair.
  bool per_layer_heads = false;

  /// Throws ConfigError; called before any training starts.
  void validate() const;
  /// Lambdas actually applied for this method: none -> (1,0,0); vanilla
  /// drops the ILD weight and renormalizes the other two.
  LossWeights effective_weights() const;
  std::vector<double> alpha_for(int student_intermediate) const;
};

void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);

/// Linear maps taking pooled teacher/student vectors into a shared width u.
/// Layer-wise heads map d1 -> u and d2 -> u (one shared pair or one pair per
/// student slot); concatenated heads map k*d1 -> u and k*d2 -> u.
struct ProjectionHead {
  std::vector<Tensor> teacher_maps;
  std::vector<Tensor> student_maps;
  bool concatenated = false;

  static ProjectionHead layerwise(std::size_t teacher_dim, std::size_t student_dim,
                                  std::size_t width, std::size_t slots, bool per_layer,
                                  std::uint64_t seed);
  static ProjectionHead concat(std::size_t slots, std::size_t teacher_dim,
                               std::size_t student_dim, std::size_t width, std::uint64_t seed);

  std::size_t width() const;
  const Tensor& teacher_map(std::size_t slot) const;
  const Tensor& student_map(std::size_t slot) const;
  std::vector<Tensor> parameters() const;
  std::vector<NamedTensor> named() const;
  ProjectionHead clone() const;
  /// Reads "proj.*" tensors; throws ConfigError when none are present.
  static ProjectionHead from_checkpoint(const Checkpoint& ckpt);
};

/// Row-wise average over the token axis: [L x d] -> [d], [B x L x d] -> [B x d].
Tensor mean_pool(const Tensor& layer_states);

/// l2_normalize(pooled * map). `layer` only labels the error message.
Tensor project_normalize(const Tensor& pooled, const Tensor& map, int layer = 0);

/// sum_i alpha_i ||t_i - s_i||^2 over [k x u] or [B x k x u] unit rows,
/// averaged over the batch.
Tensor rail_layerwise_loss(const Tensor& teacher_proj, const Tensor& student_proj,
                           std::span<const double> alpha);
/// List form: k tensors of [u] or [B x u] each.
Tensor rail_layerwise_loss(std::span<const Tensor> teacher_proj,
                           std::span<const Tensor> student_proj, std::span<const double> alpha);

/// Projects and normalizes each pooled layer pair, then applies
/// rail_layerwise_loss. Shared by RAIL-KD^l and PKD.
Tensor layerwise_ild(std::span<const Tensor> teacher_pooled, std::span<const Tensor> student_pooled,
                     const ProjectionHead& heads, std::span<const double> alpha);

/// Concatenate (in the given, sorted order), project, normalize, squared
/// distance; averaged over the batch.
Tensor rail_concat_loss(std::span<const Tensor> teacher_pooled,
                        std::span<const Tensor> student_pooled, const ProjectionHead& heads);

/// teacher_pooled_all holds every teacher intermediate layer (index i-1 for
/// layer i); the mapping picks one per student slot.
Tensor pkd_loss(const FixedMapping& mapping, std::span<const Tensor> teacher_pooled_all,
                std::span<const Tensor> student_pooled, const ProjectionHead& heads,
                std::span<const double> alpha);

/// sum_i ||sum_j w_ij t_j - s_i||^2 with weights [(B x) k x n], teacher
/// [(B x) n x u], student [(B x) k x u]; averaged over the batch.
Tensor alp_loss(const Tensor& weights, const Tensor& teacher_proj, const Tensor& student_proj);

struct AlpTerm {
  Tensor loss;
  Tensor weights;  // [B x k x n]
};
/// Full ALP-KD term: project and normalize every teacher layer and every
/// student slot, attend, and regress onto the weighted teacher mix.
AlpTerm alp_ild(std::span<const Tensor> teacher_pooled_all, std::span<const Tensor> student_pooled,
                const ProjectionHead& heads);

/// T^2 * KL(softmax(t/T) || softmax(s/T)), averaged over the batch. The
/// teacher side is treated as a constant.
Tensor kd_logits_loss(const Tensor& teacher_logits, const Tensor& student_logits,
                      double temperature);
Tensor ce_loss(const Tensor& logits, std::span<const int> labels);
Tensor mse_loss(const Tensor& prediction, std::span<const double> targets);

/// lambda-weighted combination under config.effective_weights().
Tensor total_loss(const Tensor& ce, const Tensor& kd, const Tensor& ild, const DistillConfig& config);
double total_loss(double ce, double kd, double ild, const DistillConfig& config);

}  // namespace railkd
