#include "railkd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "railkd/errors.hpp"
#include "railkd/ops.hpp"
#include "railkd/rng.hpp"

namespace railkd {

namespace {

constexpr double kLambdaTol = 1e-9;
constexpr double kUnitTol = 1e-6;
constexpr double kStochasticTol = 1e-9;

Tensor random_map(Rng& rng, std::size_t in, std::size_t out) {
  std::vector<double> v(in * out);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from({in, out}, std::move(v), true);
}

/// k tensors of [..., d] -> [..., k, d].
Tensor stack_slots(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("empty layer list");
  return stack(parts, static_cast<int>(parts.front().rank()) - 1);
}

std::size_t batch_of(const Tensor& stacked) {
  return stacked.rank() == 3 ? stacked.dim(0) : 1;
}

void check_unit_rows(const Tensor& x, const char* what) {
  const auto u = x.dim(-1);
  auto d = x.data();
  for (std::size_t r = 0; r < x.numel() / u; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < u; ++j) ss += d[r * u + j] * d[r * u + j];
    if (std::abs(std::sqrt(ss) - 1.0) > kUnitTol) {
      throw ContractError(std::string(what) + ": expected unit-norm rows, row " +
                          std::to_string(r) + " has norm " + std::to_string(std::sqrt(ss)));
    }
  }
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::none: return "none";
    case Method::vanilla: return "vanilla";
    case Method::pkd_skip: return "pkd-skip";
    case Method::pkd_last: return "pkd-last";
    case Method::alp: return "alp";
    case Method::rail_l: return "rail-l";
    case Method::rail_c: return "rail-c";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '_', '-');
  for (Method m : {Method::none, Method::vanilla, Method::pkd_skip, Method::pkd_last, Method::alp,
                   Method::rail_l, Method::rail_c}) {
    if (to_string(m) == n) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

bool uses_projection(Method method) {
  return method != Method::none && method != Method::vanilla;
}

void DistillConfig::validate() const {
  const double lambdas[] = {lambda1, lambda2, lambda3};
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ConfigError("lambda weights must be non-negative");
  }
  if (std::abs(lambda1 + lambda2 + lambda3 - 1.0) > kLambdaTol) {
    throw ConfigError("lambda weights must sum to 1, got " +
                      std::to_string(lambda1 + lambda2 + lambda3));
  }
  for (double a : alpha) {
    if (!(a > 0.0)) throw ConfigError("alpha entries must be positive");
  }
  if (proj_dim < 1) throw ConfigError("proj_dim must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (patience < 1) throw ConfigError("patience must be positive");
  if (per_layer_heads && method != Method::rail_l && method != Method::pkd_skip &&
      method != Method::pkd_last) {
    throw ConfigError("per-layer projection heads apply only to rail-l and pkd methods");
  }
  if (method == Method::vanilla && lambda1 + lambda2 <= 0.0) {
    throw ConfigError("vanilla KD needs lambda1 + lambda2 > 0");
  }
}

LossWeights DistillConfig::effective_weights() const {
  switch (method) {
    case Method::none: return {1.0, 0.0, 0.0};
    case Method::vanilla: {
      const double s = lambda1 + lambda2;
      return {lambda1 / s, lambda2 / s, 0.0};
    }
    default: return {lambda1, lambda2, lambda3};
  }
}

std::vector<double> DistillConfig::alpha_for(int student_intermediate) const {
  if (alpha.empty()) return std::vector<double>(static_cast<std::size_t>(student_intermediate), 1.0);
  if (static_cast<int>(alpha.size()) != student_intermediate) {
    throw ConfigError("alpha has " + std::to_string(alpha.size()) + " entries, student has " +
                      std::to_string(student_intermediate) + " intermediate layers");
  }
  return alpha;
}

void to_json(nlohmann::json& j, const DistillConfig& c) {
  j = nlohmann::json{{"method", to_string(c.method)},
                     {"lambda", {c.lambda1, c.lambda2, c.lambda3}},
                     {"alpha", c.alpha},
                     {"proj_dim", c.proj_dim},
                     {"temperature", c.temperature},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"patience", c.patience},
                     {"early_stopping", c.early_stopping},
                     {"seed", c.seed},
                     {"per_batch_selection", c.per_batch_selection},
                     {"per_layer_heads", c.per_layer_heads}};
}

void from_json(const nlohmann::json& j, DistillConfig& c) {
  if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
  if (j.contains("lambda")) {
    const auto l = j.at("lambda").get<std::vector<double>>();
    if (l.size() != 3) throw ConfigError("lambda must have three entries");
    c.lambda1 = l[0];
    c.lambda2 = l[1];
    c.lambda3 = l[2];
  }
  c.alpha = j.value("alpha", c.alpha);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  c.temperature = j.value("temperature", c.temperature);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.patience = j.value("patience", c.patience);
  c.early_stopping = j.value("early_stopping", c.early_stopping);
  c.seed = j.value("seed", c.seed);
  c.per_batch_selection = j.value("per_batch_selection", c.per_batch_selection);
  c.per_layer_heads = j.value("per_layer_heads", c.per_layer_heads);
}

ProjectionHead ProjectionHead::layerwise(std::size_t teacher_dim, std::size_t student_dim,
                                         std::size_t width, std::size_t slots, bool per_layer,
                                         std::uint64_t seed) {
  Rng rng(seed);
  ProjectionHead h;
  const std::size_t count = per_layer ? slots : 1;
  for (std::size_t i = 0; i < count; ++i) {
    h.teacher_maps.push_back(random_map(rng, teacher_dim, width));
    h.student_maps.push_back(random_map(rng, student_dim, width));
  }
  return h;
}

ProjectionHead ProjectionHead::concat(std::size_t slots, std::size_t teacher_dim,
                                      std::size_t student_dim, std::size_t width,
                                      std::uint64_t seed) {
  Rng rng(seed);
  ProjectionHead h;
  h.concatenated = true;
  h.teacher_maps.push_back(random_map(rng, slots * teacher_dim, width));
  h.student_maps.push_back(random_map(rng, slots * student_dim, width));
  return h;
}

std::size_t ProjectionHead::width() const {
  if (teacher_maps.empty()) throw ConfigError("projection head is empty");
  return teacher_maps.front().dim(1);
}

const Tensor& ProjectionHead::teacher_map(std::size_t slot) const {
  if (teacher_maps.empty()) throw ConfigError("projection head is empty");
  return teacher_maps.size() == 1 ? teacher_maps.front() : teacher_maps.at(slot);
}

const Tensor& ProjectionHead::student_map(std::size_t slot) const {
  if (student_maps.empty()) throw ConfigError("projection head is empty");
  return student_maps.size() == 1 ? student_maps.front() : student_maps.at(slot);
}

std::vector<Tensor> ProjectionHead::parameters() const {
  std::vector<Tensor> out(teacher_maps);
  out.insert(out.end(), student_maps.begin(), student_maps.end());
  return out;
}

std::vector<NamedTensor> ProjectionHead::named() const {
  std::vector<NamedTensor> out;
  if (concatenated) {
    out.push_back({"proj.concat.teacher", teacher_maps.at(0)});
    out.push_back({"proj.concat.student", student_maps.at(0)});
  } else if (teacher_maps.size() == 1) {
    out.push_back({"proj.teacher", teacher_maps[0]});
    out.push_back({"proj.student", student_maps[0]});
  } else {
    for (std::size_t i = 0; i < teacher_maps.size(); ++i) {
      out.push_back({"proj.teacher." + std::to_string(i + 1), teacher_maps[i]});
      out.push_back({"proj.student." + std::to_string(i + 1), student_maps[i]});
    }
  }
  return out;
}

ProjectionHead ProjectionHead::clone() const {
  ProjectionHead h;
  h.concatenated = concatenated;
  for (const auto& t : teacher_maps) h.teacher_maps.push_back(t.clone());
  for (const auto& t : student_maps) h.student_maps.push_back(t.clone());
  return h;
}

ProjectionHead ProjectionHead::from_checkpoint(const Checkpoint& ckpt) {
  ProjectionHead h;
  if (ckpt.contains("proj.concat.teacher")) {
    h.concatenated = true;
    h.teacher_maps.push_back(ckpt.get("proj.concat.teacher").clone());
    h.student_maps.push_back(ckpt.get("proj.concat.student").clone());
  } else if (ckpt.contains("proj.teacher")) {
    h.teacher_maps.push_back(ckpt.get("proj.teacher").clone());
    h.student_maps.push_back(ckpt.get("proj.student").clone());
  } else {
    for (int i = 1; ckpt.contains("proj.teacher." + std::to_string(i)); ++i) {
      h.teacher_maps.push_back(ckpt.get("proj.teacher." + std::to_string(i)).clone());
      h.student_maps.push_back(ckpt.get("proj.student." + std::to_string(i)).clone());
    }
  }
  if (h.teacher_maps.empty()) throw ConfigError("checkpoint has no projection heads");
  return h;
}

Tensor mean_pool(const Tensor& layer_states) {
  if (layer_states.rank() != 2 && layer_states.rank() != 3) {
    throw DataError("mean_pool expects [L x d] or [B x L x d], got " +
                    shape_str(layer_states.shape()));
  }
  return mean_axis(layer_states, -2);
}

Tensor project_normalize(const Tensor& pooled, const Tensor& map, int layer) {
  if (pooled.dim(-1) != map.dim(0)) {
    throw DimensionError("project_normalize: pooled " + shape_str(pooled.shape()) +
                         " does not fit map " + shape_str(map.shape()));
  }
  try {
    return l2_normalize(linear(pooled, map));
  } catch (const NumericError& e) {
    throw NumericError("degenerate projection for layer " + std::to_string(layer) + ": " + e.what());
  }
}

Tensor rail_layerwise_loss(const Tensor& teacher_proj, const Tensor& student_proj,
                           std::span<const double> alpha) {
  if (teacher_proj.shape() != student_proj.shape() ||
      (teacher_proj.rank() != 2 && teacher_proj.rank() != 3)) {
    throw ContractError("rail_layerwise_loss: teacher " + shape_str(teacher_proj.shape()) +
                        " and student " + shape_str(student_proj.shape()) + " must match");
  }
  const auto k = teacher_proj.dim(-2);
  if (alpha.size() != k) {
    throw ContractError("rail_layerwise_loss: " + std::to_string(k) + " layer pairs but " +
                        std::to_string(alpha.size()) + " alpha weights");
  }
  check_unit_rows(teacher_proj, "rail_layerwise_loss");
  check_unit_rows(student_proj, "rail_layerwise_loss");
  const auto nb = batch_of(teacher_proj);
  const Tensor per_pair = sum_axis(square(sub(teacher_proj, student_proj)), -1);
  std::vector<double> w(nb * k);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = alpha[i % k];
  const Tensor weighted = mul(per_pair, Tensor::from(per_pair.shape(), std::move(w)));
  return scale(sum(weighted), 1.0 / static_cast<double>(nb));
}

Tensor rail_layerwise_loss(std::span<const Tensor> teacher_proj,
                           std::span<const Tensor> student_proj, std::span<const double> alpha) {
  if (teacher_proj.size() != student_proj.size()) {
    throw ContractError("rail_layerwise_loss: " + std::to_string(teacher_proj.size()) +
                        " teacher vectors vs " + std::to_string(student_proj.size()) +
                        " student vectors");
  }
  return rail_layerwise_loss(stack_slots(teacher_proj), stack_slots(student_proj), alpha);
}

Tensor layerwise_ild(std::span<const Tensor> teacher_pooled, std::span<const Tensor> student_pooled,
                     const ProjectionHead& heads, std::span<const double> alpha) {
  if (heads.concatenated) throw ConfigError("layer-wise distillation needs layer-wise heads");
  if (teacher_pooled.size() != student_pooled.size()) {
    throw ContractError("layerwise_ild: " + std::to_string(teacher_pooled.size()) +
                        " teacher layers vs " + std::to_string(student_pooled.size()) +
                        " student layers");
  }
  if (heads.teacher_maps.size() == 1) {
    // One shared pair: project all slots with a single matmul per side.
    return rail_layerwise_loss(project_normalize(stack_slots(teacher_pooled), heads.teacher_map(0)),
                               project_normalize(stack_slots(student_pooled), heads.student_map(0)),
                               alpha);
  }
  std::vector<Tensor> t, s;
  for (std::size_t i = 0; i < teacher_pooled.size(); ++i) {
    t.push_back(project_normalize(teacher_pooled[i], heads.teacher_map(i), static_cast<int>(i) + 1));
    s.push_back(project_normalize(student_pooled[i], heads.student_map(i), static_cast<int>(i) + 1));
  }
  return rail_layerwise_loss(t, s, alpha);
}

Tensor rail_concat_loss(std::span<const Tensor> teacher_pooled,
                        std::span<const Tensor> student_pooled, const ProjectionHead& heads) {
  if (!heads.concatenated) throw ConfigError("rail_concat_loss needs concatenated heads");
  if (teacher_pooled.size() != student_pooled.size() || teacher_pooled.empty()) {
    throw ContractError("rail_concat_loss: layer lists must be non-empty and equally long");
  }
  const Tensor t_cat = concat(teacher_pooled);
  const Tensor s_cat = concat(student_pooled);
  if (t_cat.dim(-1) != heads.teacher_map(0).dim(0) || s_cat.dim(-1) != heads.student_map(0).dim(0)) {
    throw ContractError("rail_concat_loss: concatenated widths " + std::to_string(t_cat.dim(-1)) +
                        "/" + std::to_string(s_cat.dim(-1)) + " do not match heads " +
                        shape_str(heads.teacher_map(0).shape()) + "/" +
                        shape_str(heads.student_map(0).shape()));
  }
  const Tensor t = project_normalize(t_cat, heads.teacher_map(0));
  const Tensor s = project_normalize(s_cat, heads.student_map(0));
  const std::size_t nb = t.rank() == 2 ? t.dim(0) : 1;
  return scale(sum(square(sub(t, s))), 1.0 / static_cast<double>(nb));
}

Tensor pkd_loss(const FixedMapping& mapping, std::span<const Tensor> teacher_pooled_all,
                std::span<const Tensor> student_pooled, const ProjectionHead& heads,
                std::span<const double> alpha) {
  if (mapping.pairs.size() != student_pooled.size()) {
    throw ContractError("pkd_loss: mapping covers " + std::to_string(mapping.pairs.size()) +
                        " student layers, got " + std::to_string(student_pooled.size()));
  }
  std::vector<Tensor> selected;
  for (const auto& [student_layer, teacher_layer] : mapping.pairs) {
    if (teacher_layer < 1 || static_cast<std::size_t>(teacher_layer) > teacher_pooled_all.size()) {
      throw ContractError("pkd_loss: teacher layer " + std::to_string(teacher_layer) +
                          " not available");
    }
    selected.push_back(teacher_pooled_all[static_cast<std::size_t>(teacher_layer - 1)]);
  }
  return layerwise_ild(selected, student_pooled, heads, alpha);
}

Tensor alp_loss(const Tensor& weights, const Tensor& teacher_proj, const Tensor& student_proj) {
  const bool batched = weights.rank() == 3;
  if ((weights.rank() != 2 && !batched) || teacher_proj.rank() != weights.rank() ||
      student_proj.rank() != weights.rank() || weights.dim(-1) != teacher_proj.dim(-2) ||
      weights.dim(-2) != student_proj.dim(-2) || teacher_proj.dim(-1) != student_proj.dim(-1)) {
    throw DimensionError("alp_loss: weights " + shape_str(weights.shape()) + ", teacher " +
                         shape_str(teacher_proj.shape()) + ", student " +
                         shape_str(student_proj.shape()) + " are inconsistent");
  }
  const auto n = weights.dim(-1);
  auto w = weights.data();
  for (std::size_t r = 0; r < weights.numel() / n; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(w[r * n + j] >= 0.0)) throw ContractError("alp_loss: negative attention weight");
      total += w[r * n + j];
    }
    if (std::abs(total - 1.0) > kStochasticTol) {
      throw ContractError("alp_loss: attention row " + std::to_string(r) + " sums to " +
                          std::to_string(total));
    }
  }
  const Tensor targets = batched ? bmm(weights, teacher_proj) : matmul(weights, teacher_proj);
  const std::size_t nb = batched ? weights.dim(0) : 1;
  return scale(sum(square(sub(targets, student_proj))), 1.0 / static_cast<double>(nb));
}

AlpTerm alp_ild(std::span<const Tensor> teacher_pooled_all, std::span<const Tensor> student_pooled,
                const ProjectionHead& heads) {
  if (heads.concatenated || heads.teacher_maps.size() != 1) {
    throw ConfigError("ALP-KD uses one shared layer-wise projection pair");
  }
  const Tensor t = project_normalize(stack_slots(teacher_pooled_all), heads.teacher_map(0));
  const Tensor s = project_normalize(stack_slots(student_pooled), heads.student_map(0));
  const bool batched = t.rank() == 3;
  const Tensor tb = batched ? t : reshape(t, {1, t.dim(0), t.dim(1)});
  const Tensor sb = batched ? s : reshape(s, {1, s.dim(0), s.dim(1)});
  const Tensor weights = alp_attention(sb, tb);
  return {alp_loss(weights, tb, sb), weights};
}

Tensor kd_logits_loss(const Tensor& teacher_logits, const Tensor& student_logits,
                      double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("kd temperature must be positive");
  if (teacher_logits.shape() != student_logits.shape()) {
    throw DimensionError("kd_logits_loss: teacher " + shape_str(teacher_logits.shape()) +
                         " vs student " + shape_str(student_logits.shape()));
  }
  const auto c = student_logits.dim(-1);
  const auto rows = student_logits.numel() / c;
  // Teacher probabilities and their entropy term are constants.
  const Tensor p = softmax(scale(teacher_logits.detach(), 1.0 / temperature));
  double plogp = 0.0;
  for (double v : p.data()) {
    if (v > 0.0) plogp += v * std::log(v);
  }
  const Tensor cross = sum(mul(p, log_softmax(scale(student_logits, 1.0 / temperature))));
  const Tensor kl = scale(add_scalar(scale(cross, -1.0), plogp), 1.0 / static_cast<double>(rows));
  return scale(kl, temperature * temperature);
}

Tensor ce_loss(const Tensor& logits, std::span<const int> labels) {
  const Tensor x = logits.rank() == 1 ? reshape(logits, {1, logits.dim(0)}) : logits;
  if (x.rank() != 2 || x.dim(0) != labels.size()) {
    throw DimensionError("ce_loss: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  return scale(sum(pick(log_softmax(x), labels)), -1.0 / static_cast<double>(labels.size()));
}

Tensor mse_loss(const Tensor& prediction, std::span<const double> targets) {
  if (prediction.numel() != targets.size()) {
    throw DimensionError("mse_loss: " + std::to_string(prediction.numel()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
  }
  for (double t : targets) {
    if (!std::isfinite(t)) throw DataError("mse_loss: non-finite target");
  }
  const Tensor target = Tensor::from(prediction.shape(), {targets.begin(), targets.end()});
  return scale(sum(square(sub(prediction, target))), 1.0 / static_cast<double>(targets.size()));
}

Tensor total_loss(const Tensor& ce, const Tensor& kd, const Tensor& ild, const DistillConfig& config) {
  config.validate();
  const auto w = config.effective_weights();
  Tensor out = scale(ce, w.ce);
  if (w.kd > 0.0) {
    if (!kd.defined()) throw ContractError("total_loss: KD term missing");
    out = add(out, scale(kd, w.kd));
  }
  if (w.ild > 0.0) {
    if (!ild.defined()) throw ContractError("total_loss: ILD term missing");
    out = add(out, scale(ild, w.ild));
  }
  return out;
}

double total_loss(double ce, double kd, double ild, const DistillConfig& config) {
  config.validate();
  const auto w = config.effective_weights();
  return w.ce * ce + w.kd * kd + w.ild * ild;
}

}  // namespace railkd
