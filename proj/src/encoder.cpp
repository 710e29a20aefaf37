#include "railkd/encoder.hpp"

#include <cmath>
#include <numeric>

#include "railkd/errors.hpp"
#include "railkd/ops.hpp"
#include "railkd/rng.hpp"

namespace railkd {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;

template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  f("embed.token", p.token_embedding);
  f("embed.position", p.position_embedding);
  f("embed.ln.gain", p.embed_ln_gain);
  f("embed.ln.bias", p.embed_ln_bias);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "layer" + std::to_string(i + 1) + ".";
    f(pre + "attn.wq", b.wq);
    f(pre + "attn.bq", b.bq);
    f(pre + "attn.wk", b.wk);
    f(pre + "attn.bk", b.bk);
    f(pre + "attn.wv", b.wv);
    f(pre + "attn.bv", b.bv);
    f(pre + "attn.wo", b.wo);
    f(pre + "attn.bo", b.bo);
    f(pre + "ln1.gain", b.ln1_gain);
    f(pre + "ln1.bias", b.ln1_bias);
    f(pre + "ff1.w", b.ff1_w);
    f(pre + "ff1.b", b.ff1_b);
    f(pre + "ff2.w", b.ff2_w);
    f(pre + "ff2.b", b.ff2_b);
    f(pre + "ln2.gain", b.ln2_gain);
    f(pre + "ln2.bias", b.ln2_bias);
  }
  f("classifier.w", p.classifier_w);
  f("classifier.b", p.classifier_b);
}

Tensor gaussian(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  return gaussian(rng, {fan_in, fan_out}, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

std::size_t as_size(int v) { return static_cast<std::size_t>(v); }

Tensor self_attention(const BlockParams& b, const Tensor& x, std::size_t batch, std::size_t len,
                      std::size_t d, std::size_t heads) {
  const std::size_t dk = d / heads;
  static constexpr std::size_t kSplit[] = {0, 2, 1, 3};
  auto split = [&](const Tensor& t) {
    return reshape(permute(reshape(t, {batch, len, heads, dk}), kSplit), {batch * heads, len, dk});
  };
  const Tensor q = split(linear(x, b.wq, b.bq));
  const Tensor k = split(linear(x, b.wk, b.bk));
  const Tensor v = split(linear(x, b.wv, b.bv));
  const Tensor scores = scale(bmm(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  const Tensor context = bmm(softmax(scores), v);
  const Tensor merged =
      reshape(permute(reshape(context, {batch, heads, len, dk}), kSplit), {batch, len, d});
  return linear(merged, b.wo, b.bo);
}

}  // namespace

std::string to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "regression";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "classification") return TaskKind::classification;
  if (name == "regression") return TaskKind::regression;
  throw ConfigError("unknown task kind '" + name + "'");
}

void EncoderConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("encoder config: " + what);
  };
  require(num_layers >= 2, "num_layers must be >= 2");
  require(hidden_dim > 0 && num_heads > 0 && ff_dim > 0, "dimensions must be positive");
  require(hidden_dim % num_heads == 0, "hidden_dim must be divisible by num_heads");
  require(vocab_size > 0 && max_len > 0, "vocab_size and max_len must be positive");
  require(num_classes > 0, "num_classes must be positive");
  require(task_kind == TaskKind::classification || num_classes == 1,
          "regression encoders have exactly one output");
}

EncoderConfig EncoderConfig::teacher_default() {
  EncoderConfig c;
  c.num_layers = 8;
  c.hidden_dim = 64;
  c.num_heads = 4;
  c.ff_dim = 128;
  return c;
}

EncoderConfig EncoderConfig::student_default() {
  EncoderConfig c;
  c.num_layers = 4;
  c.hidden_dim = 32;
  c.num_heads = 4;
  c.ff_dim = 64;
  return c;
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers}, {"hidden_dim", c.hidden_dim},
                     {"num_heads", c.num_heads},   {"ff_dim", c.ff_dim},
                     {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
                     {"num_classes", c.num_classes}, {"task_kind", to_string(c.task_kind)}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.num_layers = j.value("num_layers", c.num_layers);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("task_kind")) c.task_kind = task_kind_from_string(j.at("task_kind").get<std::string>());
}

int count_intermediate(const EncoderConfig& config) { return config.num_layers - 1; }

std::vector<NamedTensor> EncoderParams::named() const {
  std::vector<NamedTensor> out;
  visit_params(*this, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<Tensor> EncoderParams::parameters() const {
  std::vector<Tensor> out;
  visit_params(*this, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

EncoderParams EncoderParams::clone() const {
  EncoderParams copy = *this;
  visit_params(copy, [](const std::string&, Tensor& t) { t = t.clone(); });
  return copy;
}

void EncoderParams::set_trainable(bool trainable) {
  visit_params(*this, [trainable](const std::string&, Tensor& t) { t.set_requires_grad(trainable); });
}

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, kInitStream));
  const auto d = as_size(config.hidden_dim);
  const auto ff = as_size(config.ff_dim);
  EncoderParams p;
  p.config = config;
  p.token_embedding = gaussian(rng, {as_size(config.vocab_size), d}, 1.0);
  p.position_embedding = gaussian(rng, {as_size(config.max_len), d}, 1.0);
  p.embed_ln_gain = Tensor::full({d}, 1.0, true);
  p.embed_ln_bias = Tensor::zeros({d}, true);
  for (int i = 0; i < config.num_layers; ++i) {
    BlockParams b;
    b.wq = xavier(rng, d, d);
    b.bq = Tensor::zeros({d}, true);
    b.wk = xavier(rng, d, d);
    b.bk = Tensor::zeros({d}, true);
    b.wv = xavier(rng, d, d);
    b.bv = Tensor::zeros({d}, true);
    b.wo = xavier(rng, d, d);
    b.bo = Tensor::zeros({d}, true);
    b.ln1_gain = Tensor::full({d}, 1.0, true);
    b.ln1_bias = Tensor::zeros({d}, true);
    b.ff1_w = xavier(rng, d, ff);
    b.ff1_b = Tensor::zeros({ff}, true);
    b.ff2_w = xavier(rng, ff, d);
    b.ff2_b = Tensor::zeros({d}, true);
    b.ln2_gain = Tensor::full({d}, 1.0, true);
    b.ln2_bias = Tensor::zeros({d}, true);
    p.blocks.push_back(std::move(b));
  }
  p.classifier_w = xavier(rng, d, as_size(config.num_classes));
  p.classifier_b = Tensor::zeros({as_size(config.num_classes)}, true);
  return p;
}

const Tensor& HiddenStates::layer(int index) const {
  if (index < 1 || index > static_cast<int>(per_layer.size())) {
    throw ContractError("layer index " + std::to_string(index) + " outside [1, " +
                        std::to_string(per_layer.size()) + "]");
  }
  return per_layer[static_cast<std::size_t>(index - 1)];
}

HiddenStates forward_batch(const EncoderParams& params, const std::vector<std::vector<int>>& batch) {
  const auto& cfg = params.config;
  if (batch.empty()) throw DataError("forward: empty batch");
  const std::size_t len = batch.front().size();
  if (len == 0) throw DataError("forward: empty token sequence");
  if (len > as_size(cfg.max_len)) {
    throw DataError("forward: sequence length " + std::to_string(len) + " exceeds max_len " +
                    std::to_string(cfg.max_len));
  }
  const std::size_t nb = batch.size();
  const auto d = as_size(cfg.hidden_dim);
  std::vector<int> ids;
  std::vector<int> positions;
  ids.reserve(nb * len);
  positions.reserve(nb * len);
  for (const auto& seq : batch) {
    if (seq.size() != len) throw DataError("forward: batch sequences must share one length");
    for (std::size_t t = 0; t < len; ++t) {
      if (seq[t] < 0 || seq[t] >= cfg.vocab_size) {
        throw DataError("forward: token id " + std::to_string(seq[t]) + " outside [0, " +
                        std::to_string(cfg.vocab_size) + ")");
      }
      ids.push_back(seq[t]);
      positions.push_back(static_cast<int>(t));
    }
  }

  Tensor x = add(embedding(params.token_embedding, ids), embedding(params.position_embedding, positions));
  x = reshape(layer_norm(x, params.embed_ln_gain, params.embed_ln_bias), {nb, len, d});

  HiddenStates out;
  out.per_layer.reserve(params.blocks.size());
  const auto heads = as_size(cfg.num_heads);
  for (const auto& b : params.blocks) {
    x = layer_norm(add(x, self_attention(b, x, nb, len, d, heads)), b.ln1_gain, b.ln1_bias);
    const Tensor ff = linear(gelu(linear(x, b.ff1_w, b.ff1_b)), b.ff2_w, b.ff2_b);
    x = layer_norm(add(x, ff), b.ln2_gain, b.ln2_bias);
    out.per_layer.push_back(x);
  }
  out.logits = linear(mean_axis(x, 1), params.classifier_w, params.classifier_b);
  return out;
}

HiddenStates forward(const EncoderParams& params, std::span<const int> tokens) {
  HiddenStates batched =
      forward_batch(params, {std::vector<int>(tokens.begin(), tokens.end())});
  HiddenStates out;
  for (const auto& h : batched.per_layer) out.per_layer.push_back(reshape(h, {h.dim(1), h.dim(2)}));
  out.logits = reshape(batched.logits, {batched.logits.dim(1)});
  return out;
}

Checkpoint encoder_checkpoint(const EncoderParams& params) {
  Checkpoint ckpt;
  ckpt.meta["encoder"] = params.config;
  ckpt.tensors = params.named();
  return ckpt;
}

EncoderParams encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("encoder")) throw DataError("checkpoint carries no encoder config");
  EncoderConfig config;
  try {
    config = ckpt.meta.at("encoder").get<EncoderConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad encoder config in checkpoint: " + std::string(e.what()));
  }
  EncoderParams p = init_encoder(config, 0);
  visit_params(p, [&](const std::string& name, Tensor& t) {
    const Tensor& stored = ckpt.get(name);
    if (stored.shape() != t.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(stored.shape()) +
                      ", expected " + shape_str(t.shape()));
    }
    t = stored.clone();
    t.set_requires_grad(true);
  });
  return p;
}

void save_encoder(const std::filesystem::path& path, const EncoderParams& params,
                  const nlohmann::json& extra_meta) {
  Checkpoint ckpt = encoder_checkpoint(params);
  for (const auto& [k, v] : extra_meta.items()) ckpt.meta[k] = v;
  save_checkpoint(path, ckpt);
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  return encoder_from_checkpoint(load_checkpoint(path));
}

}  // namespace railkd
