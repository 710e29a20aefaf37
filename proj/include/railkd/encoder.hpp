#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "railkd/checkpoint.hpp"
#include "railkd/tensor.hpp"

namespace railkd {

enum class TaskKind { classification, regression };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct EncoderConfig {
  int num_layers = 4;
  int hidden_dim = 32;
  int num_heads = 4;
  int ff_dim = 64;
  int vocab_size = 32;
  int max_len = 32;
  /// 1 for regression.
  int num_classes = 2;
  TaskKind task_kind = TaskKind::classification;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  static EncoderConfig teacher_default();
  static EncoderConfig student_default();

  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Layers eligible for intermediate distillation: 1 .. num_layers-1.
int count_intermediate(const EncoderConfig& config);

struct BlockParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  Tensor ln2_gain, ln2_bias;
};

struct EncoderParams {
  EncoderConfig config;
  Tensor token_embedding;     // [vocab x d]
  Tensor position_embedding;  // [max_len x d]
  Tensor embed_ln_gain, embed_ln_bias;
  std::vector<BlockParams> blocks;
  Tensor classifier_w, classifier_b;  // [d x C], [C]

  /// Stable, ordered parameter list ("layer3.attn.wq", ...). Handles share
  /// storage with the fields above.
  std::vector<NamedTensor> named() const;
  std::vector<Tensor> parameters() const;

  /// Deep copy.
  EncoderParams clone() const;
  void set_trainable(bool trainable);
};

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Per-layer outputs of one forward pass. per_layer[i - 1] is the output of
/// block i, so layer indices used elsewhere are 1-based.
struct HiddenStates {
  std::vector<Tensor> per_layer;  // [L x d] or [B x L x d]
  Tensor logits;                  // [C] or [B x C]

  const Tensor& layer(int index) const;
};

/// Single sequence.
HiddenStates forward(const EncoderParams& params, std::span<const int> tokens);
/// Batch of equal-length sequences.
HiddenStates forward_batch(const EncoderParams& params,
                           const std::vector<std::vector<int>>& batch);

Checkpoint encoder_checkpoint(const EncoderParams& params);
/// Reads the encoder tensors from a checkpoint; other entries are ignored.
EncoderParams encoder_from_checkpoint(const Checkpoint& ckpt);

void save_encoder(const std::filesystem::path& path, const EncoderParams& params,
                  const nlohmann::json& extra_meta = nlohmann::json::object());
EncoderParams load_encoder(const std::filesystem::path& path);

}  // namespace railkd
