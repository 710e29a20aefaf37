#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "railkd/encoder.hpp"

namespace railkd {

/// Reserved token ids; content tokens are kFirstContentToken .. vocab-1.
inline constexpr int kPadToken = 0;
inline constexpr int kSepToken = 1;
inline constexpr int kFirstContentToken = 2;

struct Example {
  std::vector<int> tokens;
  /// Class index for classification tasks, target for regression.
  double label = 0.0;

  int class_label() const { return static_cast<int>(label); }
  bool operator==(const Example&) const = default;
};

enum class TaskType {
  single,     // planted-motif detection
  pair,       // is segment B an ordered subsequence of segment A
  regression  // Jaccard overlap of the two segments
};

std::string to_string(TaskType type);
TaskType task_type_from_string(const std::string& name);

struct TaskSpec {
  std::string name = "motif";
  TaskType kind = TaskType::single;
  int vocab_size = 32;
  int seq_len = 16;
  int num_classes = 2;
  int train_size = 1000;
  int dev_size = 300;
  int test_size = 300;
  int ood_size = 400;
  std::uint64_t seed = 0;
  /// Motif length (single-sentence task).
  int motif_len = 3;
  /// Fraction of in-domain negatives that are high-overlap counterexamples
  /// (scrambled motif / scrambled subsequence). The OOD split uses 1.0.
  double distractor_rate = 0.25;

  void validate() const;
  TaskKind encoder_kind() const;
  /// Built-in presets: "motif", "pair", "regression".
  static TaskSpec preset(const std::string& name);
};

void to_json(nlohmann::json& j, const TaskSpec& s);
void from_json(const nlohmann::json& j, TaskSpec& s);

struct TaskData {
  TaskSpec spec;
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
  /// Empty unless generated or loaded.
  std::vector<Example> ood;
};

/// Deterministic in spec.seed; train/dev/test are pairwise disjoint.
TaskData gen_task(const TaskSpec& spec);
/// Same labeling rule, reversed token marginals, every negative a
/// counterexample to the in-domain overlap shortcut.
std::vector<Example> gen_ood_variant(const TaskSpec& spec);

/// The motif planted by the single-sentence generator for this spec.
std::vector<int> task_motif(const TaskSpec& spec);
/// Recomputes the label of a token sequence from the task's rule.
double oracle_label(const TaskSpec& spec, std::span<const int> tokens);

/// Unigram distribution over the vocabulary (counts normalized).
std::vector<double> token_histogram(std::span<const Example> examples, int vocab_size);

/// One JSON object per line: {"tokens":[...],"label":int|float}.
void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples, TaskType kind);
/// Without a spec only syntax is checked; with one, tokens and labels are
/// validated against its bounds.
std::vector<Example> load_jsonl(const std::filesystem::path& path,
                                const std::optional<TaskSpec>& spec = std::nullopt);

/// Directory with task.json and train/dev/test(/ood).jsonl.
void save_task_dir(const std::filesystem::path& dir, const TaskData& data);
TaskData load_task_dir(const std::filesystem::path& dir);

}  // namespace railkd
