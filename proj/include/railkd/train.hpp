#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "railkd/data.hpp"
#include "railkd/encoder.hpp"
#include "railkd/losses.hpp"
#include "railkd/mapping.hpp"

namespace railkd {

struct EpochRecord {
  int epoch = 0;
  /// Teacher layers used this epoch (RAIL methods, per-epoch mode).
  std::optional<std::vector<int>> selection;
  double ce = 0.0, kd = 0.0, ild = 0.0, total = 0.0;  // epoch means
  double dev_metric = 0.0;
  double train_seconds = 0.0;  // optimization only, dev evaluation excluded
  double wall_seconds = 0.0;   // cumulative since the run started
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double ce = 0.0, kd = 0.0, ild = 0.0, total = 0.0;
};

struct RunManifest {
  nlohmann::json config;
  std::string method;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  std::vector<LayerSelection> selections;
  int best_epoch = 0;
  double best_dev = 0.0;
  double test_metric = 0.0;
  std::optional<double> ood_metric;

  /// Wall-clock fields are omitted when include_timing is false, which makes
  /// two runs with identical seeds compare equal.
  nlohmann::json to_json(bool include_timing = true) const;
  static RunManifest from_json(const nlohmann::json& j);

  /// {"epoch":..,"indices":[..],"seed":..} per line.
  std::string selections_jsonl() const;
  /// step,epoch,L_CE,L_KD,L_ILD,total
  std::string steps_csv() const;
};

/// Accuracy x 100 for classification, Pearson correlation x 100 for
/// regression.
double evaluate(const EncoderParams& params, std::span<const Example> examples);

/// Frozen-teacher outputs for a fixed example list: mean-pooled
/// intermediate layers and logits. The teacher has no stochastic layers, so
/// these equal what a per-step teacher forward pass would produce.
struct TeacherCache {
  std::size_t count = 0;
  std::size_t layers = 0;  // intermediate layers, n - 1
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<double> pooled;  // [count][layers][dim]
  std::vector<double> logits;  // [count][classes]

  /// [B x dim] for teacher layer `layer` (1-based).
  Tensor pooled_batch(std::span<const std::size_t> rows, int layer) const;
  Tensor logits_batch(std::span<const std::size_t> rows) const;
};

TeacherCache build_teacher_cache(const EncoderParams& teacher, std::span<const Example> examples);

/// Index batches over equal-length examples, order shuffled by `rng`.
std::vector<std::vector<std::size_t>> make_batches(std::span<const Example> examples,
                                                   std::size_t batch_size, Rng& rng);

struct DistillResult {
  RunManifest manifest;
  EncoderParams student;
  /// Empty for none / vanilla.
  ProjectionHead heads;
};

struct DistillOptions {
  /// Reused across runs that share a teacher and training set.
  std::shared_ptr<const TeacherCache> teacher_cache;
  /// Called after each epoch (progress output).
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains a fresh student against a frozen teacher with the configured
/// method, early-stops on dev and restores the best-dev checkpoint.
DistillResult distill(const EncoderParams& teacher, const EncoderConfig& student_config,
                      const DistillConfig& config, const TaskData& task,
                      const DistillOptions& options = {});

struct TeacherResult {
  EncoderParams params;
  RunManifest manifest;
};

/// CE-only training (method none is forced).
TeacherResult train_teacher(const TaskData& task, const EncoderConfig& config,
                            const DistillConfig& training);

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::size_t count = 0;
};

MetricSummary summarize(std::span<const double> values);

struct SeedSummary {
  std::string method;
  MetricSummary dev;
  MetricSummary test;
  std::optional<MetricSummary> ood;
  std::vector<RunManifest> runs;
};

/// Runs `experiment` once per seed (up to `workers` at a time; 0 means one
/// per hardware thread) and aggregates dev/test/ood metrics.
SeedSummary run_seeds(const std::function<RunManifest(std::uint64_t)>& experiment,
                      std::span<const std::uint64_t> seeds, unsigned workers = 0);

}  // namespace railkd
