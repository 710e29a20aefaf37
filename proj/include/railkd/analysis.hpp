#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "railkd/data.hpp"
#include "railkd/encoder.hpp"
#include "railkd/losses.hpp"
#include "railkd/train.hpp"

namespace railkd {

/// Plain string table; every report converts to one for CSV export.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool operator==(const Table&) const = default;
};

/// %.17g, so a parsed cell round-trips to the same double.
std::string format_number(double value);

std::string to_csv(const Table& table);
Table parse_csv(const std::string& text);
/// Throws IoError when the file cannot be written.
void export_csv(const std::filesystem::path& path, const Table& table);
Table read_csv(const std::filesystem::path& path);

/// Mean-pooled intermediate layers 1..L-1 over `samples`, one [N x d]
/// tensor per layer, rows in sample order.
std::vector<Tensor> pooled_states(const EncoderParams& params, std::span<const Example> samples);

/// Rows are student layers 1..m-1, columns teacher layers 1..n-1.
struct CosineMatrix {
  std::vector<int> student_layers;
  std::vector<int> teacher_layers;
  std::vector<double> values;  // row-major

  double at(int student_layer, int teacher_layer) const;
  /// Sub-matrix over the given layer ids (unknown ids are a ContractError).
  CosineMatrix filtered(std::span<const int> students, std::span<const int> teachers) const;
  /// Mean over (student_layer, teacher_layer) pairs.
  double mean_over(std::span<const std::pair<int, int>> pairs) const;
  Table to_table() const;
};

/// Entry (i, j) is the sample mean of cos(P_t h_t[j], P_s h_s[i]), using the
/// student slot i heads. Concatenated or missing heads are a ConfigError.
CosineMatrix cosine_from_pooled(std::span<const Tensor> teacher_pooled,
                                std::span<const Tensor> student_pooled, const ProjectionHead& heads);
CosineMatrix layer_cosine_matrix(const EncoderParams& teacher, const EncoderParams& student,
                                 const ProjectionHead& heads, std::span<const Example> samples);

/// Pairs a student layer with the teacher layer a skip mapping assigns it.
std::vector<std::pair<int, int>> skip_pairs(int teacher_intermediate, int student_intermediate);

struct Heatmap {
  std::size_t rows = 0;  // student intermediate layers
  std::size_t cols = 0;  // teacher intermediate layers
  std::vector<double> values;
  /// Largest column share of total attention mass.
  double max_column_mass = 0.0;
  int max_column = 0;  // 1-based teacher layer
  /// Average over rows of the largest weight in the row.
  double mean_row_max = 0.0;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  Table to_table() const;
};

Heatmap heatmap_from_weights(const AlpWeights& averaged);

/// ALP attention weights averaged over `samples`. Runs of any other method
/// raise MethodError.
Heatmap attention_heatmap(const RunManifest& run, const EncoderParams& teacher,
                          const EncoderParams& student, const ProjectionHead& heads,
                          std::span<const Example> samples);

struct TimingRow {
  std::string method;
  int teacher_layers = 0;
  std::size_t measured_epochs = 0;
  double median_epoch_seconds = 0.0;
  /// Against vanilla at the same teacher depth, when measured.
  std::optional<double> ratio_vs_vanilla;
};

struct TimingReport {
  std::vector<TimingRow> rows;

  const TimingRow& row(const std::string& method, int teacher_layers) const;
  double ratio(const std::string& method, const std::string& baseline, int teacher_layers) const;
  Table to_table() const;
};

/// Groups manifests by (method, teacher depth) and takes the median of the
/// per-epoch training seconds, discarding each run's first epoch. Needs two
/// or more methods, each with at least three measured epochs.
TimingReport timing_report(std::span<const RunManifest> runs);

/// One row per method: dev/test/ood mean and sample stddev.
Table seed_table(std::span<const SeedSummary> summaries);

/// Binary PGM (P5), `cell` pixels per matrix entry, linear in [lo, hi].
void write_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
               std::span<const double> values, double lo, double hi, int cell = 16);

}  // namespace railkd
