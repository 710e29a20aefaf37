#include "railkd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "railkd/errors.hpp"
#include "railkd/ops.hpp"

namespace railkd {

namespace {

bool needs_quotes(const std::string& cell) {
  return cell.find_first_of(",\"\r\n") != std::string::npos;
}

void write_cell(std::ostringstream& os, const std::string& cell) {
  if (!needs_quotes(cell)) {
    os << cell;
    return;
  }
  os << '"';
  for (char c : cell) {
    if (c == '"') os << '"';
    os << c;
  }
  os << '"';
}

std::size_t index_of(std::span<const int> ids, int id, const char* what) {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) {
    throw ContractError(std::string(what) + " layer " + std::to_string(id) + " not in matrix");
  }
  return static_cast<std::size_t>(it - ids.begin());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int teacher_depth(const RunManifest& run) {
  if (run.config.contains("teacher")) return run.config["teacher"].value("num_layers", 0);
  return 0;
}

}  // namespace

std::string format_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string to_csv(const Table& table) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      write_cell(os, cells[i]);
    }
    os << "\r\n";
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  return os.str();
}

Table parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string cell;
  bool quoted = false, cell_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      cell_started = true;
    } else if (c == ',') {
      record.push_back(std::move(cell));
      cell.clear();
      cell_started = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      record.push_back(std::move(cell));
      records.push_back(std::move(record));
      record.clear();
      cell.clear();
      cell_started = false;
    } else {
      cell += c;
      cell_started = true;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted cell");
  if (cell_started || !cell.empty() || !record.empty()) {
    record.push_back(std::move(cell));
    records.push_back(std::move(record));
  }
  Table t;
  if (records.empty()) return t;
  t.header = std::move(records.front());
  t.rows.assign(std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
  return t;
}

void export_csv(const std::filesystem::path& path, const Table& table) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_csv(table);
  if (!os) throw IoError("write failed: " + path.string());
}

Table read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_csv(ss.str());
}

std::vector<Tensor> pooled_states(const EncoderParams& params, std::span<const Example> samples) {
  if (samples.empty()) throw DataError("no samples to pool");
  NoGradGuard no_grad;
  const auto layers = static_cast<std::size_t>(count_intermediate(params.config));
  const auto d = static_cast<std::size_t>(params.config.hidden_dim);
  std::vector<std::vector<double>> out(layers, std::vector<double>(samples.size() * d));
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[samples[i].tokens.size()].push_back(i);
  for (const auto& [len, rows] : groups) {
    std::vector<std::vector<int>> tokens;
    for (auto r : rows) tokens.push_back(samples[r].tokens);
    const HiddenStates hs = forward_batch(params, tokens);
    for (std::size_t l = 0; l < layers; ++l) {
      const Tensor pooled = mean_pool(hs.layer(static_cast<int>(l + 1)));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(pooled.data().data() + i * d, d, out[l].data() + rows[i] * d);
      }
    }
  }
  std::vector<Tensor> result;
  for (auto& v : out) result.push_back(Tensor::from({samples.size(), d}, std::move(v)));
  return result;
}

double CosineMatrix::at(int student_layer, int teacher_layer) const {
  return values[index_of(student_layers, student_layer, "student") * teacher_layers.size() +
                index_of(teacher_layers, teacher_layer, "teacher")];
}

CosineMatrix CosineMatrix::filtered(std::span<const int> students, std::span<const int> teachers) const {
  CosineMatrix out{{students.begin(), students.end()}, {teachers.begin(), teachers.end()}, {}};
  for (int s : students) {
    for (int t : teachers) out.values.push_back(at(s, t));
  }
  return out;
}

double CosineMatrix::mean_over(std::span<const std::pair<int, int>> pairs) const {
  if (pairs.empty()) throw ContractError("mean_over: no layer pairs");
  double total = 0.0;
  for (const auto& [s, t] : pairs) total += at(s, t);
  return total / static_cast<double>(pairs.size());
}

Table CosineMatrix::to_table() const {
  Table t;
  t.header.push_back("student_layer");
  for (int j : teacher_layers) t.header.push_back("teacher_" + std::to_string(j));
  for (std::size_t i = 0; i < student_layers.size(); ++i) {
    std::vector<std::string> row{std::to_string(student_layers[i])};
    for (std::size_t j = 0; j < teacher_layers.size(); ++j) {
      row.push_back(format_number(values[i * teacher_layers.size() + j]));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

CosineMatrix cosine_from_pooled(std::span<const Tensor> teacher_pooled,
                                std::span<const Tensor> student_pooled, const ProjectionHead& heads) {
  if (heads.teacher_maps.empty() || heads.student_maps.empty()) {
    throw ConfigError("cosine matrix needs trained projection heads");
  }
  if (heads.concatenated) {
    throw ConfigError("cosine matrix needs layer-wise heads; concatenated heads mix all layers");
  }
  if (teacher_pooled.empty() || student_pooled.empty()) throw DataError("no layers to compare");
  NoGradGuard no_grad;
  CosineMatrix out;
  const auto n = teacher_pooled.size(), m = student_pooled.size();
  for (std::size_t j = 1; j <= n; ++j) out.teacher_layers.push_back(static_cast<int>(j));
  for (std::size_t i = 1; i <= m; ++i) out.student_layers.push_back(static_cast<int>(i));
  out.values.assign(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t slot = heads.teacher_maps.size() == 1 ? 0 : i;
    const Tensor s = project_normalize(student_pooled[i], heads.student_map(slot),
                                       static_cast<int>(i + 1));
    const auto rows = s.dim(0), u = s.dim(1);
    for (std::size_t j = 0; j < n; ++j) {
      const Tensor t = project_normalize(teacher_pooled[j], heads.teacher_map(slot),
                                         static_cast<int>(j + 1));
      if (t.dim(0) != rows) throw DimensionError("teacher and student sample counts differ");
      double total = 0.0;
      auto sd = s.data(), td = t.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t k = 0; k < u; ++k) dot += sd[r * u + k] * td[r * u + k];
        total += std::clamp(dot, -1.0, 1.0);
      }
      out.values[i * n + j] = total / static_cast<double>(rows);
    }
  }
  return out;
}

CosineMatrix layer_cosine_matrix(const EncoderParams& teacher, const EncoderParams& student,
                                 const ProjectionHead& heads, std::span<const Example> samples) {
  if (heads.teacher_maps.empty()) throw ConfigError("cosine matrix needs trained projection heads");
  const auto t = pooled_states(teacher, samples);
  const auto s = pooled_states(student, samples);
  return cosine_from_pooled(t, s, heads);
}

std::vector<std::pair<int, int>> skip_pairs(int teacher_intermediate, int student_intermediate) {
  const auto mapping = fixed_mapping(teacher_intermediate, student_intermediate, MappingScheme::skip);
  return mapping.pairs;
}

Table Heatmap::to_table() const {
  Table t;
  t.header.push_back("student_layer");
  for (std::size_t j = 1; j <= cols; ++j) t.header.push_back("teacher_" + std::to_string(j));
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<std::string> row{std::to_string(i + 1)};
    for (std::size_t j = 0; j < cols; ++j) row.push_back(format_number(at(i, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Heatmap heatmap_from_weights(const AlpWeights& averaged) {
  averaged.validate(1e-6);
  Heatmap h{averaged.rows, averaged.cols, averaged.weights};
  std::vector<double> column(h.cols, 0.0);
  for (std::size_t i = 0; i < h.rows; ++i) {
    double row_max = 0.0;
    for (std::size_t j = 0; j < h.cols; ++j) {
      column[j] += h.at(i, j);
      row_max = std::max(row_max, h.at(i, j));
    }
    h.mean_row_max += row_max;
  }
  h.mean_row_max /= static_cast<double>(h.rows);
  const auto best = std::max_element(column.begin(), column.end());
  h.max_column = static_cast<int>(best - column.begin()) + 1;
  h.max_column_mass = *best / static_cast<double>(h.rows);
  return h;
}

Heatmap attention_heatmap(const RunManifest& run, const EncoderParams& teacher,
                          const EncoderParams& student, const ProjectionHead& heads,
                          std::span<const Example> samples) {
  if (run.method != to_string(Method::alp)) {
    throw MethodError("attention heatmap needs an alp run, got method '" + run.method + "'");
  }
  NoGradGuard no_grad;
  const auto t = pooled_states(teacher, samples);
  const auto s = pooled_states(student, samples);
  const Tensor w = alp_ild(t, s, heads).weights;  // [N x k x n]
  const Tensor avg = mean_axis(w, 0);
  return heatmap_from_weights(AlpWeights::from_tensor(avg));
}

const TimingRow& TimingReport::row(const std::string& method, int teacher_layers) const {
  for (const auto& r : rows) {
    if (r.method == method && r.teacher_layers == teacher_layers) return r;
  }
  throw ContractError("no timing for " + method + " at teacher depth " + std::to_string(teacher_layers));
}

double TimingReport::ratio(const std::string& method, const std::string& baseline,
                           int teacher_layers) const {
  return row(method, teacher_layers).median_epoch_seconds /
         row(baseline, teacher_layers).median_epoch_seconds;
}

Table TimingReport::to_table() const {
  Table t{{"method", "teacher_layers", "measured_epochs", "median_epoch_seconds", "ratio_vs_vanilla"},
          {}};
  for (const auto& r : rows) {
    t.rows.push_back({r.method, std::to_string(r.teacher_layers), std::to_string(r.measured_epochs),
                      format_number(r.median_epoch_seconds),
                      r.ratio_vs_vanilla ? format_number(*r.ratio_vs_vanilla) : ""});
  }
  return t;
}

TimingReport timing_report(std::span<const RunManifest> runs) {
  std::map<std::pair<int, std::string>, std::vector<double>> samples;
  std::vector<std::pair<int, std::string>> order;
  for (const auto& run : runs) {
    const auto key = std::make_pair(teacher_depth(run), run.method);
    if (!samples.count(key)) order.push_back(key);
    auto& v = samples[key];
    for (std::size_t e = 1; e < run.epochs.size(); ++e) v.push_back(run.epochs[e].train_seconds);
  }
  std::vector<std::string> methods;
  for (const auto& [depth, method] : order) {
    if (std::find(methods.begin(), methods.end(), method) == methods.end()) methods.push_back(method);
  }
  if (methods.size() < 2) throw ConfigError("timing report needs at least two methods");

  TimingReport report;
  for (const auto& key : order) {
    const auto& v = samples[key];
    if (v.size() < 3) {
      throw MeasurementError("method " + key.second + " has " + std::to_string(v.size()) +
                             " measured epochs after warm-up; at least 3 are needed");
    }
    report.rows.push_back({key.second, key.first, v.size(), median(v), std::nullopt});
  }
  for (auto& r : report.rows) {
    for (const auto& base : report.rows) {
      if (base.method == to_string(Method::vanilla) && base.teacher_layers == r.teacher_layers) {
        r.ratio_vs_vanilla = r.median_epoch_seconds / base.median_epoch_seconds;
      }
    }
  }
  return report;
}

Table seed_table(std::span<const SeedSummary> summaries) {
  Table t{{"method", "runs", "dev_mean", "dev_std", "test_mean", "test_std", "ood_mean", "ood_std",
           "test_mean_std"},
          {}};
  for (const auto& s : summaries) {
    char pretty[64];
    std::snprintf(pretty, sizeof pretty, "%.2f ± %.2f", s.test.mean, s.test.stddev);
    t.rows.push_back({s.method, std::to_string(s.test.count), format_number(s.dev.mean),
                      format_number(s.dev.stddev), format_number(s.test.mean),
                      format_number(s.test.stddev), s.ood ? format_number(s.ood->mean) : "",
                      s.ood ? format_number(s.ood->stddev) : "", pretty});
  }
  return t;
}

void write_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
               std::span<const double> values, double lo, double hi, int cell) {
  if (values.size() != rows * cols || rows == 0 || cols == 0 || cell <= 0) {
    throw ContractError("write_pgm: bad image shape");
  }
  if (!(hi > lo)) throw ContractError("write_pgm: empty value range");
  const auto c = static_cast<std::size_t>(cell);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << cols * c << ' ' << rows * c << "\n255\n";
  for (std::size_t y = 0; y < rows * c; ++y) {
    for (std::size_t x = 0; x < cols * c; ++x) {
      const double v = std::clamp((values[(y / c) * cols + x / c] - lo) / (hi - lo), 0.0, 1.0);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace railkd
