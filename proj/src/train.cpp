#include "railkd/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "railkd/errors.hpp"
#include "railkd/ops.hpp"
#include "railkd/optimizer.hpp"

namespace railkd {

namespace {

enum Stream : std::uint64_t { kStudentInit = 31, kHeads = 32, kShuffle = 33 };

constexpr std::size_t kEvalBatch = 256;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Batch {
  std::vector<std::vector<int>> tokens;
  std::vector<int> labels;
  std::vector<double> targets;
};

Batch gather(std::span<const Example> examples, std::span<const std::size_t> rows) {
  Batch b;
  for (auto r : rows) {
    b.tokens.push_back(examples[r].tokens);
    b.labels.push_back(examples[r].class_label());
    b.targets.push_back(examples[r].label);
  }
  return b;
}

std::map<std::size_t, std::vector<std::size_t>> by_length(std::span<const Example> examples) {
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) groups[examples[i].tokens.size()].push_back(i);
  return groups;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

void check_compatible(const EncoderConfig& model, const TaskSpec& spec, const char* who) {
  if (model.task_kind != spec.encoder_kind() || model.num_classes != spec.num_classes) {
    throw ConfigError(std::string(who) + " head (" + to_string(model.task_kind) + ", " +
                      std::to_string(model.num_classes) + " outputs) does not fit task '" +
                      spec.name + "'");
  }
  if (model.vocab_size < spec.vocab_size || model.max_len < spec.seq_len) {
    throw ConfigError(std::string(who) + " vocabulary/max_len too small for task '" + spec.name + "'");
  }
}

nlohmann::json epoch_json(const EpochRecord& e, bool include_timing) {
  nlohmann::json j{{"epoch", e.epoch},
                   {"selection", e.selection ? nlohmann::json(*e.selection) : nlohmann::json()},
                   {"ce", e.ce},
                   {"kd", e.kd},
                   {"ild", e.ild},
                   {"total", e.total},
                   {"dev_metric", e.dev_metric}};
  if (include_timing) {
    j["train_seconds"] = e.train_seconds;
    j["wall_seconds"] = e.wall_seconds;
  }
  return j;
}

DistillResult run_training(const EncoderParams* teacher, const EncoderConfig& student_config,
                           const DistillConfig& cfg, const TaskData& task,
                           const DistillOptions& options) {
  cfg.validate();
  student_config.validate();
  check_compatible(student_config, task.spec, "student");
  if (task.train.empty() || task.dev.empty()) throw DataError("task has an empty train or dev split");

  const bool regression = student_config.task_kind == TaskKind::regression;
  const Method method = cfg.method;
  const LossWeights weights = cfg.effective_weights();
  const int m_int = count_intermediate(student_config);
  const bool needs_teacher = weights.kd > 0.0 || weights.ild > 0.0;
  if (needs_teacher && teacher == nullptr) {
    throw ConfigError("method " + to_string(method) + " needs a teacher");
  }
  if (!needs_teacher) teacher = nullptr;
  const int n_int = teacher ? count_intermediate(teacher->config) : 0;
  if (teacher) check_compatible(teacher->config, task.spec, "teacher");
  if (weights.ild > 0.0 && m_int > n_int) {
    throw ConfigError("student has " + std::to_string(m_int) +
                      " intermediate layers but the teacher only " + std::to_string(n_int) +
                      "; one teacher layer per student layer is required");
  }
  const std::vector<double> alpha = weights.ild > 0.0 ? cfg.alpha_for(m_int) : std::vector<double>{};

  std::shared_ptr<const TeacherCache> cache = options.teacher_cache;
  if (needs_teacher && !cache) {
    cache = std::make_shared<TeacherCache>(build_teacher_cache(*teacher, task.train));
  }
  if (cache && cache->count != task.train.size()) {
    throw ConfigError("teacher cache does not match the training split");
  }

  DistillResult result;
  result.student = init_encoder(student_config, derive_seed(cfg.seed, kStudentInit));
  const auto u = static_cast<std::size_t>(cfg.proj_dim);
  const auto d2 = static_cast<std::size_t>(student_config.hidden_dim);
  const auto slots = static_cast<std::size_t>(m_int);
  if (weights.ild > 0.0) {
    const auto d1 = static_cast<std::size_t>(teacher->config.hidden_dim);
    const auto head_seed = derive_seed(cfg.seed, kHeads);
    result.heads = method == Method::rail_c
                       ? ProjectionHead::concat(slots, d1, d2, u, head_seed)
                       : ProjectionHead::layerwise(d1, d2, u, slots, cfg.per_layer_heads, head_seed);
  }

  std::optional<FixedMapping> fixed;
  if (weights.ild > 0.0 && (method == Method::pkd_skip || method == Method::pkd_last)) {
    fixed = fixed_mapping(n_int, m_int,
                          method == Method::pkd_skip ? MappingScheme::skip : MappingScheme::last);
  }
  const bool random_layers = weights.ild > 0.0 && (method == Method::rail_l || method == Method::rail_c);

  std::vector<Tensor> trainable = result.student.parameters();
  for (const auto& p : result.heads.parameters()) trainable.push_back(p);
  Adam adam(trainable, cfg.learning_rate);

  RunManifest& manifest = result.manifest;
  manifest.method = to_string(method);
  manifest.seed = cfg.seed;
  manifest.config = {{"distill", cfg},
                     {"student", student_config},
                     {"task", task.spec},
                     {"effective_lambda", {weights.ce, weights.kd, weights.ild}},
                     {"batch_reduction", "mean"}};
  if (teacher) manifest.config["teacher"] = teacher->config;
  if (fixed) manifest.config["fixed_mapping"] = fixed->teacher_indices();

  Rng shuffle_rng(derive_seed(cfg.seed, kShuffle));
  double best_dev = -std::numeric_limits<double>::infinity();
  EncoderParams best_student = result.student.clone();
  ProjectionHead best_heads = result.heads.clone();
  int since_best = 0;
  int step = 0;
  const auto run_start = Clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    EpochRecord record;
    record.epoch = epoch;

    std::vector<int> teacher_layers;
    Rng batch_selection_rng(cfg.seed ^ static_cast<std::uint64_t>(epoch));
    if (random_layers && !cfg.per_batch_selection) {
      const auto sel = epoch_selection(n_int, m_int, cfg.seed, epoch);
      teacher_layers = sel.teacher_indices;
      record.selection = teacher_layers;
      manifest.selections.push_back(sel);
    } else if (fixed) {
      teacher_layers = fixed->teacher_indices();
    }

    const auto batches = make_batches(task.train, static_cast<std::size_t>(cfg.batch_size), shuffle_rng);
    for (const auto& rows : batches) {
      if (random_layers && cfg.per_batch_selection) {
        teacher_layers = random_select(n_int, m_int, batch_selection_rng);
        manifest.selections.push_back({teacher_layers, epoch, cfg.seed});
      }
      const Batch batch = gather(task.train, rows);
      const HiddenStates hs = forward_batch(result.student, batch.tokens);
      const Tensor prediction =
          regression ? reshape(hs.logits, {rows.size()}) : hs.logits;

      const Tensor ce = regression ? mse_loss(prediction, batch.targets)
                                   : ce_loss(prediction, batch.labels);
      Tensor kd, ild;
      if (weights.kd > 0.0) {
        const Tensor t_logits = cache->logits_batch(rows);
        kd = regression ? mse_loss(prediction, t_logits.data())
                        : kd_logits_loss(t_logits, prediction, cfg.temperature);
      }
      if (weights.ild > 0.0) {
        std::vector<Tensor> student_pooled;
        for (int i = 1; i <= m_int; ++i) student_pooled.push_back(mean_pool(hs.layer(i)));
        if (method == Method::alp) {
          std::vector<Tensor> teacher_all;
          for (int j = 1; j <= n_int; ++j) teacher_all.push_back(cache->pooled_batch(rows, j));
          ild = alp_ild(teacher_all, student_pooled, result.heads).loss;
        } else {
          std::vector<Tensor> teacher_sel;
          for (int j : teacher_layers) teacher_sel.push_back(cache->pooled_batch(rows, j));
          ild = method == Method::rail_c
                    ? rail_concat_loss(teacher_sel, student_pooled, result.heads)
                    : layerwise_ild(teacher_sel, student_pooled, result.heads, alpha);
        }
      }
      const Tensor total = total_loss(ce, kd, ild, cfg);
      StepRecord s{++step, epoch, ce.item(), kd.defined() ? kd.item() : 0.0,
                   ild.defined() ? ild.item() : 0.0, total.item()};
      if (!std::isfinite(s.total)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step) + " (ce=" + std::to_string(s.ce) +
                           ", kd=" + std::to_string(s.kd) + ", ild=" + std::to_string(s.ild) + ")");
      }
      total.backward();
      adam.step();
      adam.zero_grad();
      manifest.steps.push_back(s);
      record.ce += s.ce;
      record.kd += s.kd;
      record.ild += s.ild;
      record.total += s.total;
    }
    const auto nb = static_cast<double>(batches.size());
    record.ce /= nb;
    record.kd /= nb;
    record.ild /= nb;
    record.total /= nb;
    record.train_seconds = seconds_since(epoch_start);

    record.dev_metric = evaluate(result.student, task.dev);
    record.wall_seconds = seconds_since(run_start);
    manifest.epochs.push_back(record);
    if (options.on_epoch) options.on_epoch(record);

    if (record.dev_metric > best_dev) {
      best_dev = record.dev_metric;
      manifest.best_epoch = epoch;
      best_student = result.student.clone();
      best_heads = result.heads.clone();
      since_best = 0;
    } else if (cfg.early_stopping && ++since_best >= cfg.patience) {
      break;
    }
  }

  result.student = std::move(best_student);
  result.heads = std::move(best_heads);
  manifest.best_dev = best_dev;
  manifest.test_metric = evaluate(result.student, task.test);
  if (!task.ood.empty()) manifest.ood_metric = evaluate(result.student, task.ood);
  return result;
}

}  // namespace

nlohmann::json RunManifest::to_json(bool include_timing) const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) epochs_json.push_back(epoch_json(e, include_timing));
  nlohmann::json sel = nlohmann::json::array();
  for (const auto& s : selections) {
    sel.push_back({{"epoch", s.epoch}, {"indices", s.teacher_indices}, {"seed", s.seed}});
  }
  return {{"method", method},
          {"seed", seed},
          {"config", config},
          {"epochs", epochs_json},
          {"selections", sel},
          {"best_epoch", best_epoch},
          {"best_dev", best_dev},
          {"test_metric", test_metric},
          {"ood_metric", ood_metric ? nlohmann::json(*ood_metric) : nlohmann::json()}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.method = j.at("method").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.value("config", nlohmann::json::object());
    for (const auto& e : j.at("epochs")) {
      EpochRecord r;
      r.epoch = e.at("epoch").get<int>();
      if (!e.at("selection").is_null()) r.selection = e.at("selection").get<std::vector<int>>();
      r.ce = e.at("ce").get<double>();
      r.kd = e.at("kd").get<double>();
      r.ild = e.at("ild").get<double>();
      r.total = e.at("total").get<double>();
      r.dev_metric = e.at("dev_metric").get<double>();
      r.train_seconds = e.value("train_seconds", 0.0);
      r.wall_seconds = e.value("wall_seconds", 0.0);
      m.epochs.push_back(std::move(r));
    }
    for (const auto& s : j.value("selections", nlohmann::json::array())) {
      m.selections.push_back({s.at("indices").get<std::vector<int>>(), s.at("epoch").get<int>(),
                              s.at("seed").get<std::uint64_t>()});
    }
    m.best_epoch = j.at("best_epoch").get<int>();
    m.best_dev = j.at("best_dev").get<double>();
    m.test_metric = j.at("test_metric").get<double>();
    if (j.contains("ood_metric") && !j.at("ood_metric").is_null()) {
      m.ood_metric = j.at("ood_metric").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed run manifest: " + std::string(e.what()));
  }
  return m;
}

std::string RunManifest::selections_jsonl() const {
  std::ostringstream os;
  for (const auto& s : selections) {
    os << nlohmann::json{{"epoch", s.epoch}, {"indices", s.teacher_indices}, {"seed", s.seed}}.dump()
       << '\n';
  }
  return os.str();
}

std::string RunManifest::steps_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,epoch,L_CE,L_KD,L_ILD,total\n";
  for (const auto& s : steps) {
    os << s.step << ',' << s.epoch << ',' << s.ce << ',' << s.kd << ',' << s.ild << ',' << s.total
       << '\n';
  }
  return os.str();
}

double evaluate(const EncoderParams& params, std::span<const Example> examples) {
  if (examples.empty()) throw DataError("evaluate: no examples");
  NoGradGuard no_grad;
  const bool regression = params.config.task_kind == TaskKind::regression;
  std::vector<double> predicted(examples.size()), truth(examples.size());
  std::size_t correct = 0;
  for (const auto& [len, rows] : by_length(examples)) {
    for (std::size_t start = 0; start < rows.size(); start += kEvalBatch) {
      const auto chunk = std::span(rows).subspan(start, std::min(kEvalBatch, rows.size() - start));
      const Batch batch = gather(examples, chunk);
      const HiddenStates hs = forward_batch(params, batch.tokens);
      const auto c = hs.logits.dim(1);
      auto logits = hs.logits.data();
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const double* row = logits.data() + i * c;
        if (regression) {
          predicted[chunk[i]] = row[0];
          truth[chunk[i]] = batch.targets[i];
        } else {
          const auto arg = static_cast<int>(std::max_element(row, row + c) - row);
          correct += arg == batch.labels[i] ? 1 : 0;
        }
      }
    }
  }
  if (regression) return 100.0 * pearson(predicted, truth);
  return 100.0 * static_cast<double>(correct) / static_cast<double>(examples.size());
}

Tensor TeacherCache::pooled_batch(std::span<const std::size_t> rows, int layer) const {
  if (layer < 1 || static_cast<std::size_t>(layer) > layers) {
    throw ContractError("teacher layer " + std::to_string(layer) + " outside [1, " +
                        std::to_string(layers) + "]");
  }
  std::vector<double> out(rows.size() * dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = pooled.data() + (rows[i] * layers + static_cast<std::size_t>(layer - 1)) * dim;
    std::copy_n(src, dim, out.data() + i * dim);
  }
  return Tensor::from({rows.size(), dim}, std::move(out));
}

Tensor TeacherCache::logits_batch(std::span<const std::size_t> rows) const {
  std::vector<double> out(rows.size() * classes);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(logits.data() + rows[i] * classes, classes, out.data() + i * classes);
  }
  return Tensor::from({rows.size(), classes}, std::move(out));
}

TeacherCache build_teacher_cache(const EncoderParams& teacher, std::span<const Example> examples) {
  NoGradGuard no_grad;
  TeacherCache cache;
  cache.count = examples.size();
  cache.layers = static_cast<std::size_t>(count_intermediate(teacher.config));
  cache.dim = static_cast<std::size_t>(teacher.config.hidden_dim);
  cache.classes = static_cast<std::size_t>(teacher.config.num_classes);
  cache.pooled.assign(cache.count * cache.layers * cache.dim, 0.0);
  cache.logits.assign(cache.count * cache.classes, 0.0);
  for (const auto& [len, rows] : by_length(examples)) {
    for (std::size_t start = 0; start < rows.size(); start += kEvalBatch) {
      const auto chunk = std::span(rows).subspan(start, std::min(kEvalBatch, rows.size() - start));
      const HiddenStates hs = forward_batch(teacher, gather(examples, chunk).tokens);
      for (std::size_t l = 1; l <= cache.layers; ++l) {
        const Tensor pooled = mean_pool(hs.layer(static_cast<int>(l)));
        for (std::size_t i = 0; i < chunk.size(); ++i) {
          std::copy_n(pooled.data().data() + i * cache.dim, cache.dim,
                      cache.pooled.data() + (chunk[i] * cache.layers + l - 1) * cache.dim);
        }
      }
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        std::copy_n(hs.logits.data().data() + i * cache.classes, cache.classes,
                    cache.logits.data() + chunk[i] * cache.classes);
      }
    }
  }
  return cache;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const Example> examples,
                                                   std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [len, rows] : by_length(examples)) {
    rng.shuffle(std::span(rows));
    for (std::size_t start = 0; start < rows.size(); start += batch_size) {
      const auto end = std::min(rows.size(), start + batch_size);
      batches.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(start),
                           rows.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  rng.shuffle(std::span(batches));
  return batches;
}

DistillResult distill(const EncoderParams& teacher, const EncoderConfig& student_config,
                      const DistillConfig& config, const TaskData& task,
                      const DistillOptions& options) {
  return run_training(&teacher, student_config, config, task, options);
}

TeacherResult train_teacher(const TaskData& task, const EncoderConfig& config,
                            const DistillConfig& training) {
  DistillConfig cfg = training;
  cfg.method = Method::none;
  auto result = run_training(nullptr, config, cfg, task, {});
  return {std::move(result.student), std::move(result.manifest)};
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

SeedSummary run_seeds(const std::function<RunManifest(std::uint64_t)>& experiment,
                      std::span<const std::uint64_t> seeds, unsigned workers) {
  if (seeds.size() < 2) throw ConfigError("run_seeds needs at least two seeds");
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(seeds.size()));

  std::vector<RunManifest> runs(seeds.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        runs[i] = experiment(seeds[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  SeedSummary summary;
  summary.method = runs.front().method;
  std::vector<double> dev, test, ood;
  for (const auto& r : runs) {
    dev.push_back(r.best_dev);
    test.push_back(r.test_metric);
    if (r.ood_metric) ood.push_back(*r.ood_metric);
  }
  summary.dev = summarize(dev);
  summary.test = summarize(test);
  if (ood.size() == runs.size()) summary.ood = summarize(ood);
  summary.runs = std::move(runs);
  return summary;
}

}  // namespace railkd
