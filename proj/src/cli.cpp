#include "railkd/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "railkd/analysis.hpp"
#include "railkd/data.hpp"
#include "railkd/encoder.hpp"
#include "railkd/errors.hpp"
#include "railkd/losses.hpp"
#include "railkd/train.hpp"

namespace railkd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kTeacherFile = "teacher.ckpt";
constexpr const char* kStudentFile = "student.ckpt";
constexpr const char* kManifestFile = "manifest.json";

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

/// "1/3,1/3,1/3" or "0.2,0.3,0.5".
std::vector<double> parse_lambda(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      const auto slash = item.find('/');
      std::size_t used = 0;
      if (slash == std::string::npos) {
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } else {
        const std::string num = item.substr(0, slash), den = item.substr(slash + 1);
        std::size_t un = 0, ud = 0;
        const double a = std::stod(num, &un), b = std::stod(den, &ud);
        if (un != num.size() || ud != den.size() || b == 0.0) throw std::invalid_argument(item);
        out.push_back(a / b);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad --lambda entry '" + item + "'");
    }
  }
  if (out.size() != 3) throw ConfigError("--lambda needs three comma-separated weights");
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      try {
        out.push_back(static_cast<T>(std::stoll(item)));
      } catch (const std::logic_error&) {
        throw ConfigError(std::string("bad ") + flag + " entry '" + item + "'");
      }
    }
  }
  return out;
}

/// Task heads and input bounds follow the data.
EncoderConfig fit_to_task(EncoderConfig c, const TaskSpec& spec) {
  c.task_kind = spec.encoder_kind();
  c.num_classes = spec.num_classes;
  c.vocab_size = std::max(c.vocab_size, spec.vocab_size);
  c.max_len = std::max(c.max_len, spec.seq_len);
  return c;
}

fs::path teacher_checkpoint_path(const fs::path& p) {
  return fs::is_directory(p) ? p / kTeacherFile : p;
}

Checkpoint run_checkpoint(const EncoderParams& student, const ProjectionHead& heads,
                          const RunManifest& manifest) {
  Checkpoint ckpt = encoder_checkpoint(student);
  for (const auto& t : heads.named()) ckpt.tensors.push_back(t);
  ckpt.meta["method"] = manifest.method;
  ckpt.meta["seed"] = manifest.seed;
  ckpt.meta["heads_concatenated"] = heads.concatenated;
  return ckpt;
}

void write_run(const fs::path& dir, const DistillResult& r) {
  make_dir(dir);
  write_text(dir / kManifestFile, r.manifest.to_json().dump(2) + "\n");
  write_text(dir / "selections.jsonl", r.manifest.selections_jsonl());
  write_text(dir / "steps.csv", r.manifest.steps_csv());
  save_checkpoint(dir / kStudentFile, run_checkpoint(r.student, r.heads, r.manifest));
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string task = "motif";
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  int train_size = 0, dev_size = 0, test_size = 0, ood_size = -1;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  TaskSpec spec;
  if (!a.config.empty()) {
    spec = read_json_file(a.config).get<TaskSpec>();
  } else {
    spec = TaskSpec::preset(a.task);
  }
  spec.seed = a.seed;
  if (a.train_size > 0) spec.train_size = a.train_size;
  if (a.dev_size > 0) spec.dev_size = a.dev_size;
  if (a.test_size > 0) spec.test_size = a.test_size;
  if (a.ood_size >= 0) spec.ood_size = a.ood_size;
  spec.validate();
  TaskData data = gen_task(spec);
  if (spec.ood_size > 0) data.ood = gen_ood_variant(spec);
  make_dir(a.out);
  save_task_dir(a.out, data);
  out << "wrote " << spec.name << " task to " << a.out << " (train " << data.train.size() << ", dev "
      << data.dev.size() << ", test " << data.test.size() << ", ood " << data.ood.size() << ")\n";
  return kExitOk;
}

struct TrainTeacherArgs {
  std::string config, data, out;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size, layers, hidden, heads, ff;
  std::optional<double> lr;
};

int cmd_train_teacher(const TrainTeacherArgs& a, std::ostream& out) {
  json cfg = {{"data", ""},
              {"out", ""},
              {"model", EncoderConfig::teacher_default()},
              {"training", DistillConfig{}}};
  cfg["training"]["method"] = "none";
  if (!a.config.empty()) cfg.merge_patch(read_json_file(a.config));
  if (!a.data.empty()) cfg["data"] = a.data;
  if (!a.out.empty()) cfg["out"] = a.out;
  if (a.seed) cfg["training"]["seed"] = *a.seed;
  if (a.epochs) cfg["training"]["epochs"] = *a.epochs;
  if (a.batch_size) cfg["training"]["batch_size"] = *a.batch_size;
  if (a.lr) cfg["training"]["learning_rate"] = *a.lr;
  if (a.layers) cfg["model"]["num_layers"] = *a.layers;
  if (a.hidden) cfg["model"]["hidden_dim"] = *a.hidden;
  if (a.heads) cfg["model"]["num_heads"] = *a.heads;
  if (a.ff) cfg["model"]["ff_dim"] = *a.ff;

  const fs::path data_dir = cfg.at("data").get<std::string>();
  const fs::path out_dir = cfg.at("out").get<std::string>();
  if (data_dir.empty() || out_dir.empty()) throw ConfigError("train-teacher needs --data and --out");
  const fs::path ckpt_path = out_dir / kTeacherFile;
  if (fs::exists(ckpt_path) && !a.force) {
    throw ConfigError(ckpt_path.string() + " exists; pass --force to overwrite");
  }
  const TaskData task = load_task_dir(data_dir);
  const EncoderConfig model = fit_to_task(cfg.at("model").get<EncoderConfig>(), task.spec);
  const DistillConfig training = cfg.at("training").get<DistillConfig>();
  cfg["model"] = model;

  TeacherResult r = train_teacher(task, model, training);
  r.manifest.config["cli"] = cfg;
  make_dir(out_dir);
  save_encoder(ckpt_path, r.params,
               {{"role", "teacher"}, {"dev_metric", r.manifest.best_dev}, {"task", task.spec}});
  write_text(out_dir / kManifestFile, r.manifest.to_json().dump(2) + "\n");
  write_text(out_dir / "steps.csv", r.manifest.steps_csv());
  out << "teacher " << model.num_layers << "L/" << model.hidden_dim << "d: best dev "
      << fixed2(r.manifest.best_dev) << " at epoch " << r.manifest.best_epoch << ", test "
      << fixed2(r.manifest.test_metric) << "\n";
  out << "wrote " << ckpt_path.string() << " and " << (out_dir / kManifestFile).string() << "\n";
  return kExitOk;
}

struct DistillArgs {
  std::string config, teacher, data, out, method, lambda;
  std::optional<int> proj_dim, seeds, epochs, batch_size, patience, layers, hidden, heads, ff;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, temperature;
  bool per_batch_selection = false, per_layer_heads = false, no_early_stopping = false;
  unsigned workers = 0;
  bool verbose = false;
};

int cmd_distill(const DistillArgs& a, std::ostream& out) {
  json cfg = {{"teacher", ""},
              {"data", ""},
              {"out", ""},
              {"seeds", 1},
              {"student", EncoderConfig::student_default()},
              {"distill", DistillConfig{}}};
  if (!a.config.empty()) cfg.merge_patch(read_json_file(a.config));
  auto& d = cfg["distill"];
  if (!a.teacher.empty()) cfg["teacher"] = a.teacher;
  if (!a.data.empty()) cfg["data"] = a.data;
  if (!a.out.empty()) cfg["out"] = a.out;
  if (a.seeds) cfg["seeds"] = *a.seeds;
  if (!a.method.empty()) d["method"] = a.method;
  if (!a.lambda.empty()) d["lambda"] = parse_lambda(a.lambda);
  if (a.proj_dim) d["proj_dim"] = *a.proj_dim;
  if (a.epochs) d["epochs"] = *a.epochs;
  if (a.batch_size) d["batch_size"] = *a.batch_size;
  if (a.patience) d["patience"] = *a.patience;
  if (a.seed) d["seed"] = *a.seed;
  if (a.lr) d["learning_rate"] = *a.lr;
  if (a.temperature) d["temperature"] = *a.temperature;
  if (a.per_batch_selection) d["per_batch_selection"] = true;
  if (a.per_layer_heads) d["per_layer_heads"] = true;
  if (a.no_early_stopping) d["early_stopping"] = false;
  if (a.layers) cfg["student"]["num_layers"] = *a.layers;
  if (a.hidden) cfg["student"]["hidden_dim"] = *a.hidden;
  if (a.heads) cfg["student"]["num_heads"] = *a.heads;
  if (a.ff) cfg["student"]["ff_dim"] = *a.ff;

  const DistillConfig base = d.get<DistillConfig>();
  base.validate();  // before any file is touched
  const int seeds = cfg.at("seeds").get<int>();
  if (seeds < 1) throw ConfigError("--seeds must be positive");
  const fs::path teacher_path = cfg.at("teacher").get<std::string>();
  const fs::path data_dir = cfg.at("data").get<std::string>();
  const fs::path out_dir = cfg.at("out").get<std::string>();
  if (data_dir.empty() || out_dir.empty()) throw ConfigError("distill needs --data and --out");

  const TaskData task = load_task_dir(data_dir);
  const EncoderConfig student = fit_to_task(cfg.at("student").get<EncoderConfig>(), task.spec);
  cfg["student"] = student;
  const bool needs_teacher = base.effective_weights().kd > 0.0 || base.effective_weights().ild > 0.0;
  EncoderParams teacher;
  std::shared_ptr<const TeacherCache> cache;
  if (needs_teacher) {
    if (teacher_path.empty()) throw ConfigError("method " + to_string(base.method) + " needs --teacher");
    teacher = load_encoder(teacher_checkpoint_path(teacher_path));
    cache = std::make_shared<TeacherCache>(build_teacher_cache(teacher, task.train));
  }

  make_dir(out_dir);
  auto one_run = [&](std::uint64_t seed) {
    DistillConfig c = base;
    c.seed = seed;
    DistillOptions options{cache, {}};
    if (a.verbose) {
      options.on_epoch = [&out, seed](const EpochRecord& e) {
        out << "seed " << seed << " epoch " << e.epoch << ": loss " << e.total << ", dev "
            << fixed2(e.dev_metric) << "\n";
      };
    }
    DistillResult r = needs_teacher ? distill(teacher, student, c, task, options)
                                    : distill(EncoderParams{}, student, c, task, options);
    r.manifest.config["cli"] = cfg;
    r.manifest.config["cli"]["distill"]["seed"] = seed;
    write_run(out_dir / ("seed_" + std::to_string(seed)), r);
    return r.manifest;
  };

  std::vector<std::uint64_t> seed_list;
  for (int i = 0; i < seeds; ++i) seed_list.push_back(base.seed + static_cast<std::uint64_t>(i));
  if (seeds == 1) {
    const RunManifest m = one_run(seed_list.front());
    out << m.method << " seed " << m.seed << ": best dev " << fixed2(m.best_dev) << " (epoch "
        << m.best_epoch << "), test " << fixed2(m.test_metric);
    if (m.ood_metric) out << ", ood " << fixed2(*m.ood_metric);
    out << "\nwrote " << (out_dir / ("seed_" + std::to_string(m.seed))).string() << "\n";
    return kExitOk;
  }
  const unsigned workers = a.workers ? a.workers : std::max(1u, std::thread::hardware_concurrency());
  const SeedSummary summary = run_seeds(one_run, seed_list, workers);
  const SeedSummary rows[] = {summary};
  export_csv(out_dir / "summary.csv", seed_table(rows));
  out << summary.method << " over " << seeds << " seeds: dev " << fixed2(summary.dev.mean) << " ± "
      << fixed2(summary.dev.stddev) << ", test " << fixed2(summary.test.mean) << " ± "
      << fixed2(summary.test.stddev);
  if (summary.ood) out << ", ood " << fixed2(summary.ood->mean) << " ± " << fixed2(summary.ood->stddev);
  out << "\nwrote " << (out_dir / "summary.csv").string() << "\n";
  return kExitOk;
}

struct BenchmarkArgs {
  std::string out, methods = "vanilla,pkd-skip,alp,rail-l,rail-c", depths = "8,24";
  int epochs = 5, train_size = 320;
  std::uint64_t seed = 0;
};

int cmd_benchmark(const BenchmarkArgs& a, std::ostream& out) {
  const auto methods = parse_list<std::string>(a.methods, "--methods");
  const auto depths = parse_list<int>(a.depths, "--depths");
  if (methods.size() < 2) throw ConfigError("benchmark needs at least two methods");
  if (depths.empty()) throw ConfigError("benchmark needs at least one teacher depth");
  if (a.epochs < 4) throw ConfigError("benchmark needs --epochs >= 4 (first epoch is warm-up)");
  if (a.out.empty()) throw ConfigError("benchmark needs --out");

  TaskSpec spec = TaskSpec::preset("motif");
  spec.seed = a.seed;
  spec.train_size = a.train_size;
  spec.dev_size = 50;
  spec.test_size = 50;
  const TaskData task = gen_task(spec);
  const EncoderConfig student = fit_to_task(EncoderConfig::student_default(), spec);

  std::vector<RunManifest> runs;
  for (int depth : depths) {
    EncoderConfig tc = fit_to_task(EncoderConfig::teacher_default(), spec);
    tc.num_layers = depth;
    // Timing does not depend on teacher quality; a random teacher suffices.
    const EncoderParams teacher = init_encoder(tc, derive_seed(a.seed, static_cast<std::uint64_t>(depth)));
    const auto cache = std::make_shared<TeacherCache>(build_teacher_cache(teacher, task.train));
    for (const auto& name : methods) {
      DistillConfig c;
      c.method = method_from_string(name);
      c.epochs = a.epochs;
      c.early_stopping = false;
      c.seed = a.seed;
      runs.push_back(distill(teacher, student, c, task, {cache, {}}).manifest);
      out << "measured " << runs.back().method << " with a " << depth << "-layer teacher\n";
    }
  }
  const TimingReport report = timing_report(runs);
  make_dir(a.out);
  export_csv(fs::path(a.out) / "timing.csv", report.to_table());
  out << "note: the first epoch of every run is discarded as warm-up; medians over the rest\n";
  for (const auto& r : report.rows) {
    out << r.method << " @" << r.teacher_layers << "L: " << r.median_epoch_seconds << " s/epoch";
    if (r.ratio_vs_vanilla) out << " (x" << fixed2(*r.ratio_vs_vanilla) << " vs vanilla)";
    out << "\n";
  }
  out << "wrote " << (fs::path(a.out) / "timing.csv").string() << "\n";
  return kExitOk;
}

struct AnalyzeArgs {
  bool cosine = false, heatmap = false;
  std::string run, teacher, data, out;
  int samples = 100;
  std::uint64_t seed = 0;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  if (a.cosine == a.heatmap) throw ConfigError("analyze needs exactly one of --cosine, --alp-heatmap");
  if (a.run.empty() || a.teacher.empty() || a.data.empty() || a.out.empty()) {
    throw ConfigError("analyze needs --run, --teacher, --data and --out");
  }
  const fs::path run_dir = a.run, out_dir = a.out;
  const RunManifest manifest = RunManifest::from_json(read_json_file(run_dir / kManifestFile));
  if (a.heatmap && manifest.method != to_string(Method::alp)) {
    throw MethodError("--alp-heatmap needs an alp run; " + run_dir.string() + " is " + manifest.method);
  }
  const Checkpoint ckpt = load_checkpoint(run_dir / kStudentFile);
  const EncoderParams student = encoder_from_checkpoint(ckpt);
  const ProjectionHead heads = ProjectionHead::from_checkpoint(ckpt);
  const EncoderParams teacher = load_encoder(teacher_checkpoint_path(a.teacher));
  const TaskData task = load_task_dir(a.data);
  make_dir(out_dir);

  if (a.heatmap) {
    const Heatmap h = attention_heatmap(manifest, teacher, student, heads, task.train);
    export_csv(out_dir / "alp_heatmap.csv", h.to_table());
    write_pgm(out_dir / "alp_heatmap.pgm", h.rows, h.cols, h.values, 0.0, 1.0);
    write_text(out_dir / "alp_heatmap_summary.json",
               json{{"samples", task.train.size()},
                    {"max_column_mass", h.max_column_mass},
                    {"max_column", h.max_column},
                    {"mean_row_max", h.mean_row_max}}
                       .dump(2) + "\n");
    out << "max column mass " << h.max_column_mass << " (teacher layer " << h.max_column
        << "), mean row max " << h.mean_row_max << "\n";
    for (const char* f : {"alp_heatmap.csv", "alp_heatmap.pgm", "alp_heatmap_summary.json"}) {
      out << "wrote " << (out_dir / f).string() << "\n";
    }
    return kExitOk;
  }

  if (a.samples < 1) throw ConfigError("--samples must be positive");
  std::vector<std::size_t> order(task.dev.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(a.seed);
  rng.shuffle(std::span(order));
  order.resize(std::min(order.size(), static_cast<std::size_t>(a.samples)));
  std::vector<Example> samples;
  for (auto i : order) samples.push_back(task.dev[i]);

  const CosineMatrix m = layer_cosine_matrix(teacher, student, heads, samples);
  const EncoderParams fresh = init_encoder(student.config, a.seed);
  const CosineMatrix baseline = layer_cosine_matrix(teacher, fresh, heads, samples);
  const auto pairs = skip_pairs(count_intermediate(teacher.config), count_intermediate(student.config));

  std::vector<int> sel_t, sel_s;
  for (int t : {2, 4, 6}) {
    if (t <= count_intermediate(teacher.config)) sel_t.push_back(t);
  }
  for (int s : {1, 2, 3}) {
    if (s <= count_intermediate(student.config)) sel_s.push_back(s);
  }
  export_csv(out_dir / "cosine.csv", m.to_table());
  export_csv(out_dir / "cosine_selected.csv", m.filtered(sel_s, sel_t).to_table());
  write_pgm(out_dir / "cosine.pgm", m.student_layers.size(), m.teacher_layers.size(), m.values, -1.0, 1.0);
  json pairs_json = json::array();
  for (const auto& [s, t] : pairs) pairs_json.push_back({s, t});
  const double mapped = m.mean_over(pairs), mapped_fresh = baseline.mean_over(pairs);
  write_text(out_dir / "cosine_summary.json",
             json{{"samples", samples.size()},
                  {"mapped_pairs", pairs_json},
                  {"mapped_mean_cosine", mapped},
                  {"random_init_mapped_mean_cosine", mapped_fresh}}
                     .dump(2) + "\n");
  out << "mapped-layer mean cosine " << mapped << " (random-init student " << mapped_fresh << ")\n";
  for (const char* f : {"cosine.csv", "cosine_selected.csv", "cosine.pgm", "cosine_summary.json"}) {
    out << "wrote " << (out_dir / f).string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const json::exception*>(&e)) return kExitConfig;
  return kExitFailure;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Random intermediate-layer knowledge distillation toolkit", "railkd"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic task as JSONL splits");
  gen_cmd->add_option("--task", gen.task, "motif, pair or regression")
      ->check(CLI::IsMember({"motif", "pair", "regression"}));
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--config", gen.config, "Task spec JSON (overrides --task)");
  gen_cmd->add_option("--train-size", gen.train_size);
  gen_cmd->add_option("--dev-size", gen.dev_size);
  gen_cmd->add_option("--test-size", gen.test_size);
  gen_cmd->add_option("--ood-size", gen.ood_size, "0 skips the out-of-domain split");

  TrainTeacherArgs tt;
  auto* tt_cmd = app.add_subcommand("train-teacher", "Train a teacher with cross-entropy only");
  tt_cmd->add_option("--config", tt.config, "JSON config {data, out, model, training}");
  tt_cmd->add_option("--data", tt.data, "Task directory from gen-data");
  tt_cmd->add_option("--out", tt.out, "Output directory");
  tt_cmd->add_flag("--force", tt.force, "Overwrite an existing checkpoint");
  tt_cmd->add_option("--seed", tt.seed);
  tt_cmd->add_option("--epochs", tt.epochs);
  tt_cmd->add_option("--batch-size", tt.batch_size);
  tt_cmd->add_option("--lr", tt.lr);
  tt_cmd->add_option("--layers", tt.layers);
  tt_cmd->add_option("--hidden", tt.hidden);
  tt_cmd->add_option("--heads", tt.heads);
  tt_cmd->add_option("--ff", tt.ff);

  DistillArgs da;
  auto* d_cmd = app.add_subcommand("distill", "Distill a student from a trained teacher");
  d_cmd->add_option("--config", da.config, "JSON config {teacher, data, out, seeds, student, distill}");
  d_cmd->add_option("--teacher", da.teacher, "Teacher checkpoint or train-teacher output directory");
  d_cmd->add_option("--data", da.data, "Task directory from gen-data");
  d_cmd->add_option("--out", da.out, "Output directory");
  d_cmd->add_option("--method", da.method, "none, vanilla, pkd-skip, pkd-last, alp, rail-l, rail-c");
  d_cmd->add_option("--lambda", da.lambda, "CE,KD,ILD weights, e.g. 1/3,1/3,1/3");
  d_cmd->add_option("--proj-dim", da.proj_dim);
  d_cmd->add_option("--seeds", da.seeds, "Number of seeds (consecutive from --seed)");
  d_cmd->add_option("--seed", da.seed);
  d_cmd->add_option("--epochs", da.epochs);
  d_cmd->add_option("--batch-size", da.batch_size);
  d_cmd->add_option("--lr", da.lr);
  d_cmd->add_option("--temperature", da.temperature);
  d_cmd->add_option("--patience", da.patience);
  d_cmd->add_flag("--no-early-stopping", da.no_early_stopping);
  d_cmd->add_flag("--per-batch-selection", da.per_batch_selection);
  d_cmd->add_flag("--per-layer-heads", da.per_layer_heads);
  d_cmd->add_option("--layers", da.layers, "Student layers");
  d_cmd->add_option("--hidden", da.hidden, "Student hidden size");
  d_cmd->add_option("--heads", da.heads, "Student attention heads");
  d_cmd->add_option("--ff", da.ff, "Student feed-forward size");
  d_cmd->add_option("--workers", da.workers, "Parallel seed workers (0: one per core)");
  d_cmd->add_flag("--verbose", da.verbose, "Print every epoch");

  BenchmarkArgs ba;
  auto* b_cmd = app.add_subcommand("benchmark", "Per-epoch training time across methods and teacher depths");
  b_cmd->add_option("--out", ba.out, "Output directory")->required();
  b_cmd->add_option("--methods", ba.methods, "Comma-separated methods");
  b_cmd->add_option("--depths", ba.depths, "Comma-separated teacher layer counts");
  b_cmd->add_option("--epochs", ba.epochs);
  b_cmd->add_option("--train-size", ba.train_size);
  b_cmd->add_option("--seed", ba.seed);

  AnalyzeArgs aa;
  auto* a_cmd = app.add_subcommand("analyze", "Layer cosine matrix or ALP attention heatmap");
  a_cmd->add_flag("--cosine", aa.cosine);
  a_cmd->add_flag("--alp-heatmap", aa.heatmap);
  a_cmd->add_option("--run", aa.run, "Run directory written by distill (seed_N)");
  a_cmd->add_option("--teacher", aa.teacher, "Teacher checkpoint or directory");
  a_cmd->add_option("--data", aa.data, "Task directory");
  a_cmd->add_option("--out", aa.out, "Output directory");
  a_cmd->add_option("--samples", aa.samples, "Dev samples for --cosine");
  a_cmd->add_option("--seed", aa.seed, "Sampling seed");

  std::vector<const char*> argv{"railkd"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*tt_cmd) return cmd_train_teacher(tt, out);
    if (*d_cmd) return cmd_distill(da, out);
    if (*b_cmd) return cmd_benchmark(ba, out);
    if (*a_cmd) return cmd_analyze(aa, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitFailure;
}

}  // namespace railkd
