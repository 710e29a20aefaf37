#include "railkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "railkd/errors.hpp"
#include "railkd/rng.hpp"

namespace railkd {

namespace {

enum Stream : std::uint64_t { kMotif = 11, kTrain = 21, kDev = 22, kTest = 23, kOod = 24 };

constexpr int kMaxAttempts = 10000;

struct Segments {
  std::size_t a = 0;
  std::size_t b = 0;
};

Segments segments(const TaskSpec& s) {
  const auto len = static_cast<std::size_t>(s.seq_len);
  if (s.kind == TaskType::pair) {
    const std::size_t b = (len - 1) / 2;
    return {len - 1 - b, b};
  }
  const std::size_t a = (len - 1) / 2;
  return {a, a};
}

/// Zipf-like unigram sampler over content tokens; `reversed` flips the
/// frequency ranking (used for the out-of-domain shift).
class TokenSampler {
 public:
  TokenSampler(int vocab_size, bool reversed) {
    const int content = vocab_size - kFirstContentToken;
    double total = 0.0;
    for (int i = 0; i < content; ++i) {
      const int rank = reversed ? content - 1 - i : i;
      total += 1.0 / (rank + 1.0);
      cumulative_.push_back(total);
    }
    for (auto& c : cumulative_) c /= total;
  }

  int draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto idx = std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                              static_cast<std::ptrdiff_t>(cumulative_.size()) - 1);
    return kFirstContentToken + static_cast<int>(idx);
  }

  std::vector<int> draw_many(Rng& rng, std::size_t n) const {
    std::vector<int> out(n);
    for (auto& t : out) t = draw(rng);
    return out;
  }

 private:
  std::vector<double> cumulative_;
};

bool contains_run(std::span<const int> seq, std::span<const int> motif) {
  if (motif.size() > seq.size()) return false;
  for (std::size_t i = 0; i + motif.size() <= seq.size(); ++i) {
    if (std::equal(motif.begin(), motif.end(), seq.begin() + static_cast<std::ptrdiff_t>(i))) {
      return true;
    }
  }
  return false;
}

bool is_subsequence(std::span<const int> needle, std::span<const int> hay) {
  std::size_t j = 0;
  for (std::size_t i = 0; i < hay.size() && j < needle.size(); ++i) {
    if (hay[i] == needle[j]) ++j;
  }
  return j == needle.size();
}

double jaccard(std::span<const int> a, std::span<const int> b) {
  const std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (int t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::pair<std::span<const int>, std::span<const int>> split_pair(std::span<const int> tokens) {
  const auto sep = std::find(tokens.begin(), tokens.end(), kSepToken);
  if (sep == tokens.end()) throw DataError("pair example has no separator token");
  const auto cut = static_cast<std::size_t>(sep - tokens.begin());
  return {tokens.subspan(0, cut), tokens.subspan(cut + 1)};
}

std::vector<int> join(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out(a);
  out.push_back(kSepToken);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<int> sorted_positions(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(n) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

class Generator {
 public:
  Generator(const TaskSpec& spec, bool shifted)
      : spec_(spec),
        sampler_(spec.vocab_size, shifted),
        motif_(task_motif(spec)),
        seg_(segments(spec)) {}

  std::vector<int> make(Rng& rng, int label, double distractor_rate) const {
    switch (spec_.kind) {
      case TaskType::single: return motif_example(rng, label, distractor_rate);
      case TaskType::pair: return pair_example(rng, label, distractor_rate);
      case TaskType::regression: return regression_example(rng);
    }
    throw ContractError("unknown task type");
  }

 private:
  std::vector<int> motif_example(Rng& rng, int label, double distractor_rate) const {
    const auto len = static_cast<std::size_t>(spec_.seq_len);
    const auto k = motif_.size();
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      auto seq = sampler_.draw_many(rng, len);
      const auto at = static_cast<std::size_t>(rng.uniform_below(len - k + 1));
      if (label == 1) {
        std::copy(motif_.begin(), motif_.end(), seq.begin() + static_cast<std::ptrdiff_t>(at));
      } else if (rng.uniform() < distractor_rate) {
        // Same tokens as the motif, wrong order.
        auto scrambled = motif_;
        while (scrambled == motif_) rng.shuffle(std::span<int>(scrambled));
        std::copy(scrambled.begin(), scrambled.end(), seq.begin() + static_cast<std::ptrdiff_t>(at));
      }
      if (contains_run(seq, motif_) == (label == 1)) return seq;
    }
    throw ConfigError("could not generate a motif example; vocabulary too small?");
  }

  std::vector<int> pair_example(Rng& rng, int label, double distractor_rate) const {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const auto a = sampler_.draw_many(rng, seg_.a);
      std::vector<int> b;
      if (label == 1 || rng.uniform() < distractor_rate) {
        for (int p : sorted_positions(rng, seg_.a, seg_.b)) b.push_back(a[static_cast<std::size_t>(p)]);
        if (label == 0) rng.shuffle(std::span<int>(b));
      } else {
        // Tokens absent from A: lexical overlap alone separates these.
        for (int guard = 0; b.size() < seg_.b && guard < kMaxAttempts; ++guard) {
          const int t = sampler_.draw(rng);
          if (std::find(a.begin(), a.end(), t) == a.end()) b.push_back(t);
        }
      }
      if (is_subsequence(b, a) == (label == 1)) return join(a, b);
    }
    throw ConfigError("could not generate a pair example; vocabulary too small?");
  }

  std::vector<int> regression_example(Rng& rng) const {
    // Distinct tokens in A, replacements drawn from outside A, so the
    // target is (a - r) / (a + r) for r replaced positions.
    std::vector<int> a;
    while (a.size() < seg_.a) {
      const int t = sampler_.draw(rng);
      if (std::find(a.begin(), a.end(), t) == a.end()) a.push_back(t);
    }
    auto b = a;
    const auto replaced = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(seg_.a)));
    std::vector<int> used = a;
    for (int p : sorted_positions(rng, seg_.a, replaced)) {
      int t = sampler_.draw(rng);
      while (std::find(used.begin(), used.end(), t) != used.end()) t = sampler_.draw(rng);
      used.push_back(t);
      b[static_cast<std::size_t>(p)] = t;
    }
    return join(a, b);
  }

  const TaskSpec& spec_;
  TokenSampler sampler_;
  std::vector<int> motif_;
  Segments seg_;
};

std::vector<Example> gen_split(const TaskSpec& spec, const Generator& gen, std::uint64_t stream,
                               int size, double distractor_rate, std::set<std::vector<int>>& seen) {
  Rng rng(derive_seed(spec.seed, stream));
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(size));
  const bool classify = spec.kind != TaskType::regression;
  for (int i = 0; i < size; ++i) {
    const int label = i % 2;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw ConfigError("task '" + spec.name + "' cannot produce enough distinct sequences");
      }
      auto tokens = gen.make(rng, label, distractor_rate);
      if (!seen.insert(tokens).second) continue;
      const double y = classify ? static_cast<double>(label) : oracle_label(spec, tokens);
      out.push_back({std::move(tokens), y});
      break;
    }
  }
  rng.shuffle(std::span<Example>(out));
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("task spec: " + what);
}

}  // namespace

std::string to_string(TaskType type) {
  switch (type) {
    case TaskType::single: return "single";
    case TaskType::pair: return "pair";
    case TaskType::regression: return "regression";
  }
  return "unknown";
}

TaskType task_type_from_string(const std::string& name) {
  if (name == "single") return TaskType::single;
  if (name == "pair") return TaskType::pair;
  if (name == "regression") return TaskType::regression;
  throw ConfigError("unknown task kind '" + name + "'");
}

void TaskSpec::validate() const {
  const int content = vocab_size - kFirstContentToken;
  require(train_size > 0 && dev_size > 0 && test_size > 0 && ood_size >= 0,
          "split sizes must be positive");
  require(distractor_rate >= 0.0 && distractor_rate <= 1.0, "distractor_rate must be in [0, 1]");
  switch (kind) {
    case TaskType::single:
      require(motif_len >= 2, "motif_len must be at least 2");
      require(motif_len <= seq_len, "motif longer than seq_len");
      require(content >= motif_len, "vocabulary too small for a motif of distinct tokens");
      require(num_classes == 2, "motif task is binary");
      break;
    case TaskType::pair:
      require(seq_len >= 4, "pair task needs seq_len >= 4");
      require(content >= 2, "vocabulary too small");
      require(num_classes == 2, "pair task is binary");
      break;
    case TaskType::regression:
      require(seq_len >= 3, "regression task needs seq_len >= 3");
      require(content >= 2 * ((seq_len - 1) / 2),
              "regression task needs at least twice as many content tokens as a segment holds");
      require(num_classes == 1, "regression task has one output");
      break;
  }
}

TaskKind TaskSpec::encoder_kind() const {
  return kind == TaskType::regression ? TaskKind::regression : TaskKind::classification;
}

TaskSpec TaskSpec::preset(const std::string& name) {
  TaskSpec s;
  s.name = name;
  if (name == "motif") {
    s.kind = TaskType::single;
  } else if (name == "pair") {
    s.kind = TaskType::pair;
    s.vocab_size = 16;
  } else if (name == "regression") {
    s.kind = TaskType::regression;
    s.num_classes = 1;
    s.seq_len = 15;
  } else {
    throw ConfigError("unknown task '" + name + "' (expected motif, pair or regression)");
  }
  return s;
}

void to_json(nlohmann::json& j, const TaskSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"kind", to_string(s.kind)},
                     {"vocab_size", s.vocab_size},
                     {"seq_len", s.seq_len},
                     {"num_classes", s.num_classes},
                     {"train_size", s.train_size},
                     {"dev_size", s.dev_size},
                     {"test_size", s.test_size},
                     {"ood_size", s.ood_size},
                     {"seed", s.seed},
                     {"motif_len", s.motif_len},
                     {"distractor_rate", s.distractor_rate}};
}

void from_json(const nlohmann::json& j, TaskSpec& s) {
  s.name = j.value("name", s.name);
  if (j.contains("kind")) s.kind = task_type_from_string(j.at("kind").get<std::string>());
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.seq_len = j.value("seq_len", s.seq_len);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.train_size = j.value("train_size", s.train_size);
  s.dev_size = j.value("dev_size", s.dev_size);
  s.test_size = j.value("test_size", s.test_size);
  s.ood_size = j.value("ood_size", s.ood_size);
  s.seed = j.value("seed", s.seed);
  s.motif_len = j.value("motif_len", s.motif_len);
  s.distractor_rate = j.value("distractor_rate", s.distractor_rate);
}

std::vector<int> task_motif(const TaskSpec& spec) {
  if (spec.kind != TaskType::single) return {};
  Rng rng(derive_seed(spec.seed, kMotif));
  std::vector<int> pool;
  for (int t = kFirstContentToken; t < spec.vocab_size; ++t) pool.push_back(t);
  rng.shuffle(std::span<int>(pool));
  pool.resize(static_cast<std::size_t>(spec.motif_len));
  return pool;
}

double oracle_label(const TaskSpec& spec, std::span<const int> tokens) {
  switch (spec.kind) {
    case TaskType::single: {
      const auto motif = task_motif(spec);
      return contains_run(tokens, motif) ? 1.0 : 0.0;
    }
    case TaskType::pair: {
      const auto [a, b] = split_pair(tokens);
      return is_subsequence(b, a) ? 1.0 : 0.0;
    }
    case TaskType::regression: {
      const auto [a, b] = split_pair(tokens);
      return jaccard(a, b);
    }
  }
  throw ContractError("unknown task type");
}

TaskData gen_task(const TaskSpec& spec) {
  spec.validate();
  const Generator gen(spec, false);
  std::set<std::vector<int>> seen;
  TaskData data;
  data.spec = spec;
  data.train = gen_split(spec, gen, kTrain, spec.train_size, spec.distractor_rate, seen);
  data.dev = gen_split(spec, gen, kDev, spec.dev_size, spec.distractor_rate, seen);
  data.test = gen_split(spec, gen, kTest, spec.test_size, spec.distractor_rate, seen);
  return data;
}

std::vector<Example> gen_ood_variant(const TaskSpec& spec) {
  spec.validate();
  const Generator gen(spec, true);
  std::set<std::vector<int>> seen;
  return gen_split(spec, gen, kOod, spec.ood_size, 1.0, seen);
}

std::vector<double> token_histogram(std::span<const Example> examples, int vocab_size) {
  std::vector<double> h(static_cast<std::size_t>(vocab_size), 0.0);
  double total = 0.0;
  for (const auto& e : examples) {
    for (int t : e.tokens) {
      if (t >= 0 && t < vocab_size) {
        h[static_cast<std::size_t>(t)] += 1.0;
        total += 1.0;
      }
    }
  }
  if (total > 0.0) {
    for (auto& v : h) v /= total;
  }
  return h;
}

void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples, TaskType kind) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : examples) {
    nlohmann::json j;
    j["tokens"] = e.tokens;
    if (kind == TaskType::regression) {
      j["label"] = e.label;
    } else {
      j["label"] = e.class_label();
    }
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<Example> load_jsonl(const std::filesystem::path& path, const std::optional<TaskSpec>& spec) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<Example> out;
  std::string line;
  for (int line_no = 1; std::getline(is, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      return DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    Example e;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("tokens") || !j.contains("label")) {
        throw fail("expected an object with \"tokens\" and \"label\"");
      }
      e.tokens = j.at("tokens").get<std::vector<int>>();
      if (!j.at("label").is_number()) throw fail("label must be a number");
      e.label = j.at("label").get<double>();
    } catch (const nlohmann::json::exception& ex) {
      throw fail(std::string("malformed line: ") + ex.what());
    }
    if (e.tokens.empty()) throw fail("empty token list");
    if (!std::isfinite(e.label)) throw fail("non-finite label");
    if (spec) {
      if (static_cast<int>(e.tokens.size()) > spec->seq_len) {
        throw fail("sequence length " + std::to_string(e.tokens.size()) + " exceeds " +
                   std::to_string(spec->seq_len));
      }
      for (int t : e.tokens) {
        if (t < 0 || t >= spec->vocab_size) {
          throw fail("token " + std::to_string(t) + " outside [0, " +
                     std::to_string(spec->vocab_size) + ")");
        }
      }
      if (spec->kind != TaskType::regression &&
          (e.label != std::floor(e.label) || e.label < 0 || e.label >= spec->num_classes)) {
        throw fail("label " + std::to_string(e.label) + " is not a class index");
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

void save_task_dir(const std::filesystem::path& dir, const TaskData& data) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "task.json", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "task.json").string());
    os << nlohmann::json(data.spec).dump(2) << '\n';
  }
  save_jsonl(dir / "train.jsonl", data.train, data.spec.kind);
  save_jsonl(dir / "dev.jsonl", data.dev, data.spec.kind);
  save_jsonl(dir / "test.jsonl", data.test, data.spec.kind);
  if (!data.ood.empty()) save_jsonl(dir / "ood.jsonl", data.ood, data.spec.kind);
}

TaskData load_task_dir(const std::filesystem::path& dir) {
  std::ifstream is(dir / "task.json");
  if (!is) throw IoError("cannot open " + (dir / "task.json").string());
  TaskData data;
  try {
    data.spec = nlohmann::json::parse(is).get<TaskSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("task.json: " + std::string(e.what()));
  }
  data.spec.validate();
  data.train = load_jsonl(dir / "train.jsonl", data.spec);
  data.dev = load_jsonl(dir / "dev.jsonl", data.spec);
  data.test = load_jsonl(dir / "test.jsonl", data.spec);
  if (std::filesystem::exists(dir / "ood.jsonl")) data.ood = load_jsonl(dir / "ood.jsonl", data.spec);
  return data;
}

}  // namespace railkd
