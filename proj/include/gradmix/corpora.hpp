#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradmix/checkpoint.hpp"
#include "gradmix/models.hpp"
#include "gradmix/numcore.hpp"

namespace gradmix {

enum class Role { source, target };
enum class TaskKind { classification, token_tags };

inline std::string to_string(Role r) { return r == Role::source ? "source" : "target"; }
inline std::string to_string(TaskKind t) { return t == TaskKind::classification ? "classification" : "token_tags"; }

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "token_tags") return TaskKind::token_tags;
  throw ContractError("unknown task kind '" + s + "'");
}

inline Role role_from_string(const std::string& s) {
  if (s == "source") return Role::source;
  if (s == "target") return Role::target;
  throw ContractError("unknown role '" + s + "'");
}

struct LanguageCorpus {
  std::string lang_id;
  std::string script_tag;
  Role role = Role::target;
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

/// Checks the task-level invariants: unique ids, exactly one source, and
/// every example conforming to `spec`.
inline void validate_task(const LanguageCorpus& source, std::span<const LanguageCorpus> targets,
                          const ModelSpec& spec) {
  if (source.role != Role::source) throw ContractError("corpus '" + source.lang_id + "' is not a source");
  std::set<std::string> ids{source.lang_id};
  for (const auto& t : targets) {
    if (t.role != Role::target) throw ContractError("more than one source corpus ('" + t.lang_id + "')");
    if (!ids.insert(t.lang_id).second) throw ContractError("duplicate lang_id '" + t.lang_id + "'");
  }
  auto check = [&](const LanguageCorpus& c) {
    for (const auto* split : {&c.train, &c.dev, &c.test}) {
      for (const auto& ex : *split) detail::check_example(spec, ex);
    }
  };
  check(source);
  for (const auto& t : targets) check(t);
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct LanguageProfile {
  std::string lang_id;
  std::string script_tag;
  double translation = 0.0;  // norm of the language-wide mean offset
};

/// Class-conditional Gaussian languages. Source class means live in the
/// first half of the feature space. A script rotates every mean by its angle
/// in planes that pair each source dimension with one dimension of the second
/// half; languages of one script share that rotation and differ only by a
/// translation of all class means.
struct SyntheticBenchmarkSpec {
  TaskKind task = TaskKind::classification;
  std::size_t input_dim = 16;
  std::size_t num_classes = 3;
  double separation = 3.0;  // norm of each source class mean
  double noise = 1.0;       // isotropic standard deviation
  std::size_t min_seq_len = 6;
  std::size_t max_seq_len = 12;
  double outside_fraction = 0.6;

  std::size_t source_train = 500;
  std::size_t target_train = 100;
  std::size_t dev_size = 100;
  std::size_t test_size = 100;

  std::string source_lang = "en";
  std::string source_script = "latn";
  std::vector<LanguageProfile> targets;
  std::map<std::string, double> script_angles_deg;  // unlisted scripts rotate by 0
  std::uint64_t seed = 0;

  double angle_deg(const std::string& script) const {
    auto it = script_angles_deg.find(script);
    if (it == script_angles_deg.end()) {
      if (script == source_script) return 0.0;
      throw ContractError("no rotation angle for script '" + script + "'");
    }
    return it->second;
  }

  std::vector<std::string> label_names() const {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (task == TaskKind::token_tags) {
        names.push_back(c == 0 ? "O" : "T" + std::to_string(c));
      } else {
        names.push_back("c" + std::to_string(c));
      }
    }
    return names;
  }

  ModelSpec model_spec(std::size_t hidden_dim) const {
    return {task == TaskKind::classification ? ModelFamily::softmax_classifier : ModelFamily::mlp_token_tagger,
            input_dim, hidden_dim, num_classes};
  }
};

/// The default shipped benchmark: one source and six targets, three sharing
/// the source script (near) and three on a second script (distant).
inline SyntheticBenchmarkSpec default_benchmark_spec() {
  SyntheticBenchmarkSpec s;
  s.input_dim = 32;
  s.num_classes = 5;
  s.targets = {
      {"nl", "latn", 0.6}, {"fr", "latn", 0.8}, {"de", "latn", 1.0},
      {"ru", "cyrl", 0.6}, {"uk", "cyrl", 0.8}, {"bg", "cyrl", 1.0},
  };
  // The source script is tilted against the distant one so that source and
  // distant-target gradients disagree on the shared dimensions.
  s.script_angles_deg = {{"latn", -30.0}, {"cyrl", 50.0}};
  return s;
}

/// Targets written in a script other than the source's.
inline std::vector<std::string> distant_targets(const SyntheticBenchmarkSpec& s) {
  std::vector<std::string> out;
  for (const auto& t : s.targets)
    if (t.script_tag != s.source_script) out.push_back(t.lang_id);
  return out;
}

inline nlohmann::ordered_json benchmark_manifest(const SyntheticBenchmarkSpec& s) {
  nlohmann::ordered_json j;
  j["n_langs"] = s.targets.size() + 1;
  j["task"] = to_string(s.task);
  j["input_dim"] = s.input_dim;
  j["num_classes"] = s.num_classes;
  j["labels"] = s.label_names();
  j["separation"] = s.separation;
  j["noise"] = s.noise;
  if (s.task == TaskKind::token_tags) {
    j["min_seq_len"] = s.min_seq_len;
    j["max_seq_len"] = s.max_seq_len;
    j["outside_fraction"] = s.outside_fraction;
  }
  auto langs = nlohmann::ordered_json::array();
  auto angles = nlohmann::ordered_json::array();
  auto scripts = nlohmann::ordered_json::array();
  langs.push_back(s.source_lang);
  angles.push_back(s.angle_deg(s.source_script));
  scripts.push_back(s.source_script);
  for (const auto& t : s.targets) {
    langs.push_back(t.lang_id);
    angles.push_back(s.angle_deg(t.script_tag));
    scripts.push_back(t.script_tag);
  }
  j["langs"] = langs;
  j["angles"] = angles;
  j["script_tags"] = scripts;
  auto translations = nlohmann::ordered_json::array({0.0});
  for (const auto& t : s.targets) translations.push_back(t.translation);
  j["translations"] = translations;
  j["sizes"] = {{"source_train", s.source_train},
                {"target_train", s.target_train},
                {"dev", s.dev_size},
                {"test", s.test_size}};
  j["seed"] = s.seed;
  return j;
}

inline SyntheticBenchmarkSpec benchmark_spec_from_json(const nlohmann::json& j) {
  SyntheticBenchmarkSpec s;
  s.task = task_kind_from_string(j.value("task", std::string("classification")));
  s.input_dim = j.value("input_dim", s.input_dim);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.separation = j.value("separation", s.separation);
  s.noise = j.value("noise", s.noise);
  s.min_seq_len = j.value("min_seq_len", s.min_seq_len);
  s.max_seq_len = j.value("max_seq_len", s.max_seq_len);
  s.outside_fraction = j.value("outside_fraction", s.outside_fraction);
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("sizes")) {
    const auto& z = j.at("sizes");
    auto count = [&](const char* key, std::size_t fallback) {
      if (!z.contains(key)) return fallback;
      const auto& v = z.at(key);
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw DataError(std::string("benchmark manifest: sizes.") + key + " must be a non-negative integer");
      }
      return v.get<std::size_t>();
    };
    s.source_train = count("source_train", s.source_train);
    s.target_train = count("target_train", s.target_train);
    s.dev_size = count("dev", s.dev_size);
    s.test_size = count("test", s.test_size);
  }
  if (j.contains("langs")) {
    const auto& langs = j.at("langs");
    const auto& scripts = j.at("script_tags");
    const auto& angles = j.at("angles");
    if (langs.size() < 2 || scripts.size() != langs.size() || angles.size() != langs.size()) {
      throw DataError("benchmark manifest: langs/script_tags/angles must align and hold >= 2 languages");
    }
    std::vector<double> translations(langs.size(), 0.0);
    if (j.contains("translations")) translations = j.at("translations").get<std::vector<double>>();
    if (translations.size() != langs.size()) throw DataError("benchmark manifest: translations misaligned");
    s.source_lang = langs[0].get<std::string>();
    s.source_script = scripts[0].get<std::string>();
    s.targets.clear();
    s.script_angles_deg.clear();
    for (std::size_t i = 0; i < langs.size(); ++i) {
      const auto script = scripts[i].get<std::string>();
      const double angle = angles[i].get<double>();
      auto [it, fresh] = s.script_angles_deg.emplace(script, angle);
      if (!fresh && it->second != angle) {
        throw DataError("benchmark manifest: script '" + script + "' given two different angles");
      }
      if (i > 0) s.targets.push_back({langs[i].get<std::string>(), script, translations[i]});
    }
    if (j.contains("n_langs") && j.at("n_langs").get<std::size_t>() != langs.size()) {
      throw DataError("benchmark manifest: n_langs disagrees with langs");
    }
  }
  return s;
}

namespace detail {

// Rotation of a signal-space vector by `angle` in the planes
// (i, half + perm[i]) for i < half.
inline std::vector<double> rotate(const std::vector<double>& v, std::size_t half,
                                  const std::vector<std::size_t>& perm, double angle_rad) {
  std::vector<double> out = v;
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  for (std::size_t i = 0; i < half; ++i) {
    const std::size_t j = half + perm[i];
    const double a = v[i], b = v[j];
    out[i] = c * a - s * b;
    out[j] = s * a + c * b;
  }
  return out;
}

inline std::vector<double> random_direction(RngStream& rng, std::size_t dim, std::size_t limit) {
  std::vector<double> v(dim, 0.0);
  double n2 = 0.0;
  while (n2 == 0.0) {
    for (std::size_t i = 0; i < limit; ++i) {
      v[i] = rng.normal();
      n2 += v[i] * v[i];
    }
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace detail

/// Generates the source corpus followed by one corpus per target profile.
/// Draws come from keyed `synth_data` generators, so a language's data depends
/// only on (seed, its own profile, shared class means).
inline std::vector<LanguageCorpus> gen_synthetic_family(const SyntheticBenchmarkSpec& s, const RngStreams& streams) {
  if (s.input_dim < 2 || s.input_dim % 2 != 0) throw ContractError("synthetic benchmark: input_dim must be even and >= 2");
  if (s.num_classes < 2) throw ContractError("synthetic benchmark: num_classes must be >= 2");
  if (s.noise < 0.0 || s.separation < 0.0) throw ContractError("synthetic benchmark: negative noise or separation");
  if (s.task == TaskKind::token_tags && (s.min_seq_len == 0 || s.max_seq_len < s.min_seq_len)) {
    throw ContractError("synthetic benchmark: bad sequence length range");
  }
  if (s.outside_fraction < 0.0 || s.outside_fraction > 1.0) throw ContractError("synthetic benchmark: outside_fraction not in [0,1]");
  const std::size_t half = s.input_dim / 2;

  RngStream mean_rng = streams.derive(Substream::synth_data, "class-means");
  std::vector<std::vector<double>> source_means;
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    auto d = detail::random_direction(mean_rng, s.input_dim, half);
    for (double& x : d) x *= s.separation;
    source_means.push_back(std::move(d));
  }

  auto script_perm = [&](const std::string& script) {
    std::vector<std::size_t> perm(half);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    RngStream r = streams.derive(Substream::synth_data, "script/" + script);
    r.shuffle(perm);
    return perm;
  };

  auto make_corpus = [&](const std::string& id, const std::string& script, Role role, double translation,
                         std::size_t n_train) {
    LanguageCorpus corpus{id, script, role, {}, {}, {}};
    RngStream rng = streams.derive(Substream::synth_data, "lang/" + id);
    const double angle = s.angle_deg(script) * M_PI / 180.0;
    const auto perm = script_perm(script);
    auto offset = detail::random_direction(rng, s.input_dim, s.input_dim);
    std::vector<std::vector<double>> means;
    for (const auto& m : source_means) {
      auto r = detail::rotate(m, half, perm, angle);
      for (std::size_t d = 0; d < s.input_dim; ++d) r[d] += translation * offset[d];
      means.push_back(std::move(r));
    }
    auto draw_token = [&](int label, Example& ex) {
      for (std::size_t d = 0; d < s.input_dim; ++d) ex.features.push_back(means[label][d] + s.noise * rng.normal());
      ex.labels.push_back(label);
    };
    auto draw_split = [&](std::size_t n) {
      std::vector<Example> out;
      out.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        if (s.task == TaskKind::classification) {
          draw_token(static_cast<int>(i % s.num_classes), ex);
        } else {
          const std::size_t len = s.min_seq_len + rng.uniform_index(s.max_seq_len - s.min_seq_len + 1);
          for (std::size_t t = 0; t < len; ++t) {
            int label = 0;
            if (rng.uniform01() >= s.outside_fraction) label = 1 + static_cast<int>(rng.uniform_index(s.num_classes - 1));
            draw_token(label, ex);
          }
        }
        out.push_back(std::move(ex));
      }
      return out;
    };
    corpus.train = draw_split(n_train);
    corpus.dev = draw_split(s.dev_size);
    corpus.test = draw_split(s.test_size);
    return corpus;
  };

  std::vector<LanguageCorpus> out;
  out.push_back(make_corpus(s.source_lang, s.source_script, Role::source, 0.0, s.source_train));
  for (const auto& t : s.targets) {
    if (t.translation < 0.0) throw ContractError("synthetic benchmark: negative translation for '" + t.lang_id + "'");
    out.push_back(make_corpus(t.lang_id, t.script_tag, Role::target, t.translation, s.target_train));
  }
  return out;
}

inline std::vector<LanguageCorpus> gen_synthetic_family(const SyntheticBenchmarkSpec& s) {
  return gen_synthetic_family(s, RngStreams(s.seed));
}

// ---------------------------------------------------------------------------
// TSV ingestion

/// Classification rows: feat1..featD<TAB>label. Token tags: one token per
/// line, blank line between sequences. Labels are looked up in `labels`.
struct TsvSchema {
  TaskKind kind = TaskKind::classification;
  std::vector<std::string> labels;
};

inline std::vector<Example> read_tsv_examples(std::istream& in, const TsvSchema& schema,
                                              const std::string& name = "<tsv>") {
  std::map<std::string, int> label_ids;
  for (std::size_t i = 0; i < schema.labels.size(); ++i) label_ids[schema.labels[i]] = static_cast<int>(i);

  std::vector<Example> out;
  Example current;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&]() {
    if (!current.labels.empty()) out.push_back(std::move(current));
    current = Example{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (schema.kind == TaskKind::token_tags) flush();
      continue;
    }
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cells.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const auto where = name + ":" + std::to_string(line_no);
    if (cells.size() < 2) throw DataError(where + ": expected at least one feature and a label");
    if (dim == 0) dim = cells.size() - 1;
    if (cells.size() - 1 != dim) {
      throw DataError(where + ": ragged row with " + std::to_string(cells.size() - 1) + " features, expected " +
                      std::to_string(dim));
    }
    auto it = label_ids.find(cells.back());
    if (it == label_ids.end()) throw DataError(where + ": unknown label '" + cells.back() + "'");
    for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
      try {
        current.features.push_back(parse_exact_decimal(cells[i]));
      } catch (const DataError&) {
        throw DataError(where + ": bad feature value '" + cells[i] + "'");
      }
    }
    current.labels.push_back(it->second);
    if (schema.kind == TaskKind::classification) flush();
  }
  flush();
  return out;
}

inline std::vector<Example> read_tsv_examples(const std::filesystem::path& path, const TsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_tsv_examples(in, schema, path.string());
}

/// Reads one TSV file as the train split of a corpus.
inline LanguageCorpus ingest_tsv(const std::filesystem::path& path, const TsvSchema& schema,
                                 std::string lang_id = {}, Role role = Role::target, std::string script_tag = {}) {
  LanguageCorpus c;
  c.lang_id = lang_id.empty() ? path.stem().string() : std::move(lang_id);
  c.script_tag = std::move(script_tag);
  c.role = role;
  c.train = read_tsv_examples(path, schema);
  return c;
}

inline void write_tsv(std::ostream& out, std::span<const Example> examples, const TsvSchema& schema,
                      std::size_t input_dim) {
  for (const auto& ex : examples) {
    for (std::size_t t = 0; t < ex.num_tokens(); ++t) {
      for (double v : ex.token(t, input_dim)) out << exact_decimal(v) << '\t';
      out << schema.labels.at(static_cast<std::size_t>(ex.labels[t])) << '\n';
    }
    if (schema.kind == TaskKind::token_tags) out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Shot sampling

/// k distinct train indices, sampled without replacement from a generator
/// keyed by (master seed, lang_id).
inline std::vector<std::size_t> sample_k_shots(const LanguageCorpus& corpus, std::size_t k, const RngStreams& streams) {
  const std::size_t n = corpus.train.size();
  if (k > n) {
    throw ContractError("sample_k_shots: '" + corpus.lang_id + "' has " + std::to_string(n) + " train examples, k = " +
                        std::to_string(k));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream rng = streams.derive(Substream::shot_sample, "k-shot/" + corpus.lang_id);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
  idx.resize(k);
  return idx;
}

/// Exactly k indices of every class, classes in ascending order. Classes are
/// 0..num_classes-1; a class with fewer than k examples is an error.
inline std::vector<std::size_t> sample_n_way_k_shot(const LanguageCorpus& corpus, std::size_t k, std::size_t num_classes,
                                                    const RngStreams& streams) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    const auto& labels = corpus.train[i].labels;
    if (labels.size() != 1) throw ContractError("sample_n_way_k_shot: requires single-label examples");
    const int y = labels[0];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw ContractError("sample_n_way_k_shot: label out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& pool = by_class[c];
    if (pool.size() < k) {
      throw ContractError("class " + std::to_string(c) + ": " + std::to_string(pool.size()) + " < " + std::to_string(k));
    }
    RngStream rng = streams.derive(Substream::shot_sample, "n-way/" + corpus.lang_id + "/" + std::to_string(c));
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

struct LanguageShots {
  std::string lang_id;
  std::vector<std::size_t> indices;
  friend bool operator==(const LanguageShots&, const LanguageShots&) = default;
};

struct ShotBank {
  std::size_t k = 0;
  bool n_way = false;
  std::vector<LanguageShots> langs;  // in target order

  const LanguageShots* find(const std::string& lang_id) const {
    for (const auto& l : langs) {
      if (l.lang_id == lang_id) return &l;
    }
    return nullptr;
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& l : langs) n += l.indices.size();
    return n;
  }
  friend bool operator==(const ShotBank&, const ShotBank&) = default;
};

/// Shots for every target. The bank depends only on (master seed, k, mode,
/// corpora); strategies never influence it.
inline ShotBank build_shot_bank(std::span<const LanguageCorpus> targets, std::size_t k, bool n_way,
                                std::size_t num_classes, const RngStreams& streams) {
  ShotBank bank{k, n_way, {}};
  for (const auto& t : targets) {
    bank.langs.push_back({t.lang_id, n_way ? sample_n_way_k_shot(t, k, num_classes, streams) : sample_k_shots(t, k, streams)});
  }
  return bank;
}

/// Read-only per-language views onto a ShotBank: the oracle data of a target
/// language is exactly its shots, same indices in the same order. Corpora
/// passed in must outlive the bank.
class OracleBank {
 public:
  OracleBank(std::shared_ptr<const ShotBank> shots, std::span<const LanguageCorpus> targets)
      : shots_(std::move(shots)) {
    if (!shots_) throw ContractError("OracleBank: null shot bank");
    for (const auto& l : shots_->langs) {
      const LanguageCorpus* corpus = nullptr;
      for (const auto& t : targets) {
        if (t.lang_id == l.lang_id) corpus = &t;
      }
      if (!corpus) throw ContractError("OracleBank: no corpus for '" + l.lang_id + "'");
      for (std::size_t i : l.indices) {
        if (i >= corpus->train.size()) throw ContractError("OracleBank: shot index out of range for '" + l.lang_id + "'");
      }
      corpora_.push_back(corpus);
    }
  }

  std::size_t size() const noexcept { return corpora_.size(); }
  bool empty() const noexcept { return corpora_.empty(); }
  const std::string& lang_id(std::size_t i) const { return shots_->langs.at(i).lang_id; }
  std::span<const std::size_t> indices(std::size_t i) const { return shots_->langs.at(i).indices; }
  const ShotBank& shots() const noexcept { return *shots_; }

  /// The full oracle dataset of language i as one batch.
  Batch batch(std::size_t i) const { return make_batch(corpora_.at(i)->train, indices(i)); }

 private:
  std::shared_ptr<const ShotBank> shots_;
  std::vector<const LanguageCorpus*> corpora_;
};

inline OracleBank build_oracle_bank(std::shared_ptr<const ShotBank> shots, std::span<const LanguageCorpus> targets) {
  return OracleBank(std::move(shots), targets);
}

// ---------------------------------------------------------------------------
// Pooled training data

struct PoolEntry {
  std::size_t lang = 0;   // index into MixedDataset::lang_ids
  std::size_t index = 0;  // train-split index within that language
  const Example* example = nullptr;
};

/// An ordered training pool with a seeded per-epoch shuffle. Batch keys are
/// pool positions.
class MixedDataset {
 public:
  MixedDataset(std::vector<std::string> lang_ids, std::vector<PoolEntry> pool, std::string shuffle_tag)
      : lang_ids_(std::move(lang_ids)), pool_(std::move(pool)), tag_(std::move(shuffle_tag)) {}

  std::size_t size() const noexcept { return pool_.size(); }
  const std::vector<PoolEntry>& pool() const noexcept { return pool_; }
  const std::vector<std::string>& lang_ids() const noexcept { return lang_ids_; }

  /// Pool positions in the order visited during `epoch`.
  std::vector<std::size_t> permutation(std::size_t epoch, const RngStreams& streams) const {
    std::vector<std::size_t> perm(pool_.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    RngStream rng = streams.derive(Substream::shuffle, tag_ + "/epoch/" + std::to_string(epoch));
    rng.shuffle(perm);
    return perm;
  }

  /// Consecutive batches of the epoch's permutation; the last one may be short.
  std::vector<Batch> batches(std::size_t batch_size, std::size_t epoch, const RngStreams& streams) const {
    if (batch_size == 0) throw ContractError("batch_size must be >= 1");
    if (pool_.empty()) throw ContractError("cannot iterate an empty training pool");
    const auto perm = permutation(epoch, streams);
    std::vector<Batch> out;
    for (std::size_t start = 0; start < perm.size(); start += batch_size) {
      Batch b;
      for (std::size_t i = start; i < std::min(perm.size(), start + batch_size); ++i) {
        b.push_back({perm[i], pool_[perm[i]].example});
      }
      out.push_back(std::move(b));
    }
    return out;
  }

 private:
  std::vector<std::string> lang_ids_;
  std::vector<PoolEntry> pool_;
  std::string tag_;
};

inline constexpr std::string_view kTrainShuffleTag = "train";

/// Full source train split followed by every target's shots (target order,
/// shot order).
inline MixedDataset build_mixed_dataset(const LanguageCorpus& source, std::span<const LanguageCorpus> targets,
                                        const ShotBank& shots) {
  std::vector<std::string> ids{source.lang_id};
  std::vector<PoolEntry> pool;
  for (std::size_t i = 0; i < source.train.size(); ++i) pool.push_back({0, i, &source.train[i]});
  for (const auto& l : shots.langs) {
    const LanguageCorpus* corpus = nullptr;
    for (const auto& t : targets) {
      if (t.lang_id == l.lang_id) corpus = &t;
    }
    if (!corpus) throw ContractError("build_mixed_dataset: no corpus for '" + l.lang_id + "'");
    ids.push_back(l.lang_id);
    for (std::size_t i : l.indices) pool.push_back({ids.size() - 1, i, &corpus->train.at(i)});
  }
  if (pool.empty()) throw ContractError("build_mixed_dataset: empty pool");
  return MixedDataset(std::move(ids), std::move(pool), std::string(kTrainShuffleTag));
}

/// Shots of the given target languages only (for target-adapting).
inline MixedDataset build_shot_pool(std::span<const LanguageCorpus> targets, const ShotBank& shots,
                                    const std::vector<std::string>& langs, std::string shuffle_tag) {
  std::vector<std::string> ids;
  std::vector<PoolEntry> pool;
  for (const auto& lang : langs) {
    const auto* l = shots.find(lang);
    if (!l) throw ContractError("build_shot_pool: no shots for '" + lang + "'");
    const LanguageCorpus* corpus = nullptr;
    for (const auto& t : targets) {
      if (t.lang_id == lang) corpus = &t;
    }
    if (!corpus) throw ContractError("build_shot_pool: no corpus for '" + lang + "'");
    ids.push_back(lang);
    for (std::size_t i : l->indices) pool.push_back({ids.size() - 1, i, &corpus->train.at(i)});
  }
  if (pool.empty()) throw ContractError("build_shot_pool: empty pool");
  return MixedDataset(std::move(ids), std::move(pool), std::move(shuffle_tag));
}

}  // namespace gradmix
