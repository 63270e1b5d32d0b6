#pragma once

// Experiment grid runner and artifact export.
//
// Layout of an output directory:
//   config.json                      resolved configuration
//   benchmark/manifest.json          corpus description
//   benchmark/<lang>/<split>.tsv     the data every run saw
//   runs/<strategy>/k<K>/seed<S>/    record.json, trace.jsonl, checkpoints/
//   analysis/simmatrix_<strategy>_k<K>.{csv,json}
//   aggregate.json
//   failures.json                    only when some cell failed
//   manifest.json                    every other file with its SHA-256

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "gradmix/analysis.hpp"
#include "gradmix/checkpoint.hpp"
#include "gradmix/corpora.hpp"
#include "gradmix/trainer.hpp"

namespace gradmix {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

struct TsvLanguage {
  std::string lang_id;
  std::string script_tag;
  Role role = Role::target;
  fs::path train, dev, test;  // dev and test may be empty
};

struct TsvBenchmark {
  TsvSchema schema;
  std::string outside_label;  // token tasks; defaults to the first label
  std::vector<TsvLanguage> languages;
};

struct AnalysisSettings {
  bool enabled = true;
  SimilarityConfig similarity;
  // "seed_final": last shared model of every seed. "epochs": every epoch of
  // the first seed's shared model.
  std::string checkpoints = "seed_final";
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::optional<SyntheticBenchmarkSpec> synthetic;
  std::optional<TsvBenchmark> tsv;
  std::size_t hidden_dim = 0;
  std::vector<Strategy> strategies;
  std::vector<std::size_t> ks;
  std::vector<std::uint64_t> seeds;
  TrainPlan plan;  // defaults; strategy, k and seed come from the grid
  AnalysisSettings analysis;
  bool save_checkpoints = true;

  void validate() const {
    if (synthetic.has_value() == tsv.has_value()) throw ContractError("config: exactly one of benchmark.synthetic / benchmark.tsv");
    if (strategies.empty()) throw ContractError("config: grid.strategies is empty");
    if (ks.empty()) throw ContractError("config: grid.ks is empty");
    if (seeds.empty()) throw ContractError("config: grid.seeds is empty");
    if (analysis.checkpoints != "seed_final" && analysis.checkpoints != "epochs") {
      throw ContractError("config: analysis.checkpoints must be 'seed_final' or 'epochs'");
    }
    for (auto s : strategies) {
      if (s == Strategy::zero_shot) continue;
      for (auto k : ks) {
        if (k == 0) throw ContractError("config: k = 0 is only meaningful for zero_shot");
      }
    }
  }
};

struct GridCell {
  Strategy strategy = Strategy::zero_shot;
  std::size_t k = 0;
  std::uint64_t seed = 0;

  std::string id() const {
    return to_string(strategy) + "/k" + std::to_string(k) + "/seed" + std::to_string(seed);
  }
  fs::path dir() const {
    return fs::path("runs") / to_string(strategy) / ("k" + std::to_string(k)) / ("seed" + std::to_string(seed));
  }
};

/// Cells in (strategy, k, seed) order. zero_shot runs once per seed at k = 0.
inline std::vector<GridCell> grid_cells(const ExperimentConfig& cfg) {
  std::vector<GridCell> out;
  for (auto s : cfg.strategies) {
    const std::vector<std::size_t> ks = s == Strategy::zero_shot ? std::vector<std::size_t>{0} : cfg.ks;
    for (auto k : ks) {
      for (auto seed : cfg.seeds) out.push_back({s, k, seed});
    }
  }
  return out;
}

namespace detail {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{"benchmark", "model", "grid", "plan", "analysis", "save_checkpoints"};
  return keys;
}

inline fs::path resolve(const fs::path& base, const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  fs::path p = j.at(key).get<std::string>();
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace detail

/// Parses a config document. Relative TSV paths resolve against `base_dir`.
/// A synthetic benchmark block is merged over the default shipped benchmark.
inline ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  if (!j.is_object()) throw ContractError("config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!detail::known_config_keys().count(key)) throw ContractError("config: unknown key '" + key + "'");
  }
  ExperimentConfig cfg;
  const auto& bench = j.at("benchmark");
  if (bench.contains("synthetic")) {
    nlohmann::json m = benchmark_manifest(default_benchmark_spec());
    m.merge_patch(bench.at("synthetic"));
    cfg.synthetic = benchmark_spec_from_json(m);
  }
  if (bench.contains("tsv")) {
    const auto& t = bench.at("tsv");
    TsvBenchmark b;
    b.schema.kind = task_kind_from_string(t.at("task").get<std::string>());
    b.schema.labels = t.at("labels").get<std::vector<std::string>>();
    if (b.schema.labels.size() < 2) throw ContractError("config: tsv benchmark needs >= 2 labels");
    b.outside_label = t.value("outside_label", b.schema.labels.front());
    for (const auto& lj : t.at("languages")) {
      TsvLanguage l;
      l.lang_id = lj.at("lang_id").get<std::string>();
      l.script_tag = lj.value("script", std::string{});
      l.role = role_from_string(lj.value("role", std::string("target")));
      l.train = detail::resolve(base_dir, lj, "train");
      l.dev = detail::resolve(base_dir, lj, "dev");
      l.test = detail::resolve(base_dir, lj, "test");
      if (l.train.empty()) throw ContractError("config: language '" + l.lang_id + "' has no train file");
      b.languages.push_back(std::move(l));
    }
    cfg.tsv = std::move(b);
  }
  if (j.contains("model")) cfg.hidden_dim = j.at("model").value("hidden_dim", cfg.hidden_dim);

  const auto& grid = j.at("grid");
  for (const auto& s : grid.at("strategies")) cfg.strategies.push_back(strategy_from_string(s.get<std::string>()));
  cfg.ks = grid.at("ks").get<std::vector<std::size_t>>();
  cfg.seeds = grid.at("seeds").get<std::vector<std::uint64_t>>();

  if (j.contains("plan")) {
    const auto& pj = j.at("plan");
    for (const char* fixed : {"strategy", "k", "seed"}) {
      if (pj.contains(fixed)) throw ContractError(std::string("config: plan.") + fixed + " is set by the grid");
    }
    cfg.plan = plan_from_json(pj);
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    cfg.analysis.enabled = a.value("enabled", cfg.analysis.enabled);
    cfg.analysis.similarity.source_batch_size = a.value("source_batch_size", cfg.analysis.similarity.source_batch_size);
    cfg.analysis.similarity.source_batches = a.value("source_batches", cfg.analysis.similarity.source_batches);
    cfg.analysis.checkpoints = a.value("checkpoints", cfg.analysis.checkpoints);
    cfg.analysis.seed = a.value("seed", cfg.analysis.seed);
  }
  cfg.save_checkpoints = j.value("save_checkpoints", cfg.save_checkpoints);
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

/// Resolved configuration; parsing it back yields the same experiment.
inline nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  if (cfg.synthetic) {
    j["benchmark"]["synthetic"] = benchmark_manifest(*cfg.synthetic);
  } else {
    const auto& b = *cfg.tsv;
    nlohmann::ordered_json t;
    t["task"] = to_string(b.schema.kind);
    t["labels"] = b.schema.labels;
    t["outside_label"] = b.outside_label;
    auto langs = nlohmann::ordered_json::array();
    for (const auto& l : b.languages) {
      nlohmann::ordered_json lj;
      lj["lang_id"] = l.lang_id;
      lj["script"] = l.script_tag;
      lj["role"] = to_string(l.role);
      lj["train"] = l.train.generic_string();
      lj["dev"] = l.dev.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(l.dev.generic_string());
      lj["test"] = l.test.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(l.test.generic_string());
      langs.push_back(std::move(lj));
    }
    t["languages"] = langs;
    j["benchmark"]["tsv"] = t;
  }
  j["model"] = {{"hidden_dim", cfg.hidden_dim}};
  auto strategies = nlohmann::ordered_json::array();
  for (auto s : cfg.strategies) strategies.push_back(to_string(s));
  j["grid"] = {{"strategies", strategies}, {"ks", cfg.ks}, {"seeds", cfg.seeds}};
  auto plan = to_json(cfg.plan);
  plan.erase("strategy");
  plan.erase("k");
  plan.erase("seed");
  // The effective values depend on the strategy; keep only explicit ones.
  if (!cfg.plan.adapt_batch_size) plan.erase("adapt_batch_size");
  if (!cfg.plan.selection) plan.erase("selection");
  j["plan"] = plan;
  j["analysis"] = {{"enabled", cfg.analysis.enabled},
                   {"source_batch_size", cfg.analysis.similarity.source_batch_size},
                   {"source_batches", cfg.analysis.similarity.source_batches},
                   {"checkpoints", cfg.analysis.checkpoints},
                   {"seed", cfg.analysis.seed}};
  j["save_checkpoints"] = cfg.save_checkpoints;
  return j;
}

// ---------------------------------------------------------------------------
// Benchmark materialisation

/// Corpora and model spec described by the config's benchmark block.
inline TaskData build_task(const ExperimentConfig& cfg) {
  TaskData task;
  std::vector<LanguageCorpus> corpora;
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    corpora = gen_synthetic_family(s);
    task.kind = s.task;
    task.spec = s.model_spec(cfg.hidden_dim);
    task.outside_label = 0;
  } else {
    const auto& b = *cfg.tsv;
    for (const auto& l : b.languages) {
      LanguageCorpus c = ingest_tsv(l.train, b.schema, l.lang_id, l.role, l.script_tag);
      if (!l.dev.empty()) c.dev = read_tsv_examples(l.dev, b.schema);
      if (!l.test.empty()) c.test = read_tsv_examples(l.test, b.schema);
      corpora.push_back(std::move(c));
    }
    if (corpora.empty() || corpora.front().train.empty()) throw DataError("tsv benchmark: no data");
    const auto& first = corpora.front().train.front();
    const std::size_t dim = first.features.size() / first.num_tokens();
    task.kind = b.schema.kind;
    task.spec = {b.schema.kind == TaskKind::classification ? ModelFamily::softmax_classifier : ModelFamily::mlp_token_tagger,
                 dim, cfg.hidden_dim, b.schema.labels.size()};
    const auto it = std::find(b.schema.labels.begin(), b.schema.labels.end(), b.outside_label);
    if (it == b.schema.labels.end()) throw ContractError("tsv benchmark: outside label '" + b.outside_label + "' not in labels");
    task.outside_label = static_cast<int>(it - b.schema.labels.begin());
  }
  std::size_t n_source = 0;
  for (auto& c : corpora) {
    if (c.role == Role::source) {
      ++n_source;
      task.source = std::move(c);
    } else {
      task.targets.push_back(std::move(c));
    }
  }
  if (n_source != 1) throw ContractError("benchmark must contain exactly one source language");
  validate_task(task.source, task.targets, task.spec);
  return task;
}

inline TsvSchema task_schema(const ExperimentConfig& cfg) {
  if (cfg.tsv) return cfg.tsv->schema;
  return {cfg.synthetic->task, cfg.synthetic->label_names()};
}

// ---------------------------------------------------------------------------
// Hashing and file helpers

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

inline void write_json(const fs::path& p, const nlohmann::ordered_json& j) { write_file(p, j.dump(2) + "\n"); }

/// Every regular file under `root` except manifest.json, sorted by relative
/// path, with its SHA-256.
inline nlohmann::ordered_json build_manifest(const fs::path& root) {
  std::vector<std::string> rel;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto r = fs::relative(e.path(), root).generic_string();
    if (r != "manifest.json") rel.push_back(r);
  }
  std::sort(rel.begin(), rel.end());
  auto files = nlohmann::ordered_json::array();
  for (const auto& r : rel) {
    const auto data = read_file(root / r);
    files.push_back({{"path", r}, {"bytes", data.size()}, {"sha256", sha256_hex(data)}});
  }
  return {{"format", "gradmix-manifest"}, {"version", 1}, {"files", files}};
}

// ---------------------------------------------------------------------------
// Running

struct CellFailure {
  std::string cell;
  std::string message;
};

struct ExperimentResult {
  std::size_t cells = 0;
  std::size_t succeeded = 0;
  std::vector<CellFailure> failures;
  AggregateReport aggregate;
  std::map<std::string, SimMatrix> similarity;  // "<strategy>_k<K>"

  int exit_code() const { return failures.empty() ? 0 : 1; }
};

namespace detail {

struct CellOutcome {
  bool ok = false;
  std::string error;
  RunRecord record;
  std::optional<ModelState> shared_final;
  std::vector<ModelState> shared_epochs;
};

inline void write_run(const fs::path& dir, const RunOutput& run, bool save_checkpoints) {
  write_json(dir / "record.json", to_json(run.record));
  if (!run.record.trace_ref.empty()) {
    std::string lines;
    for (const auto& e : run.trace) lines += to_json(e).dump() + "\n";
    write_file(dir / run.record.trace_ref, lines);
  }
  if (save_checkpoints) {
    for (std::size_t i = 0; i < run.checkpoints.size(); ++i) {
      save_checkpoint(run.checkpoints[i], dir / run.record.checkpoint_refs.at(i));
    }
  }
}

inline void write_benchmark(const fs::path& dir, const ExperimentConfig& cfg, const TaskData& task) {
  nlohmann::ordered_json m;
  if (cfg.synthetic) {
    m = benchmark_manifest(*cfg.synthetic);
  } else {
    m["task"] = to_string(task.kind);
    m["labels"] = cfg.tsv->schema.labels;
  }
  m["model"] = spec_to_json(task.spec);
  write_json(dir / "manifest.json", m);
  const TsvSchema schema = task_schema(cfg);
  auto dump = [&](const LanguageCorpus& c) {
    const std::pair<const char*, const std::vector<Example>*> splits[] = {
        {"train", &c.train}, {"dev", &c.dev}, {"test", &c.test}};
    for (const auto& [name, ex] : splits) {
      if (ex->empty()) continue;
      std::ostringstream out;
      write_tsv(out, *ex, schema, task.spec.input_dim);
      write_file(dir / c.lang_id / (std::string(name) + ".tsv"), out.str());
    }
  };
  dump(task.source);
  for (const auto& t : task.targets) dump(t);
}

// Clears the artifacts of a previous run. Refuses directories that hold
// anything but a previous experiment.
inline void prepare_output_dir(const fs::path& out) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw ContractError("output path is not a directory: " + out.string());
    if (!fs::is_empty(out) && !fs::exists(out / "config.json")) {
      throw ContractError("refusing to write into non-empty directory without an experiment: " + out.string());
    }
    for (const char* sub : {"runs", "analysis", "benchmark", "export"}) fs::remove_all(out / sub);
    for (const char* f : {"config.json", "aggregate.json", "failures.json", "manifest.json"}) fs::remove(out / f);
  }
  fs::create_directories(out);
}

inline std::string metric_name(TaskKind kind) { return kind == TaskKind::classification ? "accuracy" : "micro_f1"; }

}  // namespace detail

/// Runs the grid on `jobs` worker threads and writes the artifact tree.
/// Cell failures are recorded and do not stop the remaining cells.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out, std::size_t jobs = 1,
                                       std::ostream* log = nullptr) {
  cfg.validate();
  const TaskData task = build_task(cfg);
  detail::prepare_output_dir(out);
  write_json(out / "config.json", to_json(cfg));
  detail::write_benchmark(out / "benchmark", cfg, task);

  const auto cells = grid_cells(cfg);
  std::vector<detail::CellOutcome> outcomes(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;

  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto& cell = cells[i];
      auto& oc = outcomes[i];
      try {
        TrainPlan plan = cfg.plan;
        plan.strategy = cell.strategy;
        plan.k = cell.k;
        plan.seed = cell.seed;
        RunOutput run = run_strategy(plan, task);
        detail::write_run(out / cell.dir(), run, cfg.save_checkpoints);
        oc.shared_final = run.shared_final;
        if (run.shared_final && !run.checkpoints.empty()) {
          const std::string model = run.checkpoints.back().model;
          for (const auto& ck : run.checkpoints) {
            if (ck.model == model) oc.shared_epochs.push_back(ck.state);
          }
        }
        oc.record = std::move(run.record);
        oc.ok = true;
      } catch (const std::exception& e) {
        oc.error = e.what();
      }
      if (log) {
        std::lock_guard<std::mutex> lock(log_mu);
        *log << (oc.ok ? "done  " : "FAIL  ") << cell.id() << (oc.ok ? "" : ": " + oc.error) << '\n';
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExperimentResult result;
  result.cells = cells.size();
  std::vector<RunRecord> records;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (outcomes[i].ok) {
      ++result.succeeded;
      records.push_back(outcomes[i].record);
    } else {
      result.failures.push_back({cells[i].id(), outcomes[i].error});
    }
  }

  // Similarity matrices per (strategy, k) for strategies with a shared model.
  if (cfg.analysis.enabled) {
    std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].k > 0 && outcomes[i].ok && outcomes[i].shared_final) {
        groups[{static_cast<int>(cells[i].strategy), cells[i].k}].push_back(i);
      }
    }
    for (const auto& [key, idx] : groups) {
      const std::string name = to_string(static_cast<Strategy>(key.first)) + "_k" + std::to_string(key.second);
      try {
        std::vector<ModelState> models;
        std::vector<ShotBank> banks;
        if (cfg.analysis.checkpoints == "epochs") {
          const auto& first = outcomes[idx.front()];
          models = first.shared_epochs;
          banks.assign(models.size(), first.record.shots);
        } else {
          for (auto i : idx) {
            models.push_back(*outcomes[i].shared_final);
            banks.push_back(outcomes[i].record.shots);
          }
        }
        const SimMatrix m = similarity_matrix(models, task, banks, cfg.analysis.similarity, cfg.analysis.seed);
        std::ostringstream csv;
        write_sim_csv(csv, m);
        write_file(out / "analysis" / ("simmatrix_" + name + ".csv"), csv.str());
        write_json(out / "analysis" / ("simmatrix_" + name + ".json"), to_json(m));
        result.similarity.emplace(name, m);
      } catch (const std::exception& e) {
        result.failures.push_back({"analysis/" + name, e.what()});
      }
    }
  }

  if (!records.empty()) {
    result.aggregate = aggregate_runs(records);
    write_json(out / "aggregate.json", to_json(result.aggregate, detail::metric_name(task.kind)));
  }
  if (!result.failures.empty()) {
    auto fj = nlohmann::ordered_json::array();
    for (const auto& f : result.failures) fj.push_back({{"cell", f.cell}, {"error", f.message}});
    write_json(out / "failures.json", fj);
  }
  write_json(out / "manifest.json", build_manifest(out));
  return result;
}

// ---------------------------------------------------------------------------
// Export

/// "NN.NN ± N.NN" in percent.
inline std::string format_cell(const MeanSd& v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * v.mean, 100.0 * v.sd);
  return buf;
}

/// Plain-text summary: one block per K, one row per strategy, one column per
/// language (source first) and a final column averaging the targets only.
inline std::string render_table(const AggregateReport& rep, const std::vector<Strategy>& order) {
  std::vector<std::size_t> ks;
  for (const auto& c : rep.cells) ks.push_back(c.k);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  std::ostringstream out;
  for (auto k : ks) {
    std::vector<const AggregateCell*> rows;
    for (auto s : order) {
      if (const auto* c = rep.find(to_string(s), k)) rows.push_back(c);
    }
    if (rows.empty()) continue;
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> header{"K = " + std::to_string(k)};
    for (const auto& [lang, _] : rows.front()->languages) header.push_back(lang);
    header.push_back("avg");
    grid.push_back(header);
    for (const auto* c : rows) {
      std::vector<std::string> line{c->strategy};
      for (const auto& [_, v] : c->languages) line.push_back(format_cell(v));
      line.push_back(c->macro.n > 0 ? format_cell(c->macro) : "-");
      grid.push_back(std::move(line));
    }
    // Column widths in code points; the plus-minus sign is two bytes.
    auto width = [](const std::string& s) {
      std::size_t w = 0;
      for (unsigned char ch : s) w += (ch & 0xC0) != 0x80 ? 1 : 0;
      return w;
    };
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& line : grid) {
      for (std::size_t i = 0; i < line.size() && i < widths.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));
    }
    for (const auto& line : grid) {
      for (std::size_t i = 0; i < line.size(); ++i) {
        out << line[i];
        if (i + 1 < line.size()) out << std::string(widths[i] - width(line[i]) + 2, ' ');
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

struct ExportOptions {
  bool table = true;
};

/// Re-reads a finished run tree, writes export/table.txt (when requested)
/// and export/simmatrix_*.csv, and returns the table text.
inline std::string export_artifacts(const fs::path& dir, const ExportOptions& opts = {}) {
  if (!fs::exists(dir / "config.json")) throw DataError("no experiment found in " + dir.string());
  const ExperimentConfig cfg = config_from_json(nlohmann::json::parse(read_file(dir / "config.json")));
  const auto cells = grid_cells(cfg);

  std::vector<std::string> missing;
  std::vector<RunRecord> records;
  for (const auto& c : cells) {
    const fs::path p = dir / c.dir() / "record.json";
    if (!fs::exists(p)) {
      missing.push_back(c.id());
      continue;
    }
    records.push_back(run_record_from_json(nlohmann::json::parse(read_file(p))));
  }
  if (!missing.empty()) {
    std::string msg = "missing run records (" + std::to_string(missing.size()) + " of " + std::to_string(cells.size()) + "):";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }

  const fs::path export_dir = dir / "export";
  fs::create_directories(export_dir);
  std::string table;
  if (opts.table) {
    table = render_table(aggregate_runs(records), cfg.strategies);
    write_file(export_dir / "table.txt", table);
  }
  if (fs::exists(dir / "analysis")) {
    std::vector<fs::path> sims;
    for (const auto& e : fs::directory_iterator(dir / "analysis")) {
      if (e.path().extension() == ".json") sims.push_back(e.path());
    }
    std::sort(sims.begin(), sims.end());
    for (const auto& p : sims) {
      const SimMatrix m = sim_matrix_from_json(nlohmann::json::parse(read_file(p)));
      std::ostringstream csv;
      write_sim_csv(csv, m);
      write_file(export_dir / (p.stem().string() + ".csv"), csv.str());
    }
  }
  return table;
}

}  // namespace gradmix
