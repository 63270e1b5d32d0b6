#pragma once

// Cross-language gradient similarity, conflict statistics, run aggregation
// and overfitting flags.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradmix/checkpoint.hpp"
#include "gradmix/corpora.hpp"
#include "gradmix/metrics.hpp"
#include "gradmix/models.hpp"
#include "gradmix/numcore.hpp"
#include "gradmix/trainer.hpp"

namespace gradmix {

// ---------------------------------------------------------------------------
// Language gradients

/// Mean gradient over `n_batches` batches, each `batch_size` distinct train
/// examples drawn uniformly.
inline ParamVec source_language_gradient(const ModelState& model, const LanguageCorpus& corpus, std::size_t batch_size,
                                         std::size_t n_batches, RngStream& rng) {
  const std::size_t n = corpus.train.size();
  if (n == 0) throw ContractError("language_gradient: '" + corpus.lang_id + "' has no train data");
  if (batch_size == 0 || n_batches == 0) throw ContractError("language_gradient: batch_size and n_batches must be >= 1");
  const std::size_t bs = std::min(batch_size, n);
  ParamVec sum(model.theta.dim());
  std::vector<std::size_t> idx(n);
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < bs; ++i) std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
    const auto g = loss_and_grad(model, make_batch(corpus.train, std::span(idx).first(bs))).grad;
    for (std::size_t d = 0; d < g.dim(); ++d) sum[d] += g[d];
  }
  return scaled(sum, 1.0 / static_cast<double>(n_batches));
}

/// Full-batch gradient over a target's shots.
inline ParamVec target_language_gradient(const ModelState& model, const LanguageCorpus& corpus,
                                         std::span<const std::size_t> shots) {
  if (shots.empty()) throw ContractError("language_gradient: '" + corpus.lang_id + "' has no shots");
  return loss_and_grad(model, make_batch(corpus.train, shots)).grad;
}

// ---------------------------------------------------------------------------
// Similarity matrices

/// Symmetric matrix of pairwise cosine similarities; std::nullopt = missing.
struct SimMatrix {
  std::vector<std::string> langs;
  std::vector<std::optional<double>> values;  // row-major n x n

  std::size_t size() const noexcept { return langs.size(); }
  const std::optional<double>& at(std::size_t i, std::size_t j) const { return values.at(i * langs.size() + j); }
  std::optional<double>& at(std::size_t i, std::size_t j) { return values.at(i * langs.size() + j); }
};

struct SimilarityConfig {
  std::size_t source_batch_size = 32;
  std::size_t source_batches = 100;
};

/// Pairwise matrix for one set of language gradients. Each unordered pair
/// is computed once.
inline SimMatrix similarity_of(const std::vector<std::string>& langs, const std::vector<ParamVec>& grads) {
  SimMatrix m{langs, std::vector<std::optional<double>>(langs.size() * langs.size())};
  for (std::size_t i = 0; i < langs.size(); ++i) {
    m.at(i, i) = norm(grads[i]) > 0.0 ? std::optional<double>(1.0) : std::nullopt;
    for (std::size_t j = i + 1; j < langs.size(); ++j) {
      const auto c = cosine_similarity(grads[i], grads[j]);
      m.at(i, j) = c;
      m.at(j, i) = c;
    }
  }
  return m;
}

/// Per checkpoint, the source gradient (averaged over random batches) and
/// every target's shot gradient, pairwise cosine similarities; matrices are
/// averaged elementwise over checkpoints. A cell missing in any checkpoint
/// stays missing.
///
/// `shots[c]` holds the target shots used with checkpoint c, so seed-final
/// checkpoints can each bring the bank of their own run. All banks must list
/// the same languages in the same order.
inline SimMatrix similarity_matrix(const std::vector<ModelState>& checkpoints, const TaskData& task,
                                   const std::vector<ShotBank>& banks, const SimilarityConfig& cfg,
                                   std::uint64_t seed) {
  if (checkpoints.empty()) throw ContractError("similarity_matrix: no checkpoints");
  if (banks.size() != checkpoints.size()) throw ContractError("similarity_matrix: one shot bank per checkpoint required");
  std::vector<std::string> langs{task.source.lang_id};
  for (const auto& l : banks.front().langs) langs.push_back(l.lang_id);
  for (const auto& b : banks) {
    if (b.langs.size() + 1 != langs.size()) throw ContractError("similarity_matrix: shot banks cover different languages");
    for (std::size_t i = 0; i < b.langs.size(); ++i) {
      if (b.langs[i].lang_id != langs[i + 1]) throw ContractError("similarity_matrix: shot banks cover different languages");
    }
  }
  const std::size_t n = langs.size();
  const RngStreams streams(seed);

  std::vector<double> sum(n * n, 0.0);
  std::vector<bool> missing(n * n, false);
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    RngStream rng = streams.derive(Substream::shuffle, "language-gradient/" + std::to_string(c));
    std::vector<ParamVec> grads;
    grads.push_back(source_language_gradient(checkpoints[c], task.source, cfg.source_batch_size, cfg.source_batches, rng));
    for (const auto& l : banks[c].langs) {
      grads.push_back(target_language_gradient(checkpoints[c], task.corpus(l.lang_id), l.indices));
    }
    const SimMatrix m = similarity_of(langs, grads);
    for (std::size_t i = 0; i < n * n; ++i) {
      if (m.values[i]) {
        sum[i] += *m.values[i];
      } else {
        missing[i] = true;
      }
    }
  }
  SimMatrix out{langs, std::vector<std::optional<double>>(n * n)};
  const double count = static_cast<double>(checkpoints.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      if (missing[i * n + j]) continue;
      const double v = sum[i * n + j] / count;
      out.at(i, j) = v;
      out.at(j, i) = v;
    }
  }
  return out;
}

inline SimMatrix similarity_matrix(const std::vector<ModelState>& checkpoints, const TaskData& task,
                                   const ShotBank& shots, const SimilarityConfig& cfg, std::uint64_t seed) {
  return similarity_matrix(checkpoints, task, std::vector<ShotBank>(checkpoints.size(), shots), cfg, seed);
}

/// Share of present off-diagonal pairs whose similarity is strictly negative.
inline double conflict_fraction(const SimMatrix& m) {
  std::size_t present = 0, negative = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = i + 1; j < m.size(); ++j) {
      if (!m.at(i, j)) continue;
      ++present;
      negative += *m.at(i, j) < 0.0 ? 1 : 0;
    }
  }
  if (present == 0) throw ContractError("conflict_fraction: no present off-diagonal entries");
  return static_cast<double>(negative) / static_cast<double>(present);
}

/// CSV with a leading label column: ",l1,l2,...", then one row per language.
/// Missing cells are empty.
inline void write_sim_csv(std::ostream& out, const SimMatrix& m) {
  for (const auto& l : m.langs) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.langs[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      out << ',';
      if (m.at(i, j)) out << exact_decimal(*m.at(i, j));
    }
    out << '\n';
  }
}

inline nlohmann::ordered_json to_json(const SimMatrix& m) {
  nlohmann::ordered_json j;
  j["langs"] = m.langs;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < m.size(); ++k) {
      row.push_back(m.at(i, k) ? nlohmann::ordered_json(*m.at(i, k)) : nlohmann::ordered_json(nullptr));
    }
    rows.push_back(std::move(row));
  }
  j["values"] = rows;
  return j;
}

inline SimMatrix sim_matrix_from_json(const nlohmann::json& j) {
  SimMatrix m;
  m.langs = j.at("langs").get<std::vector<std::string>>();
  const auto& rows = j.at("values");
  if (rows.size() != m.langs.size()) throw DataError("sim matrix: row count mismatch");
  for (const auto& row : rows) {
    if (row.size() != m.langs.size()) throw DataError("sim matrix: ragged row");
    for (const auto& v : row) m.values.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Aggregation

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

/// Mean and sample standard deviation (n - 1). Values are summed in sorted
/// order, so the result does not depend on input order; n == 1 gives sd 0.
inline MeanSd mean_sd(std::vector<double> values) {
  if (values.empty()) throw ContractError("mean_sd: no values");
  std::sort(values.begin(), values.end());
  MeanSd r;
  r.n = values.size();
  double s = 0.0;
  for (double v : values) s += v;
  r.mean = s / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(r.n - 1));
  }
  return r;
}

struct AggregateCell {
  std::string strategy;
  std::size_t k = 0;
  std::size_t n_seeds = 0;
  bool single_seed = false;
  std::vector<std::pair<std::string, MeanSd>> languages;  // task order, source first
  MeanSd macro;                                           // over target languages only
};

struct AggregateReport {
  std::vector<AggregateCell> cells;  // sorted by (strategy order, k)

  const AggregateCell* find(const std::string& strategy, std::size_t k) const {
    for (const auto& c : cells) {
      if (c.strategy == strategy && c.k == k) return &c;
    }
    return nullptr;
  }
};

/// Groups records by (strategy, k); per language and for the per-run macro
/// average over targets, reports mean and sample sd across seeds.
inline AggregateReport aggregate_runs(const std::vector<RunRecord>& records) {
  std::map<std::pair<int, std::size_t>, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) groups[{static_cast<int>(r.plan.strategy), r.plan.k}].push_back(&r);

  AggregateReport report;
  for (const auto& [key, group] : groups) {
    AggregateCell cell;
    cell.strategy = to_string(static_cast<Strategy>(key.first));
    cell.k = key.second;
    cell.n_seeds = group.size();
    cell.single_seed = group.size() == 1;

    // Language order from the first record; every record must match it.
    std::vector<std::string> order;
    std::map<std::string, Role> roles;
    for (const auto& l : group.front()->languages) {
      order.push_back(l.lang_id);
      roles[l.lang_id] = l.role;
    }
    std::vector<double> macros;
    std::map<std::string, std::vector<double>> per_lang;
    for (const auto* r : group) {
      if (r->languages.size() != order.size()) throw ContractError("aggregate_runs: records of one cell cover different languages");
      double s = 0.0;
      std::size_t n = 0;
      for (const auto& l : r->languages) {
        if (!roles.count(l.lang_id)) throw ContractError("aggregate_runs: records of one cell cover different languages");
        per_lang[l.lang_id].push_back(l.test_metric);
        if (l.role == Role::target) {
          s += l.test_metric;
          ++n;
        }
      }
      if (n > 0) macros.push_back(s / static_cast<double>(n));
    }
    for (const auto& lang : order) cell.languages.emplace_back(lang, mean_sd(per_lang[lang]));
    if (!macros.empty()) cell.macro = mean_sd(macros);
    report.cells.push_back(std::move(cell));
  }
  return report;
}

inline nlohmann::ordered_json to_json(const AggregateReport& rep, const std::string& metric) {
  nlohmann::ordered_json j;
  j["format"] = "gradmix-aggregate";
  j["metric"] = metric;
  auto cells = nlohmann::ordered_json::array();
  for (const auto& c : rep.cells) {
    nlohmann::ordered_json cj;
    cj["strategy"] = c.strategy;
    cj["k"] = c.k;
    cj["n_seeds"] = c.n_seeds;
    cj["single_seed"] = c.single_seed;
    auto langs = nlohmann::ordered_json::array();
    for (const auto& [lang, ms] : c.languages) {
      langs.push_back({{"lang_id", lang}, {"mean", ms.mean}, {"sd", ms.sd}});
    }
    cj["languages"] = langs;
    cj["macro_targets"] = {{"mean", c.macro.mean}, {"sd", c.macro.sd}, {"n", c.macro.n}};
    cells.push_back(std::move(cj));
  }
  j["cells"] = cells;
  return j;
}

inline AggregateReport aggregate_from_json(const nlohmann::json& j) {
  AggregateReport rep;
  for (const auto& cj : j.at("cells")) {
    AggregateCell c;
    c.strategy = cj.at("strategy").get<std::string>();
    c.k = cj.at("k").get<std::size_t>();
    c.n_seeds = cj.at("n_seeds").get<std::size_t>();
    c.single_seed = cj.at("single_seed").get<bool>();
    for (const auto& lj : cj.at("languages")) {
      c.languages.emplace_back(lj.at("lang_id").get<std::string>(),
                               MeanSd{lj.at("mean").get<double>(), lj.at("sd").get<double>(), c.n_seeds});
    }
    const auto& m = cj.at("macro_targets");
    c.macro = {m.at("mean").get<double>(), m.at("sd").get<double>(), m.at("n").get<std::size_t>()};
    rep.cells.push_back(std::move(c));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Overfitting

/// Target languages whose dev curve peaks at epoch 1 (earliest-tie rule).
inline std::map<std::string, bool> overfit_flags(const RunRecord& record) {
  std::map<std::string, bool> flags;
  for (const auto& l : record.languages) {
    if (l.role != Role::target || l.dev_curve.empty()) continue;
    flags[l.lang_id] = best_epoch(l.dev_curve) == 1;
  }
  return flags;
}

}  // namespace gradmix
