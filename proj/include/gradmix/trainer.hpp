#pragma once

// Training strategies for few-shot cross-lingual transfer:
//
//   zero_shot           source training only
//   ord_fs, ord_fs_dev  source training, then one model per target adapted on
//                       that target's shots (last checkpoint / target dev)
//   mix_ft              source training, then one model adapted on the
//                       concatenated shots of all targets
//   naive_mix_train     one-step training on source data plus all shots
//   gradient_mix_train  naive_mix_train with stochastic gradient surgery
//
// Epochs are 1-based in curves and selections; epoch 0 is the starting model
// of a phase and is only ever selected when the phase has zero epochs.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradmix/checkpoint.hpp"
#include "gradmix/corpora.hpp"
#include "gradmix/metrics.hpp"
#include "gradmix/models.hpp"
#include "gradmix/numcore.hpp"
#include "gradmix/surgery.hpp"

namespace gradmix {

enum class Strategy { zero_shot, ord_fs, ord_fs_dev, mix_ft, naive_mix_train, gradient_mix_train };
enum class Selection { source_dev, target_dev, last_checkpoint };

inline const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all{Strategy::zero_shot,   Strategy::ord_fs,          Strategy::ord_fs_dev,
                                         Strategy::mix_ft,      Strategy::naive_mix_train, Strategy::gradient_mix_train};
  return all;
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::zero_shot: return "zero_shot";
    case Strategy::ord_fs: return "ord_fs";
    case Strategy::ord_fs_dev: return "ord_fs_dev";
    case Strategy::mix_ft: return "mix_ft";
    case Strategy::naive_mix_train: return "naive_mix_train";
    case Strategy::gradient_mix_train: return "gradient_mix_train";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  for (auto st : all_strategies()) {
    if (to_string(st) == s) return st;
  }
  throw ContractError("unknown strategy '" + s + "'");
}

inline std::string to_string(Selection s) {
  switch (s) {
    case Selection::source_dev: return "source_dev";
    case Selection::target_dev: return "target_dev";
    case Selection::last_checkpoint: return "last_checkpoint";
  }
  return "?";
}

inline Selection selection_from_string(const std::string& s) {
  if (s == "source_dev") return Selection::source_dev;
  if (s == "target_dev") return Selection::target_dev;
  if (s == "last_checkpoint") return Selection::last_checkpoint;
  throw ContractError("unknown selection policy '" + s + "'");
}

inline bool is_two_step(Strategy s) {
  return s == Strategy::ord_fs || s == Strategy::ord_fs_dev || s == Strategy::mix_ft;
}

inline bool is_one_step(Strategy s) { return s == Strategy::naive_mix_train || s == Strategy::gradient_mix_train; }

struct TrainPlan {
  Strategy strategy = Strategy::zero_shot;
  std::size_t k = 0;
  bool n_way = false;  // N-way K-shot sampling (classification tasks)
  double alpha = 1.0;
  std::size_t source_epochs = 10;
  std::size_t adapt_epochs = 10;
  std::size_t batch_size = 32;
  std::optional<std::size_t> adapt_batch_size;  // defaults to k
  double lr = 2e-5;
  std::uint64_t seed = 0;
  std::optional<std::vector<std::string>> language_subset;  // nullopt = every target
  std::optional<Selection> selection;                       // nullopt = strategy default
  bool unrealistic_target_dev = false;
  bool lazy_oracle = false;

  Selection effective_selection() const {
    if (selection) return *selection;
    switch (strategy) {
      case Strategy::ord_fs:
      case Strategy::mix_ft: return Selection::last_checkpoint;
      case Strategy::ord_fs_dev: return Selection::target_dev;
      default: return Selection::source_dev;
    }
  }

  std::size_t effective_adapt_batch_size() const { return adapt_batch_size.value_or(k); }

  void validate() const {
    if (strategy == Strategy::zero_shot && k != 0) throw ContractError("zero_shot requires k = 0");
    if (strategy != Strategy::zero_shot && k == 0) throw ContractError(to_string(strategy) + " requires k >= 1");
    if (batch_size == 0) throw ContractError("batch_size must be >= 1");
    if (is_two_step(strategy) && effective_adapt_batch_size() == 0) throw ContractError("adapt_batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("lr must be finite and >= 0");
    SurgeryPolicy{alpha, lazy_oracle}.validate();
    const Selection sel = effective_selection();
    if (is_two_step(strategy) && sel == Selection::source_dev) {
      throw ContractError(to_string(strategy) + ": source_dev selection is not allowed for target-adapting");
    }
    if (strategy == Strategy::ord_fs_dev && sel != Selection::target_dev) {
      throw ContractError("ord_fs_dev selects by target dev");
    }
    if ((is_one_step(strategy) || strategy == Strategy::zero_shot) && sel == Selection::target_dev &&
        !unrealistic_target_dev) {
      throw ContractError(to_string(strategy) + ": target_dev selection requires unrealistic_target_dev");
    }
  }
};

inline nlohmann::ordered_json to_json(const TrainPlan& p) {
  nlohmann::ordered_json j;
  j["strategy"] = to_string(p.strategy);
  j["k"] = p.k;
  j["n_way"] = p.n_way;
  j["alpha"] = p.alpha;
  j["source_epochs"] = p.source_epochs;
  j["adapt_epochs"] = p.adapt_epochs;
  j["batch_size"] = p.batch_size;
  j["adapt_batch_size"] = p.effective_adapt_batch_size();
  j["lr"] = p.lr;
  j["seed"] = p.seed;
  j["language_subset"] = p.language_subset ? nlohmann::ordered_json(*p.language_subset) : nlohmann::ordered_json(nullptr);
  j["selection"] = to_string(p.effective_selection());
  j["unrealistic_target_dev"] = p.unrealistic_target_dev;
  j["lazy_oracle"] = p.lazy_oracle;
  return j;
}

/// Reads plan fields present in `j` on top of `base`.
inline TrainPlan plan_from_json(const nlohmann::json& j, TrainPlan base = {}) {
  TrainPlan p = std::move(base);
  if (j.contains("strategy")) p.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  p.k = j.value("k", p.k);
  p.n_way = j.value("n_way", p.n_way);
  p.alpha = j.value("alpha", p.alpha);
  p.source_epochs = j.value("source_epochs", p.source_epochs);
  p.adapt_epochs = j.value("adapt_epochs", p.adapt_epochs);
  p.batch_size = j.value("batch_size", p.batch_size);
  if (j.contains("adapt_batch_size") && !j.at("adapt_batch_size").is_null()) {
    p.adapt_batch_size = j.at("adapt_batch_size").get<std::size_t>();
  }
  p.lr = j.value("lr", p.lr);
  p.seed = j.value("seed", p.seed);
  if (j.contains("language_subset")) {
    if (j.at("language_subset").is_null()) {
      p.language_subset.reset();
    } else {
      p.language_subset = j.at("language_subset").get<std::vector<std::string>>();
    }
  }
  if (j.contains("selection") && !j.at("selection").is_null()) {
    p.selection = selection_from_string(j.at("selection").get<std::string>());
  }
  p.unrealistic_target_dev = j.value("unrealistic_target_dev", p.unrealistic_target_dev);
  p.lazy_oracle = j.value("lazy_oracle", p.lazy_oracle);
  return p;
}

/// Everything a run needs to know about the task. Corpora are not copied
/// by the trainer; keep the TaskData alive while results are in use.
struct TaskData {
  TaskKind kind = TaskKind::classification;
  ModelSpec spec;
  LanguageCorpus source;
  std::vector<LanguageCorpus> targets;
  int outside_label = 0;

  const LanguageCorpus& corpus(const std::string& lang_id) const {
    if (source.lang_id == lang_id) return source;
    for (const auto& t : targets) {
      if (t.lang_id == lang_id) return t;
    }
    throw ContractError("unknown language '" + lang_id + "'");
  }

  double evaluate_split(const ModelState& m, const std::vector<Example>& split) const {
    return gradmix::evaluate(m, split, kind, outside_label);
  }
};

// ---------------------------------------------------------------------------
// Phases

/// States after every epoch of one training phase. states[0] is the start.
struct PhaseResult {
  std::vector<ModelState> states;
  std::vector<SurgeryTraceEntry> trace;

  std::size_t epochs() const { return states.size() - 1; }
  const ModelState& final_state() const { return states.back(); }
};

/// Fixed-epoch SGD over `data`. With an oracle bank and policy, each step's
/// gradient passes through sgs_step first.
inline PhaseResult train_phase(const ModelState& start, const MixedDataset& data, std::size_t epochs,
                               std::size_t batch_size, double lr, RngStreams& streams,
                               const OracleBank* oracle = nullptr, const SurgeryPolicy* policy = nullptr) {
  PhaseResult out;
  out.states.push_back(start);
  ModelState state = start;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    for (const Batch& batch : data.batches(batch_size, epoch, streams)) {
      ParamVec g = loss_and_grad(state, batch).grad;
      if (oracle) {
        auto res = sgs_step(g, *oracle, state, *policy, streams);
        res.trace.step = step;
        out.trace.push_back(std::move(res.trace));
        g = std::move(res.grad);
      }
      state = sgd_step(state, g, lr);
      ++step;
    }
    out.states.push_back(state);
  }
  return out;
}

/// Source-only training from a fresh initialization.
inline PhaseResult run_source_training(const TrainPlan& plan, const LanguageCorpus& source, const ModelSpec& spec,
                                       RngStreams& streams) {
  if (source.train.empty()) throw ContractError("run_source_training: empty source train split");
  const ModelState init = init_params(spec, streams);
  const ShotBank none{};
  const auto data = build_mixed_dataset(source, {}, none);
  return train_phase(init, data, plan.source_epochs, plan.batch_size, plan.lr, streams);
}

/// Dev metric of `lang` after each epoch (states[1..]).
inline std::vector<double> dev_curve(const TaskData& task, const PhaseResult& phase, const LanguageCorpus& lang) {
  std::vector<double> curve;
  if (lang.dev.empty()) return curve;
  for (std::size_t e = 1; e < phase.states.size(); ++e) curve.push_back(task.evaluate_split(phase.states[e], lang.dev));
  return curve;
}

/// Earliest argmax, 1-based. An empty curve selects epoch 0.
inline std::size_t best_epoch(const std::vector<double>& curve) {
  if (curve.empty()) return 0;
  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i] > curve[best]) best = i;
  }
  return best + 1;
}

/// Selected epoch per language.
///   source_dev       argmax of the source curve for every language
///   target_dev       argmax of each language's own curve
///   last_checkpoint  the final epoch
inline std::map<std::string, std::size_t> select_model(const std::map<std::string, std::vector<double>>& curves,
                                                       const std::string& source_lang, Selection policy,
                                                       std::size_t epochs) {
  std::map<std::string, std::size_t> out;
  for (const auto& [lang, curve] : curves) {
    if (epochs > 0 && curve.size() != epochs && policy != Selection::last_checkpoint) {
      throw ContractError("select_model: dev curve for '" + lang + "' does not cover all epochs");
    }
  }
  for (const auto& [lang, curve] : curves) {
    switch (policy) {
      case Selection::last_checkpoint: out[lang] = epochs; break;
      case Selection::target_dev:
        if (epochs > 0 && curve.empty()) throw ContractError("target_dev selection: no dev split for '" + lang + "'");
        out[lang] = epochs == 0 ? 0 : best_epoch(curve);
        break;
      case Selection::source_dev: {
        auto it = curves.find(source_lang);
        if (it == curves.end()) throw ContractError("source_dev selection: no source dev curve");
        if (epochs > 0 && it->second.empty()) throw ContractError("source_dev selection: empty source dev split");
        out[lang] = epochs == 0 ? 0 : best_epoch(it->second);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

struct LanguageResult {
  std::string lang_id;
  Role role = Role::target;
  std::string model;  // name of the model that produced this language's metric
  std::vector<double> dev_curve;
  std::size_t selected_epoch = 0;
  double test_metric = 0.0;
};

struct SurgerySummary {
  std::size_t steps = 0;
  std::size_t conflicts = 0;
  std::size_t applied = 0;
};

struct RunRecord {
  TrainPlan plan;
  std::vector<LanguageResult> languages;  // source first, then targets in task order
  std::vector<std::string> checkpoint_refs;
  std::string trace_ref;
  std::optional<SurgerySummary> surgery;
  ShotBank shots;

  const LanguageResult* find(const std::string& lang) const {
    for (const auto& l : languages) {
      if (l.lang_id == lang) return &l;
    }
    return nullptr;
  }
};

/// A run's in-memory artifacts alongside its record.
struct RunOutput {
  RunRecord record;
  std::vector<Checkpoint> checkpoints;      // every epoch of every phase
  std::vector<SurgeryTraceEntry> trace;     // gradient_mix_train only
  std::optional<ModelState> shared_final;   // last-epoch shared model, when the strategy has one
};

inline std::string checkpoint_ref(const std::string& model, std::size_t epoch) {
  return "checkpoints/" + model + "/epoch_" + std::to_string(epoch) + ".json";
}

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["format"] = "gradmix-run-record";
  j["version"] = 1;
  j["plan"] = to_json(r.plan);
  auto shots = nlohmann::ordered_json::array();  // target order survives unordered parsers
  for (const auto& l : r.shots.langs) shots.push_back({{"lang_id", l.lang_id}, {"indices", l.indices}});
  j["shots"] = shots;
  auto langs = nlohmann::ordered_json::array();
  for (const auto& l : r.languages) {
    nlohmann::ordered_json lj;
    lj["lang_id"] = l.lang_id;
    lj["role"] = to_string(l.role);
    lj["model"] = l.model;
    lj["dev_curve"] = l.dev_curve;
    lj["selected_epoch"] = l.selected_epoch;
    lj["test_metric"] = l.test_metric;
    langs.push_back(std::move(lj));
  }
  j["languages"] = langs;
  if (r.surgery) {
    j["surgery"] = {{"steps", r.surgery->steps}, {"conflicts", r.surgery->conflicts}, {"applied", r.surgery->applied}};
  } else {
    j["surgery"] = nullptr;
  }
  j["trace_ref"] = r.trace_ref.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.trace_ref);
  j["checkpoints"] = r.checkpoint_refs;
  return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "gradmix-run-record") throw DataError("not a gradmix run record");
  RunRecord r;
  r.plan = plan_from_json(j.at("plan"));
  if (j.contains("shots")) {
    for (const auto& sj : j.at("shots")) {
      r.shots.langs.push_back({sj.at("lang_id").get<std::string>(), sj.at("indices").get<std::vector<std::size_t>>()});
    }
    r.shots.k = r.plan.k;
    r.shots.n_way = r.plan.n_way;
  }
  for (const auto& lj : j.at("languages")) {
    LanguageResult l;
    l.lang_id = lj.at("lang_id").get<std::string>();
    l.role = lj.at("role").get<std::string>() == "source" ? Role::source : Role::target;
    l.model = lj.value("model", "");
    l.dev_curve = lj.at("dev_curve").get<std::vector<double>>();
    l.selected_epoch = lj.at("selected_epoch").get<std::size_t>();
    l.test_metric = lj.at("test_metric").get<double>();
    r.languages.push_back(std::move(l));
  }
  if (j.contains("surgery") && !j.at("surgery").is_null()) {
    const auto& s = j.at("surgery");
    r.surgery = SurgerySummary{s.at("steps").get<std::size_t>(), s.at("conflicts").get<std::size_t>(),
                               s.at("applied").get<std::size_t>()};
  }
  if (j.contains("trace_ref") && !j.at("trace_ref").is_null()) r.trace_ref = j.at("trace_ref").get<std::string>();
  r.checkpoint_refs = j.value("checkpoints", std::vector<std::string>{});
  return r;
}

namespace detail {

inline std::vector<const LanguageCorpus*> active_targets(const TrainPlan& plan, const TaskData& task) {
  std::vector<const LanguageCorpus*> out;
  if (!plan.language_subset) {
    for (const auto& t : task.targets) out.push_back(&t);
    return out;
  }
  for (const auto& lang : *plan.language_subset) {
    const auto& c = task.corpus(lang);
    if (c.role != Role::target) throw ContractError("language_subset: '" + lang + "' is not a target");
    out.push_back(&c);
  }
  return out;
}

inline void record_phase(RunOutput& out, const PhaseResult& phase, const std::string& model, Strategy strategy) {
  for (std::size_t e = 1; e < phase.states.size(); ++e) {
    out.checkpoints.push_back({phase.states[e], static_cast<int>(e), to_string(strategy), model});
    out.record.checkpoint_refs.push_back(checkpoint_ref(model, e));
  }
}

}  // namespace detail

/// Shot bank over every target of the task. It depends on the seed, k and
/// sampling mode only.
inline ShotBank task_shot_bank(const TaskData& task, std::size_t k, bool n_way, std::uint64_t seed) {
  if (k == 0) {
    ShotBank empty{0, n_way, {}};
    for (const auto& t : task.targets) empty.langs.push_back({t.lang_id, {}});
    return empty;
  }
  const RngStreams streams(seed);
  return build_shot_bank(task.targets, k, n_way, task.spec.num_classes, streams);
}

/// Runs one strategy end to end and evaluates every active language on its
/// test split at the selected epoch.
inline RunOutput run_strategy(const TrainPlan& plan, const TaskData& task) {
  plan.validate();
  RngStreams streams(plan.seed);
  const auto targets = detail::active_targets(plan, task);
  if (plan.strategy == Strategy::gradient_mix_train && targets.empty()) {
    throw ContractError("gradient_mix_train requires at least one target language");
  }
  if (plan.strategy == Strategy::gradient_mix_train && targets.empty()) {
    throw ContractError("gradient_mix_train needs at least one target language");
  }

  RunOutput out;
  out.record.plan = plan;
  out.record.shots = task_shot_bank(task, plan.k, plan.n_way, plan.seed);
  ShotBank active_shots{plan.k, plan.n_way, {}};
  for (const auto* t : targets) active_shots.langs.push_back(*out.record.shots.find(t->lang_id));
  const auto shots = std::make_shared<const ShotBank>(active_shots);

  const std::string& src = task.source.lang_id;
  const Selection sel = plan.effective_selection();

  auto result_for = [&](const LanguageCorpus& c, const PhaseResult& phase, std::vector<double> curve,
                        std::size_t epoch, const std::string& model) {
    LanguageResult r;
    r.lang_id = c.lang_id;
    r.role = c.role;
    r.model = model;
    r.dev_curve = std::move(curve);
    r.selected_epoch = epoch;
    r.test_metric = c.test.empty() ? 0.0 : task.evaluate_split(phase.states.at(epoch), c.test);
    return r;
  };

  // Curves and selections of one shared-model phase over the given languages.
  auto shared_results = [&](const PhaseResult& phase, const std::vector<const LanguageCorpus*>& langs,
                            Selection policy, const std::string& model) {
    std::map<std::string, std::vector<double>> curves;
    for (const auto* c : langs) curves[c->lang_id] = dev_curve(task, phase, *c);
    const auto chosen = select_model(curves, src, policy, phase.epochs());
    std::vector<LanguageResult> res;
    for (const auto* c : langs) res.push_back(result_for(*c, phase, curves[c->lang_id], chosen.at(c->lang_id), model));
    return res;
  };

  std::vector<const LanguageCorpus*> all_langs{&task.source};
  all_langs.insert(all_langs.end(), targets.begin(), targets.end());

  if (plan.strategy == Strategy::zero_shot || is_two_step(plan.strategy)) {
    const PhaseResult source_phase = run_source_training(plan, task.source, task.spec, streams);
    detail::record_phase(out, source_phase, "source", plan.strategy);
    // The source stage always selects by source dev (last checkpoint if
    // requested for zero_shot).
    const Selection source_sel = plan.strategy == Strategy::zero_shot ? sel : Selection::source_dev;

    if (plan.strategy == Strategy::zero_shot) {
      out.record.languages = shared_results(source_phase, all_langs, source_sel, "source");
      out.shared_final = source_phase.final_state();
      return out;
    }

    const auto source_res = shared_results(source_phase, {&task.source}, source_sel, "source");
    out.record.languages.push_back(source_res.front());
    const ModelState& source_model = source_phase.states.at(source_res.front().selected_epoch);
    const std::size_t adapt_bs = plan.effective_adapt_batch_size();

    if (plan.strategy == Strategy::mix_ft) {
      std::vector<std::string> ids;
      for (const auto* t : targets) ids.push_back(t->lang_id);
      if (ids.empty()) return out;
      const auto pool = build_shot_pool(task.targets, *shots, ids, "adapt/mix_ft");
      const PhaseResult phase = train_phase(source_model, pool, plan.adapt_epochs, adapt_bs, plan.lr, streams);
      detail::record_phase(out, phase, "mix_ft", plan.strategy);
      for (auto& r : shared_results(phase, targets, sel, "mix_ft")) out.record.languages.push_back(std::move(r));
      out.shared_final = phase.final_state();
      return out;
    }

    for (const auto* t : targets) {
      if (sel == Selection::target_dev && t->dev.empty()) {
        throw ContractError("target_dev selection requested but '" + t->lang_id + "' has no dev split");
      }
      const auto pool = build_shot_pool(task.targets, *shots, {t->lang_id}, "adapt/" + t->lang_id);
      const PhaseResult phase = train_phase(source_model, pool, plan.adapt_epochs, adapt_bs, plan.lr, streams);
      detail::record_phase(out, phase, t->lang_id, plan.strategy);
      out.record.languages.push_back(shared_results(phase, {t}, sel, t->lang_id).front());
    }
    return out;
  }

  // One-step mixed training.
  ShotBank none{};
  const auto& pool_shots = targets.empty() ? none : *shots;
  const auto data = build_mixed_dataset(task.source, task.targets, pool_shots);
  std::optional<OracleBank> oracle;
  const SurgeryPolicy policy{plan.alpha, plan.lazy_oracle};
  if (plan.strategy == Strategy::gradient_mix_train) oracle.emplace(shots, task.targets);

  const ModelState init = init_params(task.spec, streams);
  PhaseResult phase = train_phase(init, data, plan.source_epochs, plan.batch_size, plan.lr, streams,
                                  oracle ? &*oracle : nullptr, oracle ? &policy : nullptr);
  detail::record_phase(out, phase, "shared", plan.strategy);
  out.record.languages = shared_results(phase, all_langs, sel, "shared");
  out.shared_final = phase.final_state();
  if (oracle) {
    SurgerySummary s;
    for (const auto& e : phase.trace) {
      ++s.steps;
      s.conflicts += e.conflicted ? 1 : 0;
      s.applied += e.applied ? 1 : 0;
    }
    out.record.surgery = s;
    out.record.trace_ref = "trace.jsonl";
    out.trace = std::move(phase.trace);
  }
  return out;
}

}  // namespace gradmix
