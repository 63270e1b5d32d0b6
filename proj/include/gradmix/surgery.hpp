#pragma once

// Conflict test, gradient projection and the stochastic surgery step used by
// gradient-mix-train.

#include <cstddef>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gradmix/corpora.hpp"
#include "gradmix/models.hpp"
#include "gradmix/numcore.hpp"

namespace gradmix {

/// Two gradients conflict when their dot product is strictly negative.
/// A zero vector never conflicts.
inline bool is_conflicting(const ParamVec& a, const ParamVec& b) { return dot(a, b) < 0.0; }

/// Removes from g_s its component along g_t:
///   g_s - (g_s . g_t / |g_t|^2) g_t
inline ParamVec project_gradient(const ParamVec& g_s, const ParamVec& g_t) {
  require_same_dim(g_s, g_t, "project_gradient");
  const double denom = squared_norm(g_t);
  if (denom == 0.0) throw ContractError("project_gradient: zero-norm reference gradient");
  return add_scaled(g_s, -dot(g_s, g_t) / denom, g_t);
}

/// g_s projected off g_t when the two conflict; otherwise g_s itself.
inline ParamVec resolve_conflict(const ParamVec& g_s, const ParamVec& g_t) {
  return is_conflicting(g_s, g_t) ? project_gradient(g_s, g_t) : g_s;
}

struct SurgeryPolicy {
  double alpha = 1.0;
  // Skip computing the oracle gradient when p >= alpha. Trajectories are
  // unchanged; the trace then lacks cos_before/cos_after for skipped steps.
  bool lazy_oracle = false;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("SurgeryPolicy: alpha must be in [0, 1]");
  }
};

struct SurgeryTraceEntry {
  std::size_t step = 0;
  std::string picked_lang;
  double p_value = 0.0;
  bool conflicted = false;
  bool applied = false;
  std::optional<double> cos_before;
  std::optional<double> cos_after;
};

inline nlohmann::ordered_json to_json(const SurgeryTraceEntry& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["picked_lang"] = e.picked_lang;
  j["p_value"] = e.p_value;
  j["conflicted"] = e.conflicted;
  j["applied"] = e.applied;
  j["cos_before"] = e.cos_before ? nlohmann::ordered_json(*e.cos_before) : nlohmann::ordered_json(nullptr);
  j["cos_after"] = e.cos_after ? nlohmann::ordered_json(*e.cos_after) : nlohmann::ordered_json(nullptr);
  return j;
}

struct SurgeryResult {
  ParamVec grad;
  SurgeryTraceEntry trace;
};

/// One stochastic surgery step. Draws the language (lang_pick) and then p
/// (surgery_p) on every call regardless of the outcome, so a run with
/// alpha = 0 consumes the other substreams exactly like naive mixed training.
inline SurgeryResult sgs_step(const ParamVec& g_train, const OracleBank& oracle, const ModelState& model,
                              const SurgeryPolicy& policy, RngStreams& streams) {
  if (oracle.empty()) throw ContractError("sgs_step: empty oracle bank (gradient-mix-train needs >= 1 target)");
  policy.validate();

  const std::size_t lang = streams.stream(Substream::lang_pick).uniform_index(oracle.size());
  SurgeryTraceEntry trace;
  trace.picked_lang = oracle.lang_id(lang);

  // Draw order is fixed: language, then p.
  std::optional<ParamVec> g_oracle;
  if (!policy.lazy_oracle) g_oracle = loss_and_grad(model, oracle.batch(lang)).grad;
  trace.p_value = streams.stream(Substream::surgery_p).uniform01();
  const bool wants = trace.p_value < policy.alpha;
  if (!g_oracle && wants) g_oracle = loss_and_grad(model, oracle.batch(lang)).grad;

  if (!g_oracle) return {g_train, trace};

  trace.cos_before = cosine_similarity(g_train, *g_oracle);
  trace.conflicted = is_conflicting(*g_oracle, g_train);
  if (trace.conflicted && wants) {
    ParamVec out = resolve_conflict(g_train, *g_oracle);
    trace.applied = true;
    trace.cos_after = cosine_similarity(out, *g_oracle);
    return {std::move(out), trace};
  }
  trace.cos_after = trace.cos_before;
  return {g_train, trace};
}

}  // namespace gradmix
