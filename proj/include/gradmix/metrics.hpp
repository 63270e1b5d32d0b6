#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gradmix/corpora.hpp"
#include "gradmix/models.hpp"

namespace gradmix {

/// Token-level micro F1 over every tag other than `outside_label`.
/// A token counts as TP when prediction == gold != outside; FP when the
/// prediction is a non-outside tag that differs from gold; FN when gold is a
/// non-outside tag that the prediction misses. Returns 0 when P + R == 0.
inline double micro_f1(std::span<const int> predictions, std::span<const int> gold, int outside_label) {
  if (predictions.size() != gold.size()) throw ContractError("micro_f1: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const int p = predictions[i], g = gold[i];
    if (p == g) {
      if (g != outside_label) ++tp;
      continue;
    }
    if (p != outside_label) ++fp;
    if (g != outside_label) ++fn;
  }
  const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline double accuracy(std::span<const int> predictions, std::span<const int> gold) {
  if (predictions.size() != gold.size()) throw ContractError("accuracy: length mismatch");
  if (gold.empty()) throw ContractError("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predictions[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

/// Accuracy for classification, token micro-F1 (outside label excluded) for
/// tagging. Result is in [0, 1].
inline double evaluate(const ModelState& model, std::span<const Example> split, TaskKind kind, int outside_label = 0) {
  if (split.empty()) throw ContractError("evaluate: empty split");
  std::vector<int> pred, gold;
  for (const auto& ex : split) {
    const auto p = predict(model, ex);
    pred.insert(pred.end(), p.begin(), p.end());
    gold.insert(gold.end(), ex.labels.begin(), ex.labels.end());
  }
  return kind == TaskKind::classification ? accuracy(pred, gold) : micro_f1(pred, gold, outside_label);
}

}  // namespace gradmix
