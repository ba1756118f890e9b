#pragma once

// Classification metrics: confusion matrices, accuracy, macro precision /
// recall / F1 over the classes present in the gold labels.

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "numscl/tensor.hpp"

namespace numscl {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [gold][pred]

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred,
                                        std::size_t classes) {
  if (gold.size() != pred.size()) throw Error("confusion_matrix: gold and prediction counts differ");
  ConfusionMatrix m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= classes || pred[i] >= classes) throw Error("confusion_matrix: label out of range");
    ++m[gold[i]][pred[i]];
  }
  return m;
}

struct ClassScores {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::size_t support = 0;

  nlohmann::json to_json() const {
    return {{"accuracy", accuracy}, {"macro_precision", macro_precision}, {"macro_recall", macro_recall},
            {"macro_f1", macro_f1}, {"support", support}};
  }
};

/// Scores from a confusion matrix; macro averages run over classes with gold support > 0,
/// and an undefined per-class precision or recall counts as 0.
inline ClassScores scores_from_confusion(const ConfusionMatrix& m) {
  const std::size_t k = m.size();
  ClassScores s;
  std::size_t correct = 0, total = 0, present = 0;
  for (std::size_t g = 0; g < k; ++g) {
    if (m[g].size() != k) throw Error("confusion matrix must be square");
    for (std::size_t p = 0; p < k; ++p) total += m[g][p];
    correct += m[g][g];
  }
  s.support = total;
  if (total == 0) return s;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t gold = 0, pred = 0;
    for (std::size_t j = 0; j < k; ++j) gold += m[c][j], pred += m[j][c];
    if (gold == 0) continue;
    ++present;
    const double tp = static_cast<double>(m[c][c]);
    const double p = pred ? tp / static_cast<double>(pred) : 0.0;
    const double r = tp / static_cast<double>(gold);
    s.macro_precision += p;
    s.macro_recall += r;
    s.macro_f1 += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  s.macro_precision /= static_cast<double>(present);
  s.macro_recall /= static_cast<double>(present);
  s.macro_f1 /= static_cast<double>(present);
  return s;
}

inline ClassScores classification_scores(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred,
                                         std::size_t classes) {
  return scores_from_confusion(confusion_matrix(gold, pred, classes));
}

/// Classes A and B both join the set when the count of A predicted as B exceeds the threshold.
inline std::set<std::size_t> confusing_classes(const ConfusionMatrix& m, double threshold) {
  if (threshold <= 0) throw Error("confusing_classes: threshold must be positive");
  std::set<std::size_t> out;
  for (std::size_t a = 0; a < m.size(); ++a) {
    if (m[a].size() != m.size()) throw Error("confusion matrix must be square");
    for (std::size_t b = 0; b < m.size(); ++b)
      if (a != b && static_cast<double>(m[a][b]) > threshold) out.insert(a), out.insert(b);
  }
  return out;
}

}  // namespace numscl
