#pragma once
// Metrics: confusion matrices, accuracy, sensitivity/specificity, ROC/AUC
// from a threshold sweep, rectangle Dice and center distance, k-fold
// splitting, percent agreement. Pure functions, safe for parallel use.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sij/errors.hpp"
#include "sij/rng.hpp"

namespace sij {

struct ConfusionMatrix {
  int n = 0;
  std::vector<std::int64_t> counts;  // rows = true class, columns = predicted

  explicit ConfusionMatrix(int n_classes = 0)
      : n(n_classes), counts(static_cast<std::size_t>(n_classes) * n_classes, 0) {}

  std::int64_t& at(int truth, int pred) {
    return counts[static_cast<std::size_t>(truth) * n + pred];
  }
  std::int64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * n + pred];
  }
  std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

  // Rows with no observations stay all-zero.
  std::vector<std::vector<double>> row_normalized() const {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n),
                                         std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int t = 0; t < n; ++t) {
      std::int64_t row = 0;
      for (int p = 0; p < n; ++p) row += at(t, p);
      if (row == 0) continue;
      for (int p = 0; p < n; ++p) out[t][p] = static_cast<double>(at(t, p)) / row;
    }
    return out;
  }
};

inline std::pair<ConfusionMatrix, double> confusion_and_accuracy(
    const std::vector<int>& truth, const std::vector<int>& pred, int n_classes) {
  if (truth.size() != pred.size())
    throw InvalidArgument("confusion_and_accuracy: length mismatch");
  if (truth.empty()) throw InvalidArgument("confusion_and_accuracy: empty label set");
  ConfusionMatrix cm(n_classes);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || pred[i] < 0 || pred[i] >= n_classes)
      throw InvalidArgument("confusion_and_accuracy: label out of range");
    ++cm.at(truth[i], pred[i]);
    hits += truth[i] == pred[i];
  }
  return {cm, static_cast<double>(hits) / static_cast<double>(truth.size())};
}

// positive: the class index treated as "positive" in the 2x2 matrix.
inline std::pair<double, double> sensitivity_specificity(const ConfusionMatrix& cm,
                                                         int positive) {
  if (cm.n != 2) throw InvalidArgument("sensitivity_specificity: matrix must be 2x2");
  if (positive != 0 && positive != 1)
    throw InvalidArgument("sensitivity_specificity: positive class must be 0 or 1");
  const int negative = 1 - positive;
  const std::int64_t tp = cm.at(positive, positive);
  const std::int64_t fn = cm.at(positive, negative);
  const std::int64_t tn = cm.at(negative, negative);
  const std::int64_t fp = cm.at(negative, positive);
  if (tp + fn == 0) throw InvalidArgument("sensitivity undefined: no positive cases in truth");
  if (tn + fp == 0) throw InvalidArgument("specificity undefined: no negative cases in truth");
  return {static_cast<double>(tp) / static_cast<double>(tp + fn),
          static_cast<double>(tn) / static_cast<double>(tn + fp)};
}

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (FPR, TPR), from (0,0) to (1,1)
  double auc = 0.0;
};

// Threshold sweep over all distinct scores (predicate: score > threshold);
// AUC by trapezoidal integration, which matches the Mann-Whitney statistic
// with ties credited one half.
inline RocCurve roc_auc(const std::vector<int>& truth, const std::vector<double>& scores) {
  if (truth.size() != scores.size()) throw InvalidArgument("roc_auc: length mismatch");
  std::int64_t n_pos = 0, n_neg = 0;
  for (const int t : truth) {
    if (t != 0 && t != 1) throw InvalidArgument("roc_auc: labels must be binary");
    (t == 1 ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0)
    throw InvalidArgument("roc_auc: both classes must be present");

  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.emplace_back(0.0, 0.0);
  double auc = 0.0;
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    // Consume the whole tie group before emitting a point; the resulting
    // diagonal segment is what gives ties half credit.
    std::int64_t d_tp = 0, d_fp = 0;
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (truth[order[i]] == 1 ? d_tp : d_fp) += 1;
      ++i;
    }
    const double fpr0 = static_cast<double>(fp) / static_cast<double>(n_neg);
    const double tpr0 = static_cast<double>(tp) / static_cast<double>(n_pos);
    tp += d_tp;
    fp += d_fp;
    const double fpr1 = static_cast<double>(fp) / static_cast<double>(n_neg);
    const double tpr1 = static_cast<double>(tp) / static_cast<double>(n_pos);
    auc += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0;
    roc.points.emplace_back(fpr1, tpr1);
  }
  if (roc.points.back() != std::make_pair(1.0, 1.0)) roc.points.emplace_back(1.0, 1.0);
  roc.auc = auc;
  return roc;
}

// Axis-aligned rectangle in one axial plane, mm units.
struct RectGeometry {
  double cx = 0.0, cy = 0.0;
  double width = 50.0, height = 25.0;
};

// Returns (Dice over areas, Euclidean center distance in mm).
inline std::pair<double, double> rect_overlap(const RectGeometry& a, const RectGeometry& b) {
  if (a.width <= 0.0 || a.height <= 0.0 || b.width <= 0.0 || b.height <= 0.0)
    throw InvalidArgument("rect_overlap: degenerate zero-area rectangle");
  const double ox = std::max(
      0.0, std::min(a.cx + a.width / 2, b.cx + b.width / 2) -
               std::max(a.cx - a.width / 2, b.cx - b.width / 2));
  const double oy = std::max(
      0.0, std::min(a.cy + a.height / 2, b.cy + b.height / 2) -
               std::max(a.cy - a.height / 2, b.cy - b.height / 2));
  const double inter = ox * oy;
  const double dice = 2.0 * inter / (a.width * a.height + b.width * b.height);
  const double dist = std::hypot(a.cx - b.cx, a.cy - b.cy);
  return {dice, dist};
}

// Disjoint folds covering [0, n_cases); sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n_cases, int k,
                                                         std::uint64_t seed) {
  if (k < 1 || static_cast<std::size_t>(k) > n_cases)
    throw InvalidArgument("kfold_split: need 1 <= k <= n");
  std::vector<std::size_t> perm(n_cases);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed, 0x6b666f6c64ULL);
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n_cases; ++i)
    folds[i % static_cast<std::size_t>(k)].push_back(perm[i]);
  return folds;
}

inline double percent_agreement(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw InvalidArgument("percent_agreement: length mismatch");
  if (a.empty()) throw InvalidArgument("percent_agreement: empty label set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hits += a[i] == b[i];
  return static_cast<double>(hits) / static_cast<double>(a.size());
}

}  // namespace sij
