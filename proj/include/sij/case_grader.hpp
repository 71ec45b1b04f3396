#pragma once
// Slice-to-case aggregation: the clinical rule criterion, run-length
// features, case forest training with shared-draw augmentation rounds,
// ensemble prediction, threshold tuning, two-step classification,
// latent-space / one-hot embedding matrices, and the alternating
// grader-plus-forest training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sij/augment.hpp"
#include "sij/errors.hpp"
#include "sij/eval.hpp"
#include "sij/forest.hpp"
#include "sij/rect.hpp"
#include "sij/rng.hpp"
#include "sij/slice_grader.hpp"

namespace sij {

using SliceGradeVector = std::vector<int>;

enum class CaseGrade : int { healthy = 0, suspicious = 1, sick = 2 };
enum class TwoClassGrade : int { healthy = 0, unhealthy = 1 };

inline TwoClassGrade two_class_view(CaseGrade g) {
  return g == CaseGrade::healthy ? TwoClassGrade::healthy : TwoClassGrade::unhealthy;
}

inline const char* to_string(CaseGrade g) {
  switch (g) {
    case CaseGrade::healthy: return "healthy";
    case CaseGrade::suspicious: return "suspicious";
    default: return "sick";
  }
}
inline const char* to_string(TwoClassGrade g) {
  return g == TwoClassGrade::healthy ? "healthy" : "unhealthy";
}

namespace detail {

inline int longest_run(const SliceGradeVector& sgv, int grade) {
  int best = 0, cur = 0;
  for (const int g : sgv) {
    cur = g == grade ? cur + 1 : 0;
    best = std::max(best, cur);
  }
  return best;
}

}  // namespace detail

// Rule criterion over five-class slice grades:
//   sick:       two or more grade-4 slices, or a grade-3 run of length >= 3
//   suspicious: otherwise, grade-2 slices make up at least `suspicious_fraction`
//   healthy:    otherwise
inline CaseGrade rule_case_grade(const SliceGradeVector& sgv,
                                 double suspicious_fraction = 0.30) {
  if (sgv.empty()) throw InvalidArgument("rule_case_grade: empty slice-grade vector");
  int count2 = 0, count4 = 0;
  for (const int g : sgv) {
    if (g < 0 || g > 4) throw InvalidArgument("rule_case_grade: grade outside [0, 4]");
    count2 += g == 2;
    count4 += g == 4;
  }
  if (count4 >= 2 || detail::longest_run(sgv, 3) >= 3) return CaseGrade::sick;
  if (static_cast<double>(count2) >=
      suspicious_fraction * static_cast<double>(sgv.size()))
    return CaseGrade::suspicious;
  return CaseGrade::healthy;
}

// For each class in order: (longest run length, second-longest run length),
// zeros when the class is absent.
inline std::vector<float> runlength_features(const SliceGradeVector& sgv, int num_classes) {
  if (sgv.empty()) throw InvalidArgument("runlength_features: empty slice-grade vector");
  for (const int g : sgv)
    if (g < 0 || g >= num_classes)
      throw InvalidArgument("runlength_features: grade outside class range");
  std::vector<float> features(2 * static_cast<std::size_t>(num_classes), 0.0f);
  for (int cls = 0; cls < num_classes; ++cls) {
    int first = 0, second = 0, cur = 0;
    for (std::size_t i = 0; i <= sgv.size(); ++i) {
      if (i < sgv.size() && sgv[i] == cls) {
        ++cur;
        continue;
      }
      if (cur > first) {
        second = first;
        first = cur;
      } else if (cur > second) {
        second = cur;
      }
      cur = 0;
    }
    features[2 * static_cast<std::size_t>(cls)] = static_cast<float>(first);
    features[2 * static_cast<std::size_t>(cls) + 1] = static_cast<float>(second);
  }
  return features;
}

// ---------------------------------------------------------------------------
// Case forest training

// One joint's ordered ROI rectangles with its case label.
struct CaseSample {
  std::string id;
  std::vector<RectSample> rects;
  int label = 0;
};

struct CaseTrainingSet {
  std::vector<std::vector<float>> features;
  std::vector<int> labels;
  std::vector<std::string> ids;    // per row
  std::vector<int> rounds;         // 0 = unaugmented, then 1..n_aug
  std::vector<int> ks;             // slice count of the source vector, per row
};

// Per case: the unaugmented slice-grade vector's features plus n_aug rounds
// where every rectangle is augmented with one shared parameter draw and
// re-graded; rows = |cases| * (n_aug + 1). Streams are keyed by
// (seed, case id, round) so the table is schedule-independent.
inline CaseTrainingSet build_case_training_set(const std::vector<CaseSample>& cases,
                                               const CnnSliceGrader& grader, int n_aug,
                                               const AugmentParams& aug, std::uint64_t seed) {
  CaseTrainingSet out;
  const int m = grader.n_classes();
  for (const auto& cs : cases) {
    if (cs.rects.empty())
      throw InvalidArgument("build_case_training_set: case '" + cs.id + "' has no rectangles");
    const std::uint64_t case_key = splitmix64(std::hash<std::string>{}(cs.id));
    for (int round = 0; round <= n_aug; ++round) {
      std::vector<ImageF> images;
      std::vector<const ImageF*> ptrs;
      ptrs.reserve(cs.rects.size());
      if (round == 0) {
        for (const auto& r : cs.rects) ptrs.push_back(&r.pixels);
      } else {
        Rng rng(seed, case_key, static_cast<std::uint64_t>(round));
        const auto draw =
            draw_affine(aug, cs.rects[0].pixels.rows, cs.rects[0].pixels.cols, rng);
        images.reserve(cs.rects.size());
        for (const auto& r : cs.rects) images.push_back(apply_affine(r.pixels, draw));
        for (const auto& img : images) ptrs.push_back(&img);
      }
      const auto grades = grader.grade_batch(ptrs);
      out.features.push_back(runlength_features(grades, m));
      out.labels.push_back(cs.label);
      out.ids.push_back(cs.id);
      out.rounds.push_back(round);
      out.ks.push_back(static_cast<int>(grades.size()));
    }
  }
  return out;
}

// CSV export for cross-tool experiments: one row per case/round holding the
// case id, round index, slice count, the feature vector and the label.
inline void save_case_training_csv(const CaseTrainingSet& table,
                                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t n_features = table.features.empty() ? 0 : table.features[0].size();
  out << "case,round,k";
  for (std::size_t f = 0; f < n_features; ++f) out << ",f" << f;
  out << ",label\n";
  for (std::size_t r = 0; r < table.features.size(); ++r) {
    out << table.ids[r] << ',' << table.rounds[r] << ',' << table.ks[r];
    for (const auto v : table.features[r]) out << ',' << v;
    out << ',' << table.labels[r] << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline Forest train_case_rf(const std::vector<std::vector<float>>& features,
                            const std::vector<int>& labels, std::uint64_t seed,
                            int n_trees = 500, int max_depth = 4) {
  ForestParams params;
  params.n_trees = n_trees;
  params.max_depth = max_depth;
  params.seed = seed;
  return train_forest(features, labels, params);
}

// ---------------------------------------------------------------------------
// Prediction

constexpr int kEnsembleSize = 6;

struct EnsemblePrediction {
  int cls = 0;                  // argmax of the summed vector; ties -> healthier
  std::vector<double> summed;   // componentwise sum of the member vectors
};

inline EnsemblePrediction ensemble_predict(const std::vector<Forest>& forests,
                                           std::span<const float> x) {
  if (static_cast<int>(forests.size()) != kEnsembleSize)
    throw InvalidArgument("ensemble_predict: expected exactly " +
                          std::to_string(kEnsembleSize) + " forests");
  const int m = forests.front().n_classes;
  for (const auto& f : forests)
    if (f.n_classes != m)
      throw InvalidArgument("ensemble_predict: class-count mismatch between members");
  EnsemblePrediction out;
  out.summed.assign(static_cast<std::size_t>(m), 0.0);
  for (const auto& f : forests) {
    const auto p = forest_predict_proba(f, x);
    for (int c = 0; c < m; ++c) out.summed[static_cast<std::size_t>(c)] += p[c];
  }
  out.cls = static_cast<int>(std::max_element(out.summed.begin(), out.summed.end()) -
                             out.summed.begin());
  return out;
}

inline TwoClassGrade threshold_two_class(const std::vector<double>& probs, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("threshold_two_class: tau outside [0, 1]");
  if (probs.size() != 2) throw InvalidArgument("threshold_two_class: need a 2-vector");
  return probs[1] > tau ? TwoClassGrade::unhealthy : TwoClassGrade::healthy;
}

inline CaseGrade threshold_three_class(const std::vector<double>& probs, double alpha,
                                       double beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw InvalidArgument("threshold_three_class: alpha outside [0, 1]");
  if (!(beta >= -1.0 && beta <= 1.0))
    throw InvalidArgument("threshold_three_class: beta outside [-1, 1]");
  if (probs.size() != 3) throw InvalidArgument("threshold_three_class: need a 3-vector");
  if (probs[1] > alpha) return CaseGrade::suspicious;
  if (probs[2] - probs[0] > beta) return CaseGrade::sick;
  return CaseGrade::healthy;
}

// Stage one rules out healthy; stage two separates suspicious from sick
// (stage-two classes: 0 = suspicious, 1 = sick).
inline CaseGrade two_step_predict(const Forest& binary, const Forest& stage_two,
                                  std::span<const float> x) {
  if (binary.n_classes != 2)
    throw InvalidArgument("two_step_predict: first stage must be 2-class");
  if (stage_two.n_classes != 2)
    throw InvalidArgument("two_step_predict: second stage must be 2-class");
  if (forest_predict(binary, x) == 0) return CaseGrade::healthy;
  return forest_predict(stage_two, x) == 0 ? CaseGrade::suspicious : CaseGrade::sick;
}

// ---------------------------------------------------------------------------
// Latent-space / one-hot matrices

struct EmbeddingMatrix {
  int budget = 40;  // K
  int m = 0;
  int k = 0;  // populated rows
  std::vector<float> rows;  // K x m row-major, padding rows zero

  float at(int i, int j) const { return rows[static_cast<std::size_t>(i) * m + j]; }
};

inline EmbeddingMatrix embedding_matrix(const SliceGrader& grader,
                                        const std::vector<RectSample>& rects, int budget) {
  if (static_cast<int>(rects.size()) > budget)
    throw InvalidArgument("embedding_matrix: more rectangles than the slice budget");
  EmbeddingMatrix mat;
  mat.budget = budget;
  mat.m = grader.n_classes();
  mat.k = static_cast<int>(rects.size());
  mat.rows.assign(static_cast<std::size_t>(budget) * mat.m, 0.0f);
  for (int i = 0; i < mat.k; ++i) {
    const auto e = grader.embed(rects[static_cast<std::size_t>(i)]);
    std::copy(e.begin(), e.end(), mat.rows.begin() + static_cast<std::size_t>(i) * mat.m);
  }
  return mat;
}

// Per populated row: 1 at the row maximum (ties -> lowest index), 0 elsewhere.
inline EmbeddingMatrix one_hot_binarize(const EmbeddingMatrix& mat) {
  EmbeddingMatrix out = mat;
  for (int i = 0; i < mat.k; ++i) {
    const auto* row = mat.rows.data() + static_cast<std::size_t>(i) * mat.m;
    const int arg = static_cast<int>(std::max_element(row, row + mat.m) - row);
    for (int j = 0; j < mat.m; ++j)
      out.rows[static_cast<std::size_t>(i) * mat.m + j] = j == arg ? 1.0f : 0.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Alternating training

struct AlternateResult {
  CnnSliceGrader grader;
  Forest case_rf;
  std::vector<double> val_accuracy;  // per epoch
  int best_epoch = 0;
};

struct AlternateOptions {
  int max_epochs = 10;
  int n_aug = 2;  // augmentation rounds per case for the per-epoch feature table
  AugmentParams cnn_aug = AugmentParams::slice_defaults();
  AugmentParams case_aug = AugmentParams::slice_defaults();
  std::uint64_t rf_seed = 11;
  std::uint64_t aug_seed = 13;
  int rf_trees = 500;
  int rf_depth = 4;
};

// Joint with per-rectangle class labels (already grouped) for grader training.
struct GradedCase {
  CaseSample sample;
  std::vector<int> slice_labels;
};

// Per epoch: one grader epoch, rebuild the feature table on the training
// cases, train a case forest, record validation case accuracy. Returns the
// grader/forest pair from the epoch with maximal validation accuracy (ties ->
// earliest epoch).
inline AlternateResult alternate_train(CnnSliceGrader grader,
                                       const std::vector<GradedCase>& train,
                                       const std::vector<GradedCase>& val,
                                       const AlternateOptions& opt) {
  if (train.empty() || val.empty())
    throw InvalidArgument("alternate_train: empty train or validation set");

  std::vector<const ImageF*> train_images;
  std::vector<int> train_labels;
  for (const auto& gc : train) {
    if (gc.sample.rects.size() != gc.slice_labels.size())
      throw InvalidArgument("alternate_train: slice label count mismatch");
    for (std::size_t i = 0; i < gc.sample.rects.size(); ++i) {
      train_images.push_back(&gc.sample.rects[i].pixels);
      train_labels.push_back(gc.slice_labels[i]);
    }
  }
  std::vector<CaseSample> train_cases, val_cases;
  for (const auto& gc : train) train_cases.push_back(gc.sample);
  for (const auto& gc : val) val_cases.push_back(gc.sample);

  AlternateResult best{grader, Forest{}, {}, 0};
  for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
    grader.train_epoch(train_images, train_labels, opt.cnn_aug, epoch);
    const auto table = build_case_training_set(train_cases, grader, opt.n_aug, opt.case_aug,
                                               hash_combine(opt.aug_seed, epoch));
    auto rf = train_case_rf(table.features, table.labels, opt.rf_seed, opt.rf_trees,
                            opt.rf_depth);

    std::size_t hits = 0;
    for (const auto& vc : val_cases) {
      std::vector<const ImageF*> ptrs;
      for (const auto& r : vc.rects) ptrs.push_back(&r.pixels);
      const auto sgv = grader.grade_batch(ptrs);
      const auto f = runlength_features(sgv, grader.n_classes());
      hits += forest_predict(rf, f) == vc.label;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(val_cases.size());
    best.val_accuracy.push_back(acc);
    if (best.val_accuracy.size() == 1 || acc > best.val_accuracy[best.best_epoch]) {
      best.best_epoch = epoch;
      best.grader = grader;
      best.case_rf = std::move(rf);
    }
  }
  return best;
}

}  // namespace sij
