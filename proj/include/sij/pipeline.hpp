#pragma once
// Pipeline orchestration: the four online stages behind cmd_grade, the
// offline training flow behind cmd_train (voxel classifier, refinement
// forest, alternating grader/case-forest loop, ensemble members), model
// directory I/O, and the evaluation harness behind cmd_eval.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sij/case_grader.hpp"
#include "sij/config.hpp"
#include "sij/errors.hpp"
#include "sij/eval.hpp"
#include "sij/forest.hpp"
#include "sij/morphology.hpp"
#include "sij/phantom.hpp"
#include "sij/rect.hpp"
#include "sij/roi.hpp"
#include "sij/slice_grader.hpp"
#include "sij/volume.hpp"
#include "sij/voxel_classifier.hpp"

namespace sij {

struct PipelineModels {
  PipelineConfig config;  // snapshot used online
  UNetVoxelClassifier unet;
  Forest refine_rf;
  CnnSliceGrader grader;
  Forest case_rf3, case_rf2, stage2_rf;
  std::vector<Forest> ensemble3, ensemble2;  // empty when not trained
};

// ---------------------------------------------------------------------------
// Model directory I/O

inline void save_models(const PipelineModels& models, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_pipeline_config(models.config, dir / "config.json");
  models.unet.save(dir / "unet");
  models.grader.save(dir / "slice_cnn");
  save_forest(models.refine_rf, dir / "refine_rf.json");
  save_forest(models.case_rf3, dir / "case_rf3.json");
  save_forest(models.case_rf2, dir / "case_rf2.json");
  save_forest(models.stage2_rf, dir / "stage2_rf.json");
  for (std::size_t i = 0; i < models.ensemble3.size(); ++i)
    save_forest(models.ensemble3[i], dir / ("ensemble3_" + std::to_string(i) + ".json"));
  for (std::size_t i = 0; i < models.ensemble2.size(); ++i)
    save_forest(models.ensemble2[i], dir / ("ensemble2_" + std::to_string(i) + ".json"));
  nlohmann::ordered_json index;
  index["format"] = "sij-models";
  index["version"] = 1;
  index["scheme"] = to_string(models.config.scheme);
  index["ensemble_members"] = models.ensemble3.size();
  std::ofstream out(dir / "models.json");
  if (!out) throw IoError("cannot write " + (dir / "models.json").string());
  out << index.dump(1) << "\n";
}

inline PipelineModels load_models(const std::filesystem::path& dir) {
  std::ifstream in(dir / "models.json");
  if (!in) throw IoError("missing model index " + (dir / "models.json").string());
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model index: " + std::string(e.what()));
  }
  if (index.value("format", "") != "sij-models" || index.value("version", 0) != 1)
    throw IoError("unrecognized model directory " + dir.string());
  PipelineModels models{load_pipeline_config(dir / "config.json"),
                        UNetVoxelClassifier::load(dir / "unet"),
                        load_forest(dir / "refine_rf.json"),
                        CnnSliceGrader::load(dir / "slice_cnn"),
                        load_forest(dir / "case_rf3.json"),
                        load_forest(dir / "case_rf2.json"),
                        load_forest(dir / "stage2_rf.json"),
                        {},
                        {}};
  const auto n = index.value("ensemble_members", std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    models.ensemble3.push_back(load_forest(dir / ("ensemble3_" + std::to_string(i) + ".json")));
    models.ensemble2.push_back(load_forest(dir / ("ensemble2_" + std::to_string(i) + ".json")));
  }
  if (models.grader.n_classes() != n_classes(models.config.scheme))
    throw IoError("model directory inconsistent: grader classes do not match the scheme");
  return models;
}

// ---------------------------------------------------------------------------
// Online grading

struct JointResult {
  bool present = false;
  std::vector<RectSample> rects;  // ROI order (ascending z)
  SliceGradeVector slice_classes;
  std::vector<double> probs3, probs2;
  std::vector<double> ensemble3_sum, ensemble2_sum;  // empty without an ensemble
  CaseGrade grade3 = CaseGrade::healthy;
  TwoClassGrade grade2 = TwoClassGrade::healthy;
};

struct GradeOutcome {
  PelvisRoi roi;
  double skeleton_lower_hu = 0.0;
  JointResult joints[2];  // [0] = right, [1] = left
  std::map<std::string, double> timings_ms;
};

namespace detail {

class StageTimer {
public:
  explicit StageTimer(std::map<std::string, double>& sink) : sink_(sink) {}
  template <typename Fn>
  auto run(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        record(stage, t0);
      } else {
        auto out = fn();
        record(stage, t0);
        return out;
      }
    } catch (const Error& e) {
      record(stage, t0);
      throw Error(e.code(), "stage " + stage + ": " + e.what());
    }
  }

private:
  void record(const std::string& stage, std::chrono::steady_clock::time_point t0) {
    sink_[stage] = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  }
  std::map<std::string, double>& sink_;
};

// The final decision composes the tau-tuned binary stage with the
// (alpha, beta) rule restricted to the unhealthy branch, so the reported
// two-class grade is always the view of the three-class grade.
inline CaseGrade composed_case_grade(const std::vector<double>& probs2,
                                     const std::vector<double>& probs3,
                                     const ThresholdConfig& th) {
  if (threshold_two_class(probs2, th.tau) == TwoClassGrade::healthy)
    return CaseGrade::healthy;
  if (probs3[1] > th.alpha) return CaseGrade::suspicious;
  if (probs3[2] - probs3[0] > th.beta) return CaseGrade::sick;
  return probs3[2] > probs3[1] ? CaseGrade::sick : CaseGrade::suspicious;
}

}  // namespace detail

// Stages 1-2: skeleton segmentation, pelvis slab, initial mask, coccyx,
// refined mask.
struct RoiStageResult {
  double lower_hu = 0.0;
  PelvisRoi roi;
  BinaryMask refined;
};

inline RoiStageResult run_roi_stages(const CtVolume& vol, const PipelineModels& models,
                                     std::map<std::string, double>& timings) {
  detail::StageTimer timer(timings);
  const auto& cfg = models.config;
  auto seg = timer.run("1-initial-roi/skeleton",
                       [&] { return adaptive_skeleton_segment(vol, cfg.morphology); });
  auto roi = timer.run("1-initial-roi/pelvis",
                       [&] { return compute_pelvis_roi(seg.mask, cfg.roi); });
  auto initial = timer.run("1-initial-roi/voxel-classifier", [&] {
    return initial_sij_mask(vol, roi, models.unet, cfg.roi);
  });
  auto coccyx = timer.run("2-roi-refinement/coccyx", [&] {
    return locate_coccyx(seg.mask, roi, initial, vol, models.refine_rf, cfg.roi);
  });
  auto refined = timer.run("2-roi-refinement/refine", [&] {
    return refine_sij_mask(initial, coccyx, models.refine_rf, vol, cfg.roi);
  });
  return {seg.lower_hu, roi, std::move(refined)};
}

inline GradeOutcome grade_volume(const CtVolume& vol, const PipelineModels& models,
                                 const ThresholdConfig& thresholds) {
  GradeOutcome out;
  detail::StageTimer timer(out.timings_ms);
  const auto t_total = std::chrono::steady_clock::now();

  auto stages = run_roi_stages(vol, models, out.timings_ms);
  out.roi = stages.roi;
  out.skeleton_lower_hu = stages.lower_hu;

  auto rects = timer.run("3-slice-grading/rect-extraction", [&] {
    return extract_half_slice_rects(vol, stages.refined, "", models.config.roi);
  });
  timer.run("3-slice-grading/cnn", [&] {
    for (int side = 0; side < 2; ++side) {
      auto& joint = out.joints[side];
      for (auto& r : rects)
        if (static_cast<int>(r.side) == side) joint.rects.push_back(r);
      if (joint.rects.empty()) continue;
      joint.present = true;
      std::vector<const ImageF*> ptrs;
      for (const auto& r : joint.rects) ptrs.push_back(&r.pixels);
      joint.slice_classes = models.grader.grade_batch(ptrs);
    }
  });
  timer.run("4-case-grading", [&] {
    for (auto& joint : out.joints) {
      if (!joint.present) continue;
      const auto features = runlength_features(joint.slice_classes, models.grader.n_classes());
      joint.probs3 = forest_predict_proba(models.case_rf3, features);
      joint.probs2 = forest_predict_proba(models.case_rf2, features);
      if (models.ensemble3.size() == kEnsembleSize) {
        joint.ensemble3_sum = ensemble_predict(models.ensemble3, features).summed;
        joint.ensemble2_sum = ensemble_predict(models.ensemble2, features).summed;
      }
      joint.grade3 = detail::composed_case_grade(joint.probs2, joint.probs3, thresholds);
      joint.grade2 = two_class_view(joint.grade3);
    }
  });
  out.timings_ms["total"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_total)
          .count();
  return out;
}

inline nlohmann::ordered_json report_to_json(const GradeOutcome& outcome,
                                             const std::string& case_id,
                                             const ThresholdConfig& thresholds) {
  nlohmann::ordered_json j;
  j["format"] = "sij-case-report";
  j["version"] = 1;
  j["case_id"] = case_id;
  j["thresholds"] = {{"tau", thresholds.tau}, {"alpha", thresholds.alpha},
                     {"beta", thresholds.beta}};
  j["pelvis_roi"] = {{"z_bottom", outcome.roi.z_bottom}, {"z_top", outcome.roi.z_top}};
  j["skeleton_lower_hu"] = outcome.skeleton_lower_hu;
  nlohmann::ordered_json joints;
  const char* names[2] = {"right", "left"};
  for (int side = 0; side < 2; ++side) {
    const auto& joint = outcome.joints[side];
    nlohmann::ordered_json js;
    if (!joint.present) {
      js["error"] = "no rectangles on this side";
    } else {
      auto rects = nlohmann::ordered_json::array();
      for (const auto& r : joint.rects)
        rects.push_back({{"z", r.z}, {"center_mm", {r.cx_mm, r.cy_mm}}});
      js["rects"] = std::move(rects);
      js["slice_grades"] = joint.slice_classes;
      js["probs_three_class"] = joint.probs3;
      js["probs_two_class"] = joint.probs2;
      if (!joint.ensemble3_sum.empty()) {
        js["ensemble_sum_three_class"] = joint.ensemble3_sum;
        js["ensemble_sum_two_class"] = joint.ensemble2_sum;
      }
      js["grade_three_class"] = to_string(joint.grade3);
      js["grade_two_class"] = to_string(joint.grade2);
    }
    joints[names[side]] = std::move(js);
  }
  j["joints"] = std::move(joints);
  nlohmann::ordered_json timings;
  for (const auto& [stage, ms] : outcome.timings_ms) timings[stage] = ms;
  j["timings_ms"] = std::move(timings);
  return j;
}

// Atomic write: the report lands under its final name only when complete.
inline void write_json_atomic(const nlohmann::ordered_json& j,
                              const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(1) << "\n";
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Offline training

struct TrainedJoint {
  CaseSample sample;               // id, ordered rects, 3-class case label
  std::vector<int> slice_labels;   // grouped per-rect labels for the grader
  int label2 = 0;                  // two-class view of the case label
};

struct TrainResult {
  PipelineModels models;
  nlohmann::ordered_json log;
};

namespace detail {

inline int truth_grade_at(const PhantomTruth& truth, int side, int z) {
  if (z < truth.z_joint_lo || z > truth.z_joint_hi) return 0;
  const auto& grades = side == 1 ? truth.left_grades : truth.right_grades;
  return grades[static_cast<std::size_t>(z - truth.z_joint_lo)];
}

// Per-(side, z) centroids of the truth mask, in mm.
inline std::map<std::pair<int, int>, std::pair<double, double>> truth_centroids(
    const BinaryMask& truth_mask) {
  const int nx = truth_mask.dims().nx, ny = truth_mask.dims().ny, nz = truth_mask.dims().nz;
  const auto& sp = truth_mask.spacing();
  const double mid_x = (nx - 1) * sp.sx / 2.0;
  std::map<std::pair<int, int>, std::array<double, 3>> acc;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!truth_mask.test(x, y, z)) continue;
        const int side = x * sp.sx > mid_x ? 1 : 0;
        auto& a = acc[{side, z}];
        a[0] += x * sp.sx;
        a[1] += y * sp.sy;
        a[2] += 1.0;
      }
  std::map<std::pair<int, int>, std::pair<double, double>> out;
  for (const auto& [key, a] : acc) out[key] = {a[0] / a[2], a[1] / a[2]};
  return out;
}

}  // namespace detail

// Trains every stage from a labeled cohort manifest. `progress` (optional)
// receives one line per completed step.
inline TrainResult train_pipeline(const std::vector<ManifestEntry>& entries,
                                  const PipelineConfig& config,
                                  std::ostream* progress = nullptr) {
  config.validate();
  auto say = [&](const std::string& line) {
    if (progress) (*progress) << line << "\n" << std::flush;
  };
  nlohmann::ordered_json log;
  const auto t_start = std::chrono::steady_clock::now();

  // --- split ---------------------------------------------------------------
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  if (!config.split.train_ids.empty() || !config.split.val_ids.empty() ||
      !config.split.test_ids.empty()) {
    auto find = [&](const std::string& id) -> std::size_t {
      for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].id == id) return i;
      throw InvalidArgument("split id '" + id + "' not present in the manifest");
    };
    for (const auto& id : config.split.train_ids) train_idx.push_back(find(id));
    for (const auto& id : config.split.val_ids) val_idx.push_back(find(id));
    for (const auto& id : config.split.test_ids) test_idx.push_back(find(id));
  } else {
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(config.seed, 0x73706c6974ULL);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(
        std::lround(config.split.train * static_cast<double>(entries.size())));
    const auto n_val = static_cast<std::size_t>(
        std::lround(config.split.val * static_cast<double>(entries.size())));
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < n_train)
        train_idx.push_back(order[i]);
      else if (i < n_train + n_val)
        val_idx.push_back(order[i]);
      else
        test_idx.push_back(order[i]);
    }
  }
  if (train_idx.empty() || val_idx.empty())
    throw InvalidArgument("train_pipeline: empty train or validation split");
  log["split"] = {{"train", train_idx.size()}, {"val", val_idx.size()},
                  {"test", test_idx.size()}};
  {
    nlohmann::ordered_json ids;
    auto names = [&](const std::vector<std::size_t>& idx) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto i : idx) arr.push_back(entries[i].id);
      return arr;
    };
    ids["train"] = names(train_idx);
    ids["val"] = names(val_idx);
    ids["test"] = names(test_idx);
    log["split_ids"] = std::move(ids);
  }
  say("split: " + std::to_string(train_idx.size()) + " train / " +
      std::to_string(val_idx.size()) + " val / " + std::to_string(test_idx.size()) + " test");

  // --- stage A+B data: slabs, voxel-classifier samples, refinement features -
  PipelineModels models{config,
                        UNetVoxelClassifier(config.unet),
                        Forest{},
                        CnnSliceGrader(config.slice_cnn),
                        Forest{},
                        Forest{},
                        Forest{},
                        {},
                        {}};

  std::vector<UNetVoxelClassifier::TrainSample> unet_samples;
  std::vector<std::vector<float>> refine_X;
  std::vector<int> refine_y;

  for (const auto idx : train_idx) {
    const auto& entry = entries[idx];
    const auto vol = load_volume(entry.volume);
    const auto sij = load_mask(entry.sij_mask);
    require_grid_compatible(sij, vol, "train: sij truth");
    const auto [truth, diag] = load_phantom_truth(entry.truth);

    const auto seg = adaptive_skeleton_segment(vol, config.morphology);
    const auto roi = compute_pelvis_roi(seg.mask, config.roi);

    // voxel-classifier samples: every labeled slice plus an equal share of
    // unlabeled slab slices, capped per case
    std::vector<int> labeled, unlabeled;
    for (int z = roi.z_bottom; z <= roi.z_top; ++z) {
      bool any = false;
      const auto* bits = sij.bits().data() + sij.offset(0, 0, z);
      const std::size_t plane = static_cast<std::size_t>(vol.dims().nx) * vol.dims().ny;
      for (std::size_t i = 0; i < plane && !any; ++i) any = bits[i] != 0;
      (any ? labeled : unlabeled).push_back(z);
    }
    Rng pick(config.seed, 0x736c696365ULL, idx);
    pick.shuffle(unlabeled);
    std::vector<int> chosen = labeled;
    const int budget = std::max(0, config.unet_max_slices_per_case -
                                       static_cast<int>(labeled.size()));
    for (int i = 0; i < budget && i < static_cast<int>(unlabeled.size()); ++i)
      chosen.push_back(unlabeled[static_cast<std::size_t>(i)]);
    while (static_cast<int>(chosen.size()) > config.unet_max_slices_per_case) chosen.pop_back();

    for (const int z : chosen) {
      UNetVoxelClassifier::TrainSample s;
      const int nz = vol.dims().nz;
      const int zs[3] = {std::max(0, z - 1), z, std::min(nz - 1, z + 1)};
      for (int c = 0; c < 3; ++c)
        s.slices[c] = UNetVoxelClassifier::quantize(
            models.unet.normalize_slice(extract_slice(vol, zs[c])));
      Image2D<std::uint8_t> label(vol.dims().ny, vol.dims().nx);
      for (int y = 0; y < vol.dims().ny; ++y)
        for (int x = 0; x < vol.dims().nx; ++x)
          label.at(y, x) = sij.test(x, y, z) ? 255 : 0;
      s.label = std::move(label);
      unet_samples.push_back(std::move(s));
    }

    // refinement features from the ground-truth coccyx
    std::vector<VoxelIndex> positives, negatives;
    Rng neg_rng(config.seed, 0x726566696eULL, idx);
    for (int z = roi.z_bottom; z <= roi.z_top; ++z)
      for (int y = 0; y < vol.dims().ny; ++y)
        for (int x = 0; x < vol.dims().nx; ++x) {
          if (sij.test(x, y, z))
            positives.push_back({x, y, z});
          else if (neg_rng.uniform() < 0.01)
            negatives.push_back({x, y, z});
        }
    Rng pos_pick(config.seed, 0x706f73ULL, idx);
    pos_pick.shuffle(positives);
    if (static_cast<int>(positives.size()) > config.refine.max_samples_per_case)
      positives.resize(static_cast<std::size_t>(config.refine.max_samples_per_case));
    if (negatives.size() > positives.size()) negatives.resize(positives.size());
    for (const auto& v : positives) {
      refine_X.push_back(voxel_features(v, truth.coccyx, vol, config.roi.refine_use_hu));
      refine_y.push_back(1);
    }
    for (const auto& v : negatives) {
      refine_X.push_back(voxel_features(v, truth.coccyx, vol, config.roi.refine_use_hu));
      refine_y.push_back(0);
    }
  }
  say("prepared " + std::to_string(unet_samples.size()) + " voxel-classifier slices, " +
      std::to_string(refine_X.size()) + " refinement samples");

  // --- stage A: voxel classifier -------------------------------------------
  {
    auto losses = nlohmann::ordered_json::array();
    for (int e = 0; e < config.unet.epochs; ++e) {
      const double loss = models.unet.train_epoch(unet_samples, config.unet_aug, e);
      losses.push_back(loss);
      say("voxel classifier epoch " + std::to_string(e) + ": loss " + std::to_string(loss));
    }
    log["unet_loss"] = std::move(losses);
    unet_samples.clear();
    unet_samples.shrink_to_fit();
  }

  // --- stage B: refinement forest ------------------------------------------
  {
    ForestParams params;
    params.n_trees = config.refine.n_trees;
    params.max_depth = config.refine.max_depth;
    params.min_samples_leaf = config.refine.min_samples_leaf;
    params.seed = hash_combine(config.seed, 0xf0e1);
    models.refine_rf = train_forest(refine_X, refine_y, params);
    refine_X.clear();
    refine_X.shrink_to_fit();
    say("refinement forest trained");
  }

  // --- stage C: rectangle extraction with the trained ROI stages ------------
  std::vector<TrainedJoint> train_joints, val_joints, test_joints;
  auto excluded = nlohmann::ordered_json::array();
  auto extract_case = [&](std::size_t idx, std::vector<TrainedJoint>& sink) {
    const auto& entry = entries[idx];
    try {
      const auto vol = load_volume(entry.volume);
      const auto [truth, diag] = load_phantom_truth(entry.truth);
      std::map<std::string, double> timings;
      const auto stages = run_roi_stages(vol, models, timings);
      const auto rects = extract_half_slice_rects(vol, stages.refined, entry.id, config.roi);
      for (int side = 0; side < 2; ++side) {
        TrainedJoint joint;
        joint.sample.id = entry.id + (side == 1 ? ":left" : ":right");
        const auto case_grade = side == 1 ? truth.left_case : truth.right_case;
        joint.sample.label = static_cast<int>(case_grade);
        joint.label2 = static_cast<int>(two_class_view(case_grade));
        for (const auto& r : rects) {
          if (static_cast<int>(r.side) != side) continue;
          joint.sample.rects.push_back(r);
          joint.slice_labels.push_back(
              map_grade(detail::truth_grade_at(truth, side, r.z), config.scheme));
        }
        if (!joint.sample.rects.empty()) sink.push_back(std::move(joint));
      }
    } catch (const Error& e) {
      excluded.push_back({{"id", entry.id}, {"error", e.what()}});
      say("excluded case " + entry.id + ": " + e.what());
    }
  };
  for (const auto idx : train_idx) extract_case(idx, train_joints);
  for (const auto idx : val_idx) extract_case(idx, val_joints);
  for (const auto idx : test_idx) extract_case(idx, test_joints);
  log["excluded_cases"] = std::move(excluded);
  say("extracted rectangles: " + std::to_string(train_joints.size()) + " train joints, " +
      std::to_string(val_joints.size()) + " val joints");
  if (train_joints.empty() || val_joints.empty())
    throw Error(ExitCode::failure, "train_pipeline: rectangle extraction left no usable joints");

  // --- stage D: alternating grader / case forest ----------------------------
  std::vector<GradedCase> train_cases, val_cases;
  for (const auto& j : train_joints) train_cases.push_back({j.sample, j.slice_labels});
  for (const auto& j : val_joints) val_cases.push_back({j.sample, j.slice_labels});
  AlternateOptions alt;
  alt.max_epochs = config.slice_cnn.epochs;
  alt.n_aug = config.case_grading.n_aug_alternate;
  alt.cnn_aug = config.slice_aug;
  alt.case_aug = config.slice_aug;
  alt.rf_seed = hash_combine(config.seed, 0xca5e);
  alt.aug_seed = hash_combine(config.seed, 0xa0b1);
  alt.rf_trees = config.case_grading.n_trees;
  alt.rf_depth = config.case_grading.max_depth;
  auto alt_result = alternate_train(CnnSliceGrader(config.slice_cnn), train_cases, val_cases, alt);
  models.grader = std::move(alt_result.grader);
  log["alternate_val_accuracy"] = alt_result.val_accuracy;
  log["alternate_best_epoch"] = alt_result.best_epoch;
  say("alternating training: best epoch " + std::to_string(alt_result.best_epoch) +
      ", val accuracy " +
      std::to_string(alt_result.val_accuracy[static_cast<std::size_t>(alt_result.best_epoch)]));

  // --- stage E: final case forests and ensembles ----------------------------
  {
    std::vector<CaseSample> samples3, samples2;
    for (const auto& j : train_joints) {
      samples3.push_back(j.sample);
      auto two = j.sample;
      two.label = j.label2;
      samples2.push_back(std::move(two));
    }
    const auto table3 =
        build_case_training_set(samples3, models.grader, config.case_grading.n_aug,
                                config.slice_aug, hash_combine(config.seed, 0xfea7));
    models.case_rf3 = train_case_rf(table3.features, table3.labels,
                                    hash_combine(config.seed, 0x3c1a55),
                                    config.case_grading.n_trees, config.case_grading.max_depth);
    const auto table2 =
        build_case_training_set(samples2, models.grader, config.case_grading.n_aug,
                                config.slice_aug, hash_combine(config.seed, 0xfea7));
    models.case_rf2 = train_case_rf(table2.features, table2.labels,
                                    hash_combine(config.seed, 0x2c1a55),
                                    config.case_grading.n_trees, config.case_grading.max_depth);

    // stage two of the two-step classifier: suspicious vs sick on unhealthy joints
    std::vector<std::vector<float>> sus_X;
    std::vector<int> sus_y;
    for (std::size_t r = 0; r < table3.features.size(); ++r) {
      if (table3.labels[r] == 0) continue;
      sus_X.push_back(table3.features[r]);
      sus_y.push_back(table3.labels[r] - 1);  // 0 = suspicious, 1 = sick
    }
    if (sus_X.empty())
      throw Error(ExitCode::failure, "train_pipeline: no unhealthy joints for stage two");
    models.stage2_rf = train_case_rf(sus_X, sus_y, hash_combine(config.seed, 0x57a6e2),
                                     config.case_grading.n_trees, config.case_grading.max_depth);
    say("case forests trained (" + std::to_string(table3.features.size()) + " rows)");

    // ensemble members: leave-one-fold-out over train+val joints
    std::vector<TrainedJoint const*> pool;
    for (const auto& j : train_joints) pool.push_back(&j);
    for (const auto& j : val_joints) pool.push_back(&j);
    const auto folds = kfold_split(pool.size(), config.case_grading.ensemble_folds,
                                   hash_combine(config.seed, 0xf01d));
    for (int f = 0; f < config.case_grading.ensemble_folds; ++f) {
      std::vector<bool> held(pool.size(), false);
      for (const auto i : folds[static_cast<std::size_t>(f)]) held[i] = true;
      std::vector<CaseSample> member3, member2;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (held[i]) continue;
        member3.push_back(pool[i]->sample);
        auto two = pool[i]->sample;
        two.label = pool[i]->label2;
        member2.push_back(std::move(two));
      }
      const auto t3 =
          build_case_training_set(member3, models.grader, config.case_grading.n_aug_alternate,
                                  config.slice_aug, hash_combine(config.seed, 0xe000 + f));
      models.ensemble3.push_back(train_case_rf(t3.features, t3.labels,
                                               hash_combine(config.seed, 0xe300 + f),
                                               config.case_grading.n_trees,
                                               config.case_grading.max_depth));
      const auto t2 =
          build_case_training_set(member2, models.grader, config.case_grading.n_aug_alternate,
                                  config.slice_aug, hash_combine(config.seed, 0xe000 + f));
      models.ensemble2.push_back(train_case_rf(t2.features, t2.labels,
                                               hash_combine(config.seed, 0xe200 + f),
                                               config.case_grading.n_trees,
                                               config.case_grading.max_depth));
      say("ensemble member " + std::to_string(f) + " trained");
    }
  }

  // --- latent-space / one-hot alternatives (matrix constructions classified
  // with the generic forest) -------------------------------------------------
  {
    auto flatten = [&](const TrainedJoint& j, bool one_hot) {
      auto mat = embedding_matrix(models.grader, j.sample.rects,
                                  config.case_grading.embed_budget);
      if (one_hot) mat = one_hot_binarize(mat);
      return mat.rows;
    };
    for (const bool one_hot : {false, true}) {
      std::vector<std::vector<float>> X;
      std::vector<int> y;
      for (const auto& j : train_joints) {
        X.push_back(flatten(j, one_hot));
        y.push_back(j.sample.label);
      }
      const auto rf = train_case_rf(X, y, hash_combine(config.seed, one_hot ? 0x10 : 0x1a),
                                    config.case_grading.n_trees, config.case_grading.max_depth);
      std::size_t hits = 0;
      for (const auto& j : val_joints)
        hits += forest_predict(rf, flatten(j, one_hot)) == j.sample.label;
      log[one_hot ? "one_hot_val_accuracy" : "latent_space_val_accuracy"] =
          static_cast<double>(hits) / static_cast<double>(val_joints.size());
    }
  }

  log["train_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  TrainResult result{std::move(models), std::move(log)};
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation harness

struct EvalRow {
  std::string id;
  int side = 0;  // 0 = right, 1 = left
  int truth3 = 0, truth2 = 0;
  JointResult joint;
  // matched per-slice rectangle accuracy vs ground truth
  std::vector<double> dice, center_dist;
  int truth_slices = 0;  // slices carrying truth labels on this side
};

namespace detail {

inline nlohmann::ordered_json confusion_json(const ConfusionMatrix& cm) {
  nlohmann::ordered_json j;
  auto raw = nlohmann::ordered_json::array();
  for (int t = 0; t < cm.n; ++t) {
    auto row = nlohmann::ordered_json::array();
    for (int p = 0; p < cm.n; ++p) row.push_back(cm.at(t, p));
    raw.push_back(std::move(row));
  }
  j["counts"] = std::move(raw);
  j["row_normalized"] = cm.row_normalized();
  return j;
}

inline int argmax_index(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

// Evaluates trained models on a held-out manifest. Emits confusion matrices,
// accuracies, sensitivity/specificity, the tau sweep ROC with AUC, the
// (alpha, beta) grid, two-step results, ensemble results, and the ROI
// rectangle Dice / center-distance summary.
inline nlohmann::ordered_json eval_pipeline(const PipelineModels& models,
                                            const std::vector<ManifestEntry>& entries,
                                            const ThresholdConfig& thresholds,
                                            std::ostream* progress = nullptr) {
  if (entries.empty()) throw InvalidArgument("eval_pipeline: empty test manifest");
  std::vector<EvalRow> rows;
  auto failures = nlohmann::ordered_json::array();
  for (const auto& entry : entries) {
    try {
      const auto vol = load_volume(entry.volume);
      const auto sij = load_mask(entry.sij_mask);
      const auto [truth, diag] = load_phantom_truth(entry.truth);
      const auto outcome = grade_volume(vol, models, thresholds);
      const auto centroids = detail::truth_centroids(sij);
      for (int side = 0; side < 2; ++side) {
        if (!outcome.joints[side].present) continue;
        EvalRow row;
        row.id = entry.id;
        row.side = side;
        const auto case_grade = side == 1 ? truth.left_case : truth.right_case;
        row.truth3 = static_cast<int>(case_grade);
        row.truth2 = static_cast<int>(two_class_view(case_grade));
        row.joint = outcome.joints[side];
        for (const auto& [key, c] : centroids) {
          if (key.first != side) continue;
          ++row.truth_slices;
          for (const auto& r : row.joint.rects) {
            if (r.z != key.second) continue;
            auto [d, dist] = rect_overlap({r.cx_mm, r.cy_mm, kRectWidthMm, kRectHeightMm},
                                          {c.first, c.second, kRectWidthMm, kRectHeightMm});
            row.dice.push_back(d);
            row.center_dist.push_back(dist);
            break;
          }
        }
        rows.push_back(std::move(row));
      }
      if (progress) (*progress) << "evaluated " << entry.id << "\n" << std::flush;
    } catch (const Error& e) {
      failures.push_back({{"id", entry.id}, {"error", e.what()}});
      if (progress) (*progress) << "failed " << entry.id << ": " << e.what() << "\n";
    }
  }
  if (rows.empty()) throw Error(ExitCode::failure, "eval_pipeline: no joints evaluated");

  nlohmann::ordered_json report;
  report["format"] = "sij-eval-report";
  report["version"] = 1;
  report["joints_evaluated"] = rows.size();
  report["failures"] = std::move(failures);
  report["thresholds"] = {{"tau", thresholds.tau}, {"alpha", thresholds.alpha},
                          {"beta", thresholds.beta}};

  std::vector<int> truth3, truth2;
  for (const auto& r : rows) {
    truth3.push_back(r.truth3);
    truth2.push_back(r.truth2);
  }

  // three-class: forest argmax and the (alpha, beta)-thresholded decision
  {
    std::vector<int> pred_argmax, pred_thresh;
    for (const auto& r : rows) {
      pred_argmax.push_back(detail::argmax_index(r.joint.probs3));
      pred_thresh.push_back(static_cast<int>(
          threshold_three_class(r.joint.probs3, thresholds.alpha, thresholds.beta)));
    }
    auto [cm_a, acc_a] = confusion_and_accuracy(truth3, pred_argmax, 3);
    auto [cm_t, acc_t] = confusion_and_accuracy(truth3, pred_thresh, 3);
    report["three_class"] = {{"argmax",
                              {{"confusion", detail::confusion_json(cm_a)},
                               {"accuracy", acc_a}}},
                             {"thresholded",
                              {{"confusion", detail::confusion_json(cm_t)},
                               {"accuracy", acc_t}}}};
  }

  // two-class: tau decision, sensitivity/specificity, ROC over Pr(unhealthy)
  {
    std::vector<int> pred;
    std::vector<double> scores;
    for (const auto& r : rows) {
      pred.push_back(
          static_cast<int>(threshold_two_class(r.joint.probs2, thresholds.tau)));
      scores.push_back(r.joint.probs2[1]);
    }
    auto [cm, acc] = confusion_and_accuracy(truth2, pred, 2);
    nlohmann::ordered_json two;
    two["confusion"] = detail::confusion_json(cm);
    two["accuracy"] = acc;
    try {
      auto [sens, spec] = sensitivity_specificity(cm, 1);
      two["sensitivity"] = sens;
      two["specificity"] = spec;
    } catch (const Error& e) {
      two["sensitivity_specificity_error"] = e.what();
    }
    try {
      const auto roc = roc_auc(truth2, scores);
      auto points = nlohmann::ordered_json::array();
      for (const auto& [fpr, tpr] : roc.points) points.push_back({fpr, tpr});
      two["roc"] = {{"points", std::move(points)}, {"auc", roc.auc}};
    } catch (const Error& e) {
      two["roc_error"] = e.what();
    }
    // tau sweep table; positives are monotone non-increasing in tau
    auto sweep = nlohmann::ordered_json::array();
    for (int i = 0; i <= 20; ++i) {
      const double tau = static_cast<double>(i) / 20.0;
      int positives = 0;
      std::size_t hits = 0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const int p =
            static_cast<int>(threshold_two_class(rows[r].joint.probs2, tau));
        positives += p;
        hits += p == truth2[r];
      }
      sweep.push_back({{"tau", tau},
                       {"predicted_unhealthy", positives},
                       {"accuracy", static_cast<double>(hits) / rows.size()}});
    }
    two["tau_table"] = std::move(sweep);
    report["two_class"] = std::move(two);
  }

  // (alpha, beta) grid: per-grade true/false positive counts
  {
    auto grid = nlohmann::ordered_json::array();
    for (double alpha = 0.0; alpha <= 0.9001; alpha += 0.1) {
      for (double beta = -0.8; beta <= 0.8001; beta += 0.4) {
        std::array<std::int64_t, 3> tp{}, fp{};
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const int p =
              static_cast<int>(threshold_three_class(rows[r].joint.probs3, alpha, beta));
          if (p == truth3[r])
            ++tp[static_cast<std::size_t>(p)];
          else
            ++fp[static_cast<std::size_t>(p)];
        }
        grid.push_back({{"alpha", alpha},
                        {"beta", beta},
                        {"tp", tp},
                        {"fp", fp}});
      }
    }
    report["alpha_beta_grid"] = std::move(grid);
  }

  // two-step classification
  {
    std::vector<int> pred;
    for (const auto& r : rows) {
      const auto features = runlength_features(r.joint.slice_classes, models.grader.n_classes());
      pred.push_back(static_cast<int>(two_step_predict(models.case_rf2, models.stage2_rf,
                                                       features)));
    }
    auto [cm, acc] = confusion_and_accuracy(truth3, pred, 3);
    report["two_step"] = {{"confusion", detail::confusion_json(cm)}, {"accuracy", acc}};
  }

  // ensemble results
  if (!rows.front().joint.ensemble3_sum.empty()) {
    std::vector<int> pred3, pred2;
    std::vector<double> scores;
    for (const auto& r : rows) {
      pred3.push_back(detail::argmax_index(r.joint.ensemble3_sum));
      pred2.push_back(detail::argmax_index(r.joint.ensemble2_sum));
      scores.push_back(r.joint.ensemble2_sum[1] /
                       (r.joint.ensemble2_sum[0] + r.joint.ensemble2_sum[1]));
    }
    auto [cm3, acc3] = confusion_and_accuracy(truth3, pred3, 3);
    auto [cm2, acc2] = confusion_and_accuracy(truth2, pred2, 2);
    nlohmann::ordered_json ens;
    ens["three_class"] = {{"confusion", detail::confusion_json(cm3)}, {"accuracy", acc3}};
    ens["two_class"] = {{"confusion", detail::confusion_json(cm2)}, {"accuracy", acc2}};
    try {
      ens["two_class"]["auc"] = roc_auc(truth2, scores).auc;
    } catch (const Error&) {
    }
    // per-member accuracies (three-class argmax, two-class argmax)
    auto members = nlohmann::ordered_json::array();
    for (std::size_t m = 0; m < models.ensemble3.size(); ++m) {
      std::size_t hits3 = 0, hits2 = 0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto features =
            runlength_features(rows[r].joint.slice_classes, models.grader.n_classes());
        hits3 += forest_predict(models.ensemble3[m], features) == truth3[r];
        hits2 += forest_predict(models.ensemble2[m], features) == truth2[r];
      }
      members.push_back({{"three_class_accuracy", static_cast<double>(hits3) / rows.size()},
                         {"two_class_accuracy", static_cast<double>(hits2) / rows.size()}});
    }
    ens["members"] = std::move(members);
    report["ensemble"] = std::move(ens);
  }

  // ROI rectangle accuracy vs ground truth
  {
    double dice_sum = 0.0, dist_sum = 0.0, dice_sq = 0.0, dist_sq = 0.0;
    std::size_t n = 0;
    std::int64_t missing = 0;
    for (const auto& r : rows) {
      missing += r.truth_slices - static_cast<int>(r.dice.size());
      for (std::size_t i = 0; i < r.dice.size(); ++i) {
        dice_sum += r.dice[i];
        dice_sq += r.dice[i] * r.dice[i];
        dist_sum += r.center_dist[i];
        dist_sq += r.center_dist[i] * r.center_dist[i];
        ++n;
      }
    }
    nlohmann::ordered_json roi;
    roi["matched_slices"] = n;
    roi["unmatched_truth_slices"] = missing;
    if (n > 0) {
      const double mean_dice = dice_sum / n;
      const double mean_dist = dist_sum / n;
      roi["mean_dice"] = mean_dice;
      roi["std_dice"] = std::sqrt(std::max(0.0, dice_sq / n - mean_dice * mean_dice));
      roi["mean_center_distance_mm"] = mean_dist;
      roi["std_center_distance_mm"] =
          std::sqrt(std::max(0.0, dist_sq / n - mean_dist * mean_dist));
    }
    report["roi_accuracy"] = std::move(roi);
  }

  // per-joint detail rows
  {
    auto detail_rows = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      detail_rows.push_back({{"id", r.id},
                             {"side", r.side == 1 ? "left" : "right"},
                             {"truth_three_class", r.truth3},
                             {"pred_three_class", static_cast<int>(r.joint.grade3)},
                             {"probs_two_class", r.joint.probs2},
                             {"probs_three_class", r.joint.probs3}});
    }
    report["joints"] = std::move(detail_rows);
  }
  return report;
}

}  // namespace sij
