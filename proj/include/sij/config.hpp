#pragma once
// Pipeline configuration: one JSON file with a keyed section per module.
// Every tunable constant of the method is exposed here; defaults reproduce
// the documented pipeline parameters.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sij/augment.hpp"
#include "sij/errors.hpp"
#include "sij/morphology.hpp"
#include "sij/roi.hpp"
#include "sij/slice_grader.hpp"
#include "sij/voxel_classifier.hpp"

namespace sij {

struct RefineForestConfig {
  int n_trees = 4;
  int max_depth = 12;
  int min_samples_leaf = 1;
  int max_samples_per_case = 4000;  // positive-voxel cap when building the training set
};

struct CaseConfig {
  int n_trees = 500;
  int max_depth = 4;
  int n_aug = 20;            // augmentation rounds for the final case forests
  int n_aug_alternate = 2;   // rounds used inside the alternating loop
  double suspicious_fraction = 0.30;
  int ensemble_folds = 6;
  int embed_budget = 40;  // K for the latent-space / one-hot matrices
};

struct ThresholdConfig {
  double tau = 0.42;
  double alpha = 0.14;
  double beta = 0.0;
};

struct SplitConfig {
  double train = 0.75, val = 0.12, test = 0.13;
  // Explicit id lists override the fractional split when non-empty.
  std::vector<std::string> train_ids, val_ids, test_ids;
};

struct PipelineConfig {
  std::uint64_t seed = 20250810;
  AdaptiveSegmentOptions morphology;
  RoiOptions roi;
  VoxelNetConfig unet;
  AugmentParams unet_aug = AugmentParams::roi_defaults();
  int unet_max_slices_per_case = 28;
  RefineForestConfig refine;
  CnnConfig slice_cnn;
  GroupingScheme scheme = GroupingScheme::five;
  AugmentParams slice_aug = AugmentParams::slice_defaults();
  CaseConfig case_grading;
  ThresholdConfig thresholds;
  SplitConfig split;

  void validate() const {
    slice_cnn.validate();
    if (split.train_ids.empty() && split.val_ids.empty() && split.test_ids.empty()) {
      if (!(split.train > 0.0 && split.val > 0.0 && split.test > 0.0))
        throw InvalidArgument("config: split fractions must be positive");
      if (std::abs(split.train + split.val + split.test - 1.0) > 1e-6)
        throw InvalidArgument("config: split fractions must sum to 1");
    } else {
      auto overlap = [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
        for (const auto& x : a)
          for (const auto& y : b)
            if (x == y) return true;
        return false;
      };
      if (overlap(split.train_ids, split.val_ids) || overlap(split.train_ids, split.test_ids) ||
          overlap(split.val_ids, split.test_ids))
        throw InvalidArgument("config: explicit split id lists overlap");
    }
    if (case_grading.n_aug < 0 || case_grading.n_aug_alternate < 0 ||
        case_grading.ensemble_folds < 2)
      throw InvalidArgument("config: invalid case-grading parameters");
    if (!(thresholds.tau >= 0.0 && thresholds.tau <= 1.0))
      throw InvalidArgument("config: tau outside [0, 1]");
    if (!(thresholds.alpha >= 0.0 && thresholds.alpha <= 1.0))
      throw InvalidArgument("config: alpha outside [0, 1]");
    if (!(thresholds.beta >= -1.0 && thresholds.beta <= 1.0))
      throw InvalidArgument("config: beta outside [-1, 1]");
  }
};

namespace detail {

inline nlohmann::ordered_json aug_to_json(const AugmentParams& a) {
  return {{"scale_delta", a.scale_delta},
          {"rotate_deg", a.rotate_deg},
          {"wshift_frac", a.wshift_frac},
          {"hshift_lo", a.hshift_lo},
          {"hshift_hi", a.hshift_hi},
          {"elastic",
           {{"amplitude_px", a.elastic.amplitude_px},
            {"sigma", a.elastic.sigma},
            {"alpha", a.elastic.alpha}}}};
}

inline AugmentParams aug_from_json(const nlohmann::json& j, AugmentParams a) {
  a.scale_delta = j.value("scale_delta", a.scale_delta);
  a.rotate_deg = j.value("rotate_deg", a.rotate_deg);
  a.wshift_frac = j.value("wshift_frac", a.wshift_frac);
  a.hshift_lo = j.value("hshift_lo", a.hshift_lo);
  a.hshift_hi = j.value("hshift_hi", a.hshift_hi);
  if (j.contains("elastic")) {
    const auto& e = j.at("elastic");
    a.elastic.amplitude_px = e.value("amplitude_px", a.elastic.amplitude_px);
    a.elastic.sigma = e.value("sigma", a.elastic.sigma);
    a.elastic.alpha = e.value("alpha", a.elastic.alpha);
  }
  return a;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["morphology"] = {{"candidate_lo", c.morphology.candidate_lo},
                     {"candidate_hi", c.morphology.candidate_hi},
                     {"candidate_steps", c.morphology.candidate_steps},
                     {"upper_hu", c.morphology.upper_hu},
                     {"closing_diameter", c.morphology.closing_diameter}};
  j["roi"] = {{"width_jump_ratio", c.roi.width_jump_ratio},
              {"bottom_margin_mm", c.roi.bottom_margin_mm},
              {"prob_cutoff", c.roi.prob_cutoff},
              {"posterior_fraction", c.roi.posterior_fraction},
              {"min_component_mm3", c.roi.min_component_mm3},
              {"hu_lo", c.roi.hu_lo},
              {"hu_hi", c.roi.hu_hi},
              {"refine_use_hu", c.roi.refine_use_hu}};
  j["unet"] = to_json(c.unet);
  j["unet_aug"] = detail::aug_to_json(c.unet_aug);
  j["unet_max_slices_per_case"] = c.unet_max_slices_per_case;
  j["refine_forest"] = {{"n_trees", c.refine.n_trees},
                        {"max_depth", c.refine.max_depth},
                        {"min_samples_leaf", c.refine.min_samples_leaf},
                        {"max_samples_per_case", c.refine.max_samples_per_case}};
  j["slice_cnn"] = to_json(c.slice_cnn);
  j["scheme"] = to_string(c.scheme);
  j["slice_aug"] = detail::aug_to_json(c.slice_aug);
  j["case"] = {{"n_trees", c.case_grading.n_trees},
               {"max_depth", c.case_grading.max_depth},
               {"n_aug", c.case_grading.n_aug},
               {"n_aug_alternate", c.case_grading.n_aug_alternate},
               {"suspicious_fraction", c.case_grading.suspicious_fraction},
               {"ensemble_folds", c.case_grading.ensemble_folds},
               {"embed_budget", c.case_grading.embed_budget}};
  j["thresholds"] = {{"tau", c.thresholds.tau},
                     {"alpha", c.thresholds.alpha},
                     {"beta", c.thresholds.beta}};
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test},
                {"train_ids", c.split.train_ids}, {"val_ids", c.split.val_ids},
                {"test_ids", c.split.test_ids}};
  return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("morphology")) {
    const auto& m = j.at("morphology");
    c.morphology.candidate_lo = m.value("candidate_lo", c.morphology.candidate_lo);
    c.morphology.candidate_hi = m.value("candidate_hi", c.morphology.candidate_hi);
    c.morphology.candidate_steps = m.value("candidate_steps", c.morphology.candidate_steps);
    c.morphology.upper_hu = m.value("upper_hu", c.morphology.upper_hu);
    c.morphology.closing_diameter = m.value("closing_diameter", c.morphology.closing_diameter);
  }
  if (j.contains("roi")) {
    const auto& r = j.at("roi");
    c.roi.width_jump_ratio = r.value("width_jump_ratio", c.roi.width_jump_ratio);
    c.roi.bottom_margin_mm = r.value("bottom_margin_mm", c.roi.bottom_margin_mm);
    c.roi.prob_cutoff = r.value("prob_cutoff", c.roi.prob_cutoff);
    c.roi.posterior_fraction = r.value("posterior_fraction", c.roi.posterior_fraction);
    c.roi.min_component_mm3 = r.value("min_component_mm3", c.roi.min_component_mm3);
    c.roi.hu_lo = r.value("hu_lo", c.roi.hu_lo);
    c.roi.hu_hi = r.value("hu_hi", c.roi.hu_hi);
    c.roi.refine_use_hu = r.value("refine_use_hu", c.roi.refine_use_hu);
  }
  if (j.contains("unet")) c.unet = voxel_config_from_json(j.at("unet"));
  if (j.contains("unet_aug")) c.unet_aug = detail::aug_from_json(j.at("unet_aug"), c.unet_aug);
  c.unet_max_slices_per_case = j.value("unet_max_slices_per_case", c.unet_max_slices_per_case);
  if (j.contains("refine_forest")) {
    const auto& r = j.at("refine_forest");
    c.refine.n_trees = r.value("n_trees", c.refine.n_trees);
    c.refine.max_depth = r.value("max_depth", c.refine.max_depth);
    c.refine.min_samples_leaf = r.value("min_samples_leaf", c.refine.min_samples_leaf);
    c.refine.max_samples_per_case = r.value("max_samples_per_case", c.refine.max_samples_per_case);
  }
  if (j.contains("slice_cnn")) c.slice_cnn = cnn_config_from_json(j.at("slice_cnn"));
  if (j.contains("scheme")) c.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  if (j.contains("slice_aug"))
    c.slice_aug = detail::aug_from_json(j.at("slice_aug"), c.slice_aug);
  if (j.contains("case")) {
    const auto& k = j.at("case");
    c.case_grading.n_trees = k.value("n_trees", c.case_grading.n_trees);
    c.case_grading.max_depth = k.value("max_depth", c.case_grading.max_depth);
    c.case_grading.n_aug = k.value("n_aug", c.case_grading.n_aug);
    c.case_grading.n_aug_alternate =
        k.value("n_aug_alternate", c.case_grading.n_aug_alternate);
    c.case_grading.suspicious_fraction =
        k.value("suspicious_fraction", c.case_grading.suspicious_fraction);
    c.case_grading.ensemble_folds = k.value("ensemble_folds", c.case_grading.ensemble_folds);
    c.case_grading.embed_budget = k.value("embed_budget", c.case_grading.embed_budget);
  }
  if (j.contains("thresholds")) {
    const auto& t = j.at("thresholds");
    c.thresholds.tau = t.value("tau", c.thresholds.tau);
    c.thresholds.alpha = t.value("alpha", c.thresholds.alpha);
    c.thresholds.beta = t.value("beta", c.thresholds.beta);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split.train = s.value("train", c.split.train);
    c.split.val = s.value("val", c.split.val);
    c.split.test = s.value("test", c.split.test);
    c.split.train_ids = s.value("train_ids", c.split.train_ids);
    c.split.val_ids = s.value("val_ids", c.split.val_ids);
    c.split.test_ids = s.value("test_ids", c.split.test_ids);
  }
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed config " + path.string() + ": " + e.what());
  }
  auto cfg = pipeline_config_from_json(j);
  cfg.validate();
  return cfg;
}

inline void save_pipeline_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(cfg).dump(1) << "\n";
}

}  // namespace sij
