// Batch CLI for the sacroiliac joint grading pipeline: phantom generation,
// offline training, per-volume grading, and held-out evaluation.
//
// Exit codes: 0 success, 1 usage/config/internal error, 2 pelvis not found,
// 3 SIJ not found, 4 I/O error, 5 coccyx ambiguous.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sij/config.hpp"
#include "sij/phantom.hpp"
#include "sij/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw sij::IoError("missing file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw sij::IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

int cmd_phantom_gen(const fs::path& spec_path, const fs::path& out_dir,
                    std::optional<std::uint64_t> seed) {
  const auto spec_json = read_json_file(spec_path);
  fs::create_directories(out_dir);
  auto entries = nlohmann::ordered_json::array();
  if (spec_json.contains("cohort")) {
    auto cohort = sij::cohort_spec_from_json(spec_json.at("cohort"));
    if (seed) cohort.seed = *seed;
    for (int i = 0; i < cohort.n; ++i) {
      char name[16];
      std::snprintf(name, sizeof name, "case%03d", i);
      const auto pc = sij::generate_phantom(sij::cohort_case_spec(cohort, i), name);
      entries.push_back(sij::save_phantom_case(pc, out_dir));
      std::cout << "generated " << name << " (" << sij::to_string(pc.truth.left_case) << "/"
                << sij::to_string(pc.truth.right_case) << ")\n";
    }
  } else {
    auto spec = sij::phantom_spec_from_json(
        spec_json.contains("phantom") ? spec_json.at("phantom") : spec_json);
    if (seed) spec.seed = *seed;
    const auto pc = sij::generate_phantom(spec, "case000");
    entries.push_back(sij::save_phantom_case(pc, out_dir));
    std::cout << "generated case000 (" << sij::to_string(pc.truth.left_case) << "/"
              << sij::to_string(pc.truth.right_case) << ")\n";
  }
  sij::save_cohort_manifest(entries, out_dir);
  std::cout << "wrote " << (out_dir / "manifest.json").string() << "\n";
  return 0;
}

int cmd_train(const fs::path& manifest_path, const std::optional<fs::path>& config_path,
              const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  sij::PipelineConfig config;
  if (config_path) config = sij::load_pipeline_config(*config_path);
  if (seed) config.seed = *seed;
  config.validate();
  const auto entries = sij::load_cohort_manifest(manifest_path);
  auto result = sij::train_pipeline(entries, config, &std::cout);
  sij::save_models(result.models, out_dir);
  sij::write_json_atomic(result.log, out_dir / "training_log.json");
  std::cout << "models written to " << out_dir.string() << "\n";
  return 0;
}

int cmd_grade(const fs::path& volume_path, const fs::path& models_dir,
              std::optional<double> tau, std::optional<double> alpha,
              std::optional<double> beta, std::optional<fs::path> out_path) {
  const auto models = sij::load_models(models_dir);
  sij::ThresholdConfig thresholds = models.config.thresholds;
  if (tau) thresholds.tau = *tau;
  if (alpha) thresholds.alpha = *alpha;
  if (beta) thresholds.beta = *beta;
  const auto vol = sij::load_volume(volume_path);
  const auto case_id = sij::detail::strip_container_ext(volume_path).filename().string();
  const auto outcome = sij::grade_volume(vol, models, thresholds);
  const auto report = sij::report_to_json(outcome, case_id, thresholds);
  const fs::path out =
      out_path ? *out_path
               : fs::path(sij::detail::strip_container_ext(volume_path).string() +
                          ".report.json");
  sij::write_json_atomic(report, out);

  const char* names[2] = {"right", "left"};
  for (int side = 0; side < 2; ++side) {
    const auto& joint = outcome.joints[side];
    std::cout << names[side] << " SIJ: ";
    if (!joint.present) {
      std::cout << "no rectangles\n";
      continue;
    }
    std::cout << sij::to_string(joint.grade3) << " (two-class "
              << sij::to_string(joint.grade2) << "), Pr(unhealthy) " << std::fixed
              << std::setprecision(3) << joint.probs2[1] << ", " << joint.rects.size()
              << " slices\n";
  }
  std::cout << "report written to " << out.string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& models_dir, const fs::path& manifest_path,
             std::optional<double> tau, std::optional<double> alpha,
             std::optional<double> beta, std::optional<fs::path> out_path) {
  const auto models = sij::load_models(models_dir);
  sij::ThresholdConfig thresholds = models.config.thresholds;
  if (tau) thresholds.tau = *tau;
  if (alpha) thresholds.alpha = *alpha;
  if (beta) thresholds.beta = *beta;
  const auto entries = sij::load_cohort_manifest(manifest_path);
  const auto report = sij::eval_pipeline(models, entries, thresholds, &std::cout);
  const fs::path out = out_path ? *out_path : manifest_path.parent_path() / "eval_report.json";
  sij::write_json_atomic(report, out);

  std::cout << "joints evaluated: " << report.at("joints_evaluated") << "\n";
  std::cout << "two-class accuracy (tau " << thresholds.tau
            << "): " << report.at("two_class").at("accuracy") << "\n";
  if (report.at("two_class").contains("roc"))
    std::cout << "two-class AUC: " << report.at("two_class").at("roc").at("auc") << "\n";
  std::cout << "three-class accuracy (argmax): "
            << report.at("three_class").at("argmax").at("accuracy") << "\n";
  if (report.contains("ensemble"))
    std::cout << "ensemble two-class accuracy: "
              << report.at("ensemble").at("two_class").at("accuracy") << "\n";
  if (report.at("roi_accuracy").contains("mean_dice"))
    std::cout << "ROI mean Dice " << report.at("roi_accuracy").at("mean_dice")
              << ", mean center distance "
              << report.at("roi_accuracy").at("mean_center_distance_mm") << " mm\n";
  std::cout << "report written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sacroiliac joint grading pipeline"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "override the configured RNG seed");

  auto* gen = app.add_subcommand("phantom-gen", "generate phantom volumes with ground truth");
  fs::path gen_spec, gen_out;
  gen->add_option("--spec", gen_spec, "phantom or cohort spec JSON")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train all pipeline models from a cohort");
  fs::path train_manifest, train_out;
  std::optional<fs::path> train_config;
  train->add_option("--cohort", train_manifest, "cohort manifest JSON")->required();
  train->add_option("--config", train_config, "pipeline config JSON (defaults when omitted)");
  train->add_option("--out", train_out, "model output directory")->required();

  auto* grade = app.add_subcommand("grade", "grade one CT volume");
  fs::path grade_volume, grade_models;
  std::optional<double> tau, alpha, beta;
  std::optional<fs::path> grade_out;
  grade->add_option("--volume", grade_volume, "volume container (base path or .json/.raw)")
      ->required();
  grade->add_option("--models", grade_models, "model directory")->required();
  grade->add_option("--tau", tau, "two-class threshold");
  grade->add_option("--alpha", alpha, "three-class suspicious threshold");
  grade->add_option("--beta", beta, "three-class sick margin");
  grade->add_option("--out", grade_out, "report path (default: <volume>.report.json)");

  auto* eval = app.add_subcommand("eval", "evaluate models on a held-out manifest");
  fs::path eval_models, eval_manifest;
  std::optional<double> etau, ealpha, ebeta;
  std::optional<fs::path> eval_out;
  eval->add_option("--models", eval_models, "model directory")->required();
  eval->add_option("--manifest", eval_manifest, "test manifest JSON")->required();
  eval->add_option("--tau", etau, "two-class threshold");
  eval->add_option("--alpha", ealpha, "three-class suspicious threshold");
  eval->add_option("--beta", ebeta, "three-class sick margin");
  eval->add_option("--out", eval_out, "report path (default: eval_report.json)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_phantom_gen(gen_spec, gen_out, seed);
    if (train->parsed()) return cmd_train(train_manifest, train_config, train_out, seed);
    if (grade->parsed())
      return cmd_grade(grade_volume, grade_models, tau, alpha, beta, grade_out);
    if (eval->parsed())
      return cmd_eval(eval_models, eval_manifest, etau, ealpha, ebeta, eval_out);
  } catch (const sij::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
