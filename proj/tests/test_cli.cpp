// End-to-end CLI checks driven through the real binary (path provided by the
// SIJ_BIN environment variable from CMake). Uses a deliberately tiny cohort
// and reduced model sizes so the full phantom-gen -> train -> grade -> eval
// loop stays fast.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sij/errors.hpp"

namespace fs = std::filesystem;

namespace {

std::string sij_bin() {
  const char* bin = std::getenv("SIJ_BIN");
  if (!bin) throw std::runtime_error("SIJ_BIN not set; run through ctest");
  return bin;
}

int run(const std::string& args) {
  const std::string cmd = "SIJ_THREADS=2 " + sij_bin() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  nlohmann::json j;
  in >> j;
  return j;
}

class CliFlow : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "sij_cli_flow";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    {
      std::ofstream spec(dir_ / "cohort_spec.json");
      spec << R"({"cohort": {"n": 8, "mix": [0.34, 0.33, 0.33], "seed": 21}})";
    }
    {
      std::ofstream cfg(dir_ / "config.json");
      cfg << R"({
        "seed": 7,
        "unet": {"epochs": 1, "batch": 8},
        "unet_max_slices_per_case": 8,
        "slice_cnn": {"channels": [4, 8, 8], "hidden": 16, "epochs": 2, "batch": 16, "lr": 0.05},
        "case": {"n_trees": 40, "n_aug": 1, "n_aug_alternate": 0},
        "split": {"train": 0.5, "val": 0.25, "test": 0.25}
      })";
    }
  }
  static fs::path dir_;
};

fs::path CliFlow::dir_;

TEST_F(CliFlow, Step1PhantomGen) {
  ASSERT_EQ(run("phantom-gen --spec " + (dir_ / "cohort_spec.json").string() + " --out " +
                (dir_ / "cohort").string()),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "cohort" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir_ / "cohort" / "case000.raw"));
}

TEST_F(CliFlow, Step2Train) {
  ASSERT_EQ(run("train --cohort " + (dir_ / "cohort" / "manifest.json").string() +
                " --config " + (dir_ / "config.json").string() + " --out " +
                (dir_ / "models").string()),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "models" / "models.json"));
  EXPECT_TRUE(fs::exists(dir_ / "models" / "training_log.json"));
  const auto log = read_json(dir_ / "models" / "training_log.json");
  EXPECT_TRUE(log.contains("alternate_val_accuracy"));
  EXPECT_TRUE(log.contains("split_ids"));
}

TEST_F(CliFlow, Step3GradeIsDeterministicModuloTimings) {
  const auto vol = (dir_ / "cohort" / "case000").string();
  ASSERT_EQ(run("grade --volume " + vol + " --models " + (dir_ / "models").string() +
                " --out " + (dir_ / "r1.json").string()),
            0);
  ASSERT_EQ(run("grade --volume " + vol + " --models " + (dir_ / "models").string() +
                " --out " + (dir_ / "r2.json").string()),
            0);
  auto a = read_json(dir_ / "r1.json");
  auto b = read_json(dir_ / "r2.json");
  EXPECT_TRUE(a.contains("timings_ms"));
  a.erase("timings_ms");
  b.erase("timings_ms");
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.at("joints").contains("left"));
  EXPECT_TRUE(a.at("joints").contains("right"));
}

TEST_F(CliFlow, Step4Eval) {
  ASSERT_EQ(run("eval --models " + (dir_ / "models").string() + " --manifest " +
                (dir_ / "cohort" / "manifest.json").string() + " --out " +
                (dir_ / "eval.json").string()),
            0);
  const auto report = read_json(dir_ / "eval.json");
  EXPECT_TRUE(report.contains("two_class"));
  EXPECT_TRUE(report.contains("three_class"));
  EXPECT_TRUE(report.contains("roi_accuracy"));
}

TEST_F(CliFlow, Step5ExitCodes) {
  // all-air volume -> pelvis not found (2)
  {
    std::ofstream spec(dir_ / "air_spec.json");
    // a legal phantom spec, then overwrite the payload with air below
    spec << R"({"phantom": {"left_grades": [0,0,0,0,0,0,0,0,0,0,0,0,0,0],
                             "right_grades": [0,0,0,0,0,0,0,0,0,0,0,0,0,0]}})";
  }
  ASSERT_EQ(run("phantom-gen --spec " + (dir_ / "air_spec.json").string() + " --out " +
                (dir_ / "air").string()),
            0);
  {
    // rewrite the raw payload as air; header stays valid
    const auto raw_path = dir_ / "air" / "case000.raw";
    const auto size = fs::file_size(raw_path);
    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    std::vector<char> bytes(size);
    for (std::size_t i = 0; i < bytes.size(); i += 2) {
      bytes[i] = static_cast<char>(0x18);  // -1000 little-endian
      bytes[i + 1] = static_cast<char>(0xfc);
    }
    raw.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_EQ(run("grade --volume " + (dir_ / "air" / "case000").string() + " --models " +
                (dir_ / "models").string()),
            static_cast<int>(sij::ExitCode::pelvis_not_found));

  // missing volume -> I/O error (4)
  EXPECT_EQ(run("grade --volume " + (dir_ / "nope").string() + " --models " +
                (dir_ / "models").string()),
            static_cast<int>(sij::ExitCode::io_error));

  // overlapping explicit split -> config failure (1) before any training
  {
    std::ofstream cfg(dir_ / "bad_config.json");
    cfg << R"({"split": {"train_ids": ["case000"], "val_ids": ["case000"],
               "test_ids": ["case001"]}})";
  }
  EXPECT_EQ(run("train --cohort " + (dir_ / "cohort" / "manifest.json").string() +
                " --config " + (dir_ / "bad_config.json").string() + " --out " +
                (dir_ / "models_bad").string()),
            static_cast<int>(sij::ExitCode::failure));
  EXPECT_FALSE(fs::exists(dir_ / "models_bad" / "models.json"));
}

}  // namespace
