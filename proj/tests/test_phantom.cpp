#include "sij/phantom.hpp"

#include <gtest/gtest.h>

#include <map>

#include "sij/morphology.hpp"

using namespace sij;

namespace {

PhantomSpec grade_spec(const SliceGradeVector& grades, std::uint64_t seed = 5) {
  PhantomSpec spec;
  spec.left_grades = grades;
  spec.right_grades = grades;
  spec.seed = seed;
  return spec;
}

TEST(Phantom, AllGradeZeroSpecIsHealthyBothJoints) {
  const auto pc = generate_phantom(grade_spec(SliceGradeVector(16, 0)));
  EXPECT_EQ(pc.truth.left_case, CaseGrade::healthy);
  EXPECT_EQ(pc.truth.right_case, CaseGrade::healthy);
  EXPECT_EQ(rule_case_grade(pc.truth.left_grades), CaseGrade::healthy);
}

TEST(Phantom, FiveConsecutiveGradeThreeSlicesAreSick) {
  SliceGradeVector grades(16, 0);
  for (int i = 5; i < 10; ++i) grades[static_cast<std::size_t>(i)] = 3;
  const auto pc = generate_phantom(grade_spec(grades));
  EXPECT_EQ(pc.truth.left_case, CaseGrade::sick);
}

TEST(Phantom, SameSeedIsBitwiseIdentical) {
  const auto a = generate_phantom(grade_spec(SliceGradeVector(14, 1), 42));
  const auto b = generate_phantom(grade_spec(SliceGradeVector(14, 1), 42));
  EXPECT_EQ(a.volume.voxels(), b.volume.voxels());
  EXPECT_EQ(a.sij_truth.bits(), b.sij_truth.bits());
  EXPECT_EQ(a.diagnostics.hu_checksum, b.diagnostics.hu_checksum);
}

TEST(Phantom, DifferentSeedsChangeTheChecksum) {
  const auto a = generate_phantom(grade_spec(SliceGradeVector(14, 1), 1));
  const auto b = generate_phantom(grade_spec(SliceGradeVector(14, 1), 2));
  EXPECT_NE(a.diagnostics.hu_checksum, b.diagnostics.hu_checksum);
}

TEST(Phantom, DiagnosticsMatchTheEmittedVolume) {
  const auto pc = generate_phantom(grade_spec(SliceGradeVector(15, 2), 9));
  std::int64_t checksum = 0, n150 = 0, n300 = 0;
  for (const auto v : pc.volume.voxels()) {
    checksum += v;
    n150 += (v >= 150 && v <= 1300);
    n300 += (v >= 300 && v <= 1300);
  }
  EXPECT_EQ(checksum, pc.diagnostics.hu_checksum);
  EXPECT_EQ(n150, pc.diagnostics.bone_voxels_150_1300);
  EXPECT_EQ(n300, pc.diagnostics.bone_voxels_300_1300);

  // the threshold operation reproduces the recorded count exactly
  EXPECT_EQ(static_cast<std::int64_t>(threshold_mask(pc.volume, 300, 1300).count_set()),
            pc.diagnostics.bone_voxels_300_1300);
}

TEST(Phantom, SijTruthIsSubsetOfBoneTruth) {
  const auto pc = generate_phantom(grade_spec({0, 1, 2, 3, 4, 4, 3, 2, 1, 0, 0, 0, 0, 0}, 3));
  for (std::size_t i = 0; i < pc.sij_truth.bits().size(); ++i)
    if (pc.sij_truth.bits()[i]) EXPECT_TRUE(pc.bone_truth.bits()[i]);
  EXPECT_GT(pc.sij_truth.count_set(), 0u);
}

TEST(Phantom, SkeletonSegmentationRecoversBoneTruth) {
  const auto pc = generate_phantom(grade_spec({0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 0, 0, 1, 1}, 7));
  const auto seg = adaptive_skeleton_segment(pc.volume);
  std::size_t bone = 0, recovered = 0;
  for (std::size_t i = 0; i < pc.bone_truth.bits().size(); ++i) {
    if (!pc.bone_truth.bits()[i]) continue;
    ++bone;
    recovered += seg.mask.bits()[i];
  }
  EXPECT_GE(static_cast<double>(recovered) / static_cast<double>(bone), 0.99);
}

TEST(Phantom, PelvisExtentMatchesSegmentedHullWidth) {
  const auto pc = generate_phantom(grade_spec(SliceGradeVector(16, 0), 11));
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto hull = slice_convex_hull(seg.mask, pc.diagnostics.pelvis_extent_z);
  EXPECT_NEAR(hull_width(hull), pc.diagnostics.pelvis_x_extent_mm,
              pc.volume.spacing().sx + 1e-9);
}

// Mean joint gap measured between the bone margins inside the truth band must
// decrease strictly from grade 0 to grade 4.
TEST(Phantom, JointGapDecreasesWithGrade) {
  SliceGradeVector grades;
  for (int g = 0; g <= 4; ++g)
    for (int r = 0; r < 3; ++r) grades.push_back(g);
  const auto pc = generate_phantom(grade_spec(grades, 13));

  const auto& dims = pc.volume.dims();
  const auto& sp = pc.volume.spacing();
  const double mid_x = (dims.nx - 1) * sp.sx / 2.0;
  std::map<int, std::pair<double, int>> gap_by_grade;  // grade -> (sum, rows)
  for (int t = 0; t < static_cast<int>(grades.size()); ++t) {
    const int z = pc.truth.z_joint_lo + t;
    for (int side = 0; side < 2; ++side) {
      for (int y = 0; y < dims.ny; ++y) {
        int tx_min = dims.nx, tx_max = -1;
        for (int x = 0; x < dims.nx; ++x) {
          if (!pc.sij_truth.test(x, y, z)) continue;
          const bool left = x * sp.sx > mid_x;
          if ((side == 1) != left) continue;
          tx_min = std::min(tx_min, x);
          tx_max = std::max(tx_max, x);
        }
        if (tx_max < 0) continue;
        int gap_voxels = 0;
        for (int x = tx_min; x <= tx_max; ++x)
          if (!pc.bone_truth.test(x, y, z)) ++gap_voxels;
        auto& [sum, count] = gap_by_grade[grades[static_cast<std::size_t>(t)]];
        sum += gap_voxels * sp.sx;
        ++count;
      }
    }
  }
  ASSERT_EQ(gap_by_grade.size(), 5u);
  double prev = 1e9;
  for (int g = 0; g <= 4; ++g) {
    const auto [sum, count] = gap_by_grade[g];
    const double mean = sum / count;
    EXPECT_LT(mean, prev) << "grade " << g;
    prev = mean;
  }
}

TEST(Phantom, GeometryExceedingDimsRejected) {
  PhantomSpec spec = grade_spec(SliceGradeVector(16, 0));
  spec.dims = {64, 64, 56};  // pelvis no longer fits in x
  EXPECT_THROW(generate_phantom(spec), InvalidArgument);
  PhantomSpec tall = grade_spec(SliceGradeVector(40, 0));
  EXPECT_THROW(generate_phantom(tall), InvalidArgument);  // bone range exceeds nz
}

TEST(Cohort, BalancedMixYieldsBalancedCounts) {
  CohortSpec cohort;
  cohort.n = 60;
  cohort.seed = 77;
  std::map<CaseGrade, int> counts;
  for (int i = 0; i < cohort.n; ++i) {
    const auto spec = cohort_case_spec(cohort, i);
    const auto left = rule_case_grade(spec.left_grades);
    const auto right = rule_case_grade(spec.right_grades);
    EXPECT_EQ(left, right);  // both joints share the target class
    ++counts[left];
  }
  EXPECT_NEAR(counts[CaseGrade::healthy], 20, 1);
  EXPECT_NEAR(counts[CaseGrade::suspicious], 20, 1);
  EXPECT_NEAR(counts[CaseGrade::sick], 20, 1);
}

TEST(Cohort, SingleCaseTakesTheMajorityClass) {
  CohortSpec cohort;
  cohort.n = 1;
  cohort.mix = {0.2, 0.5, 0.3};
  const auto spec = cohort_case_spec(cohort, 0);
  EXPECT_EQ(rule_case_grade(spec.left_grades), CaseGrade::suspicious);
}

TEST(Cohort, DifferentSeedsGiveDifferentChecksums) {
  CohortSpec a, b;
  a.n = b.n = 2;
  a.seed = 1;
  b.seed = 2;
  const auto ca = generate_phantom(cohort_case_spec(a, 0), "a0");
  const auto cb = generate_phantom(cohort_case_spec(b, 0), "b0");
  EXPECT_NE(ca.diagnostics.hu_checksum, cb.diagnostics.hu_checksum);
}

TEST(Cohort, InvalidMixRejected) {
  CohortSpec cohort;
  cohort.mix = {0.5, 0.2, 0.2};
  EXPECT_THROW(generate_cohort(cohort), InvalidArgument);
}

TEST(Cohort, RuleConsistencyAcrossGeneratedCases) {
  CohortSpec cohort;
  cohort.n = 9;
  cohort.seed = 31;
  const auto cases = generate_cohort(cohort);
  ASSERT_EQ(cases.size(), 9u);
  for (const auto& pc : cases) {
    EXPECT_EQ(rule_case_grade(pc.truth.left_grades), pc.truth.left_case) << pc.id;
    EXPECT_EQ(rule_case_grade(pc.truth.right_grades), pc.truth.right_case) << pc.id;
  }
}

TEST(PhantomIo, CaseRoundTripThroughManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "sij_phantom_io";
  std::filesystem::remove_all(dir);
  const auto pc = generate_phantom(grade_spec(SliceGradeVector(14, 2), 19), "case000");
  auto entries = nlohmann::ordered_json::array();
  entries.push_back(save_phantom_case(pc, dir));
  save_cohort_manifest(entries, dir);

  const auto manifest = load_cohort_manifest(dir / "manifest.json");
  ASSERT_EQ(manifest.size(), 1u);
  EXPECT_EQ(manifest[0].id, "case000");
  const auto vol = load_volume(manifest[0].volume);
  EXPECT_EQ(vol.voxels(), pc.volume.voxels());
  const auto sij = load_mask(manifest[0].sij_mask);
  EXPECT_EQ(sij.bits(), pc.sij_truth.bits());
  const auto [truth, diag] = load_phantom_truth(manifest[0].truth);
  EXPECT_EQ(truth.left_grades, pc.truth.left_grades);
  EXPECT_EQ(truth.left_case, pc.truth.left_case);
  EXPECT_EQ(diag.hu_checksum, pc.diagnostics.hu_checksum);
  EXPECT_NEAR(truth.coccyx.x, pc.truth.coccyx.x, 1e-12);
}

}  // namespace
