#include "sij/roi.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "sij/phantom.hpp"
#include "sij/rng.hpp"

using namespace sij;

namespace {

// Oracle classifier replaying ground-truth labels; exercises the slice-index
// channel of the contract.
struct TruthReplayClassifier : VoxelClassifier {
  const BinaryMask* truth;
  explicit TruthReplayClassifier(const BinaryMask& t) : truth(&t) {}
  ImageF probability_map(const ImageF&, const ImageF& cur, const ImageF&, int z) const override {
    ImageF out(cur.rows, cur.cols);
    for (int y = 0; y < cur.rows; ++y)
      for (int x = 0; x < cur.cols; ++x) out.at(y, x) = truth->test(x, y, z) ? 1.0f : 0.0f;
    return out;
  }
};

struct ConstantClassifier : VoxelClassifier {
  float value;
  explicit ConstantClassifier(float v) : value(v) {}
  ImageF probability_map(const ImageF&, const ImageF& cur, const ImageF&, int) const override {
    ImageF out(cur.rows, cur.cols);
    std::fill(out.v.begin(), out.v.end(), value);
    return out;
  }
};

Forest always_positive_forest() {
  Forest f;
  f.n_classes = 2;
  f.n_features = 4;
  Tree t;
  TreeNode leaf;
  leaf.counts = {0, 10};
  t.nodes.push_back(leaf);
  f.trees.push_back(t);
  return f;
}

Forest always_negative_forest() {
  Forest f;
  f.n_classes = 2;
  f.n_features = 4;
  Tree t;
  TreeNode leaf;
  leaf.counts = {10, 0};
  t.nodes.push_back(leaf);
  f.trees.push_back(t);
  return f;
}

PhantomCase make_case(std::uint64_t seed = 3) {
  PhantomSpec spec;
  spec.left_grades = SliceGradeVector(16, 0);
  spec.right_grades = SliceGradeVector(16, 0);
  spec.seed = seed;
  return generate_phantom(spec, "roi_case");
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.bits().size(); ++i) {
    na += a.bits()[i] != 0;
    nb += b.bits()[i] != 0;
    inter += (a.bits()[i] && b.bits()[i]);
  }
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// A forest trained on ground-truth voxel features, mirroring the offline
// refinement training (positives: truth band, negatives: other slab voxels).
Forest oracle_refinement_forest(const PhantomCase& pc, const PelvisRoi& roi) {
  std::vector<std::vector<float>> X;
  std::vector<int> y;
  Rng rng(99);
  const auto& dims = pc.volume.dims();
  std::vector<VoxelIndex> negatives;
  for (int z = roi.z_bottom; z <= roi.z_top; ++z)
    for (int j = 0; j < dims.ny; ++j)
      for (int i = 0; i < dims.nx; ++i) {
        if (pc.sij_truth.test(i, j, z)) {
          X.push_back(voxel_features({i, j, z}, pc.truth.coccyx, pc.volume));
          y.push_back(1);
        } else if (rng.uniform() < 0.01) {
          negatives.push_back({i, j, z});
        }
      }
  const std::size_t n_pos = y.size();
  Rng pick(7);
  for (std::size_t i = 0; i < negatives.size() && i < n_pos; ++i) {
    X.push_back(voxel_features(negatives[i], pc.truth.coccyx, pc.volume));
    y.push_back(0);
  }
  ForestParams params;
  params.n_trees = 4;
  params.max_depth = 12;
  params.seed = 17;
  return train_forest(X, y, params);
}

TEST(PelvisRoi_, PhantomFlareIsFoundExactly) {
  const auto pc = make_case(21);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto roi = compute_pelvis_roi(seg.mask);
  EXPECT_EQ(roi.z_top, pc.truth.z_flare);
  const int margin = static_cast<int>(std::ceil(30.0 / pc.volume.spacing().sz));
  EXPECT_EQ(roi.z_bottom, std::max(0, pc.truth.z_bone_lo - 1 - margin));
  EXPECT_GE(roi.reference_hull.vertices.size(), 3u);
}

TEST(PelvisRoi_, MonotoneCylinderHasNoPelvis) {
  BinaryMask mask({40, 40, 30}, {1, 1, 1});
  for (int z = 5; z < 25; ++z)
    for (int y = 15; y < 25; ++y)
      for (int x = 12; x < 28; ++x) mask.set(x, y, z);
  EXPECT_THROW(compute_pelvis_roi(mask), PelvisNotFoundError);
}

TEST(PelvisRoi_, EmptySkeletonRejected) {
  BinaryMask mask({16, 16, 16}, {1, 1, 1});
  EXPECT_THROW(compute_pelvis_roi(mask), PelvisNotFoundError);
}

TEST(PelvisRoi_, InvariantToInPlaneTranslation) {
  const auto pc = make_case(23);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto base = compute_pelvis_roi(seg.mask);

  const auto& dims = seg.mask.dims();
  BinaryMask shifted(dims, seg.mask.spacing());
  const int dx = 4, dy = -3;
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        if (!seg.mask.test(x, y, z)) continue;
        const int nxp = x + dx, nyp = y + dy;
        ASSERT_TRUE(nxp >= 0 && nxp < dims.nx && nyp >= 0 && nyp < dims.ny);
        shifted.set(nxp, nyp, z);
      }
  const auto moved = compute_pelvis_roi(shifted);
  EXPECT_EQ(moved.z_top, base.z_top);
  EXPECT_EQ(moved.z_bottom, base.z_bottom);
}

TEST(InitialMask, ConstantClassifiers) {
  const auto pc = make_case(25);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto roi = compute_pelvis_roi(seg.mask);

  const auto empty = initial_sij_mask(pc.volume, roi, ConstantClassifier(0.0f));
  EXPECT_EQ(empty.count_set(), 0u);

  const auto full = initial_sij_mask(pc.volume, roi, ConstantClassifier(1.0f));
  const auto slab_voxels = static_cast<std::size_t>(pc.volume.dims().nx) *
                           pc.volume.dims().ny * (roi.z_top - roi.z_bottom + 1);
  EXPECT_EQ(full.count_set(), slab_voxels);
  // confined to the slab
  for (int z = 0; z < pc.volume.dims().nz; ++z) {
    if (z >= roi.z_bottom && z <= roi.z_top) continue;
    for (int y = 0; y < pc.volume.dims().ny; ++y)
      for (int x = 0; x < pc.volume.dims().nx; ++x) EXPECT_FALSE(full.test(x, y, z));
  }
}

TEST(InitialMask, TruthReplayRecoversTruthInsideSlab) {
  const auto pc = make_case(27);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto roi = compute_pelvis_roi(seg.mask);
  const auto mask = initial_sij_mask(pc.volume, roi, TruthReplayClassifier(pc.sij_truth));
  // the phantom's joint span lies inside the slab, so the masks must agree
  EXPECT_EQ(mask.bits(), pc.sij_truth.bits());
}

TEST(VoxelFeatures, DegenerateAndUnitCases) {
  const auto pc = make_case(29);
  const auto& sp = pc.volume.spacing();
  const VoxelIndex at_coccyx{
      static_cast<int>(std::lround(pc.truth.coccyx.x / sp.sx)),
      static_cast<int>(std::lround(pc.truth.coccyx.y / sp.sy)),
      static_cast<int>(std::lround(pc.truth.coccyx.z / sp.sz))};
  const WorldPoint exact = index_to_world(pc.volume, at_coccyx);
  const auto f0 = voxel_features(at_coccyx, exact, pc.volume);

  // +10 mm in x only
  const WorldPoint base{10.0, 20.0, 30.0};
  const Spacing3 unit{1.0, 1.0, 1.0};
  CtVolume vol({64, 64, 64}, unit, std::vector<std::int16_t>(64 * 64 * 64, 0));
  const auto f = voxel_features({20, 20, 30}, base, vol);
  EXPECT_FLOAT_EQ(f[0], 1.0f);
  EXPECT_FLOAT_EQ(f[1], 0.0f);
  EXPECT_FLOAT_EQ(f[2], 0.0f);
  EXPECT_FLOAT_EQ(f[3], 10.0f);

  Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    const VoxelIndex idx{static_cast<int>(rng.uniform_int(64)),
                         static_cast<int>(rng.uniform_int(64)),
                         static_cast<int>(rng.uniform_int(64))};
    const WorldPoint c{32.5, 31.5, 30.5};  // never at a voxel center
    const auto fv = voxel_features(idx, c, vol);
    const double norm = std::sqrt(fv[0] * fv[0] + fv[1] * fv[1] + fv[2] * fv[2]);
    EXPECT_NEAR(norm, 1.0, 1e-5);
  }

  const auto with_hu = voxel_features({20, 20, 30}, base, vol, true);
  ASSERT_EQ(with_hu.size(), 5u);
  EXPECT_FLOAT_EQ(with_hu[4], 0.0f);
}

TEST(Coccyx, PhantomBlobIsLocated) {
  const auto pc = make_case(33);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto roi = compute_pelvis_roi(seg.mask);
  const auto initial = initial_sij_mask(pc.volume, roi, TruthReplayClassifier(pc.sij_truth));
  const auto rf = oracle_refinement_forest(pc, roi);
  const auto point = locate_coccyx(seg.mask, roi, initial, pc.volume, rf);
  const double dist = std::sqrt(std::pow(point.x - pc.truth.coccyx.x, 2) +
                                std::pow(point.y - pc.truth.coccyx.y, 2) +
                                std::pow(point.z - pc.truth.coccyx.z, 2));
  EXPECT_LE(dist, 5.0);
}

TEST(Coccyx, AlwaysPositiveForestTiesFavorSlabCandidate) {
  const auto pc = make_case(35);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto roi = compute_pelvis_roi(seg.mask);
  const auto initial = initial_sij_mask(pc.volume, roi, TruthReplayClassifier(pc.sij_truth));
  const auto point = locate_coccyx(seg.mask, roi, initial, pc.volume, always_positive_forest());
  // both candidates intersect everything; the pelvic-slab candidate wins the tie
  const auto slab = sij::detail::posterior_centroid(seg.mask, roi.z_bottom, roi.z_top, 0.01);
  EXPECT_DOUBLE_EQ(point.x, slab.x);
  EXPECT_DOUBLE_EQ(point.y, slab.y);
  EXPECT_DOUBLE_EQ(point.z, slab.z);
}

TEST(Coccyx, AlwaysNegativeForestIsAmbiguous) {
  const auto pc = make_case(37);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto roi = compute_pelvis_roi(seg.mask);
  const auto initial = initial_sij_mask(pc.volume, roi, TruthReplayClassifier(pc.sij_truth));
  EXPECT_THROW(locate_coccyx(seg.mask, roi, initial, pc.volume, always_negative_forest()),
               CoccyxAmbiguousError);
}

TEST(Refine, PositiveForestKeepsEverything) {
  const auto pc = make_case(39);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto roi = compute_pelvis_roi(seg.mask);
  const auto initial = initial_sij_mask(pc.volume, roi, TruthReplayClassifier(pc.sij_truth));
  const auto refined =
      refine_sij_mask(initial, pc.truth.coccyx, always_positive_forest(), pc.volume);
  EXPECT_EQ(refined.bits(), initial.bits());
}

TEST(Refine, TinyComponentIsDroppedAsSijNotFound) {
  CtVolume vol({16, 16, 16}, {1.0, 1.5, 1.0}, std::vector<std::int16_t>(4096, 0));
  BinaryMask initial(vol.dims(), vol.spacing());
  initial.set(8, 8, 8);  // single voxel: 1.5 mm^3 < 2 mm^3
  EXPECT_THROW(
      refine_sij_mask(initial, WorldPoint{0, 0, 0}, always_positive_forest(), vol),
      SijNotFoundError);
}

TEST(Refine, OutputIsSubsetAndImprovesDice) {
  const auto pc = make_case(41);
  const auto seg = adaptive_skeleton_segment(pc.volume);
  const auto roi = compute_pelvis_roi(seg.mask);
  // an over-segmented initial mask: truth plus dilated surroundings
  auto initial = initial_sij_mask(pc.volume, roi, TruthReplayClassifier(pc.sij_truth));
  auto over = close_mask(initial, 9);
  // confine to slab again (closing extends in z)
  for (int z = 0; z < pc.volume.dims().nz; ++z) {
    if (z >= roi.z_bottom && z <= roi.z_top) continue;
    for (int y = 0; y < pc.volume.dims().ny; ++y)
      for (int x = 0; x < pc.volume.dims().nx; ++x) over.set(x, y, z, false);
  }
  const auto rf = oracle_refinement_forest(pc, roi);
  const auto refined = refine_sij_mask(over, pc.truth.coccyx, rf, pc.volume);
  for (std::size_t i = 0; i < refined.bits().size(); ++i)
    if (refined.bits()[i]) EXPECT_TRUE(over.bits()[i]);
  EXPECT_GE(dice(refined, pc.sij_truth), dice(over, pc.sij_truth));
}

TEST(Rects, ConstantVolumeGivesConstantPixels) {
  CtVolume vol({64, 64, 8}, {1, 1, 1}, std::vector<std::int16_t>(64 * 64 * 8, 550));
  BinaryMask refined(vol.dims(), vol.spacing());
  for (int y = 20; y < 30; ++y)
    for (int x = 10; x < 20; ++x) refined.set(x, y, 4);   // right side
  for (int y = 20; y < 30; ++y)
    for (int x = 44; x < 54; ++x) refined.set(x, y, 4);   // left side
  const auto rects = extract_half_slice_rects(vol, refined, "const_case");
  ASSERT_EQ(rects.size(), 2u);
  const float expected = static_cast<float>((550.0 + 200.0) / 1500.0);
  for (const auto& r : rects) {
    EXPECT_EQ(r.pixels.v.size(), 20000u);
    for (const auto p : r.pixels.v) {
      EXPECT_NEAR(p, expected, 1e-6);
      EXPECT_GE(p, 0.0f);
      EXPECT_LE(p, 1.0f);
    }
  }
}

TEST(Rects, CenterEqualsSideCentroid) {
  const auto pc = make_case(43);
  const auto rects = extract_half_slice_rects(pc.volume, pc.sij_truth, pc.id);
  ASSERT_FALSE(rects.empty());
  const auto& dims = pc.volume.dims();
  const auto& sp = pc.volume.spacing();
  const double mid_x = (dims.nx - 1) * sp.sx / 2.0;
  for (const auto& r : rects) {
    double sx = 0, sy = 0;
    int n = 0;
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        if (!pc.sij_truth.test(x, y, r.z)) continue;
        const bool left = x * sp.sx > mid_x;
        if ((r.side == JointSide::left) != left) continue;
        sx += x * sp.sx;
        sy += y * sp.sy;
        ++n;
      }
    ASSERT_GT(n, 0);
    EXPECT_NEAR(r.cx_mm, sx / n, 1e-9);
    EXPECT_NEAR(r.cy_mm, sy / n, 1e-9);
  }
}

TEST(Rects, MirroredVolumeGivesMirroredRectangles) {
  // build a mirrored volume and a mirrored refined mask, then compare the
  // flipped left rectangle with the right one
  const int nx = 64, ny = 48, nz = 6;
  std::vector<std::int16_t> hu(static_cast<std::size_t>(nx) * ny * nz, 0);
  Rng rng(47);
  auto at = [&](int x, int y, int z) -> std::int16_t& {
    return hu[static_cast<std::size_t>(x) +
              static_cast<std::size_t>(nx) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z)];
  };
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx / 2; ++x) {
        const auto v = static_cast<std::int16_t>(rng.uniform_int(1500)) ;
        at(x, y, z) = v;
        at(nx - 1 - x, y, z) = v;
      }
  CtVolume vol({nx, ny, nz}, {0.9, 1.1, 2.0}, hu);
  BinaryMask refined(vol.dims(), vol.spacing());
  for (int z = 2; z < 4; ++z)
    for (int y = 18; y < 30; ++y)
      for (int x = 8; x < 18; ++x) {
        refined.set(x, y, z);
        refined.set(nx - 1 - x, y, z);
      }
  const auto rects = extract_half_slice_rects(vol, refined, "mirror");
  ASSERT_EQ(rects.size(), 4u);
  for (std::size_t i = 0; i < rects.size(); i += 2) {
    const auto& right = rects[i];
    const auto& left = rects[i + 1];
    ASSERT_EQ(right.side, JointSide::right);
    ASSERT_EQ(left.side, JointSide::left);
    ASSERT_EQ(right.z, left.z);
    for (std::size_t p = 0; p < right.pixels.v.size(); ++p)
      EXPECT_NEAR(left.pixels.v[p], right.pixels.v[p], 1e-6) << "pixel " << p;
  }
}

TEST(Rects, EmptyMaskRejected) {
  CtVolume vol({8, 8, 8}, {1, 1, 1}, std::vector<std::int16_t>(512, 0));
  BinaryMask empty(vol.dims(), vol.spacing());
  EXPECT_THROW(extract_half_slice_rects(vol, empty, "x"), InvalidArgument);
}

TEST(RectBatchIo, RoundTripWithinQuantization) {
  const auto dir = std::filesystem::temp_directory_path() / "sij_rect_io";
  std::filesystem::create_directories(dir);
  std::vector<RectSample> rects;
  Rng rng(51);
  for (int i = 0; i < 3; ++i) {
    RectSample r;
    r.side = i % 2 ? JointSide::left : JointSide::right;
    r.z = 10 + i;
    r.cx_mm = 25.5 + i;
    r.cy_mm = 40.25;
    r.case_id = "rt_case";
    r.pixels = ImageF(kRectRows, kRectCols);
    for (auto& p : r.pixels.v) p = static_cast<float>(rng.uniform());
    rects.push_back(std::move(r));
  }
  save_rect_batch(dir / "batch", rects, {0, 3, 2});
  const auto [back, grades] = load_rect_batch(dir / "batch");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(grades, (std::vector<int>{0, 3, 2}));
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].side, rects[i].side);
    EXPECT_EQ(back[i].z, rects[i].z);
    EXPECT_DOUBLE_EQ(back[i].cx_mm, rects[i].cx_mm);
    for (std::size_t p = 0; p < back[i].pixels.v.size(); ++p)
      EXPECT_NEAR(back[i].pixels.v[p], rects[i].pixels.v[p], 1.0 / 510.0 + 1e-6);
  }
}

}  // namespace
