#pragma once
// Synthetic pelvis phantoms with known ground truth: a sacrum block flanked
// by iliac bodies whose per-slice joint gap and margin morphology encode the
// slice grade (gap narrowing, sclerotic rim, erosion notches, bony
// bridging), lateral wing slabs that produce the >30% hull-width flare, and
// a posterior-inferior coccyx blob. Stylized geometry only; no anatomical
// realism is claimed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sij/case_grader.hpp"
#include "sij/errors.hpp"
#include "sij/rng.hpp"
#include "sij/volume.hpp"

namespace sij {

struct GradeMorphology {
  // joint gap per grade, monotone non-increasing
  std::array<double, 5> gap_mm = {3.0, 2.5, 2.0, 1.0, 0.0};
  double rim_depth_mm = 1.8;   // grade-2 sclerotic rim
  double rim_hu = 1100.0;
  double blur_hu = 370.0;      // grade-1 margin transition layer
  double notch_radius_mm = 1.6;  // grade-3 erosion bites
  int notches_per_slice = 3;
};

struct PhantomSpec {
  Dims3 dims{192, 128, 56};
  Spacing3 spacing{0.7, 0.7, 1.6};

  // pelvis geometry, mm relative to the slice center unless noted
  double sacrum_halfwidth = 24.0;
  double sacrum_y_lo = -18.0, sacrum_y_hi = 10.0;
  double body_width = 10.0;   // iliac body
  double body_y_lo = -16.0, body_y_hi = 8.0;
  double wing_extra = 20.0;   // iliac wing x-extent beyond the body
  double center_dx = 0.0, center_dy = 0.0;  // in-plane jitter of the pelvis

  int z_bone_lo = 22;   // lowest bone slice
  int tail_slices = 7;  // sacrum-only slices below the joint span
  int wing_slices = 5;  // flare slices above the span

  std::vector<int> left_grades{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  std::vector<int> right_grades{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  GradeMorphology morph;
  double sij_band_mm = 4.0;  // truth-label band beyond each joint margin

  double bone_hu_mean = 700.0, bone_hu_sigma = 80.0;
  double soft_hu = 40.0;
  double noise_sigma = 10.0;

  double coccyx_y_offset = 7.0;  // behind the sacrum posterior edge
  double coccyx_radius = 6.5;

  std::uint64_t seed = 1;

  int joint_span() const { return static_cast<int>(left_grades.size()); }
  int z_joint_lo() const { return z_bone_lo + tail_slices; }
  int z_joint_hi() const { return z_joint_lo() + joint_span() - 1; }
  int z_flare() const { return z_joint_hi() + 1; }
  int z_bone_hi() const { return z_flare() + wing_slices - 1; }
};

struct PhantomDiagnostics {
  std::int64_t hu_checksum = 0;  // sum of all HU values
  std::int64_t bone_voxels_150_1300 = 0;
  std::int64_t bone_voxels_300_1300 = 0;
  double pelvis_x_extent_mm = 0.0;  // bone extent at the widest wing slice
  int pelvis_extent_z = 0;
};

struct PhantomTruth {
  SliceGradeVector left_grades, right_grades;
  CaseGrade left_case = CaseGrade::healthy;
  CaseGrade right_case = CaseGrade::healthy;
  WorldPoint coccyx;
  int z_bone_lo = 0, z_joint_lo = 0, z_joint_hi = 0, z_flare = 0, z_bone_hi = 0;
};

struct PhantomCase {
  std::string id;
  CtVolume volume;
  BinaryMask sij_truth;   // joint-band labels, subset of bone_truth
  BinaryMask bone_truth;  // all bony material
  PhantomTruth truth;
  PhantomDiagnostics diagnostics;
};

namespace detail {

enum Material : std::uint8_t { mat_soft = 0, mat_bone = 1, mat_rim = 2, mat_blur = 3 };

inline bool is_bony(std::uint8_t m) { return m != mat_soft; }

struct NotchSet {
  std::vector<std::pair<double, double>> centers;  // (edge_x, y_center)
  double radius = 0.0;
};

}  // namespace detail

inline void validate_phantom_spec(const PhantomSpec& spec) {
  validate_grid(spec.dims, spec.spacing);
  if (spec.left_grades.empty() || spec.left_grades.size() != spec.right_grades.size())
    throw InvalidArgument("phantom: grade vectors must be non-empty and equal length");
  for (const auto& grades : {spec.left_grades, spec.right_grades})
    for (const int g : grades)
      if (g < 0 || g > 4) throw InvalidArgument("phantom: grade outside [0, 4]");
  for (int g = 1; g < 5; ++g)
    if (spec.morph.gap_mm[g] > spec.morph.gap_mm[g - 1])
      throw InvalidArgument("phantom: joint gap must be monotone non-increasing in grade");
  if (spec.z_bone_lo < 1 || spec.z_bone_hi() >= spec.dims.nz)
    throw InvalidArgument("phantom: bone z-range exceeds the volume");
  const double half_x = (spec.dims.nx - 1) * spec.spacing.sx / 2.0;
  const double flare_halfwidth = spec.sacrum_halfwidth + spec.morph.gap_mm[0] +
                                 spec.body_width + spec.wing_extra;
  if (flare_halfwidth + std::abs(spec.center_dx) >= half_x)
    throw InvalidArgument("phantom: pelvis geometry exceeds the volume in x");
}

inline PhantomCase generate_phantom(const PhantomSpec& spec, const std::string& id = "phantom") {
  validate_phantom_spec(spec);
  const int nx = spec.dims.nx, ny = spec.dims.ny, nz = spec.dims.nz;
  const auto& sp = spec.spacing;
  const double cx = (nx - 1) * sp.sx / 2.0 + spec.center_dx;
  const double cy = (ny - 1) * sp.sy / 2.0 + spec.center_dy;

  std::vector<std::uint8_t> material(spec.dims.count(), detail::mat_soft);
  BinaryMask sij(spec.dims, sp);
  auto mat_at = [&](int x, int y, int z) -> std::uint8_t& {
    return material[static_cast<std::size_t>(x) +
                    static_cast<std::size_t>(nx) *
                        (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z)];
  };

  const double sac_lo = cx - spec.sacrum_halfwidth, sac_hi = cx + spec.sacrum_halfwidth;
  const double sy0 = cy + spec.sacrum_y_lo, sy1 = cy + spec.sacrum_y_hi;
  const double by0 = cy + spec.body_y_lo, by1 = cy + spec.body_y_hi;
  const double jy0 = std::max(sy0, by0), jy1 = std::min(sy1, by1);

  auto paint = [&](int z, double x0, double x1, double y0, double y1, std::uint8_t m) {
    const int ia = std::max(0, static_cast<int>(std::ceil(x0 / sp.sx)));
    const int ib = std::min(nx - 1, static_cast<int>(std::floor(x1 / sp.sx)));
    const int ja = std::max(0, static_cast<int>(std::ceil(y0 / sp.sy)));
    const int jb = std::min(ny - 1, static_cast<int>(std::floor(y1 / sp.sy)));
    for (int j = ja; j <= jb; ++j)
      for (int i = ia; i <= ib; ++i) mat_at(i, j, z) = m;
  };

  // Iliac body width tapers in over the first span slices to keep the
  // hull-width progression below the pelvis-top jump ratio.
  auto body_width_at = [&](int t) {
    if (t == 0) return std::min(spec.body_width, 2.5);
    if (t == 1) return std::min(spec.body_width, 6.5);
    return spec.body_width;
  };

  for (int z = spec.z_bone_lo; z <= spec.z_bone_hi(); ++z) {
    paint(z, sac_lo, sac_hi, sy0, sy1, detail::mat_bone);

    if (z >= spec.z_joint_lo() && z <= spec.z_joint_hi()) {
      const int t = z - spec.z_joint_lo();
      const double bw = body_width_at(t);
      for (int side = 0; side < 2; ++side) {  // 0 = right (-x), 1 = left (+x)
        const int g = side == 1 ? spec.left_grades[static_cast<std::size_t>(t)]
                                : spec.right_grades[static_cast<std::size_t>(t)];
        const double gap = spec.morph.gap_mm[static_cast<std::size_t>(g)];
        const double sac_edge = side == 1 ? sac_hi : sac_lo;
        const double dir = side == 1 ? 1.0 : -1.0;
        const double inner = sac_edge + dir * gap;
        const double outer = inner + dir * bw;
        paint(z, std::min(inner, outer), std::max(inner, outer), by0, by1,
              detail::mat_bone);

        if (g == 1) {  // margin blur: one-voxel transition layer on both margins
          paint(z, std::min(sac_edge, sac_edge - dir * sp.sx),
                std::max(sac_edge, sac_edge - dir * sp.sx), jy0, jy1, detail::mat_blur);
          paint(z, std::min(inner, inner + dir * sp.sx), std::max(inner, inner + dir * sp.sx),
                jy0, jy1, detail::mat_blur);
        } else if (g == 2) {  // sclerotic rim on both joint-facing margins
          paint(z, std::min(sac_edge, sac_edge - dir * spec.morph.rim_depth_mm),
                std::max(sac_edge, sac_edge - dir * spec.morph.rim_depth_mm), jy0, jy1,
                detail::mat_rim);
          paint(z, std::min(inner, inner + dir * spec.morph.rim_depth_mm),
                std::max(inner, inner + dir * spec.morph.rim_depth_mm), jy0, jy1,
                detail::mat_rim);
        } else if (g == 3) {  // erosion notches carved from both margins
          Rng notch_rng(spec.seed, 0x6e6f746368ULL, static_cast<std::uint64_t>(z),
                        static_cast<std::uint64_t>(side));
          for (int nch = 0; nch < spec.morph.notches_per_slice; ++nch) {
            const double yc = notch_rng.uniform(jy0, jy1);
            const double edge = notch_rng.next_u64() % 2 == 0 ? sac_edge : inner;
            const double r = spec.morph.notch_radius_mm;
            const int ia = std::max(0, static_cast<int>(std::ceil((edge - r) / sp.sx)));
            const int ib = std::min(nx - 1, static_cast<int>(std::floor((edge + r) / sp.sx)));
            const int ja = std::max(0, static_cast<int>(std::ceil((yc - r) / sp.sy)));
            const int jb = std::min(ny - 1, static_cast<int>(std::floor((yc + r) / sp.sy)));
            for (int j = ja; j <= jb; ++j)
              for (int i = ia; i <= ib; ++i) {
                const double dx = i * sp.sx - edge, dy = j * sp.sy - yc;
                if (dx * dx + dy * dy <= r * r) mat_at(i, j, z) = detail::mat_soft;
              }
          }
        }
        // g == 4: gap 0 places the body flush against the sacrum (bridging)

        // truth band around the joint interface
        const double band_in = sac_edge - dir * spec.sij_band_mm;
        const double band_out = inner + dir * spec.sij_band_mm;
        const int ia =
            std::max(0, static_cast<int>(std::ceil(std::min(band_in, band_out) / sp.sx)));
        const int ib = std::min(
            nx - 1, static_cast<int>(std::floor(std::max(band_in, band_out) / sp.sx)));
        const int ja = std::max(0, static_cast<int>(std::ceil(jy0 / sp.sy)));
        const int jb = std::min(ny - 1, static_cast<int>(std::floor(jy1 / sp.sy)));
        for (int j = ja; j <= jb; ++j)
          for (int i = ia; i <= ib; ++i)
            if (detail::is_bony(mat_at(i, j, z))) sij.set(i, j, z);
      }
    }

    if (z >= spec.z_flare()) {  // lateral wings, detached from the bodies
      const double inner_off =
          spec.sacrum_halfwidth + spec.morph.gap_mm[0] + spec.body_width;
      paint(z, cx + inner_off, cx + inner_off + spec.wing_extra, by0, by1, detail::mat_bone);
      paint(z, cx - inner_off - spec.wing_extra, cx - inner_off, by0, by1, detail::mat_bone);
    }
  }

  // posterior-inferior coccyx blob; clipped to the bone z-range so it cannot
  // introduce a non-empty slice below z_bone_lo (which would fake a flare)
  const WorldPoint coccyx{cx, sy1 + spec.coccyx_y_offset + spec.coccyx_radius / 2.0,
                          (spec.z_bone_lo + 2) * sp.sz};
  {
    const double r = spec.coccyx_radius;
    const int ka = std::max(spec.z_bone_lo,
                            static_cast<int>(std::ceil((coccyx.z - r) / sp.sz)));
    const int kb = std::min(nz - 1, static_cast<int>(std::floor((coccyx.z + r) / sp.sz)));
    for (int k = ka; k <= kb; ++k) {
      const int ja = std::max(0, static_cast<int>(std::ceil((coccyx.y - r) / sp.sy)));
      const int jb = std::min(ny - 1, static_cast<int>(std::floor((coccyx.y + r) / sp.sy)));
      for (int j = ja; j <= jb; ++j) {
        const int ia = std::max(0, static_cast<int>(std::ceil((coccyx.x - r) / sp.sx)));
        const int ib = std::min(nx - 1, static_cast<int>(std::floor((coccyx.x + r) / sp.sx)));
        for (int i = ia; i <= ib; ++i) {
          const double dx = i * sp.sx - coccyx.x, dy = j * sp.sy - coccyx.y,
                       dz = k * sp.sz - coccyx.z;
          if (dx * dx + dy * dy + dz * dz <= r * r) mat_at(i, j, k) = detail::mat_bone;
        }
      }
    }
  }

  // realize HU values
  std::vector<std::int16_t> hu(spec.dims.count());
  BinaryMask bone(spec.dims, sp);
  PhantomDiagnostics diag;
  for (std::size_t n = 0; n < hu.size(); ++n) {
    double v;
    switch (material[n]) {
      case detail::mat_bone:
        v = spec.bone_hu_mean + spec.bone_hu_sigma * keyed_gaussian(spec.seed, n);
        break;
      case detail::mat_rim:
        v = spec.morph.rim_hu + spec.bone_hu_sigma * keyed_gaussian(spec.seed, n);
        break;
      case detail::mat_blur:
        v = spec.morph.blur_hu + 60.0 * keyed_gaussian(spec.seed, n);
        break;
      default:
        v = spec.soft_hu;
    }
    v += spec.noise_sigma * keyed_gaussian(spec.seed ^ 0x5eedf00dULL, n);
    const auto q = static_cast<std::int16_t>(
        std::clamp(std::lround(v), static_cast<long>(kHuMin), static_cast<long>(kHuMax)));
    hu[n] = q;
    diag.hu_checksum += q;
    diag.bone_voxels_150_1300 += (q >= 150 && q <= 1300);
    diag.bone_voxels_300_1300 += (q >= 300 && q <= 1300);
    bone.bits()[n] = detail::is_bony(material[n]) ? 1 : 0;
  }

  // pelvis x-extent at a wing slice (material map, exact voxel centers)
  {
    const int z = std::min(spec.z_flare() + 1, spec.z_bone_hi());
    int imin = nx, imax = -1;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        if (detail::is_bony(mat_at(i, j, z))) {
          imin = std::min(imin, i);
          imax = std::max(imax, i);
        }
    diag.pelvis_x_extent_mm = imax >= imin ? (imax - imin) * sp.sx : 0.0;
    diag.pelvis_extent_z = z;
  }

  PhantomTruth truth;
  truth.left_grades = spec.left_grades;
  truth.right_grades = spec.right_grades;
  truth.left_case = rule_case_grade(spec.left_grades);
  truth.right_case = rule_case_grade(spec.right_grades);
  truth.coccyx = coccyx;
  truth.z_bone_lo = spec.z_bone_lo;
  truth.z_joint_lo = spec.z_joint_lo();
  truth.z_joint_hi = spec.z_joint_hi();
  truth.z_flare = spec.z_flare();
  truth.z_bone_hi = spec.z_bone_hi();

  return PhantomCase{id, CtVolume(spec.dims, sp, std::move(hu)), std::move(sij),
                     std::move(bone), std::move(truth), diag};
}

// ---------------------------------------------------------------------------
// Cohorts

struct CohortSpec {
  int n = 60;
  std::array<double, 3> mix = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  PhantomSpec base;
  int span_min = 14, span_max = 18;
  std::uint64_t seed = 1;
};

namespace detail {

inline SliceGradeVector random_grade_vector(CaseGrade target, int k, Rng& rng) {
  SliceGradeVector sgv(static_cast<std::size_t>(k), 0);
  auto low = [&] { return static_cast<int>(rng.uniform_int(2)); };  // 0 or 1
  for (auto& g : sgv) g = low();
  switch (target) {
    case CaseGrade::healthy: {
      // at most one grade-2 slice, always below the 30% criterion for k >= 7
      if (rng.uniform() < 0.5 && 1.0 < 0.3 * k)
        sgv[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(k)))] = 2;
      break;
    }
    case CaseGrade::suspicious: {
      const int need = static_cast<int>(std::ceil(0.3 * k));
      const int extra = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
          std::max(1, k / 5))));
      auto idx = rng.sample_without_replacement(static_cast<std::size_t>(k),
                                                static_cast<std::size_t>(
                                                    std::min(k, need + extra)));
      for (const auto i : idx) sgv[i] = 2;
      break;
    }
    case CaseGrade::sick: {
      if (rng.next_u64() % 2 == 0) {
        // a grade-3 run of length >= 3
        const int len = 3 + static_cast<int>(rng.uniform_int(3));
        const int start =
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k - len + 1)));
        for (int i = start; i < start + len; ++i) sgv[static_cast<std::size_t>(i)] = 3;
        if (rng.uniform() < 0.3) {
          const int pos = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k)));
          if (sgv[static_cast<std::size_t>(pos)] != 3) sgv[static_cast<std::size_t>(pos)] = 4;
        }
      } else {
        // an ankylotic run of grade 4 flanked by short grade-3 shoulders
        const int len = 2 + static_cast<int>(rng.uniform_int(3));
        const int start =
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k - len + 1)));
        for (int i = start; i < start + len; ++i) sgv[static_cast<std::size_t>(i)] = 4;
        for (int s = 1; s <= 2; ++s) {
          if (start - s >= 0 && rng.uniform() < 0.6) sgv[static_cast<std::size_t>(start - s)] = 3;
          if (start + len - 1 + s < k && rng.uniform() < 0.6)
            sgv[static_cast<std::size_t>(start + len - 1 + s)] = 3;
        }
      }
      break;
    }
  }
  if (rule_case_grade(sgv) != target)
    throw Error(ExitCode::failure, "phantom: generated grade vector violates its target");
  return sgv;
}

inline std::vector<CaseGrade> cohort_targets(const CohortSpec& cohort) {
  std::array<int, 3> counts{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int g = 0; g < 3; ++g) {
    const double want = cohort.mix[static_cast<std::size_t>(g)] * cohort.n;
    counts[static_cast<std::size_t>(g)] = static_cast<int>(std::floor(want));
    frac[static_cast<std::size_t>(g)] = want - std::floor(want);
    assigned += counts[static_cast<std::size_t>(g)];
  }
  while (assigned < cohort.n) {  // distribute remainders by largest fraction
    int best = 0;
    for (int g = 1; g < 3; ++g)
      if (frac[static_cast<std::size_t>(g)] > frac[static_cast<std::size_t>(best)]) best = g;
    ++counts[static_cast<std::size_t>(best)];
    frac[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }
  std::vector<CaseGrade> targets;
  for (int g = 0; g < 3; ++g)
    for (int i = 0; i < counts[static_cast<std::size_t>(g)]; ++i)
      targets.push_back(static_cast<CaseGrade>(g));
  Rng rng(cohort.seed, 0x6d6978ULL);
  rng.shuffle(targets);
  return targets;
}

}  // namespace detail

// Deterministic per-case spec with geometry jitter; both joints share the
// case-grade target but draw independent slice-grade vectors.
inline PhantomSpec cohort_case_spec(const CohortSpec& cohort, int index) {
  const auto targets = detail::cohort_targets(cohort);
  if (index < 0 || index >= static_cast<int>(targets.size()))
    throw InvalidArgument("cohort_case_spec: index out of range");
  Rng rng(cohort.seed, 0x636f686f7274ULL, static_cast<std::uint64_t>(index));
  PhantomSpec spec = cohort.base;
  spec.seed = hash_combine(cohort.seed, static_cast<std::uint64_t>(index) + 1);
  spec.sacrum_halfwidth += rng.uniform(-2.0, 2.0);
  spec.body_width += rng.uniform(-1.0, 1.0);
  spec.wing_extra += rng.uniform(-2.0, 2.0);
  spec.center_dx = rng.uniform(-3.0, 3.0);
  spec.center_dy = rng.uniform(-3.0, 3.0);
  const double y_shift = rng.uniform(-2.0, 2.0);
  spec.sacrum_y_lo += y_shift;
  spec.sacrum_y_hi += y_shift;
  spec.body_y_lo += y_shift;
  spec.body_y_hi += y_shift;
  spec.z_bone_lo += static_cast<int>(rng.uniform_int(3)) - 1;
  const double gap_scale = rng.uniform(0.95, 1.05);
  for (auto& g : spec.morph.gap_mm) g *= gap_scale;
  const int span = cohort.span_min +
                   static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                       cohort.span_max - cohort.span_min + 1)));
  const CaseGrade target = targets[static_cast<std::size_t>(index)];
  spec.left_grades = detail::random_grade_vector(target, span, rng);
  spec.right_grades = detail::random_grade_vector(target, span, rng);
  return spec;
}

inline std::vector<PhantomCase> generate_cohort(const CohortSpec& cohort) {
  if (cohort.n < 1) throw InvalidArgument("generate_cohort: n must be >= 1");
  const double mix_sum = cohort.mix[0] + cohort.mix[1] + cohort.mix[2];
  if (std::abs(mix_sum - 1.0) > 1e-9)
    throw InvalidArgument("generate_cohort: mix proportions must sum to 1");
  std::vector<PhantomCase> cases;
  cases.reserve(static_cast<std::size_t>(cohort.n));
  for (int i = 0; i < cohort.n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "case%03d", i);
    cases.push_back(generate_phantom(cohort_case_spec(cohort, i), buf));
  }
  return cases;
}

// ---------------------------------------------------------------------------
// Spec file parsing

inline nlohmann::ordered_json to_json(const PhantomSpec& s) {
  nlohmann::ordered_json j;
  j["dims"] = {s.dims.nx, s.dims.ny, s.dims.nz};
  j["spacing_mm"] = {s.spacing.sx, s.spacing.sy, s.spacing.sz};
  j["sacrum_halfwidth"] = s.sacrum_halfwidth;
  j["sacrum_y"] = {s.sacrum_y_lo, s.sacrum_y_hi};
  j["body_width"] = s.body_width;
  j["body_y"] = {s.body_y_lo, s.body_y_hi};
  j["wing_extra"] = s.wing_extra;
  j["center_offset"] = {s.center_dx, s.center_dy};
  j["z_bone_lo"] = s.z_bone_lo;
  j["tail_slices"] = s.tail_slices;
  j["wing_slices"] = s.wing_slices;
  j["left_grades"] = s.left_grades;
  j["right_grades"] = s.right_grades;
  j["morphology"] = {{"gap_mm", s.morph.gap_mm},
                     {"rim_depth_mm", s.morph.rim_depth_mm},
                     {"rim_hu", s.morph.rim_hu},
                     {"blur_hu", s.morph.blur_hu},
                     {"notch_radius_mm", s.morph.notch_radius_mm},
                     {"notches_per_slice", s.morph.notches_per_slice}};
  j["sij_band_mm"] = s.sij_band_mm;
  j["bone_hu"] = {s.bone_hu_mean, s.bone_hu_sigma};
  j["soft_hu"] = s.soft_hu;
  j["noise_sigma"] = s.noise_sigma;
  j["coccyx"] = {{"y_offset", s.coccyx_y_offset}, {"radius", s.coccyx_radius}};
  j["seed"] = s.seed;
  return j;
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  if (j.contains("dims")) {
    s.dims = {j.at("dims").at(0).get<int>(), j.at("dims").at(1).get<int>(),
              j.at("dims").at(2).get<int>()};
  }
  if (j.contains("spacing_mm")) {
    s.spacing = {j.at("spacing_mm").at(0).get<double>(), j.at("spacing_mm").at(1).get<double>(),
                 j.at("spacing_mm").at(2).get<double>()};
  }
  s.sacrum_halfwidth = j.value("sacrum_halfwidth", s.sacrum_halfwidth);
  if (j.contains("sacrum_y")) {
    s.sacrum_y_lo = j.at("sacrum_y").at(0).get<double>();
    s.sacrum_y_hi = j.at("sacrum_y").at(1).get<double>();
  }
  s.body_width = j.value("body_width", s.body_width);
  if (j.contains("body_y")) {
    s.body_y_lo = j.at("body_y").at(0).get<double>();
    s.body_y_hi = j.at("body_y").at(1).get<double>();
  }
  s.wing_extra = j.value("wing_extra", s.wing_extra);
  if (j.contains("center_offset")) {
    s.center_dx = j.at("center_offset").at(0).get<double>();
    s.center_dy = j.at("center_offset").at(1).get<double>();
  }
  s.z_bone_lo = j.value("z_bone_lo", s.z_bone_lo);
  s.tail_slices = j.value("tail_slices", s.tail_slices);
  s.wing_slices = j.value("wing_slices", s.wing_slices);
  s.left_grades = j.value("left_grades", s.left_grades);
  s.right_grades = j.value("right_grades", s.right_grades);
  if (j.contains("morphology")) {
    const auto& m = j.at("morphology");
    if (m.contains("gap_mm")) s.morph.gap_mm = m.at("gap_mm").get<std::array<double, 5>>();
    s.morph.rim_depth_mm = m.value("rim_depth_mm", s.morph.rim_depth_mm);
    s.morph.rim_hu = m.value("rim_hu", s.morph.rim_hu);
    s.morph.blur_hu = m.value("blur_hu", s.morph.blur_hu);
    s.morph.notch_radius_mm = m.value("notch_radius_mm", s.morph.notch_radius_mm);
    s.morph.notches_per_slice = m.value("notches_per_slice", s.morph.notches_per_slice);
  }
  s.sij_band_mm = j.value("sij_band_mm", s.sij_band_mm);
  if (j.contains("bone_hu")) {
    s.bone_hu_mean = j.at("bone_hu").at(0).get<double>();
    s.bone_hu_sigma = j.at("bone_hu").at(1).get<double>();
  }
  s.soft_hu = j.value("soft_hu", s.soft_hu);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  if (j.contains("coccyx")) {
    s.coccyx_y_offset = j.at("coccyx").value("y_offset", s.coccyx_y_offset);
    s.coccyx_radius = j.at("coccyx").value("radius", s.coccyx_radius);
  }
  s.seed = j.value("seed", s.seed);
  return s;
}

inline CohortSpec cohort_spec_from_json(const nlohmann::json& j) {
  CohortSpec c;
  c.n = j.value("n", c.n);
  if (j.contains("mix")) c.mix = j.at("mix").get<std::array<double, 3>>();
  c.seed = j.value("seed", c.seed);
  c.span_min = j.value("span_min", c.span_min);
  c.span_max = j.value("span_max", c.span_max);
  if (j.contains("base")) c.base = phantom_spec_from_json(j.at("base"));
  return c;
}

// ---------------------------------------------------------------------------
// On-disk cohort layout and manifest

inline nlohmann::ordered_json truth_to_json(const PhantomTruth& t,
                                            const PhantomDiagnostics& d) {
  nlohmann::ordered_json j;
  j["left_grades"] = t.left_grades;
  j["right_grades"] = t.right_grades;
  j["left_case"] = to_string(t.left_case);
  j["right_case"] = to_string(t.right_case);
  j["coccyx_mm"] = {t.coccyx.x, t.coccyx.y, t.coccyx.z};
  j["z"] = {{"bone_lo", t.z_bone_lo},
            {"joint_lo", t.z_joint_lo},
            {"joint_hi", t.z_joint_hi},
            {"flare", t.z_flare},
            {"bone_hi", t.z_bone_hi}};
  j["diagnostics"] = {{"hu_checksum", d.hu_checksum},
                      {"bone_voxels_150_1300", d.bone_voxels_150_1300},
                      {"bone_voxels_300_1300", d.bone_voxels_300_1300},
                      {"pelvis_x_extent_mm", d.pelvis_x_extent_mm},
                      {"pelvis_extent_z", d.pelvis_extent_z}};
  return j;
}

inline CaseGrade case_grade_from_string(const std::string& s) {
  if (s == "healthy") return CaseGrade::healthy;
  if (s == "suspicious") return CaseGrade::suspicious;
  if (s == "sick") return CaseGrade::sick;
  throw InvalidArgument("unknown case grade '" + s + "'");
}

inline std::pair<PhantomTruth, PhantomDiagnostics> truth_from_json(const nlohmann::json& j) {
  PhantomTruth t;
  PhantomDiagnostics d;
  t.left_grades = j.at("left_grades").get<SliceGradeVector>();
  t.right_grades = j.at("right_grades").get<SliceGradeVector>();
  t.left_case = case_grade_from_string(j.at("left_case").get<std::string>());
  t.right_case = case_grade_from_string(j.at("right_case").get<std::string>());
  t.coccyx = {j.at("coccyx_mm").at(0).get<double>(), j.at("coccyx_mm").at(1).get<double>(),
              j.at("coccyx_mm").at(2).get<double>()};
  t.z_bone_lo = j.at("z").at("bone_lo").get<int>();
  t.z_joint_lo = j.at("z").at("joint_lo").get<int>();
  t.z_joint_hi = j.at("z").at("joint_hi").get<int>();
  t.z_flare = j.at("z").at("flare").get<int>();
  t.z_bone_hi = j.at("z").at("bone_hi").get<int>();
  const auto& dg = j.at("diagnostics");
  d.hu_checksum = dg.at("hu_checksum").get<std::int64_t>();
  d.bone_voxels_150_1300 = dg.at("bone_voxels_150_1300").get<std::int64_t>();
  d.bone_voxels_300_1300 = dg.at("bone_voxels_300_1300").get<std::int64_t>();
  d.pelvis_x_extent_mm = dg.at("pelvis_x_extent_mm").get<double>();
  d.pelvis_extent_z = dg.at("pelvis_extent_z").get<int>();
  return {t, d};
}

// Writes <id>.json/.raw, <id>_sij.*, <id>_bone.*, <id>_truth.json and returns
// the manifest entry.
inline nlohmann::ordered_json save_phantom_case(const PhantomCase& pc,
                                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_volume(pc.volume, dir / pc.id);
  save_mask(pc.sij_truth, dir / (pc.id + "_sij"));
  save_mask(pc.bone_truth, dir / (pc.id + "_bone"));
  const auto truth_path = dir / (pc.id + "_truth.json");
  std::ofstream out(truth_path);
  if (!out) throw IoError("cannot write " + truth_path.string());
  out << truth_to_json(pc.truth, pc.diagnostics).dump(1) << "\n";
  nlohmann::ordered_json entry;
  entry["id"] = pc.id;
  entry["volume"] = pc.id;
  entry["sij_mask"] = pc.id + "_sij";
  entry["bone_mask"] = pc.id + "_bone";
  entry["truth"] = pc.id + "_truth.json";
  return entry;
}

inline void save_cohort_manifest(const nlohmann::ordered_json& entries,
                                 const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::ordered_json{{"cases", entries}}.dump(1) << "\n";
}

struct ManifestEntry {
  std::string id;
  std::filesystem::path volume, sij_mask, bone_mask, truth;
};

inline std::vector<ManifestEntry> load_cohort_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  const auto dir = path.parent_path();
  std::vector<ManifestEntry> entries;
  for (const auto& e : j.at("cases")) {
    ManifestEntry m;
    m.id = e.at("id").get<std::string>();
    m.volume = dir / e.at("volume").get<std::string>();
    m.sij_mask = dir / e.at("sij_mask").get<std::string>();
    m.bone_mask = dir / e.at("bone_mask").get<std::string>();
    m.truth = dir / e.at("truth").get<std::string>();
    entries.push_back(std::move(m));
  }
  if (entries.empty()) throw InvalidArgument("manifest lists no cases: " + path.string());
  return entries;
}

inline std::pair<PhantomTruth, PhantomDiagnostics> load_phantom_truth(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing truth file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed truth file " + path.string() + ": " + e.what());
  }
  return truth_from_json(j);
}

}  // namespace sij
