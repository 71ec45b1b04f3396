#pragma once
// Sacroiliac joint ROI pipeline: pelvis slab heuristics on the segmented
// skeleton, initial SIJ voxel mask via a pluggable voxel classifier, coccyx
// localization, forest-based mask refinement, and extraction of normalized
// half-slice rectangles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sij/errors.hpp"
#include "sij/forest.hpp"
#include "sij/morphology.hpp"
#include "sij/parallel.hpp"
#include "sij/rect.hpp"
#include "sij/volume.hpp"
#include "sij/voxel_classifier.hpp"

namespace sij {

struct PelvisRoi {
  int z_top = 0;
  int z_bottom = 0;
  Polygon2D reference_hull;  // hull of the slice above z_top
};

struct RoiOptions {
  double width_jump_ratio = 1.3;   // hull-width jump that marks the pelvis top
  double bottom_margin_mm = 30.0;  // margin below the last in-hull bone slice
  double prob_cutoff = 0.5;        // voxelhood probability cutoff
  double posterior_fraction = 0.01;  // share of most-posterior voxels per candidate
  double min_component_mm3 = 2.0;  // refinement component floor
  double hu_lo = -200.0, hu_hi = 1300.0;  // rectangle normalization window
  bool refine_use_hu = false;  // append the voxel HU to the geometric features
};

// Full axial slice as a float image: rows follow y, columns follow x.
inline ImageF extract_slice(const CtVolume& vol, int z) {
  const int nx = vol.dims().nx, ny = vol.dims().ny;
  ImageF img(ny, nx);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      img.at(y, x) = static_cast<float>(vol.at(x, y, z));
  return img;
}

// Scans hull widths upward from the lowest non-empty slice; the pelvis top is
// the first slice whose width exceeds ratio x the previous non-empty slice's
// width. The bottom is the first slice below the top without bone inside the
// reference hull, minus the configured margin (clamped to the grid).
inline PelvisRoi compute_pelvis_roi(const BinaryMask& skeleton, const RoiOptions& opt = {}) {
  const int nz = skeleton.dims().nz;
  std::vector<bool> nonempty(static_cast<std::size_t>(nz), false);
  for (int z = 0; z < nz; ++z) {
    const auto* p = skeleton.bits().data() + skeleton.offset(0, 0, z);
    const std::size_t plane =
        static_cast<std::size_t>(skeleton.dims().nx) * skeleton.dims().ny;
    for (std::size_t i = 0; i < plane; ++i)
      if (p[i]) {
        nonempty[static_cast<std::size_t>(z)] = true;
        break;
      }
  }

  int z_top = -1;
  double prev_width = -1.0;
  for (int z = 0; z < nz; ++z) {
    if (!nonempty[static_cast<std::size_t>(z)]) continue;
    const double w = hull_width(slice_convex_hull(skeleton, z));
    if (prev_width >= 0.0 && w > opt.width_jump_ratio * prev_width) {
      z_top = z;
      break;
    }
    prev_width = w;
  }
  if (prev_width < 0.0) throw PelvisNotFoundError("pelvis not found: empty skeleton");
  if (z_top < 0)
    throw PelvisNotFoundError("pelvis not found: no hull-width jump above " +
                              std::to_string(opt.width_jump_ratio));

  PelvisRoi roi;
  roi.z_top = z_top;
  // Slice above the top; at the grid ceiling the top slice itself stands in.
  roi.reference_hull = slice_convex_hull(skeleton, std::min(z_top + 1, nz - 1));

  const int nx = skeleton.dims().nx, ny = skeleton.dims().ny;
  const auto& sp = skeleton.spacing();
  int z_end = -1;  // first slice below z_top with no bone voxel inside the hull
  for (int z = z_top - 1; z >= 0; --z) {
    bool inside = false;
    for (int y = 0; y < ny && !inside; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!skeleton.test(x, y, z)) continue;
        if (point_in_polygon(roi.reference_hull, {x * sp.sx, y * sp.sy})) {
          inside = true;
          break;
        }
      }
    if (!inside) {
      z_end = z;
      break;
    }
  }
  const int margin = static_cast<int>(std::ceil(opt.bottom_margin_mm / sp.sz));
  roi.z_bottom = z_end < 0 ? 0 : std::max(0, z_end - margin);
  roi.z_bottom = std::min(roi.z_bottom, roi.z_top);
  return roi;
}

// Runs the classifier on every slab slice's (prev, cur, next) triplet
// (volume-edge slices replicate) and keeps voxels at or above the cutoff.
inline BinaryMask initial_sij_mask(const CtVolume& vol, const PelvisRoi& roi,
                                   const VoxelClassifier& clf, const RoiOptions& opt = {}) {
  BinaryMask mask(vol.dims(), vol.spacing());
  const int nx = vol.dims().nx, ny = vol.dims().ny, nz = vol.dims().nz;
  parallel_for(static_cast<std::size_t>(roi.z_bottom),
               static_cast<std::size_t>(roi.z_top) + 1, [&](std::size_t zi) {
                 const int z = static_cast<int>(zi);
                 const ImageF prev = extract_slice(vol, std::max(0, z - 1));
                 const ImageF cur = extract_slice(vol, z);
                 const ImageF next = extract_slice(vol, std::min(nz - 1, z + 1));
                 const ImageF prob = clf.probability_map(prev, cur, next, z);
                 auto* bits = mask.bits().data() + mask.offset(0, 0, z);
                 for (int y = 0; y < ny; ++y)
                   for (int x = 0; x < nx; ++x)
                     bits[static_cast<std::size_t>(y) * nx + x] =
                         prob.at(y, x) >= static_cast<float>(opt.prob_cutoff) ? 1 : 0;
               });
  return mask;
}

// (unit direction from the coccyx to the voxel center, Euclidean distance in
// mm); all zeros at the coccyx itself. Optionally appends the voxel HU.
// Distances below 1e-9 mm count as coincident: FMA contraction can leave
// sub-ulp residues when the caller derived the coccyx from the same grid.
inline std::vector<float> voxel_features(const VoxelIndex& p, const WorldPoint& coccyx,
                                         const CtVolume& vol, bool use_hu = false) {
  const WorldPoint w = index_to_world(vol, p);
  const double dx = w.x - coccyx.x, dy = w.y - coccyx.y, dz = w.z - coccyx.z;
  const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
  std::vector<float> f;
  f.reserve(use_hu ? 5 : 4);
  if (dist < 1e-9) {
    f = {0.0f, 0.0f, 0.0f, 0.0f};
  } else {
    f = {static_cast<float>(dx / dist), static_cast<float>(dy / dist),
         static_cast<float>(dz / dist), static_cast<float>(dist)};
  }
  if (use_hu) f.push_back(static_cast<float>(vol.at(p.i, p.j, p.k)));
  return f;
}

namespace detail {

// Centroid (world mm) of the `fraction` most-posterior (max-y) set voxels.
// Whole y-layers are taken until the quota is met, so the pick is stable.
inline WorldPoint posterior_centroid(const BinaryMask& mask, int z_lo, int z_hi,
                                     double fraction) {
  const int nx = mask.dims().nx, ny = mask.dims().ny;
  std::vector<std::int64_t> per_j(static_cast<std::size_t>(ny), 0);
  std::int64_t total = 0;
  for (int z = z_lo; z <= z_hi; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        if (mask.test(x, y, z)) {
          ++per_j[static_cast<std::size_t>(y)];
          ++total;
        }
  if (total == 0) throw InvalidArgument("posterior_centroid: empty mask region");
  const std::int64_t quota =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(fraction * total)));
  std::int64_t acc = 0;
  int j_cut = ny - 1;
  for (int j = ny - 1; j >= 0; --j) {
    acc += per_j[static_cast<std::size_t>(j)];
    if (acc >= quota) {
      j_cut = j;
      break;
    }
  }
  std::int64_t si = 0, sj = 0, sk = 0, n = 0;
  for (int z = z_lo; z <= z_hi; ++z)
    for (int y = j_cut; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        if (mask.test(x, y, z)) {
          si += x;
          sj += y;
          sk += z;
          ++n;
        }
  const auto& sp = mask.spacing();
  return {static_cast<double>(si) / n * sp.sx, static_cast<double>(sj) / n * sp.sy,
          static_cast<double>(sk) / n * sp.sz};
}

// Number of initial-mask voxels the forest classifies positive when features
// are taken relative to `candidate`. Equivalent to |rf-positive ∩ initial|
// over the slab, since the initial mask is confined to the slab.
inline std::int64_t positive_intersection(const BinaryMask& initial, const CtVolume& vol,
                                          const WorldPoint& candidate, const Forest& rf,
                                          bool use_hu) {
  std::vector<VoxelIndex> voxels;
  const int nx = initial.dims().nx, ny = initial.dims().ny, nz = initial.dims().nz;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        if (initial.test(x, y, z)) voxels.push_back({x, y, z});
  const std::size_t n_chunks = std::max<std::size_t>(1, static_cast<std::size_t>(thread_count()));
  std::vector<std::int64_t> partial(n_chunks, 0);
  parallel_chunks(voxels.size(),
                  [&](std::size_t c, std::size_t lo, std::size_t hi) {
                    std::int64_t cnt = 0;
                    for (std::size_t i = lo; i < hi; ++i) {
                      const auto f = voxel_features(voxels[i], candidate, vol, use_hu);
                      if (forest_predict(rf, f) == 1) ++cnt;
                    }
                    partial[c] = cnt;
                  },
                  n_chunks);
  std::int64_t total = 0;
  for (const auto c : partial) total += c;
  return total;
}

}  // namespace detail

// Evaluates the two candidate coccyx locations (backmost voxels of the
// pelvic-slab skeleton and of the whole skeleton) and keeps the one whose
// forest-positive voxels intersect the initial mask the most; ties favor the
// pelvic-slab candidate.
inline WorldPoint locate_coccyx(const BinaryMask& skeleton, const PelvisRoi& roi,
                                const BinaryMask& initial, const CtVolume& vol,
                                const Forest& rf, const RoiOptions& opt = {}) {
  const WorldPoint slab_candidate =
      detail::posterior_centroid(skeleton, roi.z_bottom, roi.z_top, opt.posterior_fraction);
  const WorldPoint full_candidate =
      detail::posterior_centroid(skeleton, 0, skeleton.dims().nz - 1, opt.posterior_fraction);
  const auto slab_hits =
      detail::positive_intersection(initial, vol, slab_candidate, rf, opt.refine_use_hu);
  const auto full_hits =
      detail::positive_intersection(initial, vol, full_candidate, rf, opt.refine_use_hu);
  if (slab_hits == 0 && full_hits == 0)
    throw CoccyxAmbiguousError("coccyx ambiguous: both candidate intersections are empty");
  return full_hits > slab_hits ? full_candidate : slab_candidate;
}

// Keeps initial-mask voxels the forest classifies positive, then drops
// connected components whose physical volume is below the floor.
inline BinaryMask refine_sij_mask(const BinaryMask& initial, const WorldPoint& coccyx,
                                  const Forest& rf, const CtVolume& vol,
                                  const RoiOptions& opt = {}) {
  require_grid_compatible(initial, vol, "refine_sij_mask");
  BinaryMask kept(initial.dims(), initial.spacing());
  const int nx = initial.dims().nx, ny = initial.dims().ny, nz = initial.dims().nz;
  std::vector<VoxelIndex> voxels;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        if (initial.test(x, y, z)) voxels.push_back({x, y, z});
  parallel_for(0, voxels.size(), [&](std::size_t i) {
    const auto& v = voxels[i];
    const auto f = voxel_features(v, coccyx, vol, opt.refine_use_hu);
    if (forest_predict(rf, f) == 1) kept.set(v.i, v.j, v.k);
  });

  const auto labels = connected_components(kept);
  const auto& sp = initial.spacing();
  const double voxel_mm3 = sp.sx * sp.sy * sp.sz;
  std::vector<bool> keep_label(labels.sizes.size(), false);
  bool any = false;
  for (std::size_t l = 0; l < labels.sizes.size(); ++l) {
    keep_label[l] = static_cast<double>(labels.sizes[l]) * voxel_mm3 >= opt.min_component_mm3;
    any = any || keep_label[l];
  }
  if (!any) throw SijNotFoundError("SIJ not found: refined mask is empty");
  BinaryMask out(initial.dims(), initial.spacing());
  for (std::size_t n = 0; n < labels.labels.size(); ++n)
    if (labels.labels[n] > 0 && keep_label[static_cast<std::size_t>(labels.labels[n] - 1)])
      out.bits()[n] = 1;
  return out;
}

// ---------------------------------------------------------------------------
// Rectangle extraction

namespace detail {

inline float sample_hu_clamped(const CtVolume& vol, double x_mm, double y_mm, int z) {
  const auto& sp = vol.spacing();
  double u = x_mm / sp.sx, v = y_mm / sp.sy;
  u = std::clamp(u, 0.0, static_cast<double>(vol.dims().nx - 1));
  v = std::clamp(v, 0.0, static_cast<double>(vol.dims().ny - 1));
  const int x0 = std::min(static_cast<int>(u), vol.dims().nx - 2 >= 0 ? vol.dims().nx - 2 : 0);
  const int y0 = std::min(static_cast<int>(v), vol.dims().ny - 2 >= 0 ? vol.dims().ny - 2 : 0);
  const double fx = u - x0, fy = v - y0;
  const int x1 = std::min(x0 + 1, vol.dims().nx - 1);
  const int y1 = std::min(y0 + 1, vol.dims().ny - 1);
  const double v00 = vol.at(x0, y0, z), v01 = vol.at(x1, y0, z);
  const double v10 = vol.at(x0, y1, z), v11 = vol.at(x1, y1, z);
  return static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                            fy * ((1 - fx) * v10 + fx * v11));
}

}  // namespace detail

// Splits every refined slice at the mid-x plane and extracts one 50 x 25 mm
// rectangle per populated side, centered at the side's refined-voxel centroid,
// resampled to 100 x 200 at 0.25 mm pitch and normalized to [0, 1] over the
// HU window. Left-side rectangles are flipped about the vertical axis.
inline std::vector<RectSample> extract_half_slice_rects(const CtVolume& vol,
                                                        const BinaryMask& refined,
                                                        const std::string& case_id,
                                                        const RoiOptions& opt = {}) {
  require_grid_compatible(refined, vol, "extract_half_slice_rects");
  if (refined.count_set() == 0)
    throw InvalidArgument("extract_half_slice_rects: empty refined mask");
  const int nx = vol.dims().nx, ny = vol.dims().ny, nz = vol.dims().nz;
  const auto& sp = vol.spacing();
  const double mid_x = (nx - 1) * sp.sx / 2.0;

  std::vector<RectSample> rects;
  for (int z = 0; z < nz; ++z) {
    // accumulate per-side centroids in index space (exact integer sums)
    std::int64_t sx_sum[2] = {0, 0}, sy_sum[2] = {0, 0}, cnt[2] = {0, 0};
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!refined.test(x, y, z)) continue;
        const int side = x * sp.sx > mid_x ? 1 : 0;  // 1 = patient-left
        sx_sum[side] += x;
        sy_sum[side] += y;
        ++cnt[side];
      }
    for (int side = 0; side < 2; ++side) {
      if (cnt[side] == 0) continue;
      RectSample r;
      r.side = side == 1 ? JointSide::left : JointSide::right;
      r.z = z;
      r.case_id = case_id;
      r.cx_mm = static_cast<double>(sx_sum[side]) / cnt[side] * sp.sx;
      r.cy_mm = static_cast<double>(sy_sum[side]) / cnt[side] * sp.sy;
      r.pixels = ImageF(kRectRows, kRectCols);
      for (int i = 0; i < kRectRows; ++i) {
        const double y_mm = r.cy_mm + (i - (kRectRows - 1) / 2.0) * kRectPitchMm;
        for (int j = 0; j < kRectCols; ++j) {
          const double x_mm = r.cx_mm + (j - (kRectCols - 1) / 2.0) * kRectPitchMm;
          const double hu = detail::sample_hu_clamped(vol, x_mm, y_mm, z);
          const double t = (std::clamp(hu, opt.hu_lo, opt.hu_hi) - opt.hu_lo) /
                           (opt.hu_hi - opt.hu_lo);
          r.pixels.at(i, j) = static_cast<float>(t);
        }
      }
      if (r.side == JointSide::left) {
        for (int i = 0; i < kRectRows; ++i)
          for (int j = 0; j < kRectCols / 2; ++j)
            std::swap(r.pixels.at(i, j), r.pixels.at(i, kRectCols - 1 - j));
      }
      rects.push_back(std::move(r));
    }
  }
  return rects;
}

}  // namespace sij
