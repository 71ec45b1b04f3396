#pragma once
// Volumetric primitives: HU thresholding, 26-connected component labeling,
// axis-wise morphological closing, per-slice convex hulls, and the adaptive
// skeleton segmentation built on top of them.
//
// Component labeling is run-based: foreground runs along x are extracted per
// line and merged with union-find against the four already-scanned neighbor
// lines, which keeps the 22-candidate threshold search cheap on full-size
// scans.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "sij/errors.hpp"
#include "sij/volume.hpp"

namespace sij {

struct LabelGrid {
  Dims3 dims;
  Spacing3 spacing;
  std::vector<std::int32_t> labels;  // 0 = background
  int count = 0;
  std::vector<std::size_t> sizes;  // sizes[l-1] = voxels carrying label l
};

struct Vec2 {
  double x = 0.0, y = 0.0;
};

// Convex, counter-clockwise vertex list in mm within one axial plane. Fewer
// than 3 input points yield a degenerate polygon carrying the points as-is.
struct Polygon2D {
  std::vector<Vec2> vertices;
};

inline BinaryMask threshold_mask(const CtVolume& vol, double lo, double hi) {
  if (lo > hi) throw InvalidArgument("threshold_mask: lo > hi");
  BinaryMask mask(vol.dims(), vol.spacing());
  const auto& hu = vol.voxels();
  auto& bits = mask.bits();
  for (std::size_t n = 0; n < hu.size(); ++n)
    bits[n] = (hu[n] >= lo && hu[n] <= hi) ? 1 : 0;
  return mask;
}

namespace detail {

struct Run {
  int x0, x1;  // inclusive voxel span along x
};

inline int uf_find(std::vector<int>& parent, int a) {
  while (parent[a] != a) {
    parent[a] = parent[parent[a]];
    a = parent[a];
  }
  return a;
}

inline void uf_union(std::vector<int>& parent, int a, int b) {
  a = uf_find(parent, a);
  b = uf_find(parent, b);
  if (a != b) parent[std::max(a, b)] = std::min(a, b);
}

// Shared labeling core. `fg(n)` answers whether flat voxel n is foreground.
// When `out` is non-null the full label grid is produced with labels assigned
// in first-encounter scan order (x fastest, then y, then z).
template <typename Fg>
int label_components(const Dims3& dims, Fg&& fg, LabelGrid* out) {
  const int nx = dims.nx, ny = dims.ny, nz = dims.nz;
  const std::size_t n_lines = static_cast<std::size_t>(ny) * nz;

  std::vector<Run> runs;
  std::vector<std::pair<std::int32_t, std::int32_t>> line_runs(n_lines, {0, 0});
  std::vector<int> parent;

  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      const std::size_t line = static_cast<std::size_t>(z) * ny + y;
      const std::size_t base = line * nx;
      const auto first = static_cast<std::int32_t>(runs.size());
      int x = 0;
      while (x < nx) {
        if (!fg(base + x)) {
          ++x;
          continue;
        }
        const int x0 = x;
        while (x < nx && fg(base + x)) ++x;
        runs.push_back({x0, x - 1});
        parent.push_back(static_cast<int>(parent.size()));
      }
      const auto last = static_cast<std::int32_t>(runs.size());
      line_runs[line] = {first, last};
      if (first == last) continue;

      // 26-connectivity: a run touches runs in the four previously scanned
      // neighbor lines whose x-span overlaps its span expanded by one.
      const int neigh[4][2] = {{y - 1, z}, {y - 1, z - 1}, {y, z - 1}, {y + 1, z - 1}};
      for (const auto& nb : neigh) {
        if (nb[0] < 0 || nb[0] >= ny || nb[1] < 0) continue;
        const std::size_t nline = static_cast<std::size_t>(nb[1]) * ny + nb[0];
        auto [nb_first, nb_last] = line_runs[nline];
        std::int32_t a = first, b = nb_first;
        while (a < last && b < nb_last) {
          if (runs[a].x0 - 1 > runs[b].x1)
            ++b;
          else if (runs[b].x0 - 1 > runs[a].x1)
            ++a;
          else {
            uf_union(parent, a, b);
            if (runs[a].x1 < runs[b].x1)
              ++a;
            else
              ++b;
          }
        }
      }
    }
  }

  int count = 0;
  for (std::size_t r = 0; r < parent.size(); ++r)
    if (uf_find(parent, static_cast<int>(r)) == static_cast<int>(r)) ++count;

  if (out != nullptr) {
    out->labels.assign(dims.count(), 0);
    out->sizes.assign(static_cast<std::size_t>(count), 0);
    std::vector<std::int32_t> root_label(parent.size(), 0);
    std::int32_t next = 0;
    for (std::size_t line = 0; line < n_lines; ++line) {
      const std::size_t base = line * nx;
      auto [first, last] = line_runs[line];
      for (std::int32_t r = first; r < last; ++r) {
        const int root = uf_find(parent, r);
        if (root_label[root] == 0) root_label[root] = ++next;
        const std::int32_t label = root_label[root];
        for (int x = runs[r].x0; x <= runs[r].x1; ++x) out->labels[base + x] = label;
        out->sizes[label - 1] += static_cast<std::size_t>(runs[r].x1 - runs[r].x0 + 1);
      }
    }
    out->count = count;
  }
  return count;
}

// 1-D closing of every grid line along one axis. Out-of-grid cells count as
// background for the dilation and as foreground for the erosion, which keeps
// the closing extensive at the volume borders.
inline void close_axis(std::vector<std::uint8_t>& bits, int len, std::size_t stride,
                       const std::vector<std::size_t>& line_bases, int radius) {
  std::vector<std::uint8_t> line(static_cast<std::size_t>(len));
  std::vector<int> prefix(static_cast<std::size_t>(len) + 1);
  for (const std::size_t base : line_bases) {
    for (int i = 0; i < len; ++i) line[i] = bits[base + i * stride];
    auto rebuild_prefix = [&] {
      prefix[0] = 0;
      for (int i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + (line[i] ? 1 : 0);
    };
    auto window = [&](int i) {
      const int lo = std::max(0, i - radius);
      const int hi = std::min(len - 1, i + radius);
      return std::pair<int, int>{prefix[hi + 1] - prefix[lo], hi - lo + 1};
    };
    rebuild_prefix();
    for (int i = 0; i < len; ++i) line[i] = window(i).first > 0 ? 1 : 0;  // dilate
    rebuild_prefix();
    for (int i = 0; i < len; ++i) {  // erode
      auto [cnt, width] = window(i);
      bits[base + i * stride] = cnt == width ? 1 : 0;
    }
  }
}

}  // namespace detail

inline LabelGrid connected_components(const BinaryMask& mask) {
  LabelGrid grid;
  grid.dims = mask.dims();
  grid.spacing = mask.spacing();
  const auto& bits = mask.bits();
  detail::label_components(mask.dims(), [&](std::size_t n) { return bits[n] != 0; },
                           &grid);
  return grid;
}

// Component count of {v : lo <= HU(v) <= hi} without materializing the mask.
inline int count_threshold_components(const CtVolume& vol, double lo, double hi) {
  const auto& hu = vol.voxels();
  return detail::label_components(
      vol.dims(), [&](std::size_t n) { return hu[n] >= lo && hu[n] <= hi; }, nullptr);
}

// Sequential 1-D closings (dilate then erode with a centered line element of
// the given odd diameter) along x, then y, then z.
inline BinaryMask close_mask(const BinaryMask& mask, int diameter_voxels) {
  if (diameter_voxels < 1 || diameter_voxels % 2 == 0)
    throw InvalidArgument("close_mask: diameter must be odd and positive");
  BinaryMask out = mask;
  if (diameter_voxels == 1) return out;
  const int r = diameter_voxels / 2;
  const int nx = mask.dims().nx, ny = mask.dims().ny, nz = mask.dims().nz;
  auto& bits = out.bits();
  const std::size_t snx = static_cast<std::size_t>(nx);
  const std::size_t sslice = snx * static_cast<std::size_t>(ny);

  std::vector<std::size_t> bases;
  bases.reserve(static_cast<std::size_t>(std::max({ny * nz, nx * nz, nx * ny})));

  bases.clear();
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y) bases.push_back(z * sslice + y * snx);
  detail::close_axis(bits, nx, 1, bases, r);

  bases.clear();
  for (int z = 0; z < nz; ++z)
    for (int x = 0; x < nx; ++x) bases.push_back(z * sslice + static_cast<std::size_t>(x));
  detail::close_axis(bits, ny, snx, bases, r);

  bases.clear();
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) bases.push_back(y * snx + static_cast<std::size_t>(x));
  detail::close_axis(bits, nz, sslice, bases, r);

  return out;
}

// ---------------------------------------------------------------------------
// Convex hulls and point location

namespace detail {

// Monotone chain on integer voxel coordinates (exact arithmetic); vertices
// are strict corners in counter-clockwise order.
inline std::vector<std::pair<int, int>> hull_int(std::vector<std::pair<int, int>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  auto cross = [](const std::pair<int, int>& o, const std::pair<int, int>& a,
                  const std::pair<int, int>& b) {
    return static_cast<long long>(a.first - o.first) * (b.second - o.second) -
           static_cast<long long>(a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<int, int>> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {  // lower
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace detail

// Convex hull of the world (x, y) centers of set voxels in slice z.
inline Polygon2D slice_convex_hull(const BinaryMask& mask, int z) {
  if (z < 0 || z >= mask.dims().nz)
    throw InvalidArgument("slice_convex_hull: slice index out of range");
  const int nx = mask.dims().nx, ny = mask.dims().ny;
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      if (mask.test(x, y, z)) pts.emplace_back(x, y);
  const auto hull = detail::hull_int(std::move(pts));
  Polygon2D poly;
  poly.vertices.reserve(hull.size());
  for (const auto& [i, j] : hull)
    poly.vertices.push_back({i * mask.spacing().sx, j * mask.spacing().sy});
  return poly;
}

// Extent of the polygon along the left-right (x) axis, in mm.
inline double hull_width(const Polygon2D& poly) {
  if (poly.vertices.empty()) return 0.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& v : poly.vertices) {
    lo = std::min(lo, v.x);
    hi = std::max(hi, v.x);
  }
  return hi - lo;
}

// True iff p lies inside or on the boundary. Degenerate polygons admit only
// exact point/segment membership.
inline bool point_in_polygon(const Polygon2D& poly, const Vec2& p) {
  const auto& v = poly.vertices;
  constexpr double tol = 1e-9;
  if (v.empty()) return false;
  if (v.size() == 1) return std::abs(p.x - v[0].x) <= tol && std::abs(p.y - v[0].y) <= tol;
  if (v.size() == 2) {
    const double cross = (v[1].x - v[0].x) * (p.y - v[0].y) - (v[1].y - v[0].y) * (p.x - v[0].x);
    if (std::abs(cross) > tol) return false;
    const double dot = (p.x - v[0].x) * (v[1].x - v[0].x) + (p.y - v[0].y) * (v[1].y - v[0].y);
    const double len2 = (v[1].x - v[0].x) * (v[1].x - v[0].x) + (v[1].y - v[0].y) * (v[1].y - v[0].y);
    return dot >= -tol && dot <= len2 + tol;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (cross < -tol) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Adaptive skeleton segmentation

struct AdaptiveSegmentOptions {
  double candidate_lo = 150.0;
  double candidate_hi = 500.0;
  int candidate_steps = 22;
  double upper_hu = 1300.0;
  int closing_diameter = 7;
};

inline std::vector<double> skeleton_threshold_candidates(
    const AdaptiveSegmentOptions& opt = {}) {
  std::vector<double> c(static_cast<std::size_t>(opt.candidate_steps));
  const double step = (opt.candidate_hi - opt.candidate_lo) / (opt.candidate_steps - 1);
  for (int i = 0; i < opt.candidate_steps; ++i) c[i] = opt.candidate_lo + step * i;
  return c;
}

struct SkeletonSegmentation {
  double lower_hu = 0.0;
  BinaryMask mask;
};

// Evaluates the evenly spaced candidate lower thresholds (endpoints included)
// against the fixed upper bound, picks the candidate minimizing the
// 26-connected component count (ties go to the smallest candidate), and
// returns that candidate with the closed threshold mask.
inline SkeletonSegmentation adaptive_skeleton_segment(const CtVolume& vol,
                                                      const AdaptiveSegmentOptions& opt = {}) {
  const auto candidates = skeleton_threshold_candidates(opt);
  double best = candidates.front();
  int best_count = std::numeric_limits<int>::max();
  for (const double cand : candidates) {
    const int count = count_threshold_components(vol, cand, opt.upper_hu);
    if (count < best_count) {
      best_count = count;
      best = cand;
    }
  }
  BinaryMask mask = close_mask(threshold_mask(vol, best, opt.upper_hu), opt.closing_diameter);
  return {best, std::move(mask)};
}

}  // namespace sij
