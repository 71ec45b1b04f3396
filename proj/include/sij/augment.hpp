#pragma once
// Image augmentation for training: composed scale/rotate/translate affine
// warps and Simard-style elastic deformation. All parameter draws come from
// caller-supplied keyed RNG streams so augmentation is reproducible and
// schedule-independent.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "sij/errors.hpp"
#include "sij/rng.hpp"

namespace sij {

template <typename T>
struct Image2D {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Image2D() = default;
  Image2D(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, T(0)) {}
  T& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
  T at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
};

using ImageF = Image2D<float>;

struct ElasticParams {
  double amplitude_px = 1.0;  // per-axis displacement drawn from +-amplitude
  double sigma = 10.0;        // Gaussian smoothing of the displacement field
  double alpha = 5.0;         // post-smoothing scale factor
};

struct AugmentParams {
  double scale_delta = 0.15;   // scale drawn from 1 +- scale_delta
  double rotate_deg = 10.0;    // rotation drawn from +- rotate_deg
  double wshift_frac = 0.10;   // width shift, fraction of image width
  double hshift_lo = 0.0;      // height shift range, fraction of image height
  double hshift_hi = 0.01;
  ElasticParams elastic;

  static AugmentParams roi_defaults() {
    AugmentParams p;
    p.rotate_deg = 2.0;
    p.hshift_lo = -0.01;
    p.hshift_hi = 0.01;
    return p;
  }
  static AugmentParams slice_defaults() { return AugmentParams{}; }
  static AugmentParams identity() {
    AugmentParams p;
    p.scale_delta = 0.0;
    p.rotate_deg = 0.0;
    p.wshift_frac = 0.0;
    p.hshift_lo = 0.0;
    p.hshift_hi = 0.0;
    p.elastic.alpha = 0.0;
    return p;
  }
};

// One concrete parameter draw; reusable across images when a shared draw is
// required ("same parameter settings for all slices").
struct AffineDraw {
  double scale = 1.0;
  double angle_rad = 0.0;
  double dx_px = 0.0;  // column shift
  double dy_px = 0.0;  // row shift
};

inline AffineDraw draw_affine(const AugmentParams& aug, int rows, int cols, Rng& rng) {
  AffineDraw d;
  d.scale = rng.uniform(1.0 - aug.scale_delta, 1.0 + aug.scale_delta);
  d.angle_rad = rng.uniform(-aug.rotate_deg, aug.rotate_deg) * std::numbers::pi / 180.0;
  d.dx_px = rng.uniform(-aug.wshift_frac, aug.wshift_frac) * cols;
  d.dy_px = rng.uniform(aug.hshift_lo, aug.hshift_hi) * rows;
  return d;
}

namespace detail {

template <typename T>
T bilinear_zero(const Image2D<T>& img, double y, double x) {
  if (y < -1.0 || x < -1.0 || y > img.rows || x > img.cols) return T(0);
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto sample = [&](int i, int j) -> double {
    if (i < 0 || i >= img.rows || j < 0 || j >= img.cols) return 0.0;
    return static_cast<double>(img.at(i, j));
  };
  const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                   fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
  return static_cast<T>(v);
}

// Separable Gaussian blur with reflected borders; kernel truncated at 3 sigma.
template <typename T>
void gaussian_blur(Image2D<T>& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= sum;

  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - i - 1;
    }
    return i;
  };

  Image2D<T> tmp(img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               static_cast<double>(img.at(y, reflect(x + k, img.cols)));
      tmp.at(y, x) = static_cast<T>(acc);
    }
  for (int x = 0; x < img.cols; ++x)
    for (int y = 0; y < img.rows; ++y) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               static_cast<double>(tmp.at(reflect(y + k, img.rows), x));
      img.at(y, x) = static_cast<T>(acc);
    }
}

}  // namespace detail

// Applies a fixed scale -> rotate -> translate draw about the image center.
// Bilinear interpolation; samples that fall outside the frame read as 0.
template <typename T>
Image2D<T> apply_affine(const Image2D<T>& img, const AffineDraw& d) {
  Image2D<T> out(img.rows, img.cols);
  const double cy = (img.rows - 1) / 2.0;
  const double cx = (img.cols - 1) / 2.0;
  const double cosa = std::cos(d.angle_rad), sina = std::sin(d.angle_rad);
  const double inv_scale = 1.0 / d.scale;
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      // invert: undo translation, rotation, then scale
      const double vx = x - cx - d.dx_px;
      const double vy = y - cy - d.dy_px;
      const double rx = cosa * vx + sina * vy;
      const double ry = -sina * vx + cosa * vy;
      out.at(y, x) = detail::bilinear_zero(img, ry * inv_scale + cy, rx * inv_scale + cx);
    }
  }
  return out;
}

template <typename T>
Image2D<T> augment_image(const Image2D<T>& img, const AugmentParams& aug, Rng& rng) {
  return apply_affine(img, draw_affine(aug, img.rows, img.cols, rng));
}

// Smoothed displacement field for elastic deformation; shareable across the
// image/label pair of one training sample.
struct DisplacementField {
  Image2D<double> dx, dy;
  double alpha = 0.0;
};

inline DisplacementField elastic_field(int rows, int cols, const ElasticParams& p, Rng& rng) {
  if (!(p.sigma > 0.0)) throw InvalidArgument("elastic_field: sigma must be positive");
  DisplacementField f;
  f.dx = Image2D<double>(rows, cols);
  f.dy = Image2D<double>(rows, cols);
  f.alpha = p.alpha;
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      f.dx.at(y, x) = rng.uniform(-p.amplitude_px, p.amplitude_px);
      f.dy.at(y, x) = rng.uniform(-p.amplitude_px, p.amplitude_px);
    }
  if (p.alpha != 0.0) {
    detail::gaussian_blur(f.dx, p.sigma);
    detail::gaussian_blur(f.dy, p.sigma);
  }
  return f;
}

template <typename T>
Image2D<T> warp_with_field(const Image2D<T>& img, const DisplacementField& f) {
  if (f.alpha == 0.0) return img;
  Image2D<T> out(img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x)
      out.at(y, x) = detail::bilinear_zero(img, y + f.alpha * f.dy.at(y, x),
                                           x + f.alpha * f.dx.at(y, x));
  return out;
}

// Simard-style elastic deformation: per-pixel uniform displacements, Gaussian
// smoothed, scaled by alpha, applied with a bilinear warp.
template <typename T>
Image2D<T> elastic_deform(const Image2D<T>& img, const ElasticParams& p, Rng& rng) {
  return warp_with_field(img, elastic_field(img.rows, img.cols, p, rng));
}

}  // namespace sij
