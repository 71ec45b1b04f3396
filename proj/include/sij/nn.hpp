#pragma once
// Small CNN building blocks with hand-written forward/backward passes:
// conv (3x3 same / 1x1), ReLU, 2x2 max pooling, batch norm, dense, nearest
// upsampling, channel concat, softmax cross-entropy and weighted sigmoid BCE
// losses, SGD with momentum.
//
// Everything is templated on the scalar type: production code instantiates
// float, gradient-check tests instantiate double.
//
// Determinism: batch work is parallelized over samples in fixed-size blocks;
// weight-gradient partials are accumulated per block and reduced in block
// order, so results do not depend on the thread count or schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sij/errors.hpp"
#include "sij/parallel.hpp"
#include "sij/rng.hpp"

namespace sij::nn {

constexpr std::size_t kGradBlock = 4;  // samples per gradient-accumulation block

template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * plane(); }
  T* at(int ni, int ci) { return v.data() + (static_cast<std::size_t>(ni) * c + ci) * plane(); }
  const T* at(int ni, int ci) const {
    return v.data() + (static_cast<std::size_t>(ni) * c + ci) * plane();
  }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

// Named view of a parameter (or running statistic) for update/serialization.
template <typename T>
struct ParamRef {
  std::string name;
  std::vector<int> shape;
  std::vector<T>* value = nullptr;
  std::vector<T>* grad = nullptr;  // null for running statistics
};

namespace detail {

template <typename T>
void reduce_blocks(std::vector<std::vector<T>>& partials, std::vector<T>& out) {
  for (const auto& p : partials)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename T>
class Conv2D {
public:
  Conv2D() = default;
  // kernel 3 -> same padding 1; kernel 1 -> no padding.
  Conv2D(std::string name, int in_ch, int out_ch, int kernel, Rng& rng)
      : name_(std::move(name)), in_ch_(in_ch), out_ch_(out_ch), k_(kernel), pad_(kernel / 2) {
    weight_.resize(static_cast<std::size_t>(out_ch) * in_ch * k_ * k_);
    bias_.assign(static_cast<std::size_t>(out_ch), T(0));
    const double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * k_ * k_));
    for (auto& w : weight_) w = static_cast<T>(rng.gaussian(0.0, std));
    wgrad_.assign(weight_.size(), T(0));
    bgrad_.assign(bias_.size(), T(0));
  }

  Tensor4<T> forward(const Tensor4<T>& in, bool train) {
    if (in.c != in_ch_) throw InvalidArgument(name_ + ": channel mismatch");
    if (train) cache_ = in;
    Tensor4<T> out(in.n, out_ch_, in.h, in.w);
    parallel_for(0, static_cast<std::size_t>(in.n), [&](std::size_t ni) {
      forward_sample(in, out, static_cast<int>(ni));
    });
    return out;
  }

  Tensor4<T> backward(const Tensor4<T>& gout) {
    const Tensor4<T>& in = cache_;
    Tensor4<T> gin(in.n, in.c, in.h, in.w);
    parallel_for(0, static_cast<std::size_t>(in.n), [&](std::size_t ni) {
      backward_input_sample(gout, gin, static_cast<int>(ni));
    });
    // Weight/bias grads: per-block partials reduced in block order.
    const std::size_t n_blocks =
        (static_cast<std::size_t>(in.n) + kGradBlock - 1) / kGradBlock;
    std::vector<std::vector<T>> wparts(n_blocks, std::vector<T>(weight_.size(), T(0)));
    std::vector<std::vector<T>> bparts(n_blocks, std::vector<T>(bias_.size(), T(0)));
    parallel_for(0, n_blocks, [&](std::size_t b) {
      const std::size_t lo = b * kGradBlock;
      const std::size_t hi = std::min<std::size_t>(lo + kGradBlock, in.n);
      for (std::size_t ni = lo; ni < hi; ++ni)
        weight_grad_sample(in, gout, static_cast<int>(ni), wparts[b], bparts[b]);
    });
    detail::reduce_blocks(wparts, wgrad_);
    detail::reduce_blocks(bparts, bgrad_);
    return gin;
  }

  std::vector<ParamRef<T>> params() {
    return {{name_ + ".weight", {out_ch_, in_ch_, k_, k_}, &weight_, &wgrad_},
            {name_ + ".bias", {out_ch_}, &bias_, &bgrad_}};
  }

private:
  T wval(int oc, int ic, int ky, int kx) const {
    return weight_[((static_cast<std::size_t>(oc) * in_ch_ + ic) * k_ + ky) * k_ + kx];
  }

  void forward_sample(const Tensor4<T>& in, Tensor4<T>& out, int ni) const {
    const int h = in.h, w = in.w;
    for (int oc = 0; oc < out_ch_; ++oc) {
      T* op = out.at(ni, oc);
      std::fill(op, op + out.plane(), bias_[static_cast<std::size_t>(oc)]);
      for (int ic = 0; ic < in_ch_; ++ic) {
        const T* ip = in.at(ni, ic);
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const T wv = wval(oc, ic, ky, kx);
            const int dy = ky - pad_, dx = kx - pad_;
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int y = y0; y < y1; ++y) {
              T* orow = op + static_cast<std::size_t>(y) * w;
              const T* irow = ip + static_cast<std::size_t>(y + dy) * w + dx;
              for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
            }
          }
        }
      }
    }
  }

  void backward_input_sample(const Tensor4<T>& gout, Tensor4<T>& gin, int ni) const {
    const int h = gin.h, w = gin.w;
    for (int ic = 0; ic < in_ch_; ++ic) {
      T* gp = gin.at(ni, ic);
      for (int oc = 0; oc < out_ch_; ++oc) {
        const T* op = gout.at(ni, oc);
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const T wv = wval(oc, ic, ky, kx);
            const int dy = ky - pad_, dx = kx - pad_;
            // gin(y, x) += w * gout(y - dy, x - dx)
            const int y0 = std::max(0, dy), y1 = std::min(h, h + dy);
            const int x0 = std::max(0, dx), x1 = std::min(w, w + dx);
            for (int y = y0; y < y1; ++y) {
              T* grow = gp + static_cast<std::size_t>(y) * w;
              const T* orow = op + static_cast<std::size_t>(y - dy) * w - dx;
              for (int x = x0; x < x1; ++x) grow[x] += wv * orow[x];
            }
          }
        }
      }
    }
  }

  void weight_grad_sample(const Tensor4<T>& in, const Tensor4<T>& gout, int ni,
                          std::vector<T>& wpart, std::vector<T>& bpart) const {
    const int h = in.h, w = in.w;
    for (int oc = 0; oc < out_ch_; ++oc) {
      const T* op = gout.at(ni, oc);
      T bsum = T(0);
      for (std::size_t i = 0; i < gout.plane(); ++i) bsum += op[i];
      bpart[static_cast<std::size_t>(oc)] += bsum;
      for (int ic = 0; ic < in_ch_; ++ic) {
        const T* ip = in.at(ni, ic);
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const int dy = ky - pad_, dx = kx - pad_;
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            T acc = T(0);
            for (int y = y0; y < y1; ++y) {
              const T* orow = op + static_cast<std::size_t>(y) * w;
              const T* irow = ip + static_cast<std::size_t>(y + dy) * w + dx;
              for (int x = x0; x < x1; ++x) acc += orow[x] * irow[x];
            }
            wpart[((static_cast<std::size_t>(oc) * in_ch_ + ic) * k_ + ky) * k_ + kx] += acc;
          }
        }
      }
    }
  }

  std::string name_;
  int in_ch_ = 0, out_ch_ = 0, k_ = 3, pad_ = 1;
  std::vector<T> weight_, bias_, wgrad_, bgrad_;
  Tensor4<T> cache_;
};

// ---------------------------------------------------------------------------

template <typename T>
class ReLU {
public:
  Tensor4<T> forward(const Tensor4<T>& in, bool train) {
    Tensor4<T> out = in;
    for (auto& x : out.v) x = x > T(0) ? x : T(0);
    if (train) mask_ = in;
    return out;
  }
  Tensor4<T> backward(const Tensor4<T>& gout) {
    Tensor4<T> gin = gout;
    for (std::size_t i = 0; i < gin.v.size(); ++i)
      if (mask_.v[i] <= T(0)) gin.v[i] = T(0);
    return gin;
  }

private:
  Tensor4<T> mask_;
};

// 2x2 max pooling, stride 2, floor semantics (odd trailing row/col dropped).
// Ties pick the first maximum in scan order.
template <typename T>
class MaxPool2D {
public:
  Tensor4<T> forward(const Tensor4<T>& in, bool train) {
    const int ho = in.h / 2, wo = in.w / 2;
    Tensor4<T> out(in.n, in.c, ho, wo);
    if (train) {
      argmax_.assign(out.v.size(), 0);
      in_h_ = in.h;
      in_w_ = in.w;
    }
    parallel_for(0, static_cast<std::size_t>(in.n) * in.c, [&](std::size_t pi) {
      const T* ip = in.v.data() + pi * in.plane();
      T* op = out.v.data() + pi * out.plane();
      std::uint8_t* am = train ? argmax_.data() + pi * out.plane() : nullptr;
      for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < wo; ++x) {
          int best = 0;
          T bv = ip[(2 * y) * in.w + 2 * x];
          const int offs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
          for (int q = 1; q < 4; ++q) {
            const T v = ip[(2 * y + offs[q][0]) * in.w + 2 * x + offs[q][1]];
            if (v > bv) {
              bv = v;
              best = q;
            }
          }
          op[y * wo + x] = bv;
          if (am) am[y * wo + x] = static_cast<std::uint8_t>(best);
        }
      }
    });
    return out;
  }

  Tensor4<T> backward(const Tensor4<T>& gout) {
    Tensor4<T> gin(gout.n, gout.c, in_h_, in_w_);
    const int ho = gout.h, wo = gout.w;
    parallel_for(0, static_cast<std::size_t>(gout.n) * gout.c, [&](std::size_t pi) {
      const T* op = gout.v.data() + pi * gout.plane();
      T* ip = gin.v.data() + pi * gin.plane();
      const std::uint8_t* am = argmax_.data() + pi * gout.plane();
      for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < wo; ++x) {
          const int q = am[y * wo + x];
          ip[(2 * y + (q >> 1)) * in_w_ + 2 * x + (q & 1)] += op[y * wo + x];
        }
      }
    });
    return gin;
  }

private:
  std::vector<std::uint8_t> argmax_;
  int in_h_ = 0, in_w_ = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm2D {
public:
  BatchNorm2D() = default;
  BatchNorm2D(std::string name, int channels)
      : name_(std::move(name)),
        c_(channels),
        gamma_(static_cast<std::size_t>(channels), T(1)),
        beta_(static_cast<std::size_t>(channels), T(0)),
        ggrad_(static_cast<std::size_t>(channels), T(0)),
        bgrad_(static_cast<std::size_t>(channels), T(0)),
        run_mean_(static_cast<std::size_t>(channels), T(0)),
        run_var_(static_cast<std::size_t>(channels), T(1)) {}

  Tensor4<T> forward(const Tensor4<T>& in, bool train) {
    Tensor4<T> out(in.n, in.c, in.h, in.w);
    if (train) {
      xhat_ = Tensor4<T>(in.n, in.c, in.h, in.w);
      inv_std_.assign(static_cast<std::size_t>(c_), T(0));
      parallel_for(0, static_cast<std::size_t>(c_), [&](std::size_t ci) {
        const std::size_t m = static_cast<std::size_t>(in.n) * in.plane();
        T mean = T(0);
        for (int ni = 0; ni < in.n; ++ni) {
          const T* p = in.at(ni, static_cast<int>(ci));
          for (std::size_t i = 0; i < in.plane(); ++i) mean += p[i];
        }
        mean /= static_cast<T>(m);
        T var = T(0);
        for (int ni = 0; ni < in.n; ++ni) {
          const T* p = in.at(ni, static_cast<int>(ci));
          for (std::size_t i = 0; i < in.plane(); ++i) {
            const T d = p[i] - mean;
            var += d * d;
          }
        }
        var /= static_cast<T>(m);
        const T istd = T(1) / std::sqrt(var + static_cast<T>(kEps));
        inv_std_[ci] = istd;
        for (int ni = 0; ni < in.n; ++ni) {
          const T* p = in.at(ni, static_cast<int>(ci));
          T* xh = xhat_.at(ni, static_cast<int>(ci));
          T* op = out.at(ni, static_cast<int>(ci));
          for (std::size_t i = 0; i < in.plane(); ++i) {
            xh[i] = (p[i] - mean) * istd;
            op[i] = gamma_[ci] * xh[i] + beta_[ci];
          }
        }
        run_mean_[ci] = (T(1) - static_cast<T>(kMomentum)) * run_mean_[ci] +
                        static_cast<T>(kMomentum) * mean;
        run_var_[ci] = (T(1) - static_cast<T>(kMomentum)) * run_var_[ci] +
                       static_cast<T>(kMomentum) * var;
      });
    } else {
      parallel_for(0, static_cast<std::size_t>(c_), [&](std::size_t ci) {
        const T istd = T(1) / std::sqrt(run_var_[ci] + static_cast<T>(kEps));
        for (int ni = 0; ni < in.n; ++ni) {
          const T* p = in.at(ni, static_cast<int>(ci));
          T* op = out.at(ni, static_cast<int>(ci));
          for (std::size_t i = 0; i < in.plane(); ++i)
            op[i] = gamma_[ci] * (p[i] - run_mean_[ci]) * istd + beta_[ci];
        }
      });
    }
    return out;
  }

  Tensor4<T> backward(const Tensor4<T>& gout) {
    Tensor4<T> gin(gout.n, gout.c, gout.h, gout.w);
    parallel_for(0, static_cast<std::size_t>(c_), [&](std::size_t ci) {
      const std::size_t m = static_cast<std::size_t>(gout.n) * gout.plane();
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int ni = 0; ni < gout.n; ++ni) {
        const T* g = gout.at(ni, static_cast<int>(ci));
        const T* xh = xhat_.at(ni, static_cast<int>(ci));
        for (std::size_t i = 0; i < gout.plane(); ++i) {
          sum_dy += g[i];
          sum_dy_xhat += g[i] * xh[i];
        }
      }
      bgrad_[ci] += sum_dy;
      ggrad_[ci] += sum_dy_xhat;
      const T inv_m = T(1) / static_cast<T>(m);
      for (int ni = 0; ni < gout.n; ++ni) {
        const T* g = gout.at(ni, static_cast<int>(ci));
        const T* xh = xhat_.at(ni, static_cast<int>(ci));
        T* gi = gin.at(ni, static_cast<int>(ci));
        for (std::size_t i = 0; i < gout.plane(); ++i)
          gi[i] = gamma_[ci] * inv_std_[ci] *
                  (g[i] - sum_dy * inv_m - xh[i] * sum_dy_xhat * inv_m);
      }
    });
    return gin;
  }

  std::vector<ParamRef<T>> params() {
    return {{name_ + ".gamma", {c_}, &gamma_, &ggrad_},
            {name_ + ".beta", {c_}, &beta_, &bgrad_},
            {name_ + ".run_mean", {c_}, &run_mean_, nullptr},
            {name_ + ".run_var", {c_}, &run_var_, nullptr}};
  }

private:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
  std::string name_;
  int c_ = 0;
  std::vector<T> gamma_, beta_, ggrad_, bgrad_, run_mean_, run_var_;
  Tensor4<T> xhat_;
  std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Dense {
public:
  Dense() = default;
  Dense(std::string name, int in_dim, int out_dim, Rng& rng)
      : name_(std::move(name)), in_(in_dim), out_(out_dim) {
    weight_.resize(static_cast<std::size_t>(out_dim) * in_dim);
    const double std = std::sqrt(2.0 / static_cast<double>(in_dim));
    for (auto& w : weight_) w = static_cast<T>(rng.gaussian(0.0, std));
    bias_.assign(static_cast<std::size_t>(out_dim), T(0));
    wgrad_.assign(weight_.size(), T(0));
    bgrad_.assign(bias_.size(), T(0));
  }

  // Input is flattened per sample: (n, c*h*w) -> (n, out, 1, 1).
  Tensor4<T> forward(const Tensor4<T>& in, bool train) {
    if (static_cast<int>(in.sample_size()) != in_)
      throw InvalidArgument(name_ + ": input size mismatch");
    if (train) cache_ = in;
    Tensor4<T> out(in.n, out_, 1, 1);
    parallel_for(0, static_cast<std::size_t>(in.n), [&](std::size_t ni) {
      const T* x = in.v.data() + ni * in.sample_size();
      T* y = out.v.data() + ni * static_cast<std::size_t>(out_);
      for (int o = 0; o < out_; ++o) {
        const T* wr = weight_.data() + static_cast<std::size_t>(o) * in_;
        T acc = bias_[static_cast<std::size_t>(o)];
        for (int i = 0; i < in_; ++i) acc += wr[i] * x[i];
        y[o] = acc;
      }
    });
    return out;
  }

  Tensor4<T> backward(const Tensor4<T>& gout) {
    const Tensor4<T>& in = cache_;
    Tensor4<T> gin(in.n, in.c, in.h, in.w);
    parallel_for(0, static_cast<std::size_t>(in.n), [&](std::size_t ni) {
      const T* g = gout.v.data() + ni * static_cast<std::size_t>(out_);
      T* gi = gin.v.data() + ni * in.sample_size();
      for (int o = 0; o < out_; ++o) {
        const T* wr = weight_.data() + static_cast<std::size_t>(o) * in_;
        const T gv = g[o];
        for (int i = 0; i < in_; ++i) gi[i] += wr[i] * gv;
      }
    });
    const std::size_t n_blocks =
        (static_cast<std::size_t>(in.n) + kGradBlock - 1) / kGradBlock;
    std::vector<std::vector<T>> wparts(n_blocks, std::vector<T>(weight_.size(), T(0)));
    std::vector<std::vector<T>> bparts(n_blocks, std::vector<T>(bias_.size(), T(0)));
    parallel_for(0, n_blocks, [&](std::size_t b) {
      const std::size_t lo = b * kGradBlock;
      const std::size_t hi = std::min<std::size_t>(lo + kGradBlock, in.n);
      for (std::size_t ni = lo; ni < hi; ++ni) {
        const T* g = gout.v.data() + ni * static_cast<std::size_t>(out_);
        const T* x = in.v.data() + ni * in.sample_size();
        for (int o = 0; o < out_; ++o) {
          T* wr = wparts[b].data() + static_cast<std::size_t>(o) * in_;
          const T gv = g[o];
          for (int i = 0; i < in_; ++i) wr[i] += gv * x[i];
          bparts[b][static_cast<std::size_t>(o)] += gv;
        }
      }
    });
    detail::reduce_blocks(wparts, wgrad_);
    detail::reduce_blocks(bparts, bgrad_);
    return gin;
  }

  std::vector<ParamRef<T>> params() {
    return {{name_ + ".weight", {out_, in_}, &weight_, &wgrad_},
            {name_ + ".bias", {out_}, &bias_, &bgrad_}};
  }

private:
  std::string name_;
  int in_ = 0, out_ = 0;
  std::vector<T> weight_, bias_, wgrad_, bgrad_;
  Tensor4<T> cache_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Upsample2x {
public:
  Tensor4<T> forward(const Tensor4<T>& in) const {
    Tensor4<T> out(in.n, in.c, in.h * 2, in.w * 2);
    parallel_for(0, static_cast<std::size_t>(in.n) * in.c, [&](std::size_t pi) {
      const T* ip = in.v.data() + pi * in.plane();
      T* op = out.v.data() + pi * out.plane();
      for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
          const T v = ip[y * in.w + x];
          T* o = op + (2 * y) * (2 * in.w) + 2 * x;
          o[0] = v;
          o[1] = v;
          o[2 * in.w] = v;
          o[2 * in.w + 1] = v;
        }
    });
    return out;
  }

  Tensor4<T> backward(const Tensor4<T>& gout) const {
    const int ih = gout.h / 2, iw = gout.w / 2;
    Tensor4<T> gin(gout.n, gout.c, ih, iw);
    parallel_for(0, static_cast<std::size_t>(gout.n) * gout.c, [&](std::size_t pi) {
      const T* op = gout.v.data() + pi * gout.plane();
      T* ip = gin.v.data() + pi * gin.plane();
      for (int y = 0; y < ih; ++y)
        for (int x = 0; x < iw; ++x)
          ip[y * iw + x] = op[(2 * y) * gout.w + 2 * x] + op[(2 * y) * gout.w + 2 * x + 1] +
                           op[(2 * y + 1) * gout.w + 2 * x] +
                           op[(2 * y + 1) * gout.w + 2 * x + 1];
    });
    return gin;
  }
};

template <typename T>
inline Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw InvalidArgument("concat_channels: shape mismatch");
  Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
  for (int ni = 0; ni < a.n; ++ni) {
    for (int ci = 0; ci < a.c; ++ci)
      std::copy(a.at(ni, ci), a.at(ni, ci) + a.plane(), out.at(ni, ci));
    for (int ci = 0; ci < b.c; ++ci)
      std::copy(b.at(ni, ci), b.at(ni, ci) + b.plane(), out.at(ni, a.c + ci));
  }
  return out;
}

template <typename T>
inline std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& g, int c_first) {
  Tensor4<T> a(g.n, c_first, g.h, g.w), b(g.n, g.c - c_first, g.h, g.w);
  for (int ni = 0; ni < g.n; ++ni) {
    for (int ci = 0; ci < c_first; ++ci)
      std::copy(g.at(ni, ci), g.at(ni, ci) + g.plane(), a.at(ni, ci));
    for (int ci = c_first; ci < g.c; ++ci)
      std::copy(g.at(ni, ci), g.at(ni, ci) + g.plane(), b.at(ni, ci - c_first));
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Losses

// Numerically stable softmax over the channel axis of an (n, m, 1, 1) tensor.
template <typename T>
inline std::vector<T> softmax_row(const T* logits, int m) {
  T mx = logits[0];
  for (int i = 1; i < m; ++i) mx = std::max(mx, logits[i]);
  std::vector<T> p(static_cast<std::size_t>(m));
  T sum = T(0);
  for (int i = 0; i < m; ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (int i = 0; i < m; ++i) p[i] /= sum;
  return p;
}

// Mean cross-entropy over the batch; returns (loss, dlogits).
template <typename T>
inline std::pair<T, Tensor4<T>> softmax_cross_entropy(const Tensor4<T>& logits,
                                                      const std::vector<int>& labels) {
  const int m = logits.c;
  Tensor4<T> grad(logits.n, m, 1, 1);
  T loss = T(0);
  for (int ni = 0; ni < logits.n; ++ni) {
    const T* row = logits.v.data() + static_cast<std::size_t>(ni) * m;
    T mx = row[0];
    for (int i = 1; i < m; ++i) mx = std::max(mx, row[i]);
    T lse = T(0);
    for (int i = 0; i < m; ++i) lse += std::exp(row[i] - mx);
    lse = mx + std::log(lse);
    loss -= row[labels[static_cast<std::size_t>(ni)]] - lse;
    T* g = grad.v.data() + static_cast<std::size_t>(ni) * m;
    for (int i = 0; i < m; ++i)
      g[i] = (std::exp(row[i] - lse) - (i == labels[static_cast<std::size_t>(ni)] ? T(1) : T(0))) /
             static_cast<T>(logits.n);
  }
  return {loss / static_cast<T>(logits.n), std::move(grad)};
}

// Per-pixel weighted binary cross-entropy on logits; targets in {0,1}.
// Positive pixels are weighted by pos_weight. Returns (mean loss, dlogits).
template <typename T>
inline std::pair<T, Tensor4<T>> sigmoid_bce(const Tensor4<T>& logits,
                                            const Tensor4<T>& targets, T pos_weight) {
  if (!logits.same_shape(targets)) throw InvalidArgument("sigmoid_bce: shape mismatch");
  Tensor4<T> grad(logits.n, logits.c, logits.h, logits.w);
  const std::size_t m = logits.v.size();
  T loss = T(0);
  for (std::size_t i = 0; i < m; ++i) {
    const T z = logits.v[i];
    const T t = targets.v[i];
    // log(1 + exp(-|z|)) is the stable softplus core
    const T sp = std::log1p(std::exp(-std::abs(z)));
    const T log_p = (z < T(0) ? z : T(0)) - sp;        // log sigmoid(z)
    const T log_q = (z < T(0) ? T(0) : -z) - sp;       // log (1 - sigmoid(z))
    const T wpos = pos_weight * t;
    loss -= wpos * log_p + (T(1) - t) * log_q;
    const T p = T(1) / (T(1) + std::exp(-z));
    grad.v[i] = (wpos * (p - T(1)) + (T(1) - t) * p) / static_cast<T>(m);
  }
  return {loss / static_cast<T>(m), std::move(grad)};
}

// ---------------------------------------------------------------------------

template <typename T>
class SgdOptimizer {
public:
  SgdOptimizer(T lr, T momentum = T(0)) : lr_(lr), momentum_(momentum) {}

  void step(std::vector<ParamRef<T>>& params) {
    if (momentum_ != T(0) && velocity_.size() != params.size()) {
      velocity_.resize(params.size());
      for (std::size_t p = 0; p < params.size(); ++p)
        if (params[p].grad) velocity_[p].assign(params[p].value->size(), T(0));
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& pr = params[p];
      if (!pr.grad) continue;  // running statistics
      auto& w = *pr.value;
      auto& g = *pr.grad;
      if (momentum_ != T(0)) {
        auto& v = velocity_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = momentum_ * v[i] + g[i];
          w[i] -= lr_ * v[i];
        }
      } else {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
      }
      std::fill(g.begin(), g.end(), T(0));
    }
  }

  void set_lr(T lr) { lr_ = lr; }

private:
  T lr_;
  T momentum_;
  std::vector<std::vector<T>> velocity_;
};

template <typename T>
inline void zero_grads(std::vector<ParamRef<T>>& params) {
  for (auto& p : params)
    if (p.grad) std::fill(p.grad->begin(), p.grad->end(), T(0));
}

}  // namespace sij::nn
