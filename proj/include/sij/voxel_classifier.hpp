#pragma once
// Voxel classifier contract for the initial SIJ mask, plus the reference
// implementation: a compact 2-D encoder-decoder with skip connections
// (3 resolution levels, 8 base feature channels by default) fed with the
// (previous, current, next) slice triplet as three channels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>

#include "sij/augment.hpp"
#include "sij/errors.hpp"
#include "sij/nn.hpp"
#include "sij/nn_io.hpp"
#include "sij/rng.hpp"

namespace sij {

// Behavioral contract: per-pixel probability-of-SIJ map in [0, 1] with the
// same shape as the input slices; deterministic for a fixed model state. The
// slice index is provided for implementations that need positional context
// (e.g. test oracles replaying ground truth); models are free to ignore it.
class VoxelClassifier {
public:
  virtual ~VoxelClassifier() = default;
  virtual ImageF probability_map(const ImageF& prev, const ImageF& cur, const ImageF& next,
                                 int z) const = 0;
};

struct VoxelNetConfig {
  int base_channels = 8;
  double hu_lo = -200.0, hu_hi = 1300.0;  // normalization window
  double lr = 0.05;
  double momentum = 0.9;
  double pos_weight = 8.0;
  int batch = 8;
  int epochs = 3;
  std::uint64_t seed = 7;
};

inline nlohmann::ordered_json to_json(const VoxelNetConfig& c) {
  return {{"base_channels", c.base_channels}, {"hu_lo", c.hu_lo},
          {"hu_hi", c.hu_hi},                 {"lr", c.lr},
          {"momentum", c.momentum},           {"pos_weight", c.pos_weight},
          {"batch", c.batch},                 {"epochs", c.epochs},
          {"seed", c.seed}};
}

inline VoxelNetConfig voxel_config_from_json(const nlohmann::json& j) {
  VoxelNetConfig c;
  c.base_channels = j.value("base_channels", c.base_channels);
  c.hu_lo = j.value("hu_lo", c.hu_lo);
  c.hu_hi = j.value("hu_hi", c.hu_hi);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.pos_weight = j.value("pos_weight", c.pos_weight);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  return c;
}

// Encoder: conv3x3 at full, half and quarter resolution; decoder: nearest
// upsampling with concatenated skips merged by 1x1 convs; 1x1 output head.
// Input height/width must be multiples of 4 (callers pad).
template <typename T>
class EncDecNet {
public:
  explicit EncDecNet(int base_channels, std::uint64_t seed)
      : c_(base_channels), c0_(base_channels), c1_(2 * base_channels) {
    if (base_channels < 1) throw InvalidArgument("EncDecNet: base_channels must be positive");
    Rng rng(seed, 0x766f78656c6e6574ULL);
    enc0_ = nn::Conv2D<T>("enc0.conv", 3, c_, 3, rng);
    enc1_ = nn::Conv2D<T>("enc1.conv", c_, 2 * c_, 3, rng);
    enc2_ = nn::Conv2D<T>("enc2.conv", 2 * c_, 4 * c_, 3, rng);
    dec1_ = nn::Conv2D<T>("dec1.merge", 6 * c_, 2 * c_, 1, rng);
    dec0_ = nn::Conv2D<T>("dec0.merge", 3 * c_, c_, 1, rng);
    head_ = nn::Conv2D<T>("head", c_, 1, 1, rng);
  }

  nn::Tensor4<T> forward_logits(const nn::Tensor4<T>& input, bool train) {
    if (input.h % 4 != 0 || input.w % 4 != 0)
      throw InvalidArgument("EncDecNet: input dims must be multiples of 4");
    auto a0 = relu0_.forward(enc0_.forward(input, train), train);
    auto a1 = relu1_.forward(enc1_.forward(pool0_.forward(a0, train), train), train);
    auto a2 = relu2_.forward(enc2_.forward(pool1_.forward(a1, train), train), train);
    auto d1 = relu_d1_.forward(
        dec1_.forward(nn::concat_channels(up1_.forward(a2), a1), train), train);
    auto d0 = relu_d0_.forward(
        dec0_.forward(nn::concat_channels(up0_.forward(d1), a0), train), train);
    return head_.forward(d0, train);
  }

  void backward(const nn::Tensor4<T>& grad_logits) {
    auto g = head_.backward(grad_logits);
    g = relu_d0_.backward(g);
    g = dec0_.backward(g);
    auto [g_up0, g_skip0] = nn::split_channels(g, g.c - c0_);
    auto g_d1 = up0_.backward(g_up0);
    g_d1 = relu_d1_.backward(g_d1);
    g_d1 = dec1_.backward(g_d1);
    auto [g_up1, g_skip1] = nn::split_channels(g_d1, g_d1.c - c1_);
    auto g_a2 = up1_.backward(g_up1);
    g_a2 = relu2_.backward(g_a2);
    g_a2 = enc2_.backward(g_a2);
    auto g_a1 = pool1_.backward(g_a2);
    for (std::size_t i = 0; i < g_a1.v.size(); ++i) g_a1.v[i] += g_skip1.v[i];
    g_a1 = relu1_.backward(g_a1);
    g_a1 = enc1_.backward(g_a1);
    auto g_a0 = pool0_.backward(g_a1);
    for (std::size_t i = 0; i < g_a0.v.size(); ++i) g_a0.v[i] += g_skip0.v[i];
    g_a0 = relu0_.backward(g_a0);
    enc0_.backward(g_a0);
  }

  std::vector<nn::ParamRef<T>> params() {
    std::vector<nn::ParamRef<T>> out;
    for (auto* conv : {&enc0_, &enc1_, &enc2_, &dec1_, &dec0_, &head_})
      for (auto& p : conv->params()) out.push_back(p);
    return out;
  }

  int base_channels() const { return c_; }

private:
  int c_ = 8;
  int c0_ = 0, c1_ = 0;
  nn::Conv2D<T> enc0_, enc1_, enc2_, dec1_, dec0_, head_;
  nn::ReLU<T> relu0_, relu1_, relu2_, relu_d1_, relu_d0_;
  nn::MaxPool2D<T> pool0_, pool1_;
  nn::Upsample2x<T> up0_, up1_;
};

namespace detail {

inline int pad_to4(int n) { return (n + 3) / 4 * 4; }

// Edge-replicate padding on the bottom/right.
inline void copy_padded(const ImageF& img, float* dst, int ph, int pw) {
  for (int y = 0; y < ph; ++y) {
    const int sy = std::min(y, img.rows - 1);
    for (int x = 0; x < pw; ++x) dst[y * pw + x] = img.at(sy, std::min(x, img.cols - 1));
  }
}

}  // namespace detail

class UNetVoxelClassifier : public VoxelClassifier {
public:
  explicit UNetVoxelClassifier(const VoxelNetConfig& cfg)
      : cfg_(cfg), net_(cfg.base_channels, cfg.seed) {}

  const VoxelNetConfig& config() const { return cfg_; }

  float normalize_hu(float hu) const {
    const double t = (hu - cfg_.hu_lo) / (cfg_.hu_hi - cfg_.hu_lo);
    return static_cast<float>(std::clamp(t, 0.0, 1.0));
  }

  ImageF normalize_slice(const ImageF& raw_hu) const {
    ImageF out(raw_hu.rows, raw_hu.cols);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = normalize_hu(raw_hu.v[i]);
    return out;
  }

  ImageF probability_map(const ImageF& prev, const ImageF& cur, const ImageF& next,
                         int /*z*/) const override {
    const int h = cur.rows, w = cur.cols;
    const int ph = detail::pad_to4(h), pw = detail::pad_to4(w);
    nn::Tensor4<float> input(1, 3, ph, pw);
    const ImageF* slices[3] = {&prev, &cur, &next};
    for (int c = 0; c < 3; ++c)
      detail::copy_padded(normalize_slice(*slices[c]), input.at(0, c), ph, pw);
    auto logits = net_.forward_logits(input, false);
    ImageF out(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float z = logits.at(0, 0)[y * pw + x];
        out.at(y, x) = 1.0f / (1.0f + std::exp(-z));
      }
    return out;
  }

  // One epoch of SGD over (normalized triplet, binary label) samples; returns
  // mean weighted BCE. Samples are stored quantized to u8 to keep large
  // training sets in memory; affine and elastic draws are shared by all three
  // channels and the label of a sample, keyed by (seed, epoch, sample).
  struct TrainSample {
    Image2D<std::uint8_t> slices[3];  // normalized [0, 1] scaled by 255
    Image2D<std::uint8_t> label;      // 0/1
  };

  static Image2D<std::uint8_t> quantize(const ImageF& img) {
    Image2D<std::uint8_t> out(img.rows, img.cols);
    for (std::size_t i = 0; i < img.v.size(); ++i)
      out.v[i] = static_cast<std::uint8_t>(
          std::lround(std::clamp(img.v[i], 0.0f, 1.0f) * 255.0f));
    return out;
  }

  double train_epoch(const std::vector<TrainSample>& samples, const AugmentParams& aug,
                     int epoch) {
    if (samples.empty()) throw InvalidArgument("voxel classifier: empty training set");
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg_.seed, 0x756e65746570ULL, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    nn::SgdOptimizer<float> sgd(static_cast<float>(cfg_.lr), static_cast<float>(cfg_.momentum));
    auto params = net_.params();
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    const int h = samples[0].slices[0].rows, w = samples[0].slices[0].cols;
    const int ph = detail::pad_to4(h), pw = detail::pad_to4(w);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg_.batch)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg_.batch));
      const int bn = static_cast<int>(end - begin);
      nn::Tensor4<float> input(bn, 3, ph, pw);
      nn::Tensor4<float> target(bn, 1, ph, pw);
      parallel_for(0, static_cast<std::size_t>(bn), [&](std::size_t b) {
        const auto& s = samples[order[begin + b]];
        Rng rng(cfg_.seed, 0x756e65746175ULL, static_cast<std::uint64_t>(epoch),
                static_cast<std::uint64_t>(order[begin + b]));
        const auto draw = draw_affine(aug, h, w, rng);
        const auto field = elastic_field(h, w, aug.elastic, rng);
        auto dequant = [](const Image2D<std::uint8_t>& q) {
          ImageF img(q.rows, q.cols);
          for (std::size_t i = 0; i < q.v.size(); ++i)
            img.v[i] = static_cast<float>(q.v[i]) / 255.0f;
          return img;
        };
        for (int c = 0; c < 3; ++c) {
          auto img = warp_with_field(apply_affine(dequant(s.slices[c]), draw), field);
          detail::copy_padded(img, input.at(static_cast<int>(b), c), ph, pw);
        }
        auto lbl = warp_with_field(apply_affine(dequant(s.label), draw), field);
        for (auto& v : lbl.v) v = v >= 0.5f ? 1.0f : 0.0f;
        detail::copy_padded(lbl, target.at(static_cast<int>(b), 0), ph, pw);
      });
      auto logits = net_.forward_logits(input, true);
      auto [loss, grad] = nn::sigmoid_bce(logits, target, static_cast<float>(cfg_.pos_weight));
      net_.backward(grad);
      sgd.step(params);
      loss_sum += static_cast<double>(loss);
      ++n_batches;
    }
    return loss_sum / static_cast<double>(n_batches);
  }

  void save(const std::filesystem::path& base) const {
    nlohmann::ordered_json meta;
    meta["config"] = to_json(cfg_);
    nn::save_weights(net_.params(), base, meta);
  }

  static UNetVoxelClassifier load(const std::filesystem::path& base) {
    const auto manifest = nn::load_weights_manifest(base);
    UNetVoxelClassifier g(voxel_config_from_json(manifest.at("metadata").at("config")));
    nn::load_weights(g.net_.params(), base);
    return g;
  }

  EncDecNet<float>& net() { return net_; }

private:
  VoxelNetConfig cfg_;
  mutable EncDecNet<float> net_;  // eval-mode forwards write no member state
};

}  // namespace sij
