#pragma once
// Per-rectangle slice grading: grade-grouping schemes, the slice CNN contract
// and its reference implementation (three conv/pool/batch-norm blocks plus
// two fully-connected layers, softmax output), and the training loop with
// per-(epoch, sample) keyed augmentation streams.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sij/augment.hpp"
#include "sij/errors.hpp"
#include "sij/nn.hpp"
#include "sij/nn_io.hpp"
#include "sij/rect.hpp"
#include "sij/rng.hpp"

namespace sij {

// ---------------------------------------------------------------------------
// Grade grouping

enum class GroupingScheme : int { two = 2, three = 3, five = 5 };

inline int n_classes(GroupingScheme s) { return static_cast<int>(s); }

inline GroupingScheme scheme_from_string(const std::string& s) {
  if (s == "two") return GroupingScheme::two;
  if (s == "three") return GroupingScheme::three;
  if (s == "five") return GroupingScheme::five;
  throw InvalidArgument("unknown grouping scheme '" + s + "'");
}

inline std::string to_string(GroupingScheme s) {
  switch (s) {
    case GroupingScheme::two: return "two";
    case GroupingScheme::three: return "three";
    default: return "five";
  }
}

// two: {0,1}->0, {2,3,4}->1; three: {0,1}->0, {2}->1, {3,4}->2; five: identity.
inline int map_grade(int grade, GroupingScheme scheme) {
  if (grade < 0 || grade > 4) throw InvalidArgument("map_grade: grade outside [0, 4]");
  switch (scheme) {
    case GroupingScheme::two: return grade <= 1 ? 0 : 1;
    case GroupingScheme::three: return grade <= 1 ? 0 : (grade == 2 ? 1 : 2);
    default: return grade;
  }
}

// ---------------------------------------------------------------------------
// Grader contract

class SliceGrader {
public:
  virtual ~SliceGrader() = default;
  virtual int n_classes() const = 0;
  // Probability vector over the active scheme's classes (non-negative, sums
  // to one). Must be deterministic for frozen weights.
  virtual std::vector<float> grade(const RectSample& rect) const = 0;
  // Penultimate activations: the final m-length pre-softmax vector.
  virtual std::vector<float> embed(const RectSample& rect) const = 0;
};

// ---------------------------------------------------------------------------
// Reference CNN

struct CnnConfig {
  int num_classes = 5;  // m in {2, 3, 5}
  int rows = kRectRows;
  int cols = kRectCols;
  std::vector<int> channels = {16, 32, 64};
  int hidden = 128;
  double lr = 0.01;
  int batch = 32;
  int epochs = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes != 2 && num_classes != 3 && num_classes != 5)
      throw InvalidArgument("CnnConfig: num_classes must be 2, 3 or 5");
    if (rows < 8 || cols < 8) throw InvalidArgument("CnnConfig: input too small");
    if (channels.size() != 3 || channels[0] < 1 || channels[1] < 1 || channels[2] < 1)
      throw InvalidArgument("CnnConfig: need three positive channel counts");
    if (hidden < 1 || batch < 1 || epochs < 0 || !(lr >= 0.0))
      throw InvalidArgument("CnnConfig: hyperparameters must be positive");
  }
};

inline nlohmann::ordered_json to_json(const CnnConfig& c) {
  return {{"num_classes", c.num_classes}, {"rows", c.rows},     {"cols", c.cols},
          {"channels", c.channels},       {"hidden", c.hidden}, {"lr", c.lr},
          {"batch", c.batch},             {"epochs", c.epochs}, {"seed", c.seed}};
}

inline CnnConfig cnn_config_from_json(const nlohmann::json& j) {
  CnnConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.rows = j.value("rows", c.rows);
  c.cols = j.value("cols", c.cols);
  c.channels = j.value("channels", c.channels);
  c.hidden = j.value("hidden", c.hidden);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  return c;
}

// 11-layer stack: 3 x [conv3x3 + ReLU -> maxpool 2x2 -> batch norm] followed
// by dense(hidden) + ReLU and dense(m). Softmax lives in the loss / grade().
template <typename T>
class SliceCnn {
public:
  explicit SliceCnn(const CnnConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg.seed, 0x736c696365636e6eULL);
    conv_[0] = nn::Conv2D<T>("block1.conv", 1, cfg.channels[0], 3, rng);
    bn_[0] = nn::BatchNorm2D<T>("block1.bn", cfg.channels[0]);
    conv_[1] = nn::Conv2D<T>("block2.conv", cfg.channels[0], cfg.channels[1], 3, rng);
    bn_[1] = nn::BatchNorm2D<T>("block2.bn", cfg.channels[1]);
    conv_[2] = nn::Conv2D<T>("block3.conv", cfg.channels[1], cfg.channels[2], 3, rng);
    bn_[2] = nn::BatchNorm2D<T>("block3.bn", cfg.channels[2]);
    int r = cfg.rows, c = cfg.cols;
    for (int b = 0; b < 3; ++b) {
      r /= 2;
      c /= 2;
    }
    flat_dim_ = cfg.channels[2] * r * c;
    fc1_ = nn::Dense<T>("fc1", flat_dim_, cfg.hidden, rng);
    fc2_ = nn::Dense<T>("fc2", cfg.hidden, cfg.num_classes, rng);
  }

  const CnnConfig& config() const { return cfg_; }

  nn::Tensor4<T> forward_logits(const nn::Tensor4<T>& input, bool train) {
    auto x = input;
    for (int b = 0; b < 3; ++b) {
      x = conv_[b].forward(x, train);
      x = relu_[b].forward(x, train);
      x = pool_[b].forward(x, train);
      x = bn_[b].forward(x, train);
    }
    x = fc1_.forward(x, train);
    x = relu_fc_.forward(x, train);
    return fc2_.forward(x, train);
  }

  void backward(const nn::Tensor4<T>& grad_logits) {
    auto g = fc2_.backward(grad_logits);
    g = relu_fc_.backward(g);
    g = fc1_.backward(g);
    for (int b = 2; b >= 0; --b) {
      g = bn_[b].backward(g);
      g = pool_[b].backward(g);
      g = relu_[b].backward(g);
      g = conv_[b].backward(g);
    }
  }

  std::vector<nn::ParamRef<T>> params() {
    std::vector<nn::ParamRef<T>> out;
    for (int b = 0; b < 3; ++b) {
      for (auto& p : conv_[b].params()) out.push_back(p);
      for (auto& p : bn_[b].params()) out.push_back(p);
    }
    for (auto& p : fc1_.params()) out.push_back(p);
    for (auto& p : fc2_.params()) out.push_back(p);
    return out;
  }

private:
  CnnConfig cfg_;
  nn::Conv2D<T> conv_[3];
  nn::ReLU<T> relu_[3];
  nn::MaxPool2D<T> pool_[3];
  nn::BatchNorm2D<T> bn_[3];
  nn::ReLU<T> relu_fc_;
  nn::Dense<T> fc1_, fc2_;
  int flat_dim_ = 0;
};

class CnnSliceGrader : public SliceGrader {
public:
  explicit CnnSliceGrader(const CnnConfig& cfg) : net_(cfg) {}

  int n_classes() const override { return net_.config().num_classes; }

  std::vector<float> grade(const RectSample& rect) const override {
    const auto logits = logits_batch({&rect.pixels}).front();
    return nn::softmax_row(logits.data(), n_classes());
  }

  std::vector<float> embed(const RectSample& rect) const override {
    return logits_batch({&rect.pixels}).front();
  }

  // Batched eval-mode forward; one row of logits per input image.
  std::vector<std::vector<float>> logits_batch(const std::vector<const ImageF*>& images) const {
    if (images.empty()) return {};
    auto input = to_tensor(images);
    auto out = net_.forward_logits(input, false);
    std::vector<std::vector<float>> rows(images.size());
    const int m = n_classes();
    for (std::size_t i = 0; i < images.size(); ++i)
      rows[i].assign(out.v.begin() + static_cast<std::ptrdiff_t>(i) * m,
                     out.v.begin() + static_cast<std::ptrdiff_t>(i + 1) * m);
    return rows;
  }

  std::vector<int> grade_batch(const std::vector<const ImageF*>& images) const {
    const auto rows = logits_batch(images);
    std::vector<int> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      out[i] = static_cast<int>(std::max_element(rows[i].begin(), rows[i].end()) -
                                rows[i].begin());
    return out;
  }

  // One training epoch of mini-batch SGD over the (already grouped) labeled
  // samples; fresh augmentations are drawn per (epoch, sample). Returns the
  // mean cross-entropy over the epoch.
  double train_epoch(const std::vector<const ImageF*>& images, const std::vector<int>& labels,
                     const AugmentParams& aug, int epoch) {
    if (images.empty() || images.size() != labels.size())
      throw InvalidArgument("train_epoch: bad sample set");
    const auto& cfg = net_.config();
    std::vector<std::size_t> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg.seed, 0x657065706fULL, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    nn::SgdOptimizer<float> sgd(static_cast<float>(cfg.lr));
    auto params = net_.params();
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch));
      std::vector<ImageF> augmented(end - begin);
      std::vector<int> batch_labels(end - begin);
      parallel_for(0, end - begin, [&](std::size_t b) {
        const std::size_t idx = order[begin + b];
        Rng rng(cfg.seed, 0x617567ULL, static_cast<std::uint64_t>(epoch),
                static_cast<std::uint64_t>(idx));
        augmented[b] = augment_image(*images[idx], aug, rng);
        batch_labels[b] = labels[idx];
      });
      std::vector<const ImageF*> ptrs(augmented.size());
      for (std::size_t b = 0; b < augmented.size(); ++b) ptrs[b] = &augmented[b];
      auto input = to_tensor(ptrs);
      auto logits = net_.forward_logits(input, true);
      auto [loss, grad] = nn::softmax_cross_entropy(logits, batch_labels);
      net_.backward(grad);
      sgd.step(params);
      loss_sum += static_cast<double>(loss) * static_cast<double>(end - begin);
      seen += end - begin;
    }
    return loss_sum / static_cast<double>(seen);
  }

  void save(const std::filesystem::path& base) const {
    nlohmann::ordered_json meta;
    meta["config"] = to_json(net_.config());
    nn::save_weights(net_.params(), base, meta);
  }

  static CnnSliceGrader load(const std::filesystem::path& base) {
    const auto manifest = nn::load_weights_manifest(base);
    CnnSliceGrader g(cnn_config_from_json(manifest.at("metadata").at("config")));
    nn::load_weights(g.net_.params(), base);
    return g;
  }

  SliceCnn<float>& net() { return net_; }

private:
  nn::Tensor4<float> to_tensor(const std::vector<const ImageF*>& images) const {
    const auto& cfg = net_.config();
    nn::Tensor4<float> t(static_cast<int>(images.size()), 1, cfg.rows, cfg.cols);
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i]->rows != cfg.rows || images[i]->cols != cfg.cols)
        throw InvalidArgument("slice grader: image shape mismatch");
      std::copy(images[i]->v.begin(), images[i]->v.end(), t.at(static_cast<int>(i), 0));
    }
    return t;
  }

  mutable SliceCnn<float> net_;  // eval-mode forwards write no member state
};

inline std::unique_ptr<CnnSliceGrader> build_slice_cnn(const CnnConfig& cfg) {
  return std::make_unique<CnnSliceGrader>(cfg);
}

// Trains for cfg.epochs epochs and returns the per-epoch loss trace. Every
// class of the active scheme must be present in the labels.
inline std::vector<double> train_slice_grader(CnnSliceGrader& grader,
                                              const std::vector<const ImageF*>& images,
                                              const std::vector<int>& labels,
                                              const AugmentParams& aug) {
  const int m = grader.n_classes();
  std::vector<bool> present(static_cast<std::size_t>(m), false);
  for (const int l : labels) {
    if (l < 0 || l >= m) throw InvalidArgument("train_slice_grader: label out of range");
    present[static_cast<std::size_t>(l)] = true;
  }
  for (int c = 0; c < m; ++c)
    if (!present[static_cast<std::size_t>(c)])
      throw InvalidArgument("train_slice_grader: class " + std::to_string(c) +
                            " absent from training set");
  std::vector<double> trace;
  for (int e = 0; e < grader.net().config().epochs; ++e)
    trace.push_back(grader.train_epoch(images, labels, aug, e));
  return trace;
}

}  // namespace sij
