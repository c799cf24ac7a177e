#pragma once

// The incremental keypoint estimator: a shared convolutional encoder-decoder
// feature extractor plus an append-only stack of per-step heads.  Growing the
// model copies every existing weight and appends a freshly initialized head;
// frozen snapshots are deep copies that refuse training-mode forwards.

#include <string>
#include <utility>
#include <vector>

#include "kamp/nn.hpp"
#include "kamp/rng.hpp"
#include "kamp/tensor.hpp"

namespace kamp {

struct ModelConfig {
  int img_h = 128, img_w = 128;  // input image size
  int hm_h = 32, hm_w = 32;      // heatmap / feature resolution (img / 4)
  int base_channels = 6;         // extractor width; feature channels = 4x this
  int head_hidden = 16;          // hidden width of each estimation head
  int kanet_channels = 64;       // hidden width of the association net

  int feature_channels() const { return 4 * base_channels; }

  bool operator==(const ModelConfig&) const = default;
};

// Encoder-decoder extractor: four stride-2 conv+relu blocks down to 1/16
// resolution, then two (nearest-2x upsample, conv+relu) blocks back up to the
// 1/4-resolution feature map that feeds every head.
template <typename T>
class ExtractorT {
 public:
  ExtractorT() = default;
  explicit ExtractorT(const ModelConfig& cfg) : cfg_(cfg) {
    const int c = cfg.base_channels;
    conv_ = {Conv2dT<T>(1, c, 3, 2, 1),         Conv2dT<T>(c, 2 * c, 3, 2, 1),
             Conv2dT<T>(2 * c, 4 * c, 3, 2, 1), Conv2dT<T>(4 * c, 4 * c, 3, 2, 1),
             Conv2dT<T>(4 * c, 4 * c, 3, 1, 1), Conv2dT<T>(4 * c, 4 * c, 3, 1, 1)};
    relu_.resize(conv_.size());
  }

  void init(Pcg32& rng) {
    for (auto& c : conv_) c.init(rng);
  }

  TensorT<T> forward(const TensorT<T>& x, bool train) {
    TensorT<T> h = relu_[0].forward(conv_[0].forward(x, train), train);
    h = relu_[1].forward(conv_[1].forward(h, train), train);
    h = relu_[2].forward(conv_[2].forward(h, train), train);
    h = relu_[3].forward(conv_[3].forward(h, train), train);
    h = up_[0].forward(h, train);
    h = relu_[4].forward(conv_[4].forward(h, train), train);
    h = up_[1].forward(h, train);
    h = relu_[5].forward(conv_[5].forward(h, train), train);
    return h;
  }

  TensorT<T> backward(const TensorT<T>& dfeat) {
    TensorT<T> d = conv_[5].backward(relu_[5].backward(dfeat));
    d = up_[1].backward(d);
    d = conv_[4].backward(relu_[4].backward(d));
    d = up_[0].backward(d);
    d = conv_[3].backward(relu_[3].backward(d));
    d = conv_[2].backward(relu_[2].backward(d));
    d = conv_[1].backward(relu_[1].backward(d));
    return conv_[0].backward(relu_[0].backward(d));
  }

  void zero_grad() {
    for (auto& c : conv_) c.zero_grad();
  }
  void collect_params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    for (size_t i = 0; i < conv_.size(); ++i)
      conv_[i].collect_params(out, prefix + ".conv" + std::to_string(i));
  }
  void collect_state(std::vector<StateRef<T>>& out, const std::string& prefix) {
    for (size_t i = 0; i < conv_.size(); ++i)
      conv_[i].collect_state(out, prefix + ".conv" + std::to_string(i));
  }
  void drop_caches() {
    for (auto& c : conv_) c.drop_cache();
    for (auto& r : relu_) r.drop_cache();
  }

 private:
  ModelConfig cfg_;
  std::vector<Conv2dT<T>> conv_;
  std::vector<ReLUT<T>> relu_;
  Upsample2xT<T> up_[2];
};

// Per-step estimation head: 3x3 conv + relu + 1x1 conv to |group| channels.
template <typename T>
class HeadT {
 public:
  HeadT() = default;
  HeadT(const ModelConfig& cfg, int out_channels)
      : conv1_(cfg.feature_channels(), cfg.head_hidden, 3, 1, 1),
        conv2_(cfg.head_hidden, out_channels, 1, 1, 0) {}

  void init(Pcg32& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
  }
  int out_channels() const { return conv2_.out_channels(); }

  TensorT<T> forward(const TensorT<T>& feat, bool train) {
    return conv2_.forward(relu_.forward(conv1_.forward(feat, train), train), train);
  }
  TensorT<T> backward(const TensorT<T>& dy) {
    return conv1_.backward(relu_.backward(conv2_.backward(dy)));
  }

  void zero_grad() {
    conv1_.zero_grad();
    conv2_.zero_grad();
  }
  void collect_params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    conv1_.collect_params(out, prefix + ".conv1");
    conv2_.collect_params(out, prefix + ".conv2");
  }
  void collect_state(std::vector<StateRef<T>>& out, const std::string& prefix) {
    conv1_.collect_state(out, prefix + ".conv1");
    conv2_.collect_state(out, prefix + ".conv2");
  }
  void drop_caches() {
    conv1_.drop_cache();
    conv2_.drop_cache();
    relu_.drop_cache();
  }

 private:
  Conv2dT<T> conv1_, conv2_;
  ReLUT<T> relu_;
};

template <typename T>
class IncrementalModelT {
 public:
  IncrementalModelT() = default;

  // Fresh step-0 model with one head of `group0_size` channels.
  IncrementalModelT(const ModelConfig& cfg, int group0_size, uint64_t init_seed)
      : cfg_(cfg), ext_(cfg) {
    Pcg32 rng(derive_seed(init_seed, "model_init"));
    ext_.init(rng);
    heads_.emplace_back(cfg, group0_size);
    group_sizes_.push_back(group0_size);
    Pcg32 hrng(derive_seed(init_seed, "head_init", 0));
    heads_.back().init(hrng);
  }

  const ModelConfig& config() const { return cfg_; }
  int step_index() const { return static_cast<int>(heads_.size()) - 1; }
  const std::vector<int>& group_sizes() const { return group_sizes_; }
  int total_channels() const {
    int s = 0;
    for (int g : group_sizes_) s += g;
    return s;
  }
  // First output channel of step t's head in the concatenated stack.
  int channel_offset(int step) const {
    int s = 0;
    for (int i = 0; i < step; ++i) s += group_sizes_[i];
    return s;
  }
  bool is_frozen() const { return frozen_; }

  // Returns (features at heatmap resolution, concatenated head outputs).
  std::pair<TensorT<T>, TensorT<T>> forward(const TensorT<T>& images, bool train) {
    if (train && frozen_) throw invalid_state("model: frozen snapshot cannot train");
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != cfg_.img_h ||
        images.dim(3) != cfg_.img_w)
      throw std::invalid_argument("model: expected images [N,1," + std::to_string(cfg_.img_h) +
                                  "," + std::to_string(cfg_.img_w) + "], got " +
                                  images.shape_str());
    TensorT<T> feat = ext_.forward(images, train);
    const int n = images.dim(0);
    TensorT<T> maps({n, total_channels(), cfg_.hm_h, cfg_.hm_w});
    int c0 = 0;
    for (size_t h = 0; h < heads_.size(); ++h) {
      TensorT<T> y = heads_[h].forward(feat, train);
      const size_t plane = static_cast<size_t>(cfg_.hm_h) * cfg_.hm_w;
      const int gc = group_sizes_[h];
      for (int i = 0; i < n; ++i)
        std::copy(y.data() + static_cast<size_t>(i) * gc * plane,
                  y.data() + static_cast<size_t>(i + 1) * gc * plane,
                  maps.data() + (static_cast<size_t>(i) * total_channels() + c0) * plane);
      c0 += gc;
    }
    return {std::move(feat), std::move(maps)};
  }

  // Accumulate gradients from d(concatenated heatmaps).  The feature map has
  // no direct loss consumers, so only head gradients flow into the extractor.
  void backward(const TensorT<T>& dmaps) {
    if (frozen_) throw invalid_state("model: frozen snapshot cannot backprop");
    const int n = dmaps.dim(0);
    const size_t plane = static_cast<size_t>(cfg_.hm_h) * cfg_.hm_w;
    TensorT<T> dfeat({n, cfg_.feature_channels(), cfg_.hm_h, cfg_.hm_w});
    int c0 = 0;
    for (size_t h = 0; h < heads_.size(); ++h) {
      const int gc = group_sizes_[h];
      TensorT<T> dy({n, gc, cfg_.hm_h, cfg_.hm_w});
      for (int i = 0; i < n; ++i)
        std::copy(dmaps.data() + (static_cast<size_t>(i) * total_channels() + c0) * plane,
                  dmaps.data() + (static_cast<size_t>(i) * total_channels() + c0 + gc) * plane,
                  dy.data() + static_cast<size_t>(i) * gc * plane);
      dfeat.add_(heads_[h].backward(dy));
      c0 += gc;
    }
    ext_.backward(dfeat);
  }

  // Deep copy with one extra freshly initialized head.
  IncrementalModelT grow(int new_group_size, uint64_t init_seed) const {
    if (new_group_size < 1) throw std::invalid_argument("model: new group must be >= 1");
    IncrementalModelT m = *this;
    m.frozen_ = false;
    m.drop_caches();
    m.heads_.emplace_back(cfg_, new_group_size);
    m.group_sizes_.push_back(new_group_size);
    Pcg32 hrng(derive_seed(init_seed, "head_init", m.heads_.size() - 1));
    m.heads_.back().init(hrng);
    return m;
  }

  // Deep immutable copy for inference only.
  IncrementalModelT snapshot_frozen() const {
    IncrementalModelT m = *this;
    m.drop_caches();
    m.frozen_ = true;
    return m;
  }

  void zero_grad() {
    ext_.zero_grad();
    for (auto& h : heads_) h.zero_grad();
  }
  std::vector<ParamRef<T>> params() {
    if (frozen_) throw invalid_state("model: frozen snapshot has no trainable params");
    std::vector<ParamRef<T>> out;
    ext_.collect_params(out, "extractor");
    for (size_t i = 0; i < heads_.size(); ++i)
      heads_[i].collect_params(out, "head" + std::to_string(i));
    return out;
  }
  std::vector<StateRef<T>> state() {
    std::vector<StateRef<T>> out;
    ext_.collect_state(out, "extractor");
    for (size_t i = 0; i < heads_.size(); ++i)
      heads_[i].collect_state(out, "head" + std::to_string(i));
    return out;
  }
  void drop_caches() {
    ext_.drop_caches();
    for (auto& h : heads_) h.drop_caches();
  }

  // Construction hook for checkpoint loading: an uninitialized model with the
  // right topology whose state() arrays are then overwritten.
  static IncrementalModelT with_topology(const ModelConfig& cfg,
                                         const std::vector<int>& group_sizes) {
    if (group_sizes.empty()) throw std::invalid_argument("model: no head groups");
    IncrementalModelT m;
    m.cfg_ = cfg;
    m.ext_ = ExtractorT<T>(cfg);
    for (int g : group_sizes) {
      m.heads_.emplace_back(cfg, g);
      m.group_sizes_.push_back(g);
    }
    return m;
  }

 private:
  ModelConfig cfg_;
  ExtractorT<T> ext_;
  std::vector<HeadT<T>> heads_;
  std::vector<int> group_sizes_;
  bool frozen_ = false;
};

using IncrementalModel = IncrementalModelT<float>;

}  // namespace kamp
