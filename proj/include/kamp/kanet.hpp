#pragma once

// Knowledge-association network: predicts a selected old keypoint's heatmap
// from the frozen extractor's features gated by the ground-truth heatmaps of
// two related source keypoints.  Trained in Stage-I against the old model's
// pseudo-labels, then frozen; used only as a Stage-II teacher, never at test
// time.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "kamp/losses.hpp"
#include "kamp/nn.hpp"
#include "kamp/rng.hpp"
#include "kamp/tensor.hpp"

namespace kamp {

template <typename T>
class KANetT {
 public:
  KANetT() = default;

  // feature_channels: channels of the gated feature map v (input is 2x this,
  // two gated stacks concatenated); hidden: width of the two 15x15 stages.
  KANetT(int feature_channels, int hidden)
      : conv1_(2 * feature_channels, hidden, 15, 1, 7),
        bn1_(hidden),
        conv2_(hidden, hidden, 15, 1, 7),
        bn2_(hidden),
        conv3_(hidden, 1, 1, 1, 0) {}

  void init(Pcg32& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
  }

  bool is_frozen() const { return frozen_; }
  void freeze() {
    drop_caches();
    frozen_ = true;
  }

  int in_channels() const { return conv1_.in_channels(); }

  // Gate v ([N,C,H,W]) by each source's ground-truth heatmap ([N,H,W]),
  // broadcasting the heatmap over channels, and concatenate the two gated
  // stacks: output [N,2C,H,W].
  static TensorT<T> build_input(const TensorT<T>& gt1, const TensorT<T>& gt2,
                                const TensorT<T>& v) {
    if (gt1.rank() != 3 || gt2.rank() != 3 || v.rank() != 4)
      throw std::invalid_argument("kanet: expected gt [N,H,W] and features [N,C,H,W]");
    const int n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    if (gt1.dim(0) != n || gt1.dim(1) != h || gt1.dim(2) != w || !gt1.same_shape(gt2))
      throw std::invalid_argument("kanet: spatial size mismatch between heatmaps and features");
    TensorT<T> out({n, 2 * c, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
      const T* g1 = gt1.data() + static_cast<size_t>(i) * plane;
      const T* g2 = gt2.data() + static_cast<size_t>(i) * plane;
      for (int ch = 0; ch < c; ++ch) {
        const T* vp = v.data() + (static_cast<size_t>(i) * c + ch) * plane;
        T* o1 = out.data() + (static_cast<size_t>(i) * 2 * c + ch) * plane;
        T* o2 = out.data() + (static_cast<size_t>(i) * 2 * c + c + ch) * plane;
        for (size_t q = 0; q < plane; ++q) {
          o1[q] = g1[q] * vp[q];
          o2[q] = g2[q] * vp[q];
        }
      }
    }
    return out;
  }

  // input: [N, 2*C, H, W] -> predicted heatmap [N, 1, H, W].
  TensorT<T> forward(const TensorT<T>& input, bool train) {
    if (train && frozen_) throw invalid_state("kanet: frozen net cannot train");
    if (input.rank() != 4 || input.dim(1) != conv1_.in_channels())
      throw std::invalid_argument("kanet: expected [N," +
                                  std::to_string(conv1_.in_channels()) + ",H,W], got " +
                                  input.shape_str());
    TensorT<T> h = relu1_.forward(bn1_.forward(conv1_.forward(input, train), train), train);
    h = relu2_.forward(bn2_.forward(conv2_.forward(h, train), train), train);
    return conv3_.forward(h, train);
  }

  TensorT<T> backward(const TensorT<T>& dy) {
    if (frozen_) throw invalid_state("kanet: frozen net cannot backprop");
    TensorT<T> d = conv3_.backward(dy);
    d = conv2_.backward(bn2_.backward(relu2_.backward(d)));
    return conv1_.backward(bn1_.backward(relu1_.backward(d)));
  }

  void zero_grad() {
    conv1_.zero_grad();
    bn1_.zero_grad();
    conv2_.zero_grad();
    bn2_.zero_grad();
    conv3_.zero_grad();
  }
  std::vector<ParamRef<T>> params() {
    if (frozen_) throw invalid_state("kanet: frozen net has no trainable params");
    std::vector<ParamRef<T>> out;
    conv1_.collect_params(out, "kanet.conv1");
    bn1_.collect_params(out, "kanet.bn1");
    conv2_.collect_params(out, "kanet.conv2");
    bn2_.collect_params(out, "kanet.bn2");
    conv3_.collect_params(out, "kanet.conv3");
    return out;
  }
  std::vector<StateRef<T>> state() {
    std::vector<StateRef<T>> out;
    conv1_.collect_state(out, "kanet.conv1");
    bn1_.collect_state(out, "kanet.bn1");
    conv2_.collect_state(out, "kanet.conv2");
    bn2_.collect_state(out, "kanet.bn2");
    conv3_.collect_state(out, "kanet.conv3");
    return out;
  }
  void drop_caches() {
    conv1_.drop_cache();
    bn1_.drop_cache();
    conv2_.drop_cache();
    bn2_.drop_cache();
    conv3_.drop_cache();
  }

  Conv2dT<T>& conv1() { return conv1_; }

 private:
  Conv2dT<T> conv1_, conv2_, conv3_;
  BatchNorm2dT<T> bn1_, bn2_;
  ReLUT<T> relu1_, relu2_;
  bool frozen_ = false;
};

// Convenience: gate, concatenate, and run the net in one call.
template <typename T>
TensorT<T> ka_forward(KANetT<T>& net, const TensorT<T>& gt1, const TensorT<T>& gt2,
                      const TensorT<T>& v, bool train = false) {
  return net.forward(KANetT<T>::build_input(gt1, gt2, v), train);
}

struct KanetTrainOpts {
  int epochs = 20;
  int batch_size = 30;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// Stage-I: fit the net to the old model's pseudo-labels with the
// sum-of-squares association objective, then freeze it.  `input` is the
// precomputed gated stack [N,2C,H,W]; `pseudo` the targets [N,1,H,W].
// Returns the mean per-epoch training loss (index 0 = first epoch).
template <typename T>
std::vector<double> train_kanet(KANetT<T>& net, const TensorT<T>& input,
                                const TensorT<T>& pseudo, const KanetTrainOpts& opts,
                                uint64_t seed) {
  if (input.rank() != 4 || input.dim(0) == 0)
    throw std::invalid_argument("train_kanet: empty training data");
  if (pseudo.dim(0) != input.dim(0))
    throw std::invalid_argument("train_kanet: input/target count mismatch");
  const int n = input.dim(0);
  const int bs = std::min(opts.batch_size, n);
  SgdT<T> opt(net.params(), opts.lr, opts.momentum, opts.weight_decay);
  Pcg32 order_rng(derive_seed(seed, "kanet_batch_order"));
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  std::vector<double> epoch_losses;
  const size_t in_sample = input.size() / static_cast<size_t>(n);
  const size_t out_sample = pseudo.size() / static_cast<size_t>(n);
  for (int e = 0; e < opts.epochs; ++e) {
    order_rng.shuffle(idx);
    double loss_sum = 0.0;
    int batches = 0;
    for (int b0 = 0; b0 < n; b0 += bs) {
      const int bn = std::min(bs, n - b0);
      TensorT<T> xb({bn, input.dim(1), input.dim(2), input.dim(3)});
      TensorT<T> yb({bn, 1, pseudo.dim(2), pseudo.dim(3)});
      for (int i = 0; i < bn; ++i) {
        const int s = idx[static_cast<size_t>(b0 + i)];
        std::copy(input.data() + s * in_sample, input.data() + (s + 1) * in_sample,
                  xb.data() + i * in_sample);
        std::copy(pseudo.data() + s * out_sample, pseudo.data() + (s + 1) * out_sample,
                  yb.data() + i * out_sample);
      }
      opt.zero_grad();
      TensorT<T> pred = net.forward(xb, true);
      TensorT<T> dpred(pred.shape());
      loss_sum += loss_ka_stage1(pred, yb, &dpred);
      net.backward(dpred);
      opt.step();
      ++batches;
    }
    epoch_losses.push_back(loss_sum / batches);
  }
  net.freeze();
  return epoch_losses;
}

using KANet = KANetT<float>;

}  // namespace kamp
