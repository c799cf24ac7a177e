#pragma once

// Heatmap encoding/decoding and the softmax operators used by the
// distillation losses.  All functions are pure; heatmaps are rank-2 tensors
// [H,W] and stacks are rank-3 [C,H,W].

#include <cmath>
#include <stdexcept>

#include "kamp/tensor.hpp"

namespace kamp {

struct KeypointLocation {
  double x = 0.0;  // column coordinate, pixels
  double y = 0.0;  // row coordinate, pixels
  bool visible = false;
};

enum class SoftmaxAxis { height, width, full2d };

// Gaussian target heatmap on an [h,w] grid.  Coordinates are snapped to the
// nearest grid cell before evaluating the Gaussian so the peak value is
// exactly 1.0 at the encoded pixel.  Invisible keypoints encode as all-zero
// targets (they are masked out of losses downstream).
template <typename T>
TensorT<T> encode_gaussian(double x, double y, bool visible, int h, int w, double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("encode_gaussian: sigma must be > 0");
  if (h < 1 || w < 1) throw std::invalid_argument("encode_gaussian: empty grid");
  TensorT<T> out({h, w});
  if (!visible) return out;
  if (x < 0.0 || x >= static_cast<double>(w) || y < 0.0 || y >= static_cast<double>(h))
    throw std::invalid_argument("encode_gaussian: location outside grid");
  double cx = std::min(static_cast<double>(w - 1), std::floor(x + 0.5));
  double cy = std::min(static_cast<double>(h - 1), std::floor(y + 0.5));
  double inv = 1.0 / (2.0 * sigma * sigma);
  T* p = out.data();
  for (int r = 0; r < h; ++r) {
    double dy = static_cast<double>(r) - cy;
    for (int c = 0; c < w; ++c) {
      double dx = static_cast<double>(c) - cx;
      p[static_cast<size_t>(r) * w + c] = static_cast<T>(std::exp(-(dx * dx + dy * dy) * inv));
    }
  }
  return out;
}

template <typename T>
TensorT<T> encode_gaussian(const KeypointLocation& loc, int h, int w, double sigma) {
  return encode_gaussian<T>(loc.x, loc.y, loc.visible, h, w, sigma);
}

// Argmax decoding.  Ties break toward the lowest row-major index; the result
// is marked visible iff the maximum exceeds `vis_threshold`.
template <typename T>
KeypointLocation decode_argmax(const TensorT<T>& hm, double vis_threshold = 0.1) {
  if (hm.rank() != 2) throw std::invalid_argument("decode_argmax: expected [H,W] heatmap");
  const int h = hm.dim(0), w = hm.dim(1);
  const T* p = hm.data();
  size_t best = 0;
  for (size_t i = 1, n = hm.size(); i < n; ++i)
    if (p[i] > p[best]) best = i;
  KeypointLocation loc;
  loc.x = static_cast<double>(best % static_cast<size_t>(w));
  loc.y = static_cast<double>(best / static_cast<size_t>(w));
  loc.visible = static_cast<double>(p[best]) > vis_threshold;
  return loc;
}

namespace detail {

// Stable softmax over a strided slice: n entries starting at p with stride s.
// The normalizer is accumulated in double even for float slices so that the
// stored probabilities sum to 1 up to one rounding per element, independent
// of the slice length.
template <typename T>
inline void softmax_slice(const T* in, T* out, size_t n, size_t stride) {
  T mx = in[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, in[i * stride]);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(in[i * stride] - mx));
  const double inv = 1.0 / sum;
  for (size_t i = 0; i < n; ++i)
    out[i * stride] =
        static_cast<T>(std::exp(static_cast<double>(in[i * stride] - mx)) * inv);
}

}  // namespace detail

// Softmax normalization of a single [H,W] heatmap along the chosen axis:
//   height -> each column sums to 1 (normalize over rows)
//   width  -> each row sums to 1 (normalize over columns)
//   full2d -> the whole grid sums to 1
template <typename T>
TensorT<T> spatial_softmax(const TensorT<T>& hm, SoftmaxAxis axis) {
  if (hm.rank() != 2) throw std::invalid_argument("spatial_softmax: expected [H,W] heatmap");
  const int h = hm.dim(0), w = hm.dim(1);
  TensorT<T> out({h, w});
  const T* in = hm.data();
  T* o = out.data();
  switch (axis) {
    case SoftmaxAxis::height:
      for (int c = 0; c < w; ++c)
        detail::softmax_slice(in + c, o + c, static_cast<size_t>(h), static_cast<size_t>(w));
      break;
    case SoftmaxAxis::width:
      for (int r = 0; r < h; ++r)
        detail::softmax_slice(in + static_cast<size_t>(r) * w, o + static_cast<size_t>(r) * w,
                              static_cast<size_t>(w), 1);
      break;
    case SoftmaxAxis::full2d:
      detail::softmax_slice(in, o, hm.size(), 1);
      break;
  }
  return out;
}

// Softmax across channels at every pixel of a [C,H,W] stack.
template <typename T>
TensorT<T> channel_softmax(const TensorT<T>& stack) {
  if (stack.rank() != 3) throw std::invalid_argument("channel_softmax: expected [C,H,W] stack");
  const int c = stack.dim(0), h = stack.dim(1), w = stack.dim(2);
  if (c < 1) throw std::invalid_argument("channel_softmax: need at least one channel");
  TensorT<T> out({c, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t px = 0; px < plane; ++px)
    detail::softmax_slice(stack.data() + px, out.data() + px, static_cast<size_t>(c), plane);
  return out;
}

}  // namespace kamp
