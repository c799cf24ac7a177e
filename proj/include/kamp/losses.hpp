#pragma once

// Training objectives.
//
// Conventions shared by every loss here:
//   - activations are [N,C,H,W] (a single-channel stack is [N,1,H,W])
//   - loss values are returned as double regardless of the tensor scalar type
//   - when a gradient output pointer is given, the gradient w.r.t. the
//     student input is ACCUMULATED into it (callers zero it first), so the
//     per-channel pieces of a composite objective can be assembled in place
//   - reductions: mean over batch, sum over channels/axes/pixels, except the
//     stage-II association loss which is a plain mean over all entries

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "kamp/tensor.hpp"

namespace kamp {

struct LossBreakdown {
  double gt_term = 0.0;
  double ksd_term = 0.0;
  double ka_term = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

// total = gt + alpha * (ksd + ka)
inline LossBreakdown loss_mp(double gt_term, double ksd_term, double ka_term, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("loss_mp: alpha must be >= 0");
  LossBreakdown b;
  b.gt_term = gt_term;
  b.ksd_term = ksd_term;
  b.ka_term = ka_term;
  b.alpha = alpha;
  b.total = gt_term + alpha * (ksd_term + ka_term);
  return b;
}

namespace detail {

template <typename T>
void require_same(const TensorT<T>& a, const TensorT<T>& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

// Cross-entropy -sum(p*log q) between softmax(teacher) and softmax(student)
// over one strided slice, with the softmax-CE gradient (q - p) scaled by
// `gscale` accumulated into dstudent when non-null.
template <typename T>
double softmax_ce_slice(const T* teacher, const T* student, size_t n, size_t stride,
                        T* dstudent, double gscale) {
  double tmax = teacher[0], smax = student[0];
  for (size_t i = 1; i < n; ++i) {
    tmax = std::max(tmax, static_cast<double>(teacher[i * stride]));
    smax = std::max(smax, static_cast<double>(student[i * stride]));
  }
  double tsum = 0.0, ssum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    tsum += std::exp(static_cast<double>(teacher[i * stride]) - tmax);
    ssum += std::exp(static_cast<double>(student[i * stride]) - smax);
  }
  double log_ssum = std::log(ssum);
  double ce = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double p = std::exp(static_cast<double>(teacher[i * stride]) - tmax) / tsum;
    double logq = (static_cast<double>(student[i * stride]) - smax) - log_ssum;
    ce -= p * logq;
    if (dstudent) {
      double q = std::exp(logq);
      dstudent[i * stride] += static_cast<T>(gscale * (q - p));
    }
  }
  return ce;
}

}  // namespace detail

// L2 loss on new-keypoint heatmaps: mean over batch of the summed squared
// error on visible channels.  `visible` has N*C entries (row-major by sample).
template <typename T>
double loss_gt(const TensorT<T>& pred, const TensorT<T>& gt,
               const std::vector<uint8_t>& visible, TensorT<T>* dpred = nullptr) {
  detail::require_same(pred, gt, "loss_gt");
  if (pred.rank() != 4) throw std::invalid_argument("loss_gt: expected [N,C,H,W]");
  const int n = pred.dim(0), c = pred.dim(1);
  const size_t plane = static_cast<size_t>(pred.dim(2)) * pred.dim(3);
  if (visible.size() != static_cast<size_t>(n) * c)
    throw std::invalid_argument("loss_gt: visibility mask size mismatch");
  if (dpred) detail::require_same(pred, *dpred, "loss_gt");
  double total = 0.0;
  const double gscale = 2.0 / n;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      if (!visible[static_cast<size_t>(i) * c + ch]) continue;
      const size_t off = (static_cast<size_t>(i) * c + ch) * plane;
      const T* pp = pred.data() + off;
      const T* gp = gt.data() + off;
      double s = 0.0;
      for (size_t q = 0; q < plane; ++q) {
        double d = static_cast<double>(pp[q]) - static_cast<double>(gp[q]);
        s += d * d;
        if (dpred) (*dpred)[off + q] += static_cast<T>(gscale * d);
      }
      total += s;
    }
  }
  return total / n;
}

// Which spatial-softmax normalizations the distillation loss sums over.
// `hw` (the default) is the height + width pair; `full2d` normalizes the
// whole grid jointly and exists for the ablation arm only.
enum class KsdAxes { h, w, hw, full2d };

// Keypoint-oriented spatial distillation: per old channel, cross-entropy
// between spatially softmax-normalized teacher and student along the height
// axis (each column a distribution) plus the width axis (each row a
// distribution); summed over channels and axes, averaged over the batch.
template <typename T>
double loss_ksd(const TensorT<T>& student, const TensorT<T>& teacher,
                TensorT<T>* dstudent = nullptr, KsdAxes axes = KsdAxes::hw) {
  detail::require_same(student, teacher, "loss_ksd");
  if (student.rank() != 4) throw std::invalid_argument("loss_ksd: expected [N,C,H,W]");
  const int n = student.dim(0), c = student.dim(1), h = student.dim(2), w = student.dim(3);
  if (dstudent) detail::require_same(student, *dstudent, "loss_ksd");
  const size_t plane = static_cast<size_t>(h) * w;
  const double gscale = 1.0 / n;
  const bool use_h = axes == KsdAxes::h || axes == KsdAxes::hw;
  const bool use_w = axes == KsdAxes::w || axes == KsdAxes::hw;
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const size_t off = (static_cast<size_t>(i) * c + ch) * plane;
      const T* tp = teacher.data() + off;
      const T* sp = student.data() + off;
      T* dp = dstudent ? dstudent->data() + off : nullptr;
      if (use_h)  // height axis: one distribution per column
        for (int col = 0; col < w; ++col)
          total += detail::softmax_ce_slice(tp + col, sp + col, static_cast<size_t>(h),
                                            static_cast<size_t>(w), dp ? dp + col : nullptr,
                                            gscale);
      if (use_w)  // width axis: one distribution per row
        for (int row = 0; row < h; ++row)
          total += detail::softmax_ce_slice(tp + static_cast<size_t>(row) * w,
                                            sp + static_cast<size_t>(row) * w,
                                            static_cast<size_t>(w), 1,
                                            dp ? dp + static_cast<size_t>(row) * w : nullptr,
                                            gscale);
      if (axes == KsdAxes::full2d)
        total += detail::softmax_ce_slice(tp, sp, plane, 1, dp, gscale);
    }
  return total / n;
}

template <typename T>
double loss_ksd(const TensorT<T>& student, const TensorT<T>& teacher, KsdAxes axes) {
  return loss_ksd<T>(student, teacher, nullptr, axes);
}

// Channel-softmax distillation: per pixel, cross-entropy across
// channel-softmaxed teacher/student vectors, summed over pixels, averaged
// over the batch.
template <typename T>
double loss_kd_channel(const TensorT<T>& student, const TensorT<T>& teacher,
                       TensorT<T>* dstudent = nullptr) {
  detail::require_same(student, teacher, "loss_kd_channel");
  if (student.rank() != 4) throw std::invalid_argument("loss_kd_channel: expected [N,C,H,W]");
  const int n = student.dim(0), c = student.dim(1), h = student.dim(2), w = student.dim(3);
  if (c < 1) throw std::invalid_argument("loss_kd_channel: need at least one channel");
  if (dstudent) detail::require_same(student, *dstudent, "loss_kd_channel");
  const size_t plane = static_cast<size_t>(h) * w;
  const double gscale = 1.0 / n;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const size_t off = static_cast<size_t>(i) * c * plane;
    const T* tp = teacher.data() + off;
    const T* sp = student.data() + off;
    T* dp = dstudent ? dstudent->data() + off : nullptr;
    for (size_t px = 0; px < plane; ++px)
      total += detail::softmax_ce_slice(tp + px, sp + px, static_cast<size_t>(c), plane,
                                        dp ? dp + px : nullptr, gscale);
  }
  return total / n;
}

// Stage-II association loss: mean squared error between the student's
// heatmap for the selected old keypoint and the frozen association net's
// prediction (plain mean over every entry).
template <typename T>
double loss_ka_stage2(const TensorT<T>& student, const TensorT<T>& target,
                      TensorT<T>* dstudent = nullptr) {
  detail::require_same(student, target, "loss_ka_stage2");
  if (student.empty()) throw std::invalid_argument("loss_ka_stage2: empty input");
  if (dstudent) detail::require_same(student, *dstudent, "loss_ka_stage2");
  const size_t n = student.size();
  const double gscale = 2.0 / static_cast<double>(n);
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(student[i]) - static_cast<double>(target[i]);
    total += d * d;
    if (dstudent) (*dstudent)[i] += static_cast<T>(gscale * d);
  }
  return total / static_cast<double>(n);
}

// Sum-of-squares association loss used in Stage-I training:
// (1/N) * sum_i ||a_i - b_i||^2 over per-sample heatmaps.
template <typename T>
double loss_ka_stage1(const TensorT<T>& pred, const TensorT<T>& target,
                      TensorT<T>* dpred = nullptr) {
  detail::require_same(pred, target, "loss_ka_stage1");
  if (pred.rank() != 4) throw std::invalid_argument("loss_ka_stage1: expected [N,C,H,W]");
  const int n = pred.dim(0);
  if (dpred) detail::require_same(pred, *dpred, "loss_ka_stage1");
  const double gscale = 2.0 / n;
  double total = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += d * d;
    if (dpred) (*dpred)[i] += static_cast<T>(gscale * d);
  }
  return total / n;
}

// ---- channel-slice helpers used to assemble composite gradients ----

// Copy channels [c0, c0+count) of src [N,C,H,W] into a new [N,count,H,W].
template <typename T>
TensorT<T> slice_channels(const TensorT<T>& src, int c0, int count) {
  const int n = src.dim(0), c = src.dim(1), h = src.dim(2), w = src.dim(3);
  if (c0 < 0 || count < 0 || c0 + count > c)
    throw std::invalid_argument("slice_channels: range out of bounds");
  TensorT<T> out({n, count, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (int i = 0; i < n; ++i)
    std::copy(src.data() + (static_cast<size_t>(i) * c + c0) * plane,
              src.data() + (static_cast<size_t>(i) * c + c0 + count) * plane,
              out.data() + static_cast<size_t>(i) * count * plane);
  return out;
}

// Add src [N,count,H,W] into channels [c0, c0+count) of dst [N,C,H,W].
template <typename T>
void add_into_channels(TensorT<T>& dst, const TensorT<T>& src, int c0) {
  const int n = dst.dim(0), c = dst.dim(1), h = dst.dim(2), w = dst.dim(3);
  const int count = src.dim(1);
  if (src.dim(0) != n || src.dim(2) != h || src.dim(3) != w || c0 < 0 || c0 + count > c)
    throw std::invalid_argument("add_into_channels: shape mismatch");
  const size_t plane = static_cast<size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const T* sp = src.data() + static_cast<size_t>(i) * count * plane;
    T* dp = dst.data() + (static_cast<size_t>(i) * c + c0) * plane;
    for (size_t q = 0; q < static_cast<size_t>(count) * plane; ++q) dp[q] += sp[q];
  }
}

}  // namespace kamp
