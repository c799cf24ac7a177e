#pragma once

// Evaluation metrics with exact sign conventions: mean radial error (MRE),
// percentage of correct keypoints (PCK), and the transfer metrics AT / MT
// computed over the step-by-step accuracy matrix.

#include <vector>

#include "kamp/heatmap.hpp"

namespace kamp {

enum class MetricKind { pck, mre };

// Sign convention: higher-is-better metrics (PCK) keep raw deltas; for
// error metrics (MRE) improvements are negative deltas, so the sign flips.
inline double metric_sign(MetricKind kind) { return kind == MetricKind::pck ? 1.0 : -1.0; }

// Mean Euclidean distance in pixels over ground-truth-visible pairs.
double mre(const std::vector<KeypointLocation>& preds,
           const std::vector<KeypointLocation>& gts);

// 100 x fraction of ground-truth-visible pairs with ||pred-gt|| / d <= sigma
// (boundary inclusive).  d is the longest side of the sample's tight
// ground-truth keypoint bounding box.
double pck(const std::vector<KeypointLocation>& preds,
           const std::vector<KeypointLocation>& gts, double d, double sigma);

// a[i][j]: average metric over the keypoints introduced at step j, evaluated
// after step i (defined for j <= i).
struct AccuracyMatrix {
  MetricKind kind = MetricKind::pck;
  std::vector<std::vector<double>> a;
};

// AT_t = (1/t) * sum_{j=0}^{t-1} s * (a[t][j] - a[j][j]).  Requires t >= 1.
double average_transfer(const AccuracyMatrix& m, int t);

// MT_t = max over old keypoints k of s * (r_now[k] - gamma[k]), where
// gamma[k] is keypoint k's accuracy right after the step that introduced it.
double maximal_transfer(const std::vector<double>& r_now, const std::vector<double>& gamma,
                        MetricKind kind);

}  // namespace kamp
