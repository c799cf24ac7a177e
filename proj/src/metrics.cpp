#include "kamp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kamp {

namespace {

void require_paired(const std::vector<KeypointLocation>& preds,
                    const std::vector<KeypointLocation>& gts, const char* who) {
  if (preds.size() != gts.size())
    throw std::invalid_argument(std::string(who) + ": pred/gt count mismatch");
}

}  // namespace

double mre(const std::vector<KeypointLocation>& preds,
           const std::vector<KeypointLocation>& gts) {
  require_paired(preds, gts, "mre");
  double sum = 0.0;
  int n = 0;
  for (size_t i = 0; i < gts.size(); ++i) {
    if (!gts[i].visible) continue;
    double dx = preds[i].x - gts[i].x, dy = preds[i].y - gts[i].y;
    sum += std::sqrt(dx * dx + dy * dy);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mre: no visible ground-truth keypoints");
  return sum / n;
}

double pck(const std::vector<KeypointLocation>& preds,
           const std::vector<KeypointLocation>& gts, double d, double sigma) {
  require_paired(preds, gts, "pck");
  if (d <= 0.0) throw std::invalid_argument("pck: normalizer d must be > 0");
  if (sigma <= 0.0) throw std::invalid_argument("pck: sigma must be > 0");
  int correct = 0, n = 0;
  for (size_t i = 0; i < gts.size(); ++i) {
    if (!gts[i].visible) continue;
    double dx = preds[i].x - gts[i].x, dy = preds[i].y - gts[i].y;
    if (std::sqrt(dx * dx + dy * dy) / d <= sigma) ++correct;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("pck: no visible ground-truth keypoints");
  return 100.0 * correct / n;
}

double average_transfer(const AccuracyMatrix& m, int t) {
  if (t < 1) throw std::invalid_argument("average_transfer: needs at least one prior step");
  if (t >= static_cast<int>(m.a.size()))
    throw std::invalid_argument("average_transfer: step out of range");
  const double s = metric_sign(m.kind);
  double sum = 0.0;
  for (int j = 0; j < t; ++j)
    sum += s * (m.a[static_cast<size_t>(t)][static_cast<size_t>(j)] -
                m.a[static_cast<size_t>(j)][static_cast<size_t>(j)]);
  return sum / t;
}

double maximal_transfer(const std::vector<double>& r_now, const std::vector<double>& gamma,
                        MetricKind kind) {
  if (r_now.empty() || r_now.size() != gamma.size())
    throw std::invalid_argument("maximal_transfer: no old keypoints");
  const double s = metric_sign(kind);
  double best = s * (r_now[0] - gamma[0]);
  for (size_t k = 1; k < r_now.size(); ++k)
    best = std::max(best, s * (r_now[k] - gamma[k]));
  return best;
}

}  // namespace kamp
