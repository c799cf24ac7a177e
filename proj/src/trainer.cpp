#include "kamp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <utility>

#include "kamp/checkpoint.hpp"
#include "kamp/heatmap.hpp"
#include "kamp/nn.hpp"
#include "kamp/rng.hpp"

namespace kamp {

using nlohmann::json;

// ============================ configuration =============================

std::string to_string(Method m) {
  switch (m) {
    case Method::kamp: return "kamp";
    case Method::kamp_ksd_only: return "kamp_ksd_only";
    case Method::kamp_random_kanet: return "kamp_random_kanet";
    case Method::lwf: return "lwf";
    case Method::finetune: return "finetune";
    case Method::joint: return "joint";
  }
  throw std::invalid_argument("to_string: bad method");
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kamp, Method::kamp_ksd_only, Method::kamp_random_kanet,
                   Method::lwf, Method::finetune, Method::joint})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

namespace {

std::string axes_name(KsdAxes a) {
  switch (a) {
    case KsdAxes::h: return "h";
    case KsdAxes::w: return "w";
    case KsdAxes::hw: return "hw";
    case KsdAxes::full2d: return "full2d";
  }
  throw std::invalid_argument("bad ksd axes");
}

KsdAxes axes_from_name(const std::string& s) {
  for (KsdAxes a : {KsdAxes::h, KsdAxes::w, KsdAxes::hw, KsdAxes::full2d})
    if (axes_name(a) == s) return a;
  throw std::invalid_argument("unknown ksd axes '" + s + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (alpha < 0) throw std::invalid_argument("config: alpha must be >= 0");
  if (epochs_total < 1) throw std::invalid_argument("config: epochs_total must be >= 1");
  if (epochs_stage1 < 0 || epochs_stage1 >= epochs_total)
    throw std::invalid_argument("config: need 0 <= epochs_stage1 < epochs_total");
  if (lr <= 0 || stage1_lr <= 0) throw std::invalid_argument("config: lr must be > 0");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("config: momentum must be in [0,1)");
  if (weight_decay < 0) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (lr_drop_factor <= 0 || lr_drop_factor > 1)
    throw std::invalid_argument("config: lr_drop_factor must be in (0,1]");
  if (lr_drop_at <= 0 || lr_drop_at > 1)
    throw std::invalid_argument("config: lr_drop_at must be in (0,1]");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (gt_sigma <= 0) throw std::invalid_argument("config: gt_sigma must be > 0");
  if (pck_sigma <= 0) throw std::invalid_argument("config: pck_sigma must be > 0");
  if (ka_stage2_loss != "l2" && ka_stage2_loss != "spatial_ce")
    throw std::invalid_argument("config: ka_stage2_loss must be l2 or spatial_ce");
}

json run_config_json(const RunConfig& cfg) {
  return json{{"method", to_string(cfg.method)},
              {"alpha", cfg.alpha},
              {"epochs_total", cfg.epochs_total},
              {"epochs_stage1", cfg.epochs_stage1},
              {"lr", cfg.lr},
              {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},
              {"lr_drop_factor", cfg.lr_drop_factor},
              {"lr_drop_at", cfg.lr_drop_at},
              {"batch_size", cfg.batch_size},
              {"stage1_lr", cfg.stage1_lr},
              {"gt_sigma", cfg.gt_sigma},
              {"pck_sigma", cfg.pck_sigma},
              {"task_mode",
               cfg.task_mode == TaskMode::deterministic ? "deterministic" : "random"},
              {"ka_stage2_loss", cfg.ka_stage2_loss},
              {"ksd_axes", axes_name(cfg.ksd_axes)},
              {"model", model_config_json(cfg.model)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  cfg.method = method_from_string(j.at("method"));
  cfg.alpha = j.at("alpha");
  cfg.epochs_total = j.at("epochs_total");
  cfg.epochs_stage1 = j.at("epochs_stage1");
  cfg.lr = j.at("lr");
  cfg.momentum = j.at("momentum");
  cfg.weight_decay = j.at("weight_decay");
  cfg.lr_drop_factor = j.at("lr_drop_factor");
  cfg.lr_drop_at = j.at("lr_drop_at");
  cfg.batch_size = j.at("batch_size");
  cfg.stage1_lr = j.at("stage1_lr");
  cfg.gt_sigma = j.at("gt_sigma");
  cfg.pck_sigma = j.at("pck_sigma");
  cfg.task_mode = j.at("task_mode") == "deterministic" ? TaskMode::deterministic
                                                       : TaskMode::random_tuple;
  cfg.ka_stage2_loss = j.at("ka_stage2_loss");
  cfg.ksd_axes = axes_from_name(j.at("ksd_axes"));
  cfg.model = model_config_from_json(j.at("model"));
  cfg.validate();
  return cfg;
}

json ProtocolState::to_json() const {
  return json{{"acc_pck", acc_pck},
              {"acc_mre", acc_mre},
              {"gamma_pck", gamma_pck},
              {"gamma_mre", gamma_mre}};
}

ProtocolState ProtocolState::from_json(const json& j) {
  ProtocolState s;
  s.acc_pck = j.at("acc_pck").get<std::vector<std::vector<double>>>();
  s.acc_mre = j.at("acc_mre").get<std::vector<std::vector<double>>>();
  s.gamma_pck = j.at("gamma_pck").get<std::vector<double>>();
  s.gamma_mre = j.at("gamma_mre").get<std::vector<double>>();
  return s;
}

// ============================ shared helpers ============================

namespace {

bool needs_stage1(Method m) {
  return m == Method::kamp || m == Method::kamp_random_kanet;
}

// Distillation weight actually applied: finetune is the alpha = 0 limit.
double effective_alpha(const RunConfig& cfg) {
  return cfg.method == Method::finetune ? 0.0 : cfg.alpha;
}

// Gather rows order[b0 .. b0+bn) of a [N,...] tensor into a [bn,...] tensor.
Tensor gather_rows(const Tensor& src, const std::vector<int>& order, int b0, int bn) {
  std::vector<int> shape;
  shape.push_back(bn);
  for (int d = 1; d < src.rank(); ++d) shape.push_back(src.dim(d));
  Tensor out(std::move(shape));
  const size_t row = src.size() / static_cast<size_t>(src.dim(0));
  for (int i = 0; i < bn; ++i) {
    const size_t s = static_cast<size_t>(order[static_cast<size_t>(b0 + i)]);
    std::copy(src.data() + s * row, src.data() + (s + 1) * row,
              out.data() + static_cast<size_t>(i) * row);
  }
  return out;
}

std::vector<uint8_t> gather_vis(const std::vector<uint8_t>& vis, int per_sample,
                                const std::vector<int>& order, int b0, int bn) {
  std::vector<uint8_t> out(static_cast<size_t>(bn) * per_sample);
  for (int i = 0; i < bn; ++i) {
    const size_t s = static_cast<size_t>(order[static_cast<size_t>(b0 + i)]) *
                     static_cast<size_t>(per_sample);
    std::copy(vis.begin() + static_cast<std::ptrdiff_t>(s),
              vis.begin() + static_cast<std::ptrdiff_t>(s + per_sample),
              out.begin() + static_cast<std::ptrdiff_t>(i) * per_sample);
  }
  return out;
}

// Ground-truth heatmap stack [N,|kps|,hm_h,hm_w] plus per-channel visibility,
// from a split's image-space labels (scaled onto the heatmap grid).
struct HeatmapTargets {
  Tensor maps;
  std::vector<uint8_t> vis;
};

int position_of(const Split& split, int kp) {
  for (size_t i = 0; i < split.labeled_kps.size(); ++i)
    if (split.labeled_kps[i] == kp) return static_cast<int>(i);
  throw std::invalid_argument("split does not label keypoint " + std::to_string(kp));
}

HeatmapTargets build_targets(const Split& split, const std::vector<int>& kps,
                             const ModelConfig& mc, double sigma) {
  const int n = split.count();
  const int k = static_cast<int>(kps.size());
  const double sx = static_cast<double>(mc.hm_w) / mc.img_w;
  const double sy = static_cast<double>(mc.hm_h) / mc.img_h;
  HeatmapTargets t{Tensor({n, k, mc.hm_h, mc.hm_w}),
                   std::vector<uint8_t>(static_cast<size_t>(n) * k, 0)};
  std::vector<int> pos;
  for (int kp : kps) pos.push_back(position_of(split, kp));
  const size_t plane = static_cast<size_t>(mc.hm_h) * mc.hm_w;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      const KeypointLocation& loc = split.locations[static_cast<size_t>(i)]
                                                   [static_cast<size_t>(pos[c])];
      if (!loc.visible) continue;
      Tensor hm = encode_gaussian<float>(loc.x * sx, loc.y * sy, true, mc.hm_h, mc.hm_w,
                                         sigma);
      std::copy(hm.data(), hm.data() + plane,
                t.maps.data() + (static_cast<size_t>(i) * k + c) * plane);
      t.vis[static_cast<size_t>(i) * k + c] = 1;
    }
  return t;
}

// Batched evaluation-mode forward over a whole image stack.
std::pair<Tensor, Tensor> forward_all(IncrementalModel& model, const Tensor& images,
                                      int batch) {
  const ModelConfig& mc = model.config();
  const int n = images.dim(0);
  Tensor feats({n, mc.feature_channels(), mc.hm_h, mc.hm_w});
  Tensor maps({n, model.total_channels(), mc.hm_h, mc.hm_w});
  const size_t frow = feats.size() / static_cast<size_t>(n);
  const size_t mrow = maps.size() / static_cast<size_t>(n);
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  for (int b0 = 0; b0 < n; b0 += batch) {
    const int bn = std::min(batch, n - b0);
    Tensor xb = gather_rows(images, order, b0, bn);
    auto [fb, mb] = model.forward(xb, false);
    std::copy(fb.data(), fb.data() + fb.size(), feats.data() + static_cast<size_t>(b0) * frow);
    std::copy(mb.data(), mb.data() + mb.size(), maps.data() + static_cast<size_t>(b0) * mrow);
  }
  return {std::move(feats), std::move(maps)};
}

// Longest side of the tight bounding box over a sample's visible labels, in
// image pixels; 0 when fewer than one visible keypoint.
double bbox_longest_side(const std::vector<KeypointLocation>& locs) {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  bool any = false;
  for (const auto& l : locs) {
    if (!l.visible) continue;
    if (!any) {
      x0 = x1 = l.x;
      y0 = y1 = l.y;
      any = true;
    } else {
      x0 = std::min(x0, l.x);
      x1 = std::max(x1, l.x);
      y0 = std::min(y0, l.y);
      y1 = std::max(y1, l.y);
    }
  }
  if (!any) return 0.0;
  return std::max(x1 - x0, y1 - y0);
}

// Decode one channel of a [N,C,h,w] stack to an image-space location.
KeypointLocation decode_channel(const Tensor& maps, int sample, int channel,
                                const ModelConfig& mc) {
  const size_t plane = static_cast<size_t>(mc.hm_h) * mc.hm_w;
  Tensor hm({mc.hm_h, mc.hm_w});
  const float* src = maps.data() +
                     (static_cast<size_t>(sample) * maps.dim(1) + channel) * plane;
  std::copy(src, src + plane, hm.data());
  KeypointLocation loc = decode_argmax(hm);
  loc.x *= static_cast<double>(mc.img_w) / mc.hm_w;
  loc.y *= static_cast<double>(mc.img_h) / mc.hm_h;
  return loc;
}

// Accuracy of one channel of a heatmap stack against a test-split keypoint:
// (pck %, mre pixels, visible count).
struct ChannelAccuracy {
  double pck = 0, mre = 0;
  int visible = 0, correct = 0;
  double dist_sum = 0;
};

ChannelAccuracy channel_accuracy(const Tensor& maps, int channel, const Split& test,
                                 int kp, const std::vector<double>& sample_d,
                                 const RunConfig& cfg) {
  ChannelAccuracy acc;
  const int pos = position_of(test, kp);
  const int n = test.count();
  for (int i = 0; i < n; ++i) {
    const KeypointLocation& gt = test.locations[static_cast<size_t>(i)]
                                               [static_cast<size_t>(pos)];
    if (!gt.visible || sample_d[static_cast<size_t>(i)] <= 0) continue;
    KeypointLocation pred = decode_channel(maps, i, channel, cfg.model);
    const double dist = std::hypot(pred.x - gt.x, pred.y - gt.y);
    ++acc.visible;
    acc.dist_sum += dist;
    if (dist / sample_d[static_cast<size_t>(i)] <= cfg.pck_sigma) ++acc.correct;
  }
  if (acc.visible > 0) {
    acc.pck = 100.0 * acc.correct / acc.visible;
    acc.mre = acc.dist_sum / acc.visible;
  }
  return acc;
}

std::vector<double> test_sample_scales(const Split& test) {
  std::vector<double> d(static_cast<size_t>(test.count()));
  for (int i = 0; i < test.count(); ++i)
    d[static_cast<size_t>(i)] = bbox_longest_side(test.locations[static_cast<size_t>(i)]);
  return d;
}

std::string kp_tag(int kp) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "kp%02d", kp);
  return buf;
}

}  // namespace

// =========================== evaluate_model =============================

EvalOutcome evaluate_model(IncrementalModel& model, const DatasetBundle& bundle,
                           const std::vector<int>& learned, const RunConfig& cfg) {
  const Split& test = bundle.test();
  if (static_cast<int>(learned.size()) != model.total_channels())
    throw std::invalid_argument("evaluate_model: channel/keypoint count mismatch");
  auto [feats, maps] = forward_all(model, test.images, cfg.batch_size);
  std::vector<double> d = test_sample_scales(test);

  EvalOutcome out;
  out.keypoints = learned;
  double pooled_correct = 0, pooled_dist = 0;
  int pooled_visible = 0;
  for (size_t c = 0; c < learned.size(); ++c) {
    ChannelAccuracy acc =
        channel_accuracy(maps, static_cast<int>(c), test, learned[c], d, cfg);
    out.kp_pck.push_back(acc.pck);
    out.kp_mre.push_back(acc.mre);
    out.kp_visible.push_back(acc.visible);
    pooled_correct += acc.correct;
    pooled_dist += acc.dist_sum;
    pooled_visible += acc.visible;
  }
  if (pooled_visible > 0) {
    out.aaa = 100.0 * pooled_correct / pooled_visible;
    out.a_mre = pooled_dist / pooled_visible;
  }
  return out;
}

// ============================ ProtocolDriver ============================

ProtocolDriver::ProtocolDriver(DatasetBundle& bundle, const RunConfig& cfg, uint64_t seed,
                               RecordEmit emit)
    : bundle_(bundle), cfg_(cfg), seed_(seed), emit_(std::move(emit)) {
  cfg_.validate();
}

void ProtocolDriver::emit(json&& row) {
  if (!emit_) return;
  row["method"] = to_string(cfg_.method);
  row["seed"] = seed_;
  emit_(std::move(row));
}

std::vector<int> ProtocolDriver::learned_through(int t) const {
  std::vector<int> out;
  for (int j = 0; j <= t; ++j) {
    const auto& g = bundle_.schedule().groups.at(static_cast<size_t>(j));
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

IncrementalModel ProtocolDriver::train_step0() {
  const auto& group0 = bundle_.schedule().groups.at(0);
  const Split& data = bundle_.train(0);
  IncrementalModel model(cfg_.model, static_cast<int>(group0.size()), seed_);
  HeatmapTargets tgt = build_targets(data, group0, cfg_.model, cfg_.gt_sigma);

  const int n = data.count();
  const int epochs = cfg_.epochs_total;
  const int drop_epoch = static_cast<int>(std::floor(cfg_.lr_drop_at * epochs));
  SgdT<float> opt(model.params(), cfg_.lr, cfg_.momentum, cfg_.weight_decay);
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  const int k = static_cast<int>(group0.size());

  for (int e = 0; e < epochs; ++e) {
    opt.set_lr(e >= drop_epoch ? cfg_.lr * cfg_.lr_drop_factor : cfg_.lr);
    Pcg32 rng(derive_seed(seed_, "batch_order", 0, static_cast<uint64_t>(e)));
    rng.shuffle(order);
    int b = 0;
    for (int b0 = 0; b0 < n; b0 += cfg_.batch_size, ++b) {
      const int bn = std::min(cfg_.batch_size, n - b0);
      Tensor xb = gather_rows(data.images, order, b0, bn);
      Tensor yb = gather_rows(tgt.maps, order, b0, bn);
      std::vector<uint8_t> vb = gather_vis(tgt.vis, k, order, b0, bn);
      opt.zero_grad();
      auto [feat, maps] = model.forward(xb, true);
      Tensor dm(maps.shape());
      double lgt = loss_gt(maps, yb, vb, &dm);
      model.backward(dm);
      opt.step();
      emit(json{{"record", "loss"},
                {"phase", "step0"},
                {"step", 0},
                {"epoch", e},
                {"batch", b},
                {"gt", lgt},
                {"ksd", 0.0},
                {"ka", 0.0},
                {"alpha", 0.0},
                {"total", lgt}});
    }
  }
  model.drop_caches();
  return model;
}

StepArtifacts ProtocolDriver::train_incremental(IncrementalModel& model, int t) {
  if (cfg_.method == Method::joint)
    throw std::invalid_argument("train_incremental: joint is not an incremental method");
  if (t < 1 || t >= num_steps())
    throw std::invalid_argument("train_incremental: step out of range");
  if (model.step_index() != t - 1)
    throw std::invalid_argument("train_incremental: model is not at step " +
                                std::to_string(t - 1));

  const Split& data = bundle_.train(t);
  const auto& group = bundle_.schedule().groups.at(static_cast<size_t>(t));
  const std::vector<int> old_ids = learned_through(t - 1);

  // Exemplar-free label contract: this split must not label old keypoints.
  for (int kp : data.labeled_kps)
    if (std::find(old_ids.begin(), old_ids.end(), kp) != old_ids.end())
      throw invalid_state("train_incremental: old-keypoint labels present in step " +
                          std::to_string(t) + " data (label leakage)");

  const double alpha = effective_alpha(cfg_);
  const int c_old = model.total_channels();
  const int c_new = static_cast<int>(group.size());
  const int n = data.count();
  const size_t plane = static_cast<size_t>(cfg_.model.hm_h) * cfg_.model.hm_w;

  HeatmapTargets tgt = build_targets(data, group, cfg_.model, cfg_.gt_sigma);

  // Frozen predecessor: distillation teacher, pseudo-labeler, and feature
  // source for the association net.
  IncrementalModel teacher = model.snapshot_frozen();
  const bool need_teacher = alpha > 0.0 || needs_stage1(cfg_.method);
  Tensor v, teacher_maps;
  if (need_teacher) {
    auto cached = forward_all(teacher, data.images, cfg_.batch_size);
    v = std::move(cached.first);
    teacher_maps = std::move(cached.second);
  }

  StepArtifacts artifacts;
  Tensor ka_targets;
  int target_channel = -1;

  if (needs_stage1(cfg_.method)) {
    // -------- Auxiliary task over canonical anatomy (or anatomy-blind). ----
    KATaskSpec task;
    const uint64_t task_seed = derive_seed(seed_, "task", static_cast<uint64_t>(t));
    if (cfg_.method == Method::kamp_random_kanet) {
      task = uniform_task(old_ids, group, task_seed);
    } else {
      task = create_task(bundle_.graph(), old_ids, group, cfg_.task_mode, task_seed);
    }
    artifacts.task = task;
    emit(json{{"record", "task"},
              {"step", t},
              {"target", task.target_old},
              {"sources", task.sources},
              {"source_is_new", task.source_is_new},
              {"mode", task.mode}});

    target_channel = static_cast<int>(
        std::find(old_ids.begin(), old_ids.end(), task.target_old) - old_ids.begin());

    // Source heatmaps: ground truth for new keypoints; the old model's
    // pseudo-heatmap for an old source under the degenerate rule.
    auto source_stack = [&](int which) {
      Tensor s({n, cfg_.model.hm_h, cfg_.model.hm_w});
      if (task.source_is_new[static_cast<size_t>(which)]) {
        const int c = static_cast<int>(
            std::find(group.begin(), group.end(), task.sources[static_cast<size_t>(which)]) -
            group.begin());
        for (int i = 0; i < n; ++i)
          std::copy(tgt.maps.data() + (static_cast<size_t>(i) * c_new + c) * plane,
                    tgt.maps.data() + (static_cast<size_t>(i) * c_new + c + 1) * plane,
                    s.data() + static_cast<size_t>(i) * plane);
      } else {
        const int c = static_cast<int>(
            std::find(old_ids.begin(), old_ids.end(),
                      task.sources[static_cast<size_t>(which)]) -
            old_ids.begin());
        for (int i = 0; i < n; ++i)
          std::copy(teacher_maps.data() + (static_cast<size_t>(i) * c_old + c) * plane,
                    teacher_maps.data() + (static_cast<size_t>(i) * c_old + c + 1) * plane,
                    s.data() + static_cast<size_t>(i) * plane);
      }
      return s;
    };
    Tensor src1 = source_stack(0);
    Tensor src2 = source_stack(1);

    Tensor pseudo({n, 1, cfg_.model.hm_h, cfg_.model.hm_w});
    for (int i = 0; i < n; ++i)
      std::copy(
          teacher_maps.data() + (static_cast<size_t>(i) * c_old + target_channel) * plane,
          teacher_maps.data() + (static_cast<size_t>(i) * c_old + target_channel + 1) * plane,
          pseudo.data() + static_cast<size_t>(i) * plane);

    // -------- Stage-I: fit and freeze the association net. ----------------
    KANet net(cfg_.model.feature_channels(), cfg_.model.kanet_channels);
    Pcg32 kinit(derive_seed(seed_, "kanet_init", static_cast<uint64_t>(t)));
    net.init(kinit);
    Tensor ka_input = KANet::build_input(src1, src2, v);
    KanetTrainOpts kopts;
    kopts.epochs = cfg_.epochs_stage1;
    kopts.batch_size = cfg_.batch_size;
    kopts.lr = cfg_.stage1_lr;
    kopts.momentum = cfg_.momentum;
    kopts.weight_decay = cfg_.weight_decay;
    std::vector<double> stage1 = train_kanet(
        net, ka_input, pseudo, kopts, derive_seed(seed_, "kanet_train", static_cast<uint64_t>(t)));
    for (size_t e = 0; e < stage1.size(); ++e)
      emit(json{{"record", "loss"},
                {"phase", "stage1"},
                {"step", t},
                {"epoch", static_cast<int>(e)},
                {"gt", 0.0},
                {"ksd", 0.0},
                {"ka", stage1[e]},
                {"alpha", 0.0},
                {"total", stage1[e]}});

    // Stage-II auxiliary teacher targets, cached once.
    ka_targets = net.forward(ka_input, false);

    // Held-out comparison: the association net against the old model on the
    // selected keypoint (evaluation uses the shared test split).
    {
      const Split& test = bundle_.test();
      auto [v_test, tmaps_test] = forward_all(teacher, test.images, cfg_.batch_size);
      HeatmapTargets test_tgt =
          build_targets(test, {task.sources[0], task.sources[1]}, cfg_.model, cfg_.gt_sigma);
      auto test_source = [&](int which) {
        Tensor s({test.count(), cfg_.model.hm_h, cfg_.model.hm_w});
        if (task.source_is_new[static_cast<size_t>(which)]) {
          for (int i = 0; i < test.count(); ++i)
            std::copy(test_tgt.maps.data() + (static_cast<size_t>(i) * 2 + which) * plane,
                      test_tgt.maps.data() + (static_cast<size_t>(i) * 2 + which + 1) * plane,
                      s.data() + static_cast<size_t>(i) * plane);
        } else {
          const int c = static_cast<int>(
              std::find(old_ids.begin(), old_ids.end(),
                        task.sources[static_cast<size_t>(which)]) -
              old_ids.begin());
          for (int i = 0; i < test.count(); ++i)
            std::copy(tmaps_test.data() + (static_cast<size_t>(i) * c_old + c) * plane,
                      tmaps_test.data() + (static_cast<size_t>(i) * c_old + c + 1) * plane,
                      s.data() + static_cast<size_t>(i) * plane);
        }
        return s;
      };
      Tensor ka_out = ka_forward(net, test_source(0), test_source(1), v_test);
      std::vector<double> d = test_sample_scales(test);
      ChannelAccuracy ka_acc = channel_accuracy(ka_out, 0, test, task.target_old, d, cfg_);
      ChannelAccuracy old_acc =
          channel_accuracy(tmaps_test, target_channel, test, task.target_old, d, cfg_);
      emit(json{{"record", "metric"},
                {"step", t},
                {"name", "kanet_pck"},
                {"value", ka_acc.pck}});
      emit(json{{"record", "metric"},
                {"step", t},
                {"name", "oldmodel_pck"},
                {"value", old_acc.pck}});
    }

    artifacts.kanet = std::move(net);
  }

  // ---------------- grow, then Stage-II mutual promotion. -----------------
  model = model.grow(c_new, seed_);

  const int epochs = cfg_.epochs_total - cfg_.epochs_stage1;
  const int drop_epoch = static_cast<int>(std::floor(cfg_.lr_drop_at * epochs));
  SgdT<float> opt(model.params(), cfg_.lr, cfg_.momentum, cfg_.weight_decay);
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  const bool use_ka = alpha > 0.0 && artifacts.kanet.has_value();
  const bool lwf_kd = cfg_.method == Method::lwf;

  for (int e = 0; e < epochs; ++e) {
    opt.set_lr(e >= drop_epoch ? cfg_.lr * cfg_.lr_drop_factor : cfg_.lr);
    Pcg32 rng(derive_seed(seed_, "batch_order", static_cast<uint64_t>(t),
                          static_cast<uint64_t>(e)));
    rng.shuffle(order);
    int b = 0;
    for (int b0 = 0; b0 < n; b0 += cfg_.batch_size, ++b) {
      const int bn = std::min(cfg_.batch_size, n - b0);
      Tensor xb = gather_rows(data.images, order, b0, bn);
      Tensor yb = gather_rows(tgt.maps, order, b0, bn);
      std::vector<uint8_t> vb = gather_vis(tgt.vis, c_new, order, b0, bn);

      opt.zero_grad();
      auto [feat, maps] = model.forward(xb, true);
      Tensor dm(maps.shape());

      Tensor student_new = slice_channels(maps, c_old, c_new);
      Tensor dnew(student_new.shape());
      const double lgt = loss_gt(student_new, yb, vb, &dnew);
      add_into_channels(dm, dnew, c_old);

      double lksd = 0.0, lka = 0.0;
      if (alpha > 0.0) {
        Tensor student_old = slice_channels(maps, 0, c_old);
        Tensor told = gather_rows(teacher_maps, order, b0, bn);
        Tensor dold(student_old.shape());
        lksd = lwf_kd ? loss_kd_channel(student_old, told, &dold)
                      : loss_ksd(student_old, told, &dold, cfg_.ksd_axes);
        dold.scale_(static_cast<float>(alpha));
        add_into_channels(dm, dold, 0);

        if (use_ka) {
          Tensor student_t = slice_channels(maps, target_channel, 1);
          Tensor kab = gather_rows(ka_targets, order, b0, bn);
          Tensor dka(student_t.shape());
          lka = cfg_.ka_stage2_loss == "l2"
                    ? loss_ka_stage2(student_t, kab, &dka)
                    : loss_ksd(student_t, kab, &dka, cfg_.ksd_axes);
          dka.scale_(static_cast<float>(alpha));
          add_into_channels(dm, dka, target_channel);
        }
      }

      model.backward(dm);
      opt.step();

      LossBreakdown lb = loss_mp(lgt, lksd, lka, alpha);
      emit(json{{"record", "loss"},
                {"phase", "stage2"},
                {"step", t},
                {"epoch", e},
                {"batch", b},
                {"gt", lb.gt_term},
                {"ksd", lb.ksd_term},
                {"ka", lb.ka_term},
                {"alpha", lb.alpha},
                {"total", lb.total}});
    }
  }
  model.drop_caches();
  return artifacts;
}

EvalOutcome ProtocolDriver::evaluate_step(IncrementalModel& model, int t) {
  const std::vector<int> learned = learned_through(t);
  EvalOutcome out = evaluate_model(model, bundle_, learned, cfg_);

  for (size_t c = 0; c < learned.size(); ++c) {
    emit(json{{"record", "metric"},
              {"step", t},
              {"name", "pck_" + kp_tag(learned[c])},
              {"value", out.kp_pck[c]}});
    emit(json{{"record", "metric"},
              {"step", t},
              {"name", "mre_" + kp_tag(learned[c])},
              {"value", out.kp_mre[c]}});
  }
  emit(json{{"record", "metric"}, {"step", t}, {"name", "aaa"}, {"value", out.aaa}});
  emit(json{{"record", "metric"}, {"step", t}, {"name", "a_mre"}, {"value", out.a_mre}});

  // Group-level accuracy row a[t][j] for j <= t (visibility-weighted pooling
  // inside each group).
  std::vector<double> row_pck, row_mre;
  size_t c0 = 0;
  for (int j = 0; j <= t; ++j) {
    const size_t gsz = bundle_.schedule().groups.at(static_cast<size_t>(j)).size();
    double wsum = 0, psum = 0, msum = 0;
    for (size_t c = c0; c < c0 + gsz; ++c) {
      const double w = out.kp_visible[c];
      wsum += w;
      psum += w * out.kp_pck[c];
      msum += w * out.kp_mre[c];
    }
    row_pck.push_back(wsum > 0 ? psum / wsum : 0.0);
    row_mre.push_back(wsum > 0 ? msum / wsum : 0.0);
    c0 += gsz;
  }
  if (static_cast<int>(state_.acc_pck.size()) != t)
    throw invalid_state("evaluate_step: accuracy history is not at step " +
                        std::to_string(t));
  state_.acc_pck.push_back(row_pck);
  state_.acc_mre.push_back(row_mre);

  // Introduction-time accuracy for the new keypoints.
  for (size_t c = state_.gamma_pck.size(); c < learned.size(); ++c) {
    state_.gamma_pck.push_back(out.kp_pck[c]);
    state_.gamma_mre.push_back(out.kp_mre[c]);
  }

  if (t >= 1) {
    AccuracyMatrix mp{MetricKind::pck, state_.acc_pck};
    AccuracyMatrix mm{MetricKind::mre, state_.acc_mre};
    const double at = average_transfer(mp, t);
    const double at_mre = average_transfer(mm, t);
    const size_t n_old = learned.size() - bundle_.schedule().groups.at(static_cast<size_t>(t)).size();
    std::vector<double> r_pck(out.kp_pck.begin(),
                              out.kp_pck.begin() + static_cast<std::ptrdiff_t>(n_old));
    std::vector<double> r_mre(out.kp_mre.begin(),
                              out.kp_mre.begin() + static_cast<std::ptrdiff_t>(n_old));
    std::vector<double> g_pck(state_.gamma_pck.begin(),
                              state_.gamma_pck.begin() + static_cast<std::ptrdiff_t>(n_old));
    std::vector<double> g_mre(state_.gamma_mre.begin(),
                              state_.gamma_mre.begin() + static_cast<std::ptrdiff_t>(n_old));
    const double mt = maximal_transfer(r_pck, g_pck, MetricKind::pck);
    const double mt_mre = maximal_transfer(r_mre, g_mre, MetricKind::mre);
    emit(json{{"record", "metric"}, {"step", t}, {"name", "at"}, {"value", at}});
    emit(json{{"record", "metric"}, {"step", t}, {"name", "mt"}, {"value", mt}});
    emit(json{{"record", "metric"}, {"step", t}, {"name", "at_mre"}, {"value", at_mre}});
    emit(json{{"record", "metric"}, {"step", t}, {"name", "mt_mre"}, {"value", mt_mre}});
  }
  return out;
}

IncrementalModel ProtocolDriver::run_joint() {
  if (cfg_.method != Method::joint)
    throw std::invalid_argument("run_joint: configured method is not joint");
  const int steps = num_steps();
  const int final_step = steps - 1;
  const std::vector<int> all = learned_through(final_step);
  const int k_all = static_cast<int>(all.size());

  // Union dataset: every split contributes its images, with only its own
  // group's channels visible in the loss.
  int n_total = 0;
  for (int t = 0; t < steps; ++t) n_total += bundle_.train(t).count();
  Tensor images({n_total, 1, cfg_.model.img_h, cfg_.model.img_w});
  Tensor targets({n_total, k_all, cfg_.model.hm_h, cfg_.model.hm_w});
  std::vector<uint8_t> vis(static_cast<size_t>(n_total) * k_all, 0);
  const size_t irow = images.size() / static_cast<size_t>(n_total);
  const size_t plane = static_cast<size_t>(cfg_.model.hm_h) * cfg_.model.hm_w;

  int at_row = 0;
  size_t channel_base = 0;
  for (int t = 0; t < steps; ++t) {
    const Split& split = bundle_.train(t);
    const auto& group = bundle_.schedule().groups.at(static_cast<size_t>(t));
    HeatmapTargets tgt = build_targets(split, group, cfg_.model, cfg_.gt_sigma);
    const int gn = split.count();
    const int gk = static_cast<int>(group.size());
    std::copy(split.images.data(), split.images.data() + split.images.size(),
              images.data() + static_cast<size_t>(at_row) * irow);
    for (int i = 0; i < gn; ++i)
      for (int c = 0; c < gk; ++c) {
        std::copy(tgt.maps.data() + (static_cast<size_t>(i) * gk + c) * plane,
                  tgt.maps.data() + (static_cast<size_t>(i) * gk + c + 1) * plane,
                  targets.data() +
                      ((static_cast<size_t>(at_row + i)) * k_all + channel_base + c) * plane);
        vis[(static_cast<size_t>(at_row + i)) * k_all + channel_base + c] =
            tgt.vis[static_cast<size_t>(i) * gk + c];
      }
    at_row += gn;
    channel_base += static_cast<size_t>(gk);
  }

  IncrementalModel model(cfg_.model, k_all, seed_);
  const int epochs = cfg_.epochs_total;
  const int drop_epoch = static_cast<int>(std::floor(cfg_.lr_drop_at * epochs));
  SgdT<float> opt(model.params(), cfg_.lr, cfg_.momentum, cfg_.weight_decay);
  std::vector<int> order(static_cast<size_t>(n_total));
  for (int i = 0; i < n_total; ++i) order[static_cast<size_t>(i)] = i;

  for (int e = 0; e < epochs; ++e) {
    opt.set_lr(e >= drop_epoch ? cfg_.lr * cfg_.lr_drop_factor : cfg_.lr);
    Pcg32 rng(derive_seed(seed_, "joint_batch_order", static_cast<uint64_t>(e)));
    rng.shuffle(order);
    int b = 0;
    for (int b0 = 0; b0 < n_total; b0 += cfg_.batch_size, ++b) {
      const int bn = std::min(cfg_.batch_size, n_total - b0);
      Tensor xb = gather_rows(images, order, b0, bn);
      Tensor yb = gather_rows(targets, order, b0, bn);
      std::vector<uint8_t> vb = gather_vis(vis, k_all, order, b0, bn);
      opt.zero_grad();
      auto [feat, maps] = model.forward(xb, true);
      Tensor dm(maps.shape());
      double lgt = loss_gt(maps, yb, vb, &dm);
      model.backward(dm);
      opt.step();
      emit(json{{"record", "loss"},
                {"phase", "joint"},
                {"step", final_step},
                {"epoch", e},
                {"batch", b},
                {"gt", lgt},
                {"ksd", 0.0},
                {"ka", 0.0},
                {"alpha", 0.0},
                {"total", lgt}});
    }
  }
  model.drop_caches();

  // Single upper-bound report row: per-keypoint accuracy and the pooled
  // averages at the final step; transfer metrics are undefined for a
  // non-incremental method.
  EvalOutcome out = evaluate_model(model, bundle_, all, cfg_);
  for (size_t c = 0; c < all.size(); ++c) {
    emit(json{{"record", "metric"},
              {"step", final_step},
              {"name", "pck_" + kp_tag(all[c])},
              {"value", out.kp_pck[c]}});
    emit(json{{"record", "metric"},
              {"step", final_step},
              {"name", "mre_" + kp_tag(all[c])},
              {"value", out.kp_mre[c]}});
  }
  emit(json{{"record", "metric"}, {"step", final_step}, {"name", "aaa"}, {"value", out.aaa}});
  emit(json{{"record", "metric"},
            {"step", final_step},
            {"name", "a_mre"},
            {"value", out.a_mre}});
  return model;
}

IncrementalModel ProtocolDriver::run_protocol() {
  if (cfg_.method == Method::joint) return run_joint();
  IncrementalModel model = train_step0();
  evaluate_step(model, 0);
  seal(0);
  for (int t = 1; t < num_steps(); ++t) {
    train_incremental(model, t);
    evaluate_step(model, t);
    seal(t);
  }
  return model;
}

}  // namespace kamp
