#pragma once

// The incremental-protocol driver.  One ProtocolDriver instance runs one
// (method, seed) unit over a dataset bundle: supervised Step-0 training, then
// per incremental step the two-stage scheme (Stage-I association-net fitting
// against old-model pseudo-labels, Stage-II mutual-promotion training), or the
// baseline variants that replace or drop individual terms.  Evaluation after
// every step feeds the accuracy matrix behind the transfer metrics.
//
// The driver emits line-record JSON objects through a callback and leaves all
// persistence (record files, checkpoints, manifests, sealing policy) to the
// caller; run_protocol() is the no-persistence convenience loop.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kamp/kanet.hpp"
#include "kamp/losses.hpp"
#include "kamp/metrics.hpp"
#include "kamp/model.hpp"
#include "kamp/synthdata.hpp"
#include "kamp/taskcreate.hpp"

namespace kamp {

enum class Method { kamp, kamp_ksd_only, kamp_random_kanet, lwf, finetune, joint };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct RunConfig {
  Method method = Method::kamp;
  double alpha = 100.0;       // distillation weight; finetune forces 0
  int epochs_total = 100;     // Step-0 / joint epochs; per-step budget
  int epochs_stage1 = 20;     // association-net epochs inside the budget
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_drop_factor = 0.1;
  double lr_drop_at = 0.8;    // fraction of each phase's epochs
  int batch_size = 30;
  double stage1_lr = 1e-2;    // association-net optimizer (same family)
  double gt_sigma = 2.0;      // target-heatmap gaussian width, heatmap pixels
  double pck_sigma = 0.1;
  TaskMode task_mode = TaskMode::deterministic;
  std::string ka_stage2_loss = "l2";  // "l2" | "spatial_ce"
  KsdAxes ksd_axes = KsdAxes::hw;
  ModelConfig model;

  // Throws invalid_argument on out-of-range values.
  void validate() const;
};

nlohmann::json run_config_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Callback receiving one record row at a time (no ids attached; the caller
// owns numbering and persistence).
using RecordEmit = std::function<void(nlohmann::json&&)>;

// Per-keypoint test-set evaluation of the channels learned so far.
struct EvalOutcome {
  std::vector<int> keypoints;      // keypoint ids in channel order
  std::vector<double> kp_pck;      // per keypoint, over gt-visible samples
  std::vector<double> kp_mre;
  std::vector<int> kp_visible;     // gt-visible sample count per keypoint
  double aaa = 0.0;                // visibility-weighted pooled PCK
  double a_mre = 0.0;              // visibility-weighted pooled MRE
};

// Evaluate `model` on the bundle's test split over the given keypoint ids
// (channel c of the model corresponds to learned[c]).
EvalOutcome evaluate_model(IncrementalModel& model, const DatasetBundle& bundle,
                           const std::vector<int>& learned, const RunConfig& cfg);

// What an incremental step leaves behind for persistence.
struct StepArtifacts {
  std::optional<KATaskSpec> task;   // present for association-based methods
  std::optional<KANet> kanet;       // frozen Stage-I net, when trained
};

// Accuracy history carried across steps (serialized into run manifests so an
// interrupted run can resume with identical transfer metrics).
struct ProtocolState {
  std::vector<std::vector<double>> acc_pck;  // a[i][j], group-level PCK
  std::vector<std::vector<double>> acc_mre;
  std::vector<double> gamma_pck;  // per channel: accuracy when first learned
  std::vector<double> gamma_mre;

  nlohmann::json to_json() const;
  static ProtocolState from_json(const nlohmann::json& j);
};

class ProtocolDriver {
 public:
  // The bundle reference must outlive the driver; sealing mutates it.
  ProtocolDriver(DatasetBundle& bundle, const RunConfig& cfg, uint64_t seed,
                 RecordEmit emit);

  int num_steps() const { return bundle_.num_steps(); }
  const RunConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }

  // Keypoint ids of the channels present after step t, in channel order.
  std::vector<int> learned_through(int t) const;

  // Step-0 supervised training on group-0 labels (identical across methods).
  IncrementalModel train_step0();

  // One incremental step t >= 1 for the configured non-joint method: grows
  // the model and trains it in place.  Throws invalid_state on label leakage.
  StepArtifacts train_incremental(IncrementalModel& model, int t);

  // Test-set evaluation + metric records + accuracy-history update.
  EvalOutcome evaluate_step(IncrementalModel& model, int t);

  // Seal training data of steps <= t (exemplar-free enforcement).
  void seal(int t) { bundle_.seal_through(t); }

  // Joint upper bound: train once on every split's labels, evaluate once.
  IncrementalModel run_joint();

  // Full protocol: Step-0 through the last step, evaluating and sealing as it
  // goes (run_joint for the joint method).  No persistence.
  IncrementalModel run_protocol();

  const ProtocolState& state() const { return state_; }
  void restore_state(const ProtocolState& s) { state_ = s; }

 private:
  void emit(nlohmann::json&& row);

  DatasetBundle& bundle_;
  RunConfig cfg_;
  uint64_t seed_ = 0;
  RecordEmit emit_;
  ProtocolState state_;
};

}  // namespace kamp
