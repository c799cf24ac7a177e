#pragma once

// Procedural articulated-figure benchmark data: a deterministic stick-figure
// anatomy graph, a seeded pose renderer, the step schedule partitioning
// keypoints, and dataset-bundle persistence.
//
// Bundle directory layout:
//   meta.json             graph, schedule, sizes, seed, image geometry
//   train_step<t>.u8      raw uint8 images [n,H,W], intensity*255
//   train_step<t>.jsonl   one JSON object per (sample, keypoint) label
//   test.u8 / test.jsonl  shared held-out split, labeled with all keypoints

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kamp/heatmap.hpp"
#include "kamp/tensor.hpp"

namespace kamp {

struct AnatomyGraph {
  std::vector<std::string> names;
  std::vector<std::array<double, 2>> canonical;  // unit-square rest pose, (x,y)
  std::vector<std::pair<int, int>> edges;        // skeleton bones (tree)
  int size() const { return static_cast<int>(names.size()); }
};

// Deterministic stick figure: torso core plus head/arm/arm/leg/leg chains,
// extra joints distributed round-robin.  Requires n_keypoints >= 6.
AnatomyGraph build_default_anatomy(int n_keypoints);

struct KeypointSchedule {
  std::vector<std::vector<int>> groups;  // one keypoint-index set per step
  int num_steps() const { return static_cast<int>(groups.size()); }
  std::vector<int> all_keypoints() const;  // sorted union of all groups
  // Throws invalid_argument on overlap, empty group 0, or bad indices.
  void validate(int n_keypoints) const;
};

// Consecutive index blocks of the given sizes (must sum to <= n_keypoints).
KeypointSchedule schedule_from_group_sizes(const std::vector<int>& sizes, int n_keypoints);

struct Sample {
  Tensor image;  // [1,H,W], values in [0,1]
  std::vector<KeypointLocation> locations;  // image-pixel coords, all keypoints
  uint64_t pose_seed = 0;
};

// Pure function of (graph, pose_seed, size): articulates the skeleton with
// seeded joint-angle/scale/translation perturbations, renders bones and
// joint discs over background noise, and occludes up to 2 keypoints with
// probability 0.1 each.
Sample render_sample(const AnatomyGraph& g, uint64_t pose_seed, int img_h, int img_w);

struct BundleSizes {
  std::vector<int> train_per_step;
  int test = 100;
};

struct Split {
  Tensor images;                 // [n,1,H,W] float in [0,1]
  std::vector<int> labeled_kps;  // keypoint ids carried by this split's labels
  std::vector<std::vector<KeypointLocation>> locations;  // [n][labeled_kps.size()]
  int count() const { return images.empty() ? 0 : images.dim(0); }
};

// Generate a bundle and persist it under `dir` (created if needed).
void generate_bundle(const AnatomyGraph& g, const KeypointSchedule& s,
                     const BundleSizes& sizes, uint64_t seed, int img_h, int img_w,
                     const std::string& dir);

// Immutable dataset bundle with exemplar-free access control: once a step is
// sealed, its training split is released and any further access throws.
// Normally loaded from a generated directory; from_memory builds one directly
// from splits (tests, bindings).
class DatasetBundle {
 public:
  static DatasetBundle load(const std::string& dir);

  // In-memory bundle over pre-built splits.  Validates the schedule but not
  // the splits' label sets; downstream exemplar-free checks still apply.
  static DatasetBundle from_memory(AnatomyGraph g, KeypointSchedule s,
                                   std::vector<Split> train, Split test, int img_h,
                                   int img_w, uint64_t seed);

  const AnatomyGraph& graph() const { return graph_; }
  const KeypointSchedule& schedule() const { return schedule_; }
  const BundleSizes& sizes() const { return sizes_; }
  uint64_t seed() const { return seed_; }
  int img_h() const { return img_h_; }
  int img_w() const { return img_w_; }
  int num_steps() const { return schedule_.num_steps(); }
  const std::string& dir() const { return dir_; }

  // Training split for one step.  Throws invalid_state once sealed.
  const Split& train(int step) const;
  const Split& test() const { return test_; }

  // Exemplar-free enforcement: release and forbid train splits of all steps
  // <= step.  Irreversible for this object.
  void seal_through(int step);
  int sealed_through() const { return sealed_through_; }

  // Stable content identifier (hash of meta.json bytes).
  const std::string& descriptor() const { return descriptor_; }

 private:
  std::string dir_;
  AnatomyGraph graph_;
  KeypointSchedule schedule_;
  BundleSizes sizes_;
  uint64_t seed_ = 0;
  int img_h_ = 0, img_w_ = 0;
  std::vector<Split> train_;
  Split test_;
  int sealed_through_ = -1;
  std::string descriptor_;
};

}  // namespace kamp
