#pragma once

// Auxiliary-task construction for Stage-I: choose which old keypoint the
// association net will predict, and the two source keypoints that gate its
// input, from canonical anatomy-graph proximity.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kamp/synthdata.hpp"

namespace kamp {

struct KATaskSpec {
  int target_old = -1;                       // the selected old keypoint
  std::array<int, 2> sources{-1, -1};        // gating source keypoints
  std::array<bool, 2> source_is_new{true, true};
  std::string mode = "deterministic";
  uint64_t seed = 0;
};

enum class TaskMode {
  deterministic,  // minimal summed source distance, fully tie-broken
  random_tuple,   // seeded uniform choice among tuples within 10% of the minimum
};

// For each old keypoint the candidate tuple is (old, its two nearest new
// keypoints); the selected tuple minimizes the summed source distance.
// Ties break by lowest old index, then lowest source indices.  When only one
// new keypoint exists, the second source is the old keypoint nearest to it
// and the target is the remaining old keypoint closest to both sources.
KATaskSpec create_task(const AnatomyGraph& g, const std::vector<int>& old_set,
                       const std::vector<int>& new_set,
                       TaskMode mode = TaskMode::deterministic, uint64_t seed = 0);

// Anatomy-blind ablation: a uniformly random (target, source-pair) tuple.
// The target is uniform over the old set; the sources are a uniform unordered
// pair of new keypoints, or {the sole new keypoint, a uniform other old} when
// only one new keypoint exists.
KATaskSpec uniform_task(const std::vector<int>& old_set, const std::vector<int>& new_set,
                        uint64_t seed);

}  // namespace kamp
