#include "kamp/taskcreate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "kamp/rng.hpp"

namespace kamp {

namespace {

double dist(const AnatomyGraph& g, int a, int b) {
  double dx = g.canonical[static_cast<size_t>(a)][0] - g.canonical[static_cast<size_t>(b)][0];
  double dy = g.canonical[static_cast<size_t>(a)][1] - g.canonical[static_cast<size_t>(b)][1];
  return std::sqrt(dx * dx + dy * dy);
}

struct Candidate {
  int target = -1;
  std::array<int, 2> sources{-1, -1};
  std::array<bool, 2> source_is_new{true, true};
  double sum = std::numeric_limits<double>::infinity();
};

// Strict ordering for exact ties: lowest old index, then lowest source pair.
bool tie_before(const Candidate& a, const Candidate& b) {
  if (a.target != b.target) return a.target < b.target;
  auto sa = std::minmax(a.sources[0], a.sources[1]);
  auto sb = std::minmax(b.sources[0], b.sources[1]);
  if (sa.first != sb.first) return sa.first < sb.first;
  return sa.second < sb.second;
}

}  // namespace

KATaskSpec create_task(const AnatomyGraph& g, const std::vector<int>& old_set,
                       const std::vector<int>& new_set, TaskMode mode, uint64_t seed) {
  if (old_set.empty() || new_set.empty())
    throw std::invalid_argument("create_task: old and new sets must be non-empty");
  for (int k : old_set)
    if (k < 0 || k >= g.size()) throw std::invalid_argument("create_task: bad old index");
  for (int k : new_set)
    if (k < 0 || k >= g.size()) throw std::invalid_argument("create_task: bad new index");

  std::vector<Candidate> candidates;

  if (new_set.size() >= 2) {
    // One candidate per old keypoint: (old, its two nearest new keypoints).
    for (int o : old_set) {
      std::vector<int> order = new_set;
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        double da = dist(g, o, a), db = dist(g, o, b);
        if (da != db) return da < db;
        return a < b;
      });
      Candidate c;
      c.target = o;
      c.sources = {order[0], order[1]};
      c.source_is_new = {true, true};
      c.sum = dist(g, o, order[0]) + dist(g, o, order[1]);
      candidates.push_back(c);
    }
  } else {
    // Degenerate single-new rule: the lone new keypoint plus the old keypoint
    // nearest to it form the sources; each REMAINING old keypoint is a
    // candidate target scored by its summed distance to the two sources.
    if (old_set.size() < 2)
      throw std::invalid_argument(
          "create_task: the single-new rule needs at least two old keypoints");
    const int n1 = new_set[0];
    int helper = old_set[0];
    for (int o : old_set) {
      double d = dist(g, o, n1), dh = dist(g, helper, n1);
      if (d < dh || (d == dh && o < helper)) helper = o;
    }
    for (int o : old_set) {
      if (o == helper) continue;
      Candidate c;
      c.target = o;
      c.sources = {n1, helper};
      c.source_is_new = {true, false};
      c.sum = dist(g, o, n1) + dist(g, o, helper);
      candidates.push_back(c);
    }
  }

  double best_sum = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) best_sum = std::min(best_sum, c.sum);

  const Candidate* chosen = nullptr;
  if (mode == TaskMode::deterministic) {
    for (const auto& c : candidates)
      if (c.sum == best_sum && (!chosen || tie_before(c, *chosen))) chosen = &c;
  } else {
    std::vector<const Candidate*> pool;
    for (const auto& c : candidates)
      if (c.sum <= best_sum * 1.10) pool.push_back(&c);
    std::sort(pool.begin(), pool.end(),
              [](const Candidate* a, const Candidate* b) { return tie_before(*a, *b); });
    Pcg32 rng(derive_seed(seed, "taskcreate"));
    chosen = pool[rng.next_below(static_cast<uint32_t>(pool.size()))];
  }

  KATaskSpec spec;
  spec.target_old = chosen->target;
  spec.sources = chosen->sources;
  spec.source_is_new = chosen->source_is_new;
  spec.mode = mode == TaskMode::deterministic ? "deterministic" : "random";
  spec.seed = seed;
  return spec;
}

KATaskSpec uniform_task(const std::vector<int>& old_set, const std::vector<int>& new_set,
                        uint64_t seed) {
  if (old_set.empty() || new_set.empty())
    throw std::invalid_argument("uniform_task: old and new sets must be non-empty");
  if (new_set.size() == 1 && old_set.size() < 2)
    throw std::invalid_argument("uniform_task: one new keypoint needs at least two olds");

  Pcg32 rng(derive_seed(seed, "uniform_task"));
  KATaskSpec spec;
  spec.mode = "uniform";
  spec.seed = seed;
  spec.target_old = old_set[rng.next_below(static_cast<uint32_t>(old_set.size()))];

  if (new_set.size() >= 2) {
    // Uniform unordered pair of distinct new keypoints.
    uint32_t i = rng.next_below(static_cast<uint32_t>(new_set.size()));
    uint32_t j = rng.next_below(static_cast<uint32_t>(new_set.size() - 1));
    if (j >= i) ++j;
    spec.sources = {new_set[i], new_set[j]};
    spec.source_is_new = {true, true};
  } else {
    std::vector<int> others;
    for (int o : old_set)
      if (o != spec.target_old) others.push_back(o);
    spec.sources = {new_set[0], others[rng.next_below(static_cast<uint32_t>(others.size()))]};
    spec.source_is_new = {true, false};
  }
  return spec;
}

}  // namespace kamp
