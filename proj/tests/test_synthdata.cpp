#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kamp/synthdata.hpp"

using namespace kamp;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fresh_dir(const std::string& tag) {
  std::string d = (std::filesystem::temp_directory_path() / ("kamp_test_" + tag)).string();
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("anatomy: n=12 gives 12 named joints and 11 tree edges") {
  AnatomyGraph g = build_default_anatomy(12);
  CHECK(g.size() == 12);
  CHECK(g.edges.size() == 11);
  std::set<std::string> names(g.names.begin(), g.names.end());
  CHECK(names.size() == 12);  // unique
  for (const auto& e : g.edges) {
    CHECK(e.first >= 0);
    CHECK(e.first < 12);
    CHECK(e.second >= 0);
    CHECK(e.second < 12);
  }
}

TEST_CASE("anatomy: deterministic and inside the unit square") {
  AnatomyGraph a = build_default_anatomy(12);
  AnatomyGraph b = build_default_anatomy(12);
  CHECK(a.names == b.names);
  CHECK(a.edges == b.edges);
  for (size_t i = 0; i < a.canonical.size(); ++i) {
    CHECK(a.canonical[i] == b.canonical[i]);
  }
  AnatomyGraph g16 = build_default_anatomy(16);
  CHECK(g16.size() == 16);
  CHECK(g16.edges.size() == 15);
  for (const auto& c : g16.canonical) {
    CHECK(c[0] >= 0.0);
    CHECK(c[0] <= 1.0);
    CHECK(c[1] >= 0.0);
    CHECK(c[1] <= 1.0);
  }
  CHECK_THROWS_AS(build_default_anatomy(5), std::invalid_argument);
}

TEST_CASE("render: bit-identical for identical (graph, seed)") {
  AnatomyGraph g = build_default_anatomy(12);
  Sample a = render_sample(g, 42, 128, 128);
  Sample b = render_sample(g, 42, 128, 128);
  REQUIRE(a.image.size() == b.image.size());
  for (size_t i = 0; i < a.image.size(); ++i) CHECK(a.image[i] == b.image[i]);
  for (size_t k = 0; k < a.locations.size(); ++k) {
    CHECK(a.locations[k].x == b.locations[k].x);
    CHECK(a.locations[k].y == b.locations[k].y);
    CHECK(a.locations[k].visible == b.locations[k].visible);
  }
  Sample c = render_sample(g, 43, 128, 128);
  bool any_diff = false;
  for (size_t i = 0; i < a.image.size(); ++i) any_diff |= (a.image[i] != c.image[i]);
  CHECK(any_diff);
}

TEST_CASE("render: all joints land inside the image, intensities in [0,1]") {
  AnatomyGraph g = build_default_anatomy(12);
  for (uint64_t seed : {0ull, 1ull, 7ull, 99ull}) {
    Sample s = render_sample(g, seed, 128, 128);
    CHECK(s.locations.size() == 12);
    for (const auto& loc : s.locations) {
      CHECK(loc.x >= 0.0);
      CHECK(loc.x < 128.0);
      CHECK(loc.y >= 0.0);
      CHECK(loc.y < 128.0);
    }
    for (size_t i = 0; i < s.image.size(); ++i) {
      CHECK(s.image[i] >= 0.0f);
      CHECK(s.image[i] <= 1.0f);
    }
  }
}

TEST_CASE("render: 1000 seeds give per-keypoint location std above 3 pixels") {
  AnatomyGraph g = build_default_anatomy(12);
  const int n = 1000;
  std::vector<double> sx(12, 0), sy(12, 0), sxx(12, 0), syy(12, 0);
  int occluded = 0;
  for (int i = 0; i < n; ++i) {
    Sample s = render_sample(g, static_cast<uint64_t>(i), 128, 128);
    for (int k = 0; k < 12; ++k) {
      sx[k] += s.locations[k].x;
      sy[k] += s.locations[k].y;
      sxx[k] += s.locations[k].x * s.locations[k].x;
      syy[k] += s.locations[k].y * s.locations[k].y;
      if (!s.locations[k].visible) ++occluded;
    }
  }
  for (int k = 0; k < 12; ++k) {
    double vx = sxx[k] / n - (sx[k] / n) * (sx[k] / n);
    double vy = syy[k] / n - (sy[k] / n) * (sy[k] / n);
    CHECK(std::sqrt(vx) > 3.0);
    CHECK(std::sqrt(vy) > 3.0);
  }
  // occlusion draws fire at roughly 0.1 per slot, two slots per sample
  CHECK(occluded > 50);
  CHECK(occluded < 500);
}

TEST_CASE("schedule: construction and validation") {
  KeypointSchedule s = schedule_from_group_sizes({4, 2, 2, 2, 2}, 12);
  CHECK(s.num_steps() == 5);
  CHECK(s.groups[0] == std::vector<int>{0, 1, 2, 3});
  CHECK(s.groups[4] == std::vector<int>{10, 11});
  CHECK(s.all_keypoints().size() == 12);
  CHECK_THROWS_AS(schedule_from_group_sizes({4, 9}, 12), std::invalid_argument);
  KeypointSchedule overlap;
  overlap.groups = {{0, 1}, {1, 2}};
  CHECK_THROWS_AS(overlap.validate(12), std::invalid_argument);
  KeypointSchedule empty0;
  empty0.groups = {};
  CHECK_THROWS_AS(empty0.validate(12), std::invalid_argument);
}

TEST_CASE("bundle: generate, load, and verify the label contract") {
  AnatomyGraph g = build_default_anatomy(12);
  KeypointSchedule s = schedule_from_group_sizes({4, 2, 2, 2, 2}, 12);
  BundleSizes sizes;
  sizes.train_per_step = {8, 8, 8, 8, 8};
  sizes.test = 6;
  const std::string dir = fresh_dir("bundle");
  generate_bundle(g, s, sizes, 7, 64, 64, dir);

  DatasetBundle b = DatasetBundle::load(dir);
  CHECK(b.num_steps() == 5);
  CHECK(b.img_h() == 64);
  CHECK(b.graph().size() == 12);
  CHECK(b.descriptor().size() == 16);

  // step-1 training labels expose exactly the 2 group-1 keypoints
  const Split& tr1 = b.train(1);
  CHECK(tr1.labeled_kps == std::vector<int>{4, 5});
  CHECK(tr1.count() == 8);
  CHECK(tr1.locations[0].size() == 2);

  // disjointness across steps
  std::set<int> seen;
  for (int t = 0; t < 5; ++t)
    for (int k : b.train(t).labeled_kps) CHECK(seen.insert(k).second);

  // the shared test split covers every keypoint exactly once
  CHECK(b.test().labeled_kps.size() == 12);
  CHECK(b.test().count() == 6);

  // images decode to [0,1]
  const Split& tr0 = b.train(0);
  CHECK(tr0.images.dim(0) == 8);
  for (size_t i = 0; i < tr0.images.size(); ++i) {
    CHECK(tr0.images[i] >= 0.0f);
    CHECK(tr0.images[i] <= 1.0f);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("bundle: regeneration is byte-identical") {
  AnatomyGraph g = build_default_anatomy(8);
  KeypointSchedule s = schedule_from_group_sizes({4, 4}, 8);
  BundleSizes sizes;
  sizes.train_per_step = {4, 4};
  sizes.test = 3;
  const std::string d1 = fresh_dir("regen1");
  const std::string d2 = fresh_dir("regen2");
  generate_bundle(g, s, sizes, 11, 64, 64, d1);
  generate_bundle(g, s, sizes, 11, 64, 64, d2);
  for (const char* f : {"meta.json", "train_step0.u8", "train_step0.jsonl", "test.u8",
                        "test.jsonl"})
    CHECK(slurp(d1 + "/" + f) == slurp(d2 + "/" + f));
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("bundle: sealing train splits enforces the exemplar-free contract") {
  AnatomyGraph g = build_default_anatomy(6);
  KeypointSchedule s = schedule_from_group_sizes({3, 3}, 6);
  BundleSizes sizes;
  sizes.train_per_step = {3, 3};
  sizes.test = 2;
  const std::string dir = fresh_dir("seal");
  generate_bundle(g, s, sizes, 5, 64, 64, dir);
  DatasetBundle b = DatasetBundle::load(dir);
  CHECK(b.sealed_through() == -1);
  CHECK_NOTHROW(b.train(0));
  b.seal_through(0);
  CHECK(b.sealed_through() == 0);
  CHECK_THROWS_AS(b.train(0), invalid_state);
  CHECK_NOTHROW(b.train(1));
  CHECK_NOTHROW(b.test());  // evaluation data is never sealed
  b.seal_through(1);
  CHECK_THROWS_AS(b.train(1), invalid_state);
  CHECK_THROWS_AS(b.train(7), std::invalid_argument);
  std::filesystem::remove_all(dir);
}
