#include "kamp/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kamp/rng.hpp"

namespace kamp {

using nlohmann::json;

// ============================== anatomy =================================

AnatomyGraph build_default_anatomy(int n_keypoints) {
  if (n_keypoints < 6)
    throw std::invalid_argument("build_default_anatomy: need at least 6 keypoints");
  AnatomyGraph g;
  // Core torso joints.
  g.names = {"neck", "pelvis"};
  g.canonical = {{0.50, 0.30}, {0.50, 0.58}};
  g.edges = {{0, 1}};

  // Five chains hang off the core; extra joints are distributed round-robin.
  struct ChainSpec {
    const char* label;
    int root;                      // core joint the chain grows from
    std::array<double, 2> tip;     // canonical position of the chain end
  };
  const ChainSpec chains[5] = {
      {"l_arm", 0, {0.14, 0.52}},
      {"r_arm", 0, {0.86, 0.52}},
      {"l_leg", 1, {0.22, 0.95}},
      {"r_leg", 1, {0.78, 0.95}},
      {"head", 0, {0.50, 0.06}},
  };
  int extra = n_keypoints - 2;
  int len[5] = {0, 0, 0, 0, 0};
  for (int i = 0; extra > 0; i = (i + 1) % 5, --extra) ++len[i];
  for (int c = 0; c < 5; ++c) {
    int prev = chains[c].root;
    // Copy, not reference: push_back below may reallocate g.canonical.
    const std::array<double, 2> root_xy = g.canonical[static_cast<size_t>(chains[c].root)];
    for (int k = 0; k < len[c]; ++k) {
      double f = static_cast<double>(k + 1) / len[c];
      g.names.push_back(std::string(chains[c].label) + "_" + std::to_string(k + 1));
      g.canonical.push_back({root_xy[0] + f * (chains[c].tip[0] - root_xy[0]),
                             root_xy[1] + f * (chains[c].tip[1] - root_xy[1])});
      int idx = static_cast<int>(g.names.size()) - 1;
      g.edges.emplace_back(prev, idx);
      prev = idx;
    }
  }
  return g;
}

// ============================== schedule ================================

std::vector<int> KeypointSchedule::all_keypoints() const {
  std::vector<int> all;
  for (const auto& grp : groups) all.insert(all.end(), grp.begin(), grp.end());
  std::sort(all.begin(), all.end());
  return all;
}

void KeypointSchedule::validate(int n_keypoints) const {
  if (groups.empty() || groups[0].empty())
    throw std::invalid_argument("schedule: group 0 must be non-empty");
  std::set<int> seen;
  for (const auto& grp : groups) {
    if (grp.empty()) throw std::invalid_argument("schedule: empty group");
    for (int k : grp) {
      if (k < 0 || k >= n_keypoints)
        throw std::invalid_argument("schedule: keypoint index out of range");
      if (!seen.insert(k).second)
        throw std::invalid_argument("schedule: keypoint " + std::to_string(k) +
                                    " appears in more than one group");
    }
  }
}

KeypointSchedule schedule_from_group_sizes(const std::vector<int>& sizes, int n_keypoints) {
  int total = 0;
  for (int s : sizes) {
    if (s < 1) throw std::invalid_argument("schedule: group sizes must be >= 1");
    total += s;
  }
  if (total > n_keypoints)
    throw std::invalid_argument("schedule: group sum " + std::to_string(total) +
                                " exceeds keypoint count " + std::to_string(n_keypoints));
  KeypointSchedule s;
  int next = 0;
  for (int sz : sizes) {
    std::vector<int> grp(static_cast<size_t>(sz));
    for (int i = 0; i < sz; ++i) grp[static_cast<size_t>(i)] = next++;
    s.groups.push_back(std::move(grp));
  }
  s.validate(n_keypoints);
  return s;
}

// ============================== rendering ===============================

namespace {

struct Vec2 {
  double x = 0, y = 0;
};

Vec2 rotate(const Vec2& v, double a) {
  double c = std::cos(a), s = std::sin(a);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// Forward kinematics over the skeleton tree rooted at joint 0: each bone
// inherits its parent chain's accumulated rotation plus its own seeded delta.
void articulate(const AnatomyGraph& g, Pcg32& rng, double angle_sigma,
                std::vector<Vec2>& pos) {
  const int n = g.size();
  std::vector<std::vector<int>> children(static_cast<size_t>(n));
  std::vector<int> parent(static_cast<size_t>(n), -1);
  for (const auto& e : g.edges) {
    children[static_cast<size_t>(e.first)].push_back(e.second);
    parent[static_cast<size_t>(e.second)] = e.first;
  }
  pos.assign(static_cast<size_t>(n), Vec2{});
  pos[0] = {g.canonical[0][0], g.canonical[0][1]};
  // Iterative DFS in deterministic (edge-declaration) order.
  struct Item {
    int node;
    double acc;  // accumulated rotation along the path from the root
  };
  std::vector<Item> stack{{0, 0.0}};
  while (!stack.empty()) {
    Item it = stack.back();
    stack.pop_back();
    for (auto kid_it = children[static_cast<size_t>(it.node)].rbegin();
         kid_it != children[static_cast<size_t>(it.node)].rend(); ++kid_it) {
      int kid = *kid_it;
      double delta = rng.gaussian(0.0, angle_sigma);
      double acc = it.acc + delta;
      Vec2 bone{g.canonical[static_cast<size_t>(kid)][0] -
                    g.canonical[static_cast<size_t>(it.node)][0],
                g.canonical[static_cast<size_t>(kid)][1] -
                    g.canonical[static_cast<size_t>(it.node)][1]};
      Vec2 r = rotate(bone, acc);
      pos[static_cast<size_t>(kid)] = {pos[static_cast<size_t>(it.node)].x + r.x,
                                       pos[static_cast<size_t>(it.node)].y + r.y};
      stack.push_back({kid, acc});
    }
  }
}

float& px(Tensor& img, int r, int c) {
  return img.data()[static_cast<size_t>(r) * img.dim(2) + c];
}

void draw_segment(Tensor& img, Vec2 a, Vec2 b, double half_width, float intensity) {
  const int h = img.dim(1), w = img.dim(2);
  int r0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - half_width - 1)));
  int r1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + half_width + 1)));
  int c0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - half_width - 1)));
  int c1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + half_width + 1)));
  double dx = b.x - a.x, dy = b.y - a.y;
  double len2 = dx * dx + dy * dy;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      double t = len2 > 0 ? ((c - a.x) * dx + (r - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      double qx = a.x + t * dx - c, qy = a.y + t * dy - r;
      double d = std::sqrt(qx * qx + qy * qy);
      if (d <= half_width) px(img, r, c) = std::max(px(img, r, c), intensity);
    }
}

void draw_disc(Tensor& img, Vec2 ctr, double radius, float peak, float falloff,
               bool overwrite) {
  const int h = img.dim(1), w = img.dim(2);
  int r0 = std::max(0, static_cast<int>(std::floor(ctr.y - radius - 1)));
  int r1 = std::min(h - 1, static_cast<int>(std::ceil(ctr.y + radius + 1)));
  int c0 = std::max(0, static_cast<int>(std::floor(ctr.x - radius - 1)));
  int c1 = std::min(w - 1, static_cast<int>(std::ceil(ctr.x + radius + 1)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      double dx = c - ctr.x, dy = r - ctr.y;
      double d = std::sqrt(dx * dx + dy * dy);
      if (d <= radius) {
        float v = peak - falloff * static_cast<float>(d);
        if (overwrite)
          px(img, r, c) = v;
        else
          px(img, r, c) = std::max(px(img, r, c), v);
      }
    }
}

}  // namespace

Sample render_sample(const AnatomyGraph& g, uint64_t pose_seed, int img_h, int img_w) {
  if (img_h < 32 || img_w < 32)
    throw std::invalid_argument("render_sample: image must be at least 32x32");
  Pcg32 rng(derive_seed(pose_seed, "render"));

  // 1. Pose: global rotation + per-bone articulation in canonical space.
  double global_rot = rng.gaussian(0.0, 0.10);
  std::vector<Vec2> pos;
  articulate(g, rng, 0.12, pos);
  Vec2 centroid{0, 0};
  for (const auto& p : pos) {
    centroid.x += p.x;
    centroid.y += p.y;
  }
  centroid.x /= g.size();
  centroid.y /= g.size();
  for (auto& p : pos) {
    Vec2 r = rotate({p.x - centroid.x, p.y - centroid.y}, global_rot);
    p = {centroid.x + r.x, centroid.y + r.y};
  }

  // 2. Fit to the image with a seeded scale and a seeded translation inside
  // the remaining slack, keeping every joint inside the frame.
  double min_x = pos[0].x, max_x = pos[0].x, min_y = pos[0].y, max_y = pos[0].y;
  for (const auto& p : pos) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double margin = 10.0;
  const double avail_w = img_w - 2 * margin, avail_h = img_h - 2 * margin;
  const double span = std::max(std::max(max_x - min_x, max_y - min_y), 1e-6);
  const double scale = std::min(avail_w, avail_h) / span * rng.uniform(0.55, 0.90);
  const double slack_x = avail_w - (max_x - min_x) * scale;
  const double slack_y = avail_h - (max_y - min_y) * scale;
  const double tx = margin + rng.uniform(0.0, std::max(slack_x, 0.0));
  const double ty = margin + rng.uniform(0.0, std::max(slack_y, 0.0));
  for (auto& p : pos) p = {(p.x - min_x) * scale + tx, (p.y - min_y) * scale + ty};

  // 3. Render: background noise, bones, joint discs.
  Sample s;
  s.pose_seed = pose_seed;
  s.image = Tensor({1, img_h, img_w});
  for (size_t i = 0; i < s.image.size(); ++i)
    s.image[i] = static_cast<float>(rng.uniform(0.0, 0.18));
  for (const auto& e : g.edges)
    draw_segment(s.image, pos[static_cast<size_t>(e.first)], pos[static_cast<size_t>(e.second)],
                 1.3, 0.55f);
  for (const auto& p : pos) draw_disc(s.image, p, 2.5, 1.0f, 0.15f, false);

  // 4. Occlusion: up to 2 keypoints, probability 0.1 each; occluded joints
  // are hidden under a flat patch and their labels marked invisible.
  s.locations.resize(static_cast<size_t>(g.size()));
  for (int k = 0; k < g.size(); ++k)
    s.locations[static_cast<size_t>(k)] = {pos[static_cast<size_t>(k)].x,
                                           pos[static_cast<size_t>(k)].y, true};
  for (int draw = 0; draw < 2; ++draw) {
    bool occlude = rng.unit() < 0.1;
    uint32_t pick = rng.next_below(static_cast<uint32_t>(g.size()));
    if (occlude) {
      s.locations[pick].visible = false;
      draw_disc(s.image, pos[pick], 4.0, 0.15f, 0.0f, true);
    }
  }
  for (size_t i = 0; i < s.image.size(); ++i) s.image[i] = std::clamp(s.image[i], 0.0f, 1.0f);
  return s;
}

// ============================== persistence =============================

namespace {

json graph_to_json(const AnatomyGraph& g) {
  json j;
  j["names"] = g.names;
  j["canonical"] = json::array();
  for (const auto& c : g.canonical) j["canonical"].push_back({c[0], c[1]});
  j["edges"] = json::array();
  for (const auto& e : g.edges) j["edges"].push_back({e.first, e.second});
  return j;
}

AnatomyGraph graph_from_json(const json& j) {
  AnatomyGraph g;
  g.names = j.at("names").get<std::vector<std::string>>();
  for (const auto& c : j.at("canonical")) g.canonical.push_back({c.at(0), c.at(1)});
  for (const auto& e : j.at("edges")) g.edges.emplace_back(e.at(0), e.at(1));
  return g;
}

void write_images_u8(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  std::vector<unsigned char> row;
  for (const auto& s : samples) {
    row.resize(s.image.size());
    for (size_t i = 0; i < s.image.size(); ++i)
      row[i] = static_cast<unsigned char>(std::lround(std::clamp(s.image[i], 0.0f, 1.0f) * 255.0f));
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

void write_labels(const std::string& path, const std::vector<Sample>& samples,
                  const std::vector<int>& kps) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (size_t i = 0; i < samples.size(); ++i) {
    for (int k : kps) {
      const auto& loc = samples[i].locations[static_cast<size_t>(k)];
      json rec;
      rec["sample"] = i;
      rec["keypoint"] = k;
      rec["x"] = loc.x;
      rec["y"] = loc.y;
      rec["visible"] = loc.visible;
      f << rec.dump() << "\n";
    }
  }
}

Split load_split(const std::string& img_path, const std::string& label_path,
                 const std::vector<int>& kps, int n, int img_h, int img_w) {
  Split sp;
  sp.labeled_kps = kps;
  sp.images = Tensor({n, 1, img_h, img_w});
  {
    std::ifstream f(img_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + img_path);
    std::vector<unsigned char> buf(static_cast<size_t>(img_h) * img_w);
    for (int i = 0; i < n; ++i) {
      f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      if (!f) throw std::runtime_error("truncated image file " + img_path);
      float* dst = sp.images.data() + static_cast<size_t>(i) * buf.size();
      for (size_t q = 0; q < buf.size(); ++q) dst[q] = static_cast<float>(buf[q]) / 255.0f;
    }
  }
  sp.locations.assign(static_cast<size_t>(n),
                      std::vector<KeypointLocation>(kps.size()));
  std::vector<int> kp_slot(kps.empty() ? 0 : (*std::max_element(kps.begin(), kps.end()) + 1),
                           -1);
  for (size_t i = 0; i < kps.size(); ++i) kp_slot[static_cast<size_t>(kps[i])] = static_cast<int>(i);
  std::ifstream f(label_path);
  if (!f) throw std::runtime_error("cannot read " + label_path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    int sample = rec.at("sample");
    int kp = rec.at("keypoint");
    if (sample < 0 || sample >= n || kp < 0 || kp >= static_cast<int>(kp_slot.size()) ||
        kp_slot[static_cast<size_t>(kp)] < 0)
      throw std::runtime_error("label record out of range in " + label_path);
    auto& loc = sp.locations[static_cast<size_t>(sample)]
                            [static_cast<size_t>(kp_slot[static_cast<size_t>(kp)])];
    loc.x = rec.at("x");
    loc.y = rec.at("y");
    loc.visible = rec.at("visible");
  }
  return sp;
}

}  // namespace

void generate_bundle(const AnatomyGraph& g, const KeypointSchedule& s,
                     const BundleSizes& sizes, uint64_t seed, int img_h, int img_w,
                     const std::string& dir) {
  s.validate(g.size());
  if (static_cast<int>(sizes.train_per_step.size()) != s.num_steps())
    throw std::invalid_argument("generate_bundle: one train size per step required");
  if (sizes.test < 1) throw std::invalid_argument("generate_bundle: need a test split");
  std::filesystem::create_directories(dir);

  json meta;
  meta["format"] = "kamp-bundle-v1";
  meta["seed"] = seed;
  meta["img_h"] = img_h;
  meta["img_w"] = img_w;
  meta["graph"] = graph_to_json(g);
  meta["schedule"] = s.groups;
  meta["sizes"]["train_per_step"] = sizes.train_per_step;
  meta["sizes"]["test"] = sizes.test;
  meta["image_dtype"] = "u8";
  {
    std::ofstream f(dir + "/meta.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + dir + "/meta.json");
    f << meta.dump(2) << "\n";
  }

  std::vector<int> all_kps(static_cast<size_t>(g.size()));
  for (int k = 0; k < g.size(); ++k) all_kps[static_cast<size_t>(k)] = k;

  for (int t = 0; t < s.num_steps(); ++t) {
    const int n = sizes.train_per_step[static_cast<size_t>(t)];
    std::vector<Sample> samples;
    samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      samples.push_back(render_sample(g, derive_seed(seed, "train", static_cast<uint64_t>(t),
                                                     static_cast<uint64_t>(i)),
                                      img_h, img_w));
    const std::string stem = dir + "/train_step" + std::to_string(t);
    write_images_u8(stem + ".u8", samples);
    write_labels(stem + ".jsonl", samples, s.groups[static_cast<size_t>(t)]);
  }
  std::vector<Sample> test_samples;
  test_samples.reserve(static_cast<size_t>(sizes.test));
  for (int i = 0; i < sizes.test; ++i)
    test_samples.push_back(
        render_sample(g, derive_seed(seed, "test", 0, static_cast<uint64_t>(i)), img_h, img_w));
  write_images_u8(dir + "/test.u8", test_samples);
  write_labels(dir + "/test.jsonl", test_samples, all_kps);
}

DatasetBundle DatasetBundle::from_memory(AnatomyGraph g, KeypointSchedule s,
                                         std::vector<Split> train, Split test,
                                         int img_h, int img_w, uint64_t seed) {
  s.validate(g.size());
  if (static_cast<int>(train.size()) != s.num_steps())
    throw std::invalid_argument("bundle: one train split per schedule step required");
  DatasetBundle b;
  b.dir_ = "<memory>";
  b.graph_ = std::move(g);
  b.schedule_ = std::move(s);
  b.img_h_ = img_h;
  b.img_w_ = img_w;
  b.seed_ = seed;
  for (const auto& sp : train) b.sizes_.train_per_step.push_back(sp.count());
  b.sizes_.test = test.count();
  b.train_ = std::move(train);
  b.test_ = std::move(test);

  json meta;
  meta["format"] = "kamp-bundle-v1";
  meta["seed"] = seed;
  meta["img_h"] = img_h;
  meta["img_w"] = img_w;
  meta["graph"] = graph_to_json(b.graph_);
  meta["schedule"] = b.schedule_.groups;
  meta["sizes"]["train_per_step"] = b.sizes_.train_per_step;
  meta["sizes"]["test"] = b.sizes_.test;
  meta["image_dtype"] = "f32-memory";
  uint64_t h = hash_tag(meta.dump());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  b.descriptor_ = buf;
  return b;
}

DatasetBundle DatasetBundle::load(const std::string& dir) {
  DatasetBundle b;
  b.dir_ = dir;
  std::ifstream f(dir + "/meta.json", std::ios::binary);
  if (!f) throw std::runtime_error("dataset bundle not found: " + dir + "/meta.json");
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string meta_text = ss.str();
  json meta = json::parse(meta_text);
  if (meta.value("format", "") != "kamp-bundle-v1")
    throw std::runtime_error("unsupported bundle format in " + dir);
  b.graph_ = graph_from_json(meta.at("graph"));
  b.schedule_.groups = meta.at("schedule").get<std::vector<std::vector<int>>>();
  b.schedule_.validate(b.graph_.size());
  b.sizes_.train_per_step = meta.at("sizes").at("train_per_step").get<std::vector<int>>();
  b.sizes_.test = meta.at("sizes").at("test");
  b.seed_ = meta.at("seed");
  b.img_h_ = meta.at("img_h");
  b.img_w_ = meta.at("img_w");

  uint64_t h = hash_tag(meta_text);
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  b.descriptor_ = buf;

  for (int t = 0; t < b.schedule_.num_steps(); ++t) {
    const std::string stem = dir + "/train_step" + std::to_string(t);
    b.train_.push_back(load_split(stem + ".u8", stem + ".jsonl",
                                  b.schedule_.groups[static_cast<size_t>(t)],
                                  b.sizes_.train_per_step[static_cast<size_t>(t)], b.img_h_,
                                  b.img_w_));
  }
  std::vector<int> all_kps(static_cast<size_t>(b.graph_.size()));
  for (int k = 0; k < b.graph_.size(); ++k) all_kps[static_cast<size_t>(k)] = k;
  b.test_ = load_split(dir + "/test.u8", dir + "/test.jsonl", all_kps, b.sizes_.test, b.img_h_,
                       b.img_w_);
  return b;
}

const Split& DatasetBundle::train(int step) const {
  if (step < 0 || step >= num_steps())
    throw std::invalid_argument("bundle: no step " + std::to_string(step));
  if (step <= sealed_through_)
    throw invalid_state("bundle: training data for step " + std::to_string(step) +
                        " is sealed (exemplar-free protocol)");
  return train_[static_cast<size_t>(step)];
}

void DatasetBundle::seal_through(int step) {
  for (int t = 0; t <= std::min(step, num_steps() - 1); ++t)
    train_[static_cast<size_t>(t)] = Split{};  // release the data outright
  sealed_through_ = std::max(sealed_through_, step);
}

}  // namespace kamp
