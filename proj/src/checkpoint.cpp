#include "kamp/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "kamp/rng.hpp"

namespace kamp {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "KAMPCKPT1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;
constexpr const char* kFormat = "kamp-checkpoint-v1";

json arrays_entry(std::vector<StateRef<float>>& refs) {
  json arrays = json::array();
  for (auto& r : refs) {
    json shape = json::array();
    for (int d = 0; d < r.value->rank(); ++d) shape.push_back(r.value->dim(d));
    arrays.push_back(json{{"name", r.name}, {"shape", shape}});
  }
  return arrays;
}

void write_archive(const std::string& path, const json& manifest,
                   std::vector<StateRef<float>>& refs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, static_cast<std::streamsize>(kMagicLen));
  const std::string m = manifest.dump();
  const uint64_t mlen = m.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (auto& r : refs)
    out.write(reinterpret_cast<const char*>(r.value->data()),
              static_cast<std::streamsize>(r.value->size() * sizeof(float)));
  out.flush();
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

json read_manifest(std::ifstream& in, const std::string& path) {
  char magic[kMagicLen];
  in.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint archive");
  uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!in || mlen == 0 || mlen > (1ull << 30))
    throw std::runtime_error("checkpoint: corrupt manifest length in " + path);
  std::string m(mlen, '\0');
  in.read(m.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw std::runtime_error("checkpoint: truncated manifest in " + path);
  json manifest = json::parse(m, nullptr, false);
  if (manifest.is_discarded())
    throw std::runtime_error("checkpoint: corrupt manifest in " + path);
  if (manifest.value("format", "") != kFormat)
    throw std::runtime_error("checkpoint: unsupported format in " + path);
  return manifest;
}

void read_arrays(std::ifstream& in, const std::string& path, const json& manifest,
                 std::vector<StateRef<float>>& refs) {
  const json& arrays = manifest.at("arrays");
  if (arrays.size() != refs.size())
    throw std::runtime_error("checkpoint: array count mismatch in " + path);
  for (size_t i = 0; i < refs.size(); ++i) {
    const json& a = arrays.at(i);
    if (a.at("name") != refs[i].name)
      throw std::runtime_error("checkpoint: array order mismatch in " + path + " (expected " +
                               refs[i].name + ", found " + a.at("name").get<std::string>() +
                               ")");
    size_t count = 1;
    for (const auto& d : a.at("shape")) count *= d.get<size_t>();
    if (count != refs[i].value->size())
      throw std::runtime_error("checkpoint: shape mismatch for " + refs[i].name + " in " +
                               path);
    in.read(reinterpret_cast<char*>(refs[i].value->data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated array data in " + path);
  }
  // The archive must end exactly where the last array does.
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
}

}  // namespace

json model_config_json(const ModelConfig& cfg) {
  return json{{"img_h", cfg.img_h},
              {"img_w", cfg.img_w},
              {"hm_h", cfg.hm_h},
              {"hm_w", cfg.hm_w},
              {"base_channels", cfg.base_channels},
              {"head_hidden", cfg.head_hidden},
              {"kanet_channels", cfg.kanet_channels}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.img_h = j.at("img_h");
  cfg.img_w = j.at("img_w");
  cfg.hm_h = j.at("hm_h");
  cfg.hm_w = j.at("hm_w");
  cfg.base_channels = j.at("base_channels");
  cfg.head_hidden = j.at("head_hidden");
  cfg.kanet_channels = j.at("kanet_channels");
  return cfg;
}

std::string config_hash(const ModelConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash_tag(model_config_json(cfg).dump())));
  return buf;
}

void save_model_checkpoint(const std::string& path, IncrementalModel& model) {
  auto refs = model.state();
  json manifest{{"format", kFormat},
                {"kind", "model"},
                {"config", model_config_json(model.config())},
                {"config_hash", config_hash(model.config())},
                {"group_sizes", model.group_sizes()},
                {"step_index", model.step_index()},
                {"frozen", model.is_frozen()},
                {"arrays", arrays_entry(refs)}};
  write_archive(path, manifest, refs);
}

IncrementalModel load_model_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  json manifest = read_manifest(in, path);
  if (manifest.value("kind", "") != "model")
    throw std::runtime_error("checkpoint: " + path + " is not a model archive");
  ModelConfig cfg = model_config_from_json(manifest.at("config"));
  if (manifest.value("config_hash", "") != config_hash(cfg))
    throw std::runtime_error("checkpoint: config hash mismatch in " + path);
  std::vector<int> groups = manifest.at("group_sizes").get<std::vector<int>>();
  IncrementalModel model = IncrementalModel::with_topology(cfg, groups);
  auto refs = model.state();
  read_arrays(in, path, manifest, refs);
  if (manifest.value("frozen", false)) return model.snapshot_frozen();
  return model;
}

void save_kanet_checkpoint(const std::string& path, KANet& net) {
  auto refs = net.state();
  const int feature_channels = net.conv1().in_channels() / 2;
  const int hidden = net.conv1().out_channels();
  json manifest{{"format", kFormat},
                {"kind", "kanet"},
                {"feature_channels", feature_channels},
                {"hidden", hidden},
                {"frozen", net.is_frozen()},
                {"arrays", arrays_entry(refs)}};
  write_archive(path, manifest, refs);
}

KANet load_kanet_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  json manifest = read_manifest(in, path);
  if (manifest.value("kind", "") != "kanet")
    throw std::runtime_error("checkpoint: " + path + " is not an association-net archive");
  KANet net(manifest.at("feature_channels").get<int>(), manifest.at("hidden").get<int>());
  auto refs = net.state();
  read_arrays(in, path, manifest, refs);
  if (manifest.value("frozen", false)) net.freeze();
  return net;
}

}  // namespace kamp
