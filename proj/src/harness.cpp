#include "kamp/harness.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "kamp/checkpoint.hpp"
#include "kamp/rng.hpp"

namespace fs = std::filesystem;

namespace kamp {

using nlohmann::json;

// ------------------------------ flat config ------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

FlatConfig FlatConfig::parse(const std::string& text) {
  FlatConfig fc;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3)
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": empty section name");
      fc.sections_[section];  // a section may legitimately stay empty
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value, got '" + t + "'");
    if (section.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": key outside any [section]");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    auto& sec = fc.sections_[section];
    if (sec.count(key))
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": duplicate key '" + section + "." + key + "'");
    sec[key] = value;
  }
  return fc;
}

FlatConfig FlatConfig::parse_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string FlatConfig::serialize() const {
  std::string out;
  bool first = true;
  for (const auto& [section, kv] : sections_) {
    if (!first) out += "\n";
    first = false;
    out += "[" + section + "]\n";
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  }
  return out;
}

bool FlatConfig::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

const std::string& FlatConfig::get(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  if (it == sections_.end() || !it->second.count(key))
    throw std::invalid_argument("config: missing key " + section + "." + key);
  return it->second.at(key);
}

std::string FlatConfig::get_or(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

void FlatConfig::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  if (section.empty() || key.empty())
    throw std::invalid_argument("config: empty section or key");
  sections_[section][key] = value;
}

void FlatConfig::apply_override(const std::string& dotted) {
  const size_t dot = dotted.find('.');
  const size_t eq = dotted.find('=');
  if (dot == std::string::npos || eq == std::string::npos || dot > eq)
    throw std::invalid_argument("config override must look like section.key=value, got '" +
                                dotted + "'");
  set(trim(dotted.substr(0, dot)), trim(dotted.substr(dot + 1, eq - dot - 1)),
      trim(dotted.substr(eq + 1)));
}

// -------------------- RunConfig <-> flat-config bridge --------------------

namespace {

// Scalars cross the text format as their JSON literal, except strings, which
// stay bare for hand-editing.
std::string scalar_text(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

json scalar_from_text(const std::string& text, bool expect_string, const std::string& where) {
  if (expect_string) return json(text);
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded() || v.is_string() || v.is_object() || v.is_array())
    throw std::invalid_argument("config: " + where + " expects a number, got '" + text + "'");
  return v;
}

}  // namespace

FlatConfig run_config_to_flat(const RunConfig& cfg) {
  FlatConfig fc;
  const json j = run_config_json(cfg);
  for (const auto& [k, v] : j.items()) {
    if (k == "model") {
      for (const auto& [mk, mv] : v.items()) fc.set("model", mk, scalar_text(mv));
    } else {
      fc.set("run", k, scalar_text(v));
    }
  }
  return fc;
}

RunConfig run_config_from_flat(const FlatConfig& fc) {
  const json defaults = run_config_json(RunConfig{});
  json j = defaults;
  auto it = fc.sections().find("run");
  if (it != fc.sections().end()) {
    for (const auto& [k, v] : it->second) {
      if (k == "model" || !defaults.contains(k))
        throw std::invalid_argument("config: unknown key run." + k);
      j[k] = scalar_from_text(v, defaults.at(k).is_string(), "run." + k);
    }
  }
  it = fc.sections().find("model");
  if (it != fc.sections().end()) {
    for (const auto& [k, v] : it->second) {
      if (!defaults.at("model").contains(k))
        throw std::invalid_argument("config: unknown key model." + k);
      j["model"][k] = scalar_from_text(v, false, "model." + k);
    }
  }
  return run_config_from_json(j);
}

// ----------------------------- ids and hashes ----------------------------

namespace {

std::string hex16(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string run_config_hash(const RunConfig& cfg) {
  return hex16(hash_tag(run_config_json(cfg).dump()));
}

std::string run_id_for(const RunConfig& cfg, const std::string& dataset_descriptor,
                       const std::vector<uint64_t>& seeds) {
  json ident;
  ident["config"] = run_config_json(cfg);
  ident["dataset"] = dataset_descriptor;
  ident["seeds"] = seeds;
  const std::string text = ident.dump();
  std::string id;
  for (int i = 0; i < 3; ++i) id += hex16(hash_tag(text + "#" + std::to_string(i)));
  return id.substr(0, 40);
}

// ------------------------------- locking ---------------------------------

DirLock::DirLock(const std::string& dir) {
  const std::string path = dir + "/run.lock";
  fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open lock file " + path);
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw invalid_state("run directory is locked by another process: " + dir);
  }
}

DirLock::~DirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

// ---------------------------- run orchestration --------------------------

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  f.flush();
  if (!f) throw std::runtime_error("short write to " + path);
}

// Atomic replace so a crash never leaves a half-written manifest.
void write_manifest(const std::string& path, const json& manifest) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, manifest.dump(2) + "\n");
  fs::rename(tmp, path);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

// Bring a records file in line with the manifest: the manifest's
// next_record_id is authoritative, so rows past it (written during a crashed
// step commit) are dropped and a shorter file is corruption.
void heal_records(const std::string& path, uint64_t next_record_id) {
  if (next_record_id == 0) {
    fs::remove(path);
    return;
  }
  if (!fs::exists(path))
    throw invalid_state("records file missing but manifest expects " +
                        std::to_string(next_record_id) + " rows: " + path);
  std::vector<std::string> lines = read_lines(path);
  if (lines.size() < next_record_id)
    throw invalid_state("records file shorter than the manifest expects: " + path);
  if (lines.size() == next_record_id) return;
  std::string out;
  for (uint64_t i = 0; i < next_record_id; ++i) out += lines[static_cast<size_t>(i)] + "\n";
  write_file(path, out);
}

json task_json(const KATaskSpec& t) {
  json j;
  j["target"] = t.target_old;
  j["sources"] = t.sources;
  j["source_is_new"] = t.source_is_new;
  j["mode"] = t.mode;
  j["seed"] = t.seed;
  return j;
}

json fresh_seed_entry(uint64_t seed) {
  json ps;
  ps["done_through"] = -1;
  ps["next_record_id"] = 0;
  ps["records"] = "records_seed" + std::to_string(seed) + ".jsonl";
  ps["checkpoints"] = json::object();
  ps["kanets"] = json::object();
  ps["tasks"] = json::object();
  ps["state"] = json::object();
  return ps;
}

void require_artifacts_exist(const std::string& out_dir, const json& manifest) {
  for (const auto& [seed, ps] : manifest.at("per_seed").items()) {
    const int done = ps.at("done_through");
    if (done >= 0 && !fs::exists(out_dir + "/" + ps.at("records").get<std::string>()))
      throw invalid_state("manifest references a missing records file for seed " + seed);
    for (const auto& key : {"checkpoints", "kanets"})
      for (const auto& [step, rel] : ps.at(key).items())
        if (!fs::exists(out_dir + "/" + rel.get<std::string>()))
          throw invalid_state("manifest references a missing artifact: " +
                              rel.get<std::string>());
  }
}

struct SeedRunner {
  const RunOptions& opts;
  json& manifest;
  const std::string& run_id;
  const std::string& config_hash;
  std::ostream* log;
  int commits_done = 0;

  void note(const std::string& msg) const {
    if (log) *log << msg << "\n";
  }

  void maybe_abort() {
    ++commits_done;
    if (opts.abort_after_commits >= 0 && commits_done >= opts.abort_after_commits)
      throw invalid_state("fault injection: aborted after " +
                          std::to_string(commits_done) + " commits");
  }

  void run(uint64_t seed) {
    json& ps = manifest["per_seed"][std::to_string(seed)];
    if (ps.is_null()) ps = fresh_seed_entry(seed);
    const int final_step = [&] {
      DatasetBundle probe = DatasetBundle::load(opts.data_dir);
      return probe.num_steps() - 1;
    }();
    int done = ps.at("done_through");
    if (done >= final_step) {
      note("seed " + std::to_string(seed) + ": already complete");
      return;
    }
    const std::string rec_path = opts.out_dir + "/" + ps.at("records").get<std::string>();
    heal_records(rec_path, ps.at("next_record_id").get<uint64_t>());

    DatasetBundle bundle = DatasetBundle::load(opts.data_dir);
    std::vector<json> buffer;
    ProtocolDriver driver(bundle, opts.config, seed,
                          [&buffer](json&& row) { buffer.push_back(std::move(row)); });

    auto commit = [&](int t, IncrementalModel& model, const StepArtifacts* art) {
      uint64_t id = ps.at("next_record_id").get<uint64_t>();
      std::ofstream f(rec_path, std::ios::binary | std::ios::app);
      if (!f) throw std::runtime_error("cannot append to " + rec_path);
      if (id == 0) {
        json header;
        header["record"] = "header";
        header["schema"] = "kamp-records-v1";
        header["run_id"] = run_id;
        header["config_hash"] = config_hash;
        header["dataset"] = bundle.descriptor();
        header["method"] = to_string(opts.config.method);
        header["seed"] = seed;
        header["id"] = 0;
        f << header.dump() << "\n";
        id = 1;
      }
      for (auto& row : buffer) {
        row["id"] = id++;
        f << row.dump() << "\n";
      }
      buffer.clear();
      f.flush();
      if (!f) throw std::runtime_error("short write to " + rec_path);

      const std::string stem =
          "checkpoints/seed" + std::to_string(seed) + "_step" + std::to_string(t);
      save_model_checkpoint(opts.out_dir + "/" + stem + ".ckpt", model);
      ps["checkpoints"][std::to_string(t)] = stem + ".ckpt";
      if (art && art->kanet.has_value()) {
        KANet net = *art->kanet;  // save path needs non-const access to state
        save_kanet_checkpoint(opts.out_dir + "/" + stem + ".kanet", net);
        ps["kanets"][std::to_string(t)] = stem + ".kanet";
      }
      if (art && art->task.has_value()) ps["tasks"][std::to_string(t)] = task_json(*art->task);
      ps["done_through"] = t;
      ps["next_record_id"] = id;
      ps["state"] = driver.state().to_json();
      write_manifest(opts.out_dir + "/manifest.json", manifest);
    };

    if (opts.config.method == Method::joint) {
      note("seed " + std::to_string(seed) + ": joint training");
      IncrementalModel model = driver.run_joint();
      commit(final_step, model, nullptr);
      maybe_abort();
      return;
    }

    IncrementalModel model;
    if (done < 0) {
      note("seed " + std::to_string(seed) + ": step 0");
      model = driver.train_step0();
      driver.evaluate_step(model, 0);
      commit(0, model, nullptr);
      maybe_abort();
      done = 0;
    } else {
      note("seed " + std::to_string(seed) + ": resuming after step " + std::to_string(done));
      const std::string rel = ps.at("checkpoints").at(std::to_string(done));
      model = load_model_checkpoint(opts.out_dir + "/" + rel);
      if (model.config() != opts.config.model)
        throw invalid_state("checkpoint model configuration differs from the run config");
      if (model.step_index() != done)
        throw invalid_state("checkpoint step does not match manifest progress");
      driver.restore_state(ProtocolState::from_json(ps.at("state")));
    }
    bundle.seal_through(done);
    for (int t = done + 1; t <= final_step; ++t) {
      note("seed " + std::to_string(seed) + ": step " + std::to_string(t));
      StepArtifacts art = driver.train_incremental(model, t);
      driver.evaluate_step(model, t);
      commit(t, model, &art);
      maybe_abort();
      bundle.seal_through(t);
    }
  }
};

}  // namespace

json run_benchmark(const RunOptions& opts, std::ostream* log) {
  RunConfig cfg = opts.config;
  cfg.validate();
  if (opts.seeds.empty()) throw std::invalid_argument("run: need at least one seed");
  {
    std::vector<uint64_t> sorted = opts.seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("run: duplicate seeds");
  }
  fs::create_directories(opts.out_dir + "/checkpoints");
  DirLock lock(opts.out_dir);

  const std::string descriptor = DatasetBundle::load(opts.data_dir).descriptor();
  const std::string cfg_hash = run_config_hash(cfg);
  const std::string rid = run_id_for(cfg, descriptor, opts.seeds);

  // The stored configuration is authoritative for the directory: a rerun with
  // a different config, dataset, or seed list must not silently mix records.
  const std::string ini_path = opts.out_dir + "/config.ini";
  const std::string ini_text = run_config_to_flat(cfg).serialize();
  if (fs::exists(ini_path)) {
    if (slurp(ini_path) != ini_text)
      throw invalid_state("run directory holds a different config.ini; use a fresh --out");
  } else {
    write_file(ini_path, ini_text);
  }

  const std::string man_path = opts.out_dir + "/manifest.json";
  json manifest;
  if (fs::exists(man_path)) {
    manifest = json::parse(slurp(man_path));
    if (manifest.value("format", "") != "kamp-run-v1")
      throw invalid_state("unsupported manifest format in " + opts.out_dir);
    if (manifest.value("run_id", "") != rid)
      throw invalid_state(
          "run directory belongs to a different run (config/dataset/seeds changed); "
          "use a fresh --out");
    require_artifacts_exist(opts.out_dir, manifest);
  } else {
    manifest["format"] = "kamp-run-v1";
    manifest["run_id"] = rid;
    manifest["config_hash"] = cfg_hash;
    manifest["method"] = to_string(cfg.method);
    manifest["dataset"] = {{"dir", opts.data_dir}, {"descriptor", descriptor}};
    manifest["seeds"] = opts.seeds;
    manifest["complete"] = false;
    manifest["per_seed"] = json::object();
    write_manifest(man_path, manifest);
  }

  RunOptions normalized = opts;
  normalized.config = cfg;
  SeedRunner runner{normalized, manifest, rid, cfg_hash, log};
  for (uint64_t seed : opts.seeds) runner.run(seed);

  manifest["complete"] = true;
  write_manifest(man_path, manifest);
  write_file(opts.out_dir + "/summary.json", build_summary(opts.out_dir).dump(2) + "\n");
  return manifest;
}

// -------------------------------- summary --------------------------------

namespace {

struct MetricSample {
  uint64_t seed;
  double value;
  std::string file;
  uint64_t id;
};

// metric rows per (step, name), in deterministic order.
std::map<std::pair<int, std::string>, std::vector<MetricSample>> collect_metrics(
    const std::string& run_dir, const json& manifest) {
  std::map<std::pair<int, std::string>, std::vector<MetricSample>> out;
  std::vector<std::pair<uint64_t, json>> seeds;
  for (const auto& [seed_str, ps] : manifest.at("per_seed").items())
    seeds.emplace_back(std::stoull(seed_str), ps);
  std::sort(seeds.begin(), seeds.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [seed, ps] : seeds) {
    const std::string rel = ps.at("records");
    for (const std::string& line : read_lines(run_dir + "/" + rel)) {
      if (line.empty()) continue;
      json row = json::parse(line);
      if (row.value("record", "") != "metric") continue;
      out[std::make_pair(row.at("step").get<int>(), row.at("name").get<std::string>())]
          .push_back(MetricSample{seed, row.at("value").get<double>(), rel,
                                  row.at("id").get<uint64_t>()});
    }
  }
  return out;
}

std::pair<double, double> mean_std(const std::vector<MetricSample>& xs) {
  double mean = 0;
  for (const auto& x : xs) mean += x.value;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double var = 0;
  for (const auto& x : xs) var += (x.value - mean) * (x.value - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size() - 1))};
}

}  // namespace

json build_summary(const std::string& run_dir) {
  const json manifest = json::parse(slurp(run_dir + "/manifest.json"));
  auto metrics = collect_metrics(run_dir, manifest);
  json out;
  out["format"] = "kamp-summary-v1";
  out["run_id"] = manifest.at("run_id");
  out["method"] = manifest.at("method");
  out["seeds"] = manifest.at("seeds");
  out["metrics"] = json::array();
  for (const auto& [key, samples] : metrics) {
    auto [mean, sd] = mean_std(samples);
    json entry;
    entry["step"] = key.first;
    entry["name"] = key.second;
    entry["mean"] = mean;
    entry["std"] = sd;
    entry["per_seed"] = json::object();
    for (const auto& s : samples)
      entry["per_seed"][std::to_string(s.seed)] = {
          {"value", s.value}, {"file", s.file}, {"id", s.id}};
    out["metrics"].push_back(std::move(entry));
  }
  return out;
}

// -------------------------------- report ---------------------------------

namespace {

struct RunView {
  std::string dir;
  std::string label;   // method, disambiguated when methods repeat
  std::string method;
  json summary;        // kamp-summary-v1
};

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

const json* find_metric(const json& summary, int step, const std::string& name) {
  for (const auto& e : summary.at("metrics"))
    if (e.at("step") == step && e.at("name") == name) return &e;
  return nullptr;
}

std::string cell_text(const json* e) {
  if (!e) return "-";
  return fmt2(e->at("mean")) + "\xC2\xB1" + fmt2(e->at("std"));  // ±
}

std::string pad(const std::string& s, size_t w) {
  // Pad by display length; the ± glyph is two bytes but one column.
  size_t display = s.size();
  if (s.find("\xC2\xB1") != std::string::npos) display -= 1;
  return s + std::string(display < w ? w - display : 0, ' ');
}

// Minimal line-plot SVG: per-run mean curve with error bars and a legend.
std::string curve_svg(const std::vector<RunView>& runs, const std::string& metric,
                      const std::string& y_label, int num_steps) {
  const double W = 640, H = 420, L = 70, R = 170, T = 40, B = 50;
  const double plot_w = W - L - R, plot_h = H - T - B;
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                           "#ff7f0e", "#8c564b", "#17becf", "#e377c2"};
  const size_t n_colors = sizeof(palette) / sizeof(palette[0]);

  double lo = 1e300, hi = -1e300;
  for (const auto& r : runs)
    for (int t = 0; t < num_steps; ++t)
      if (const json* e = find_metric(r.summary, t, metric)) {
        const double m = e->at("mean"), s = e->at("std");
        lo = std::min(lo, m - s);
        hi = std::max(hi, m + s);
      }
  if (lo > hi) {
    lo = 0;
    hi = 1;
  }
  if (hi - lo < 1e-9) {
    lo -= 1;
    hi += 1;
  }
  const double padding = 0.05 * (hi - lo);
  lo -= padding;
  hi += padding;

  auto xpos = [&](int t) {
    return num_steps == 1 ? L + plot_w / 2
                          : L + plot_w * static_cast<double>(t) / (num_steps - 1);
  };
  auto ypos = [&](double v) { return T + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << L << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">"
      << y_label << " per step</text>\n";

  // Axes and ticks.
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T + plot_h << "\" x2=\"" << L + plot_w
      << "\" y2=\"" << T + plot_h << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    const double y = ypos(v);
    svg << "<line x1=\"" << L - 4 << "\" y1=\"" << y << "\" x2=\"" << L + plot_w
        << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << L - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt2(v)
        << "</text>\n";
  }
  for (int t = 0; t < num_steps; ++t) {
    const double x = xpos(t);
    svg << "<text x=\"" << x << "\" y=\"" << T + plot_h + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << t
        << "</text>\n";
  }
  svg << "<text x=\"" << L + plot_w / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n";

  for (size_t ri = 0; ri < runs.size(); ++ri) {
    const char* color = palette[ri % n_colors];
    std::string points;
    for (int t = 0; t < num_steps; ++t) {
      const json* e = find_metric(runs[ri].summary, t, metric);
      if (!e) continue;
      const double x = xpos(t), y = ypos(e->at("mean"));
      const double s = e->at("std");
      if (!points.empty()) points += " ";
      points += fmt2(x) + "," + fmt2(y);
      svg << "<line x1=\"" << x << "\" y1=\"" << ypos(e->at("mean").get<double>() - s)
          << "\" x2=\"" << x << "\" y2=\"" << ypos(e->at("mean").get<double>() + s)
          << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
      svg << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
    }
    if (!points.empty())
      svg << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\"/>\n";
    const double ly = T + 16 * static_cast<double>(ri);
    svg << "<rect x=\"" << L + plot_w + 16 << "\" y=\"" << ly - 9
        << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
    svg << "<text x=\"" << L + plot_w + 34 << "\" y=\"" << ly + 2
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << runs[ri].label
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

void write_report(const ReportInputs& in) {
  if (in.run_dirs.empty()) throw std::invalid_argument("report: empty run set");
  std::vector<RunView> runs;
  std::map<std::string, int> method_count;
  int num_steps = 0;
  for (const std::string& dir : in.run_dirs) {
    RunView rv;
    rv.dir = dir;
    const json manifest = json::parse(slurp(dir + "/manifest.json"));
    rv.method = manifest.at("method");
    rv.summary = fs::exists(dir + "/summary.json") ? json::parse(slurp(dir + "/summary.json"))
                                                   : build_summary(dir);
    rv.label = rv.method;
    ++method_count[rv.method];
    for (const auto& e : rv.summary.at("metrics"))
      num_steps = std::max(num_steps, e.at("step").get<int>() + 1);
    runs.push_back(std::move(rv));
  }
  // Disambiguate repeated methods by their run id prefix.
  std::map<std::string, int> seen;
  for (auto& rv : runs)
    if (method_count[rv.method] > 1)
      rv.label += "@" + rv.summary.at("run_id").get<std::string>().substr(0, 6);

  fs::create_directories(in.out_dir);

  // --- comparison grid -----------------------------------------------------
  const std::vector<std::pair<std::string, std::string>> columns = {
      {"aaa", "AAA"}, {"a_mre", "A-MRE"}, {"at", "AT"}, {"mt", "MT"}};
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"method", "step", "AAA", "A-MRE", "AT", "MT"});
  json cells = json::array();
  for (const auto& rv : runs) {
    for (int t = 0; t < num_steps; ++t) {
      bool any = false;
      std::vector<std::string> row = {rv.label, std::to_string(t)};
      for (const auto& [name, title] : columns) {
        const json* e = find_metric(rv.summary, t, name);
        row.push_back(cell_text(e));
        if (!e) continue;
        any = true;
        json cell;
        cell["run"] = rv.dir;
        cell["method"] = rv.label;
        cell["step"] = t;
        cell["metric"] = name;
        cell["mean"] = e->at("mean");
        cell["std"] = e->at("std");
        cell["per_seed"] = e->at("per_seed");
        cells.push_back(std::move(cell));
      }
      if (any) grid.push_back(std::move(row));
    }
  }
  std::vector<size_t> widths(grid[0].size(), 0);
  for (const auto& row : grid)
    for (size_t c = 0; c < row.size(); ++c) {
      size_t display = row[c].size();
      if (row[c].find("\xC2\xB1") != std::string::npos) display -= 1;
      widths[c] = std::max(widths[c], display);
    }
  std::string text;
  for (const auto& row : grid) {
    for (size_t c = 0; c < row.size(); ++c)
      text += pad(row[c], widths[c]) + (c + 1 < row.size() ? "  " : "");
    text += "\n";
  }
  write_file(in.out_dir + "/report.txt", text);

  json report;
  report["format"] = "kamp-report-v1";
  report["runs"] = json::array();
  for (const auto& rv : runs)
    report["runs"].push_back({{"dir", rv.dir},
                              {"method", rv.label},
                              {"run_id", rv.summary.at("run_id")},
                              {"seeds", rv.summary.at("seeds")}});
  report["cells"] = std::move(cells);
  write_file(in.out_dir + "/report.json", report.dump(2) + "\n");

  write_file(in.out_dir + "/aaa_vs_step.svg", curve_svg(runs, "aaa", "AAA", num_steps));
  write_file(in.out_dir + "/a_mre_vs_step.svg", curve_svg(runs, "a_mre", "A-MRE", num_steps));
}

std::string default_out_root() {
  const char* env = std::getenv("KAMP_OUT_ROOT");
  return (env && *env) ? std::string(env) : std::string("runs");
}

}  // namespace kamp
