#pragma once

// Benchmark harness: flat text configuration, locked run directories with
// resumable per-seed execution, line-record persistence with stable ids, and
// report generation (comparison grid, machine-readable cells, SVG curves).
//
// Run directory layout:
//   run.lock                   advisory lock; concurrent runs must use
//                              distinct directories
//   config.ini                 the run's flat configuration (drift-checked)
//   manifest.json              run id, hashes, per-seed progress + artifacts
//   records_seed<S>.jsonl      one JSON object per line; line i carries id i
//   checkpoints/               per-step model / association-net archives
//   summary.json               per-(step, metric) aggregates once complete

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kamp/trainer.hpp"

namespace kamp {

// ------------------------------ flat config ------------------------------

// Human-editable sectioned key=value text.  Canonical serialization (sorted
// sections and keys) guarantees parse(serialize(c)) == c.
class FlatConfig {
 public:
  static FlatConfig parse(const std::string& text);
  static FlatConfig parse_file(const std::string& path);
  std::string serialize() const;

  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  void set(const std::string& section, const std::string& key, const std::string& value);

  // "section.key=value" override, as accepted on the command line.
  void apply_override(const std::string& dotted);

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }
  bool operator==(const FlatConfig&) const = default;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

// RunConfig <-> flat-config sections [run] and [model].  Unknown keys throw.
FlatConfig run_config_to_flat(const RunConfig& cfg);
RunConfig run_config_from_flat(const FlatConfig& fc);

// ----------------------------- ids and hashes ----------------------------

// Stable hash of the full run configuration (16 hex chars).
std::string run_config_hash(const RunConfig& cfg);

// Content-derived 40-hex run identifier over (config, dataset, seeds).
std::string run_id_for(const RunConfig& cfg, const std::string& dataset_descriptor,
                       const std::vector<uint64_t>& seeds);

// ------------------------------- locking ---------------------------------

// Advisory exclusive lock on <dir>/run.lock held for the object's lifetime.
// Throws invalid_state when another process holds the directory.
class DirLock {
 public:
  explicit DirLock(const std::string& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

// ---------------------------- run orchestration --------------------------

struct RunOptions {
  std::string data_dir;         // dataset bundle directory
  std::string out_dir;          // run directory (created if needed)
  RunConfig config;
  std::vector<uint64_t> seeds;  // executed in order

  // Fault injection for resume tests: when >= 0, throw after that many step
  // commits, leaving the directory exactly as an interrupted process would.
  int abort_after_commits = -1;
};

// Execute or resume a run: every (seed, step) unit is committed atomically
// (records appended, checkpoints written, manifest updated) so a rerun after
// an interruption continues at the first incomplete step and produces records
// byte-identical to an uninterrupted run.  Returns the final manifest.
nlohmann::json run_benchmark(const RunOptions& opts, std::ostream* log = nullptr);

// Aggregates written to summary.json once every seed completed.
nlohmann::json build_summary(const std::string& run_dir);

// -------------------------------- report ---------------------------------

struct ReportInputs {
  std::vector<std::string> run_dirs;  // completed run directories
  std::string out_dir;                // receives report.txt/.json and .svg files
};

// Read-only over the run directories.  Emits a method x step comparison grid
// (report.txt), traceable per-cell aggregates (report.json, each value tagged
// with its records file and line id), and per-step metric curves
// (aaa_vs_step.svg, a_mre_vs_step.svg).  Throws on an empty run set.
void write_report(const ReportInputs& in);

// $KAMP_OUT_ROOT when set, else "runs".
std::string default_out_root();

}  // namespace kamp
