// Command-line front end: dataset generation, benchmark runs, and reports.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "kamp/harness.hpp"

namespace {

std::vector<int> parse_int_list(const std::string& text, const std::string& flag) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::invalid_argument(flag + ": expected a comma-separated integer list, got '" +
                                  text + "'");
    }
  }
  if (out.empty())
    throw std::invalid_argument(flag + ": expected a comma-separated integer list");
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  for (int v : parse_int_list(text, "--seeds")) {
    if (v < 0) throw std::invalid_argument("--seeds: seeds must be non-negative");
    seeds.push_back(static_cast<uint64_t>(v));
  }
  return seeds;
}

int cmd_generate(int keypoints, const std::string& groups, const std::string& train_sizes,
                 int test_size, uint64_t seed, int img_h, int img_w,
                 const std::string& out) {
  kamp::AnatomyGraph graph = kamp::build_default_anatomy(keypoints);
  kamp::KeypointSchedule sched =
      kamp::schedule_from_group_sizes(parse_int_list(groups, "--groups"), keypoints);
  kamp::BundleSizes sizes;
  sizes.train_per_step = parse_int_list(train_sizes, "--train-sizes");
  sizes.test = test_size;
  kamp::generate_bundle(graph, sched, sizes, seed, img_h, img_w, out);
  kamp::DatasetBundle bundle = kamp::DatasetBundle::load(out);
  std::cout << "generated " << out << ": " << keypoints << " keypoints, "
            << bundle.num_steps() << " steps, descriptor " << bundle.descriptor() << "\n";
  return 0;
}

struct RunFlags {
  std::string data, out, config_file, method = "kamp";
  std::string seeds = "0";
  double alpha = -1;  // <0: not set on the command line
  int epochs = -1, epochs_stage1 = -1, batch_size = -1;
  double lr = -1;
  std::vector<std::string> overrides;
};

int cmd_run(const RunFlags& f, const CLI::App* sub) {
  kamp::FlatConfig fc = f.config_file.empty()
                            ? kamp::run_config_to_flat(kamp::RunConfig{})
                            : kamp::FlatConfig::parse_file(f.config_file);
  for (const std::string& ov : f.overrides) fc.apply_override(ov);
  // Dedicated flags win over the file and generic overrides.
  if (sub->count("--method")) fc.set("run", "method", f.method);
  if (sub->count("--alpha")) fc.set("run", "alpha", nlohmann::json(f.alpha).dump());
  if (sub->count("--epochs")) fc.set("run", "epochs_total", std::to_string(f.epochs));
  if (sub->count("--epochs-stage1"))
    fc.set("run", "epochs_stage1", std::to_string(f.epochs_stage1));
  if (sub->count("--batch-size")) fc.set("run", "batch_size", std::to_string(f.batch_size));
  if (sub->count("--lr")) fc.set("run", "lr", nlohmann::json(f.lr).dump());

  kamp::RunOptions opts;
  opts.config = kamp::run_config_from_flat(fc);
  opts.data_dir = f.data;
  opts.seeds = parse_seed_list(f.seeds);
  if (!f.out.empty()) {
    opts.out_dir = f.out;
  } else {
    const std::string descriptor = kamp::DatasetBundle::load(f.data).descriptor();
    opts.out_dir = kamp::default_out_root() + "/" +
                   kamp::run_id_for(opts.config, descriptor, opts.seeds);
  }
  nlohmann::json manifest = kamp::run_benchmark(opts, &std::cout);
  std::cout << "run complete: " << opts.out_dir << " (run id "
            << manifest.at("run_id").get<std::string>() << ")\n"
            << "summary: " << opts.out_dir << "/summary.json\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  kamp::ReportInputs in;
  in.run_dirs = runs;
  in.out_dir = out;
  kamp::write_report(in);
  std::cout << "report written to " << out << " (report.txt, report.json, "
            << "aaa_vs_step.svg, a_mre_vs_step.svg)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental keypoint-learning benchmark"};
  app.require_subcommand(1);

  // ---- generate ----
  int keypoints = 12, test_size = 100, img_h = 128, img_w = 128;
  uint64_t gen_seed = 0;
  std::string groups = "4,2,2,2,2", train_sizes = "300,300,300,300,300", gen_out;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset bundle");
  gen->add_option("--keypoints", keypoints, "Number of keypoints (>= 6)")
      ->capture_default_str();
  gen->add_option("--groups", groups, "Comma-separated keypoints per step")
      ->capture_default_str();
  gen->add_option("--train-sizes", train_sizes, "Comma-separated training images per step")
      ->capture_default_str();
  gen->add_option("--test-size", test_size, "Held-out test images")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generation seed")->capture_default_str();
  gen->add_option("--img-h", img_h, "Image height")->capture_default_str();
  gen->add_option("--img-w", img_w, "Image width")->capture_default_str();
  gen->add_option("--out", gen_out, "Output bundle directory")->required();

  // ---- run ----
  RunFlags rf;
  auto* run = app.add_subcommand("run", "Run or resume a benchmark");
  run->add_option("--data", rf.data, "Dataset bundle directory")->required();
  run->add_option("--out", rf.out,
                  "Run directory (default: $KAMP_OUT_ROOT/<run id>, falling back to "
                  "runs/<run id>)");
  run->add_option("--config", rf.config_file, "Flat config file (sections [run], [model])");
  run->add_option("--set", rf.overrides,
                  "Config override section.key=value (repeatable; applied after --config)");
  run->add_option("--method", rf.method,
                  "kamp | kamp_ksd_only | kamp_random_kanet | lwf | finetune | joint")
      ->capture_default_str();
  run->add_option("--alpha", rf.alpha, "Distillation weight");
  run->add_option("--epochs", rf.epochs, "Total epochs per step");
  run->add_option("--epochs-stage1", rf.epochs_stage1, "Association-net epochs");
  run->add_option("--batch-size", rf.batch_size, "Batch size");
  run->add_option("--lr", rf.lr, "Learning rate");
  run->add_option("--seeds", rf.seeds, "Comma-separated seeds")->capture_default_str();

  // ---- report ----
  std::vector<std::string> report_runs;
  std::string report_out = "report";
  auto* rep = app.add_subcommand("report", "Build comparison tables and plots");
  rep->add_option("--runs", report_runs, "Completed run directories")->required();
  rep->add_option("--out", report_out, "Report output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_generate(keypoints, groups, train_sizes, test_size, gen_seed, img_h, img_w,
                          gen_out);
    if (run->parsed()) return cmd_run(rf, run);
    if (rep->parsed()) return cmd_report(report_runs, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
