// SPDX-License-Identifier: Apache-2.0
// depthmesh command-line entry point.

#include "depthmesh/diagnostics.hpp"
#include "depthmesh/io.hpp"
#include "depthmesh/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace depthmesh;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool verbose = false;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config_path, "JSON run configuration (missing keys use defaults)")
      ->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Overrides the configured seed");
  app->add_option("--out", o.out_dir, "Output directory")->required();
  app->add_flag("--verbose", o.verbose, "Per-epoch progress on stderr");
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunConfig load_config(const CommonOptions& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : parse_run_config(read_file(o.config_path));
  if (o.seed) c.seed = *o.seed;
  c.out_dir = o.out_dir;
  c.validate();
  return c;
}

ProgressFn progress_printer(const CommonOptions& o) {
  if (!o.verbose) return {};
  return [](const EpochLog& e) {
    std::cerr << "phase " << e.phase << " epoch " << e.epoch << " lr " << e.learning_rate
              << " loss " << e.mean_loss << '\n';
  };
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text << '\n';
}

void fill_provenance(RunReport& report, const RunConfig& config, const Dataset& data) {
  report.config_json = run_config_to_json(config);
  report.config_hash = sha256_hex(report.config_json);
  report.train_hash = dataset_hash(data.train);
  report.eval_hash = dataset_hash(data.eval);
}

json brief(const RunReport& r) {
  return {{"label", r.label},
          {"mpjpe_mm", r.metrics.mean_mpjpe()},
          {"pa_mpjpe_mm", r.metrics.mean_pa_mpjpe()},
          {"mpvpe_mm", r.metrics.mean_mpvpe()},
          {"accel_mm_s2", r.metrics.mean_accel()}};
}

// ---------------------------------------------------------------------------

int cmd_train(const CommonOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig config = load_config(o);
  const BodyTemplate tmpl = make_body(config.body);
  const Dataset data = make_run_dataset(tmpl, config);
  RunReport report;
  report.label = "train";
  const TrainedModel model = train(config, tmpl, data, &report, progress_printer(o));
  report.metrics = evaluate(tmpl, model, data.eval, config);
  fill_provenance(report, config, data);
  report.seconds = seconds_since(start);
  write_run_outputs(config.out_dir, report);
  std::cout << json{{"status", "ok"}, {"command", "train"}, {"result", brief(report)}}.dump() << '\n';
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig config = load_config(o);
  const BodyTemplate tmpl = make_body(config.body);
  const Dataset data = make_run_dataset(tmpl, config);
  TrainedModel model{config.model, init_params(config, tmpl)};
  if (!checkpoint.empty()) params_from_container(model.params, load_container(checkpoint, "model-params"));
  RunReport report;
  report.label = checkpoint.empty() ? "eval (initialization)" : "eval";
  report.metrics = evaluate(tmpl, model, data.eval, config);
  fill_provenance(report, config, data);
  report.seconds = seconds_since(start);
  write_run_outputs(config.out_dir, report);
  std::cout << json{{"status", "ok"}, {"command", "eval"}, {"result", brief(report)}}.dump() << '\n';
  return 0;
}

int cmd_ablate(const CommonOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig config = load_config(o);
  const std::vector<RunReport> reports = ablation_suite(config, progress_printer(o));
  fs::create_directories(config.out_dir);
  write_table2((fs::path(config.out_dir) / "table2.csv").string(), reports);
  json cells = json::array();
  json brief_cells = json::array();
  for (const RunReport& r : reports) {
    cells.push_back(json::parse(summary_json(r)));
    brief_cells.push_back(brief(r));
  }
  json summary{{"cells", cells}, {"seconds", seconds_since(start)}};
  write_text(fs::path(config.out_dir) / "summary.json", summary.dump(2));
  std::cout << json{{"status", "ok"}, {"command", "ablate"}, {"result", brief_cells}}.dump() << '\n';
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::vector<int>& lengths) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig config = load_config(o);
  const std::vector<SweepRow> rows = seq_length_sweep(config, lengths, progress_printer(o));
  fs::create_directories(config.out_dir);
  write_sweep((fs::path(config.out_dir) / "sweep.csv").string(), rows);
  json out = json::array();
  for (const SweepRow& r : rows) {
    out.push_back({{"frames", r.frames}, {"mpjpe_mm", r.mpjpe}, {"pa_mpjpe_mm", r.pa_mpjpe},
                   {"accel_mm_s2", r.accel}});
  }
  const std::string config_json = run_config_to_json(config);
  json summary{{"rows", out},
               {"config", json::parse(config_json)},
               {"hashes", {{"config", sha256_hex(config_json)}}},
               {"seconds", seconds_since(start)}};
  write_text(fs::path(config.out_dir) / "summary.json", summary.dump(2));
  std::cout << json{{"status", "ok"}, {"command", "sweep"}, {"result", out}}.dump() << '\n';
  return 0;
}

int cmd_gen_data(const CommonOptions& o) {
  const RunConfig config = load_config(o);
  const BodyTemplate tmpl = make_body(config.body);
  const Dataset data = make_run_dataset(tmpl, config);
  const fs::path root(config.out_dir);
  json manifest{{"config", json::parse(run_config_to_json(config))}};
  for (const auto& [split, samples] : {std::pair{"train", &data.train}, std::pair{"eval", &data.eval}}) {
    fs::create_directories(root / split);
    json files = json::array();
    for (const SequenceSample& s : *samples) {
      const std::string name = s.id + ".txt";
      save_container((root / split / name).string(), sample_to_container(s));
      files.push_back(std::string(split) + "/" + name);
    }
    manifest[split] = {{"count", samples->size()}, {"hash", dataset_hash(*samples)}, {"files", files}};
  }
  write_text(root / "manifest.json", manifest.dump(2));
  std::cout << json{{"status", "ok"},
                    {"command", "gen-data"},
                    {"result", {{"train", data.train.size()}, {"eval", data.eval.size()}}}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_grad_check(const CommonOptions& o, int instances) {
  const RunConfig config = load_config(o);
  const std::vector<BlockCheckSummary> blocks = run_block_grad_checks(instances, config.seed);
  json rows = json::array();
  bool passed = true;
  for (const BlockCheckSummary& b : blocks) {
    rows.push_back({{"block", b.block},
                    {"instances", b.instances},
                    {"entries", b.entries},
                    {"max_rel_error", b.max_rel_error},
                    {"passed", b.passed}});
    passed = passed && b.passed;
  }
  fs::create_directories(config.out_dir);
  write_text(fs::path(config.out_dir) / "grad_check.json",
             json{{"seed", config.seed}, {"passed", passed}, {"blocks", rows}}.dump(2));
  if (!passed) {
    std::cerr << json{{"status", "error"},
                      {"error", {{"type", "grad_check_failed"}, {"blocks", rows}}}}
                     .dump()
              << '\n';
    return 1;
  }
  std::cout << json{{"status", "ok"}, {"command", "grad-check"}, {"result", rows}}.dump() << '\n';
  return 0;
}

void print_error(const std::string& type, const std::string& message) {
  std::cerr << json{{"status", "error"}, {"error", {{"type", type}, {"message", message}}}}.dump()
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-aware temporal human mesh recovery on synthetic sequences"};
  app.require_subcommand(1);

  CommonOptions train_o, eval_o, ablate_o, sweep_o, gen_o, grad_o;
  std::string checkpoint;
  std::vector<int> lengths{8, 16, 24, 32};
  int instances = 100;

  add_common(app.add_subcommand("train", "Two-phase training, then evaluation"), train_o);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint (or the initialization)");
  add_common(eval, eval_o);
  eval->add_option("--checkpoint", checkpoint, "Parameter container written by train")
      ->check(CLI::ExistingFile);
  add_common(app.add_subcommand("ablate", "All six ablation cells on shared data"), ablate_o);
  CLI::App* sweep = app.add_subcommand("sweep", "Train and evaluate at several sequence lengths");
  add_common(sweep, sweep_o);
  sweep->add_option("--lengths", lengths, "Sequence lengths, each >= 3")->delimiter(',');
  add_common(app.add_subcommand("gen-data", "Write the synthetic train and eval splits"), gen_o);
  CLI::App* grad = app.add_subcommand("grad-check", "Finite-difference check of every learned block");
  add_common(grad, grad_o);
  grad->add_option("--instances", instances, "Random instances per block")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(train_o);
    if (app.got_subcommand("eval")) return cmd_eval(eval_o, checkpoint);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate_o);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_o, lengths);
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_o);
    if (app.got_subcommand("grad-check")) return cmd_grad_check(grad_o, instances);
  } catch (const std::invalid_argument& e) {
    print_error("invalid_argument", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 1;
}
