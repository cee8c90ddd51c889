// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/losses_metrics.hpp"
#include "depthmesh/model.hpp"
#include "depthmesh/synth.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace depthmesh {

struct TrainSchedule {
  int phase1_epochs = 4;
  int phase2_epochs = 6;
  double phase1_lr = 1e-2;
  double phase2_lr = 3e-3;
  double momentum = 0.9;
  std::vector<double> decay_points{0.6, 0.85};  // fractions of phase 2
  double decay_factor = 0.1;
  double smooth_delay = 0.5;                    // fraction of phase 2 before L_smooth is enabled
  double grad_clip = 5.0;                       // global norm, 0 disables

  void validate() const;
  /// Learning rate of phase 2 at a zero-based epoch.
  double phase2_rate(int epoch) const;
  bool smooth_enabled(int epoch) const;
};

struct TemplateConfig {
  int joints = 16;
  int shape_dims = 4;
  int vertices = 192;
  std::uint64_t seed = 0;
};

struct RunConfig {
  TemplateConfig body;
  SynthConfig data;
  int train_sequences = 160;
  int eval_sequences = 40;
  ModelConfig model;
  LossWeights weights;
  TrainSchedule schedule;
  std::uint64_t seed = 0;
  std::string out_dir;
  /// Evaluation scores the ground truth itself (pipeline plumbing check).
  bool oracle_bypass = false;

  /// Throws std::invalid_argument with a description of the first problem found.
  void validate() const;
};

/// JSON text in, defaults for missing keys, unknown keys rejected.
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_to_json(const RunConfig& config);

struct EpochLog {
  int phase = 0;
  int epoch = 0;
  double learning_rate = 0.0;
  double mean_loss = 0.0;
};

struct RunReport {
  std::string label;
  std::vector<EpochLog> curve;
  MetricReport metrics;
  double seconds = 0.0;
  std::string config_json;
  std::string config_hash;
  std::string train_hash;
  std::string eval_hash;
};

struct TrainedModel {
  ModelConfig config;
  ModelParams params;
};

using ProgressFn = std::function<void(const EpochLog&)>;

BodyTemplate make_body(const TemplateConfig& config);
Dataset make_run_dataset(const BodyTemplate& tmpl, const RunConfig& config);
ModelParams init_params(const RunConfig& config, const BodyTemplate& tmpl);

/// Mean training loss over the split with the given config (no updates).
double dataset_loss(const BodyTemplate& tmpl, const ModelConfig& model, const ModelParams& params,
                    const std::vector<SequenceSample>& data, const LossWeights& weights);

/// Phase 1: fusion and regressor on the joint term through the regressor path.
std::vector<EpochLog> train_phase1(const RunConfig& config, const BodyTemplate& tmpl,
                                   const std::vector<SequenceSample>& train, ModelParams& params,
                                   const ProgressFn& progress = {});
/// Phase 2: every module under the configured flags with decay and delayed smoothing.
std::vector<EpochLog> train_phase2(const RunConfig& config, const BodyTemplate& tmpl,
                                   const std::vector<SequenceSample>& train, ModelParams& params,
                                   const ProgressFn& progress = {});

/// Both phases from a fresh initialization; checkpoints go to out_dir when set.
TrainedModel train(const RunConfig& config, const BodyTemplate& tmpl, const Dataset& data,
                   RunReport* report = nullptr, const ProgressFn& progress = {});

MetricReport evaluate(const BodyTemplate& tmpl, const TrainedModel& model,
                      const std::vector<SequenceSample>& data, const RunConfig& config);

struct AblationCell {
  std::string name;
  AblationFlags flags;
};

/// RGB-only, +mask fusion, +quality depth, +D-MAPS only, +MoDAR only, complete.
std::vector<AblationCell> ablation_cells();

/// One report per cell on shared data. Cells with identical fusion flags share phase 1.
std::vector<RunReport> ablation_suite(const RunConfig& config, const ProgressFn& progress = {});

struct SweepRow {
  int frames = 0;
  double mpjpe = 0.0;
  double pa_mpjpe = 0.0;
  double accel = 0.0;
};

std::vector<SweepRow> seq_length_sweep(const RunConfig& config, const std::vector<int>& lengths,
                                       const ProgressFn& progress = {});

/// metrics.csv and summary.json.
void write_run_outputs(const std::string& dir, const RunReport& report);
void write_table2(const std::string& path, const std::vector<RunReport>& reports);
void write_sweep(const std::string& path, const std::vector<SweepRow>& rows);
std::string summary_json(const RunReport& report);

}  // namespace depthmesh
