// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace depthmesh {
namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.train_sequences = 4;
  c.eval_sequences = 3;
  c.data.frames = 6;
  c.schedule.phase1_epochs = 1;
  c.schedule.phase2_epochs = 2;
  c.seed = 5;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("depthmesh_pipeline_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::vector<Matrix> all_values(ModelParams& params) {
  std::vector<Param*> ps;
  params.collect(ps);
  std::vector<Matrix> out;
  for (const Param* p : ps) out.push_back(p->value);
  return out;
}

TEST(Schedule, DecayAndDelay) {
  TrainSchedule s;
  s.phase2_epochs = 20;
  s.phase2_lr = 1.0;
  EXPECT_DOUBLE_EQ(s.phase2_rate(0), 1.0);
  EXPECT_DOUBLE_EQ(s.phase2_rate(11), 1.0);
  EXPECT_DOUBLE_EQ(s.phase2_rate(12), 0.1);
  EXPECT_DOUBLE_EQ(s.phase2_rate(16), 0.1);
  EXPECT_NEAR(s.phase2_rate(17), 0.01, 1e-15);
  EXPECT_FALSE(s.smooth_enabled(9));
  EXPECT_TRUE(s.smooth_enabled(10));
  s.phase1_epochs = -1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = tiny_config();
  c.weights.smooth = 0.25;
  c.model.flags.modar = false;
  c.data.camera.fps = 25.0;
  const std::string text = run_config_to_json(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(run_config_to_json(back), text);
  EXPECT_EQ(back.weights.smooth, 0.25);
  EXPECT_FALSE(back.model.flags.modar);
  EXPECT_EQ(back.data.camera.fps, 25.0);
}

TEST(Config, MissingKeysUseDefaults) {
  const RunConfig c = parse_run_config(R"({"seed": 9, "schedule": {"phase1_epochs": 2}})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.schedule.phase1_epochs, 2);
  EXPECT_EQ(c.schedule.phase2_epochs, TrainSchedule{}.phase2_epochs);
  EXPECT_EQ(c.train_sequences, 160);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_run_config(R"({"sed": 1})"), std::invalid_argument);
  EXPECT_THROW(parse_run_config(R"({"data": {"frame": 3}})"), std::invalid_argument);
  EXPECT_ANY_THROW(parse_run_config("{not json"));
  RunConfig c = tiny_config();
  c.train_sequences = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.model.flags = {true, true, false, false, false};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Pipeline, ZeroEpochsKeepsInitialization) {
  RunConfig c = tiny_config();
  c.schedule.phase1_epochs = 0;
  c.schedule.phase2_epochs = 0;
  const BodyTemplate tmpl = make_body(c.body);
  const Dataset data = make_run_dataset(tmpl, c);
  RunReport report;
  TrainedModel model = train(c, tmpl, data, &report);
  ModelParams init = init_params(c, tmpl);
  const auto a = all_values(model.params);
  const auto b = all_values(init);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_TRUE(report.curve.empty());
  const MetricReport m = evaluate(tmpl, model, data.eval, c);
  EXPECT_EQ(m.sequences.size(), 3u);
  EXPECT_TRUE(std::isfinite(m.mean_mpjpe()));
}

TEST(Pipeline, PhaseOneDescends) {
  RunConfig c = tiny_config();
  c.train_sequences = 8;
  c.schedule.phase1_epochs = 3;
  const BodyTemplate tmpl = make_body(c.body);
  const Dataset data = make_run_dataset(tmpl, c);
  ModelParams params = init_params(c, tmpl);
  ModelConfig phase1 = c.model;
  phase1.flags.dmaps = false;
  phase1.flags.modar = false;
  LossWeights joint_only{0.0, c.weights.joint, 0.0, 0.0, 0.0};
  const double before = dataset_loss(tmpl, phase1, params, data.train, joint_only);
  const auto logs = train_phase1(c, tmpl, data.train, params);
  const double after = dataset_loss(tmpl, phase1, params, data.train, joint_only);
  ASSERT_EQ(logs.size(), 3u);
  EXPECT_LT(after, before);
}

TEST(Pipeline, RerunIsIdentical) {
  const RunConfig c = tiny_config();
  const BodyTemplate tmpl = make_body(c.body);
  const Dataset data = make_run_dataset(tmpl, c);
  RunReport ra, rb;
  const TrainedModel a = train(c, tmpl, data, &ra);
  const TrainedModel b = train(c, tmpl, data, &rb);
  ASSERT_EQ(ra.curve.size(), rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i) EXPECT_EQ(ra.curve[i].mean_loss, rb.curve[i].mean_loss);
  const MetricReport ma = evaluate(tmpl, a, data.eval, c);
  const MetricReport mb = evaluate(tmpl, b, data.eval, c);
  EXPECT_EQ(ma.to_json(), mb.to_json());
  EXPECT_EQ(ma.mean_mpjpe(), mb.mean_mpjpe());
}

TEST(Pipeline, OracleBypassScoresZero) {
  RunConfig c = tiny_config();
  c.oracle_bypass = true;
  const BodyTemplate tmpl = make_body(c.body);
  const Dataset data = make_run_dataset(tmpl, c);
  const TrainedModel model{c.model, init_params(c, tmpl)};
  const MetricReport m = evaluate(tmpl, model, data.eval, c);
  EXPECT_EQ(m.mean_mpjpe(), 0.0);
  EXPECT_NEAR(m.mean_pa_mpjpe(), 0.0, 1e-9);
  EXPECT_EQ(m.mean_mpvpe(), 0.0);
  EXPECT_EQ(m.mean_accel(), 0.0);
}

TEST(Pipeline, EvaluateRejectsMismatchedTemplate) {
  const RunConfig c = tiny_config();
  const BodyTemplate tmpl = make_body(c.body);
  const Dataset data = make_run_dataset(tmpl, c);
  TemplateConfig other = c.body;
  other.vertices = 100;
  const BodyTemplate wrong = make_body(other);
  const TrainedModel model{c.model, init_params(c, wrong)};
  EXPECT_THROW(evaluate(wrong, model, data.eval, c), std::invalid_argument);
}

TEST(Pipeline, CsvRowsAverageToAggregate) {
  const RunConfig c = tiny_config();
  const BodyTemplate tmpl = make_body(c.body);
  const Dataset data = make_run_dataset(tmpl, c);
  const TrainedModel model{c.model, init_params(c, tmpl)};
  const MetricReport m = evaluate(tmpl, model, data.eval, c);
  std::stringstream csv;
  m.write_csv(csv);
  std::string line;
  std::getline(csv, line);
  double sums[4] = {0, 0, 0, 0};
  int rows = 0;
  while (std::getline(csv, line)) {
    std::stringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::getline(row, cell, ',');
    for (double& s : sums) {
      std::getline(row, cell, ',');
      s += std::stod(cell);
    }
    ++rows;
  }
  ASSERT_EQ(rows, 3);
  const nlohmann::json agg = nlohmann::json::parse(m.to_json());
  EXPECT_NEAR(sums[0] / rows, m.mean_mpjpe(), 1e-9 * std::max(1.0, m.mean_mpjpe()));
  EXPECT_NEAR(sums[1] / rows, m.mean_pa_mpjpe(), 1e-9 * std::max(1.0, m.mean_pa_mpjpe()));
  EXPECT_NEAR(sums[2] / rows, m.mean_mpvpe(), 1e-9 * std::max(1.0, m.mean_mpvpe()));
  EXPECT_NEAR(sums[3] / rows, m.mean_accel(), 1e-9 * std::max(1.0, m.mean_accel()));
  EXPECT_EQ(agg.at("sequences").get<int>(), 3);
}

TEST(Ablation, CellsFollowCumulativeOrder) {
  const auto cells = ablation_cells();
  ASSERT_EQ(cells.size(), 6u);
  EXPECT_EQ(cells[0].name, "RGB-only");
  EXPECT_TRUE(cells[0].flags.rgb_only);
  EXPECT_EQ(cells[1].name, "+mask fusion");
  EXPECT_EQ(cells[2].name, "+quality depth");
  EXPECT_TRUE(cells[3].flags.dmaps && !cells[3].flags.modar);
  EXPECT_TRUE(!cells[4].flags.dmaps && cells[4].flags.modar);
  EXPECT_EQ(cells[5].name, "complete");
  EXPECT_TRUE(cells[5].flags.dmaps && cells[5].flags.modar && cells[5].flags.quality_depth &&
              cells[5].flags.mask_fusion && !cells[5].flags.rgb_only);
}

class Wiring : public ::testing::Test {
 protected:
  void SetUp() override {
    config = tiny_config();
    tmpl = make_body(config.body);
    data = make_run_dataset(tmpl, config);
    Rng rng(3);
    params = make_model_params(config.model, tmpl, config.data.grid, rng);
    // Nonzero heads so every module influences the output.
    std::vector<Param*> ps;
    params.collect(ps);
    for (Param* p : ps) p->value += testing::random_matrix(p->value.rows(), p->value.cols(), rng, 0.05);
  }

  Prediction run(const AblationFlags& flags, const SequenceSample& s) const {
    ModelConfig m = config.model;
    m.flags = flags;
    return model_forward(tmpl, m, params, s);
  }

  static bool same(const Prediction& a, const Prediction& b) {
    for (std::size_t t = 0; t < a.state.joints.size(); ++t) {
      if (a.state.joints[t] != b.state.joints[t] || a.state.vertices[t] != b.state.vertices[t]) return false;
    }
    return a.state.shape == b.state.shape;
  }

  RunConfig config;
  BodyTemplate tmpl;
  Dataset data;
  ModelParams params;
};

TEST_F(Wiring, RgbOnlyIgnoresDepth) {
  const AblationFlags rgb{true, false, false, false, false};
  SequenceSample s = data.eval.front();
  const Prediction base = run(rgb, s);
  Rng rng(8);
  for (auto& d : s.depth) d.cells += testing::random_matrix(d.cells.rows(), d.cells.cols(), rng);
  for (auto& c : s.confidence) c.values.setConstant(0.3);
  EXPECT_TRUE(same(base, run(rgb, s)));
  const AblationFlags full;
  EXPECT_FALSE(same(run(full, data.eval.front()), run(full, s)));
}

TEST_F(Wiring, QualityOffIgnoresConfidenceWithoutDmaps) {
  const AblationFlags flags{false, true, false, false, false};
  SequenceSample s = data.eval.front();
  const Prediction base = run(flags, s);
  for (auto& c : s.confidence) c.values.setConstant(0.2);
  EXPECT_TRUE(same(base, run(flags, s)));
}

TEST_F(Wiring, ModarOffProducesNoGates) {
  const Prediction off = run({false, true, true, true, false}, data.eval.front());
  EXPECT_TRUE(off.pose_gates.empty());
  const Prediction on = run({false, true, true, true, true}, data.eval.front());
  EXPECT_EQ(on.pose_gates.size(), static_cast<std::size_t>(data.eval.front().frames()));
}

TEST(Pipeline, CheckpointRoundTripGivesIdenticalMetrics) {
  RunConfig c = tiny_config();
  const auto dir = scratch("ckpt");
  c.out_dir = dir.string();
  const BodyTemplate tmpl = make_body(c.body);
  const Dataset data = make_run_dataset(tmpl, c);
  const TrainedModel model = train(c, tmpl, data);
  ASSERT_TRUE(std::filesystem::exists(dir / "checkpoint_phase1.txt"));
  ASSERT_TRUE(std::filesystem::exists(dir / "checkpoint_phase2.txt"));
  TrainedModel loaded{c.model, init_params(c, tmpl)};
  params_from_container(loaded.params, load_container((dir / "checkpoint_phase2.txt").string()));
  EXPECT_EQ(evaluate(tmpl, model, data.eval, c).to_json(), evaluate(tmpl, loaded, data.eval, c).to_json());
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, AblationSharesDataAndWritesTable) {
  RunConfig c = tiny_config();
  c.train_sequences = 2;
  c.eval_sequences = 2;
  c.data.frames = 4;
  c.schedule.phase2_epochs = 1;
  const auto reports = ablation_suite(c);
  ASSERT_EQ(reports.size(), 6u);
  for (const auto& r : reports) {
    EXPECT_EQ(r.train_hash, reports.front().train_hash);
    EXPECT_EQ(r.eval_hash, reports.front().eval_hash);
  }
  EXPECT_NE(reports[0].config_hash, reports[5].config_hash);
  const auto dir = scratch("table");
  std::filesystem::create_directories(dir);
  write_table2((dir / "table2.csv").string(), reports);
  std::ifstream is(dir / "table2.csv");
  std::string line;
  int rows = -1;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 6);
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, SweepHasOneRowPerLength) {
  RunConfig c = tiny_config();
  c.train_sequences = 2;
  c.eval_sequences = 2;
  c.schedule.phase1_epochs = 0;
  c.schedule.phase2_epochs = 1;
  const auto rows = seq_length_sweep(c, {3, 5});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].frames, 3);
  EXPECT_EQ(rows[1].frames, 5);
  const auto again = seq_length_sweep(c, {3, 5});
  EXPECT_EQ(rows[1].mpjpe, again[1].mpjpe);
  EXPECT_EQ(rows[1].accel, again[1].accel);
  EXPECT_THROW(seq_length_sweep(c, {2}), std::invalid_argument);
}

TEST(Pipeline, OutputsContainSummary) {
  const RunConfig c = tiny_config();
  RunReport report;
  report.label = "demo";
  const BodyTemplate tmpl = make_body(c.body);
  const Dataset data = make_run_dataset(tmpl, c);
  report.metrics = evaluate(tmpl, TrainedModel{c.model, init_params(c, tmpl)}, data.eval, c);
  report.config_json = run_config_to_json(c);
  const auto dir = scratch("outputs");
  write_run_outputs(dir.string(), report);
  std::ifstream is(dir / "summary.json");
  const nlohmann::json j = nlohmann::json::parse(is);
  EXPECT_EQ(j.at("label"), "demo");
  EXPECT_TRUE(j.contains("metrics"));
  EXPECT_TRUE(j.contains("hashes"));
  EXPECT_EQ(j.at("config").at("seed"), 5);
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.csv"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace depthmesh
