// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace depthmesh {

using nlohmann::json;

void TrainSchedule::validate() const {
  if (phase1_epochs < 0 || phase2_epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(phase1_lr >= 0.0) || !(phase2_lr >= 0.0)) throw std::invalid_argument("learning rates must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  for (double p : decay_points) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("decay points are fractions in [0, 1]");
  }
  if (decay_factor <= 0.0) throw std::invalid_argument("decay factor must be positive");
  if (smooth_delay < 0.0 || smooth_delay > 1.0) throw std::invalid_argument("smooth delay must lie in [0, 1]");
  if (grad_clip < 0.0) throw std::invalid_argument("gradient clip must be >= 0");
}

double TrainSchedule::phase2_rate(int epoch) const {
  double lr = phase2_lr;
  for (double p : decay_points) {
    if (epoch >= static_cast<int>(std::floor(p * phase2_epochs))) lr *= decay_factor;
  }
  return lr;
}

bool TrainSchedule::smooth_enabled(int epoch) const {
  return epoch >= static_cast<int>(std::floor(smooth_delay * phase2_epochs));
}

void RunConfig::validate() const {
  data.validate();
  schedule.validate();
  weights.validate();
  if (train_sequences < 1 || eval_sequences < 1) throw std::invalid_argument("need at least one train and one eval sequence");
  if (body.joints < 2 || body.shape_dims < 1 || body.vertices < 1) throw std::invalid_argument("bad body template sizes");
  if (model.fusion.channels != data.channels) throw std::invalid_argument("model and data channel counts differ");
  if (data.grid % (1 << (model.fusion.levels - 1)) != 0) {
    throw std::invalid_argument("fusion levels must divide the grid");
  }
  if (model.flags.rgb_only && (model.flags.mask_fusion || model.flags.quality_depth)) {
    throw std::invalid_argument("rgb_only excludes depth fusion flags");
  }
}

// ---------------------------------------------------------------------------
// Config serialization

namespace {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        out = j_.at(key).get<T>();
      } catch (const json::exception&) {
        throw std::invalid_argument("config: bad value for '" + path_ + key + "'");
      }
    }
  }

  ObjectReader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return ObjectReader(j_.contains(key) ? j_.at(key) : empty, path_ + key + ".");
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw std::invalid_argument("config: unknown key '" + path_ + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_camera(ObjectReader r, CameraModel& c) {
  r.get("focal", c.focal);
  r.get("cx", c.cx);
  r.get("cy", c.cy);
  r.get("image_width", c.image_width);
  r.get("image_height", c.image_height);
  r.get("fps", c.fps);
  r.finish();
}

void read_motion(ObjectReader r, MotionConfig& m) {
  r.get("smoothness_band", m.smoothness_band);
  r.get("limb_limit", m.limb_limit);
  r.get("torso_limit", m.torso_limit);
  r.get("root_yaw", m.root_yaw);
  r.get("root_tilt", m.root_tilt);
  r.get("shape_range", m.shape_range);
  r.get("depth_min", m.depth_min);
  r.get("depth_max", m.depth_max);
  r.get("sway", m.sway);
  r.finish();
}

void read_data(ObjectReader r, SynthConfig& d) {
  r.get("frames", d.frames);
  r.get("grid", d.grid);
  r.get("channels", d.channels);
  r.get("depth_stride", d.depth_stride);
  r.get("noise_level", d.noise_level);
  r.get("occlusion_rate", d.occlusion_rate);
  r.get("confidence_floor", d.confidence_floor);
  r.get("occlusion_noise_gain", d.occlusion_noise_gain);
  r.get("lifter_noise", d.lifter_noise);
  r.get("keypoint_noise_px", d.keypoint_noise_px);
  r.get("bump_sigma", d.bump_sigma);
  r.get("mask_radius", d.mask_radius);
  r.get("marker_offset", d.marker_offset);
  read_camera(r.child("camera"), d.camera);
  read_motion(r.child("motion"), d.motion);
  r.finish();
}

void read_model(ObjectReader r, ModelConfig& m) {
  {
    ObjectReader f = r.child("fusion");
    f.get("mask_hidden", m.fusion.mask_hidden);
    f.get("gate_hidden", m.fusion.gate_hidden);
    f.get("levels", m.fusion.levels);
    f.finish();
  }
  {
    ObjectReader d = r.child("dmaps");
    d.get("twist_hidden", m.dmaps.twist_hidden);
    d.get("twist_scale", m.dmaps.twist_scale);
    d.get("attention_heads", m.dmaps.attention_heads);
    d.get("eta_init", m.dmaps.eta_init);
    d.get("shape_bound", m.dmaps.shape_bound);
    d.finish();
  }
  {
    ObjectReader o = r.child("modar");
    o.get("model_dim", m.modar.model_dim);
    o.get("heads", m.modar.heads);
    o.get("ffn_hidden", m.modar.ffn_hidden);
    o.get("pose_clamp", m.modar.pose_clamp);
    o.get("rho_init", m.modar.rho_init);
    o.get("bidirectional_kv", m.modar.bidirectional_kv);
    o.get("fixed_rho", m.modar.fixed_rho);
    o.finish();
  }
  {
    ObjectReader f = r.child("flags");
    f.get("rgb_only", m.flags.rgb_only);
    f.get("mask_fusion", m.flags.mask_fusion);
    f.get("quality_depth", m.flags.quality_depth);
    f.get("dmaps", m.flags.dmaps);
    f.get("modar", m.flags.modar);
    f.finish();
  }
  r.get("regressor_hidden", m.regressor_hidden);
  r.finish();
}

void read_schedule(ObjectReader r, TrainSchedule& s) {
  r.get("phase1_epochs", s.phase1_epochs);
  r.get("phase2_epochs", s.phase2_epochs);
  r.get("phase1_lr", s.phase1_lr);
  r.get("phase2_lr", s.phase2_lr);
  r.get("momentum", s.momentum);
  r.get("decay_points", s.decay_points);
  r.get("decay_factor", s.decay_factor);
  r.get("smooth_delay", s.smooth_delay);
  r.get("grad_clip", s.grad_clip);
  r.finish();
}

void read_weights(ObjectReader r, LossWeights& w) {
  r.get("mesh", w.mesh);
  r.get("joint", w.joint);
  r.get("pose", w.pose);
  r.get("shape", w.shape);
  r.get("smooth", w.smooth);
  r.finish();
}

json config_json(const RunConfig& c) {
  const auto& d = c.data;
  const auto& m = c.model;
  const auto& s = c.schedule;
  return json{
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"oracle_bypass", c.oracle_bypass},
      {"train_sequences", c.train_sequences},
      {"eval_sequences", c.eval_sequences},
      {"body", {{"joints", c.body.joints}, {"shape_dims", c.body.shape_dims},
                {"vertices", c.body.vertices}, {"seed", c.body.seed}}},
      {"data",
       {{"frames", d.frames}, {"grid", d.grid}, {"channels", d.channels},
        {"depth_stride", d.depth_stride}, {"noise_level", d.noise_level},
        {"occlusion_rate", d.occlusion_rate}, {"confidence_floor", d.confidence_floor},
        {"occlusion_noise_gain", d.occlusion_noise_gain}, {"lifter_noise", d.lifter_noise},
        {"keypoint_noise_px", d.keypoint_noise_px}, {"bump_sigma", d.bump_sigma},
        {"mask_radius", d.mask_radius}, {"marker_offset", d.marker_offset},
        {"camera", {{"focal", d.camera.focal}, {"cx", d.camera.cx}, {"cy", d.camera.cy},
                    {"image_width", d.camera.image_width}, {"image_height", d.camera.image_height},
                    {"fps", d.camera.fps}}},
        {"motion", {{"smoothness_band", d.motion.smoothness_band}, {"limb_limit", d.motion.limb_limit},
                    {"torso_limit", d.motion.torso_limit}, {"root_yaw", d.motion.root_yaw},
                    {"root_tilt", d.motion.root_tilt}, {"shape_range", d.motion.shape_range},
                    {"depth_min", d.motion.depth_min}, {"depth_max", d.motion.depth_max},
                    {"sway", d.motion.sway}}}}},
      {"model",
       {{"fusion", {{"mask_hidden", m.fusion.mask_hidden}, {"gate_hidden", m.fusion.gate_hidden},
                    {"levels", m.fusion.levels}}},
        {"dmaps", {{"twist_hidden", m.dmaps.twist_hidden}, {"twist_scale", m.dmaps.twist_scale},
                   {"attention_heads", m.dmaps.attention_heads}, {"eta_init", m.dmaps.eta_init},
                   {"shape_bound", m.dmaps.shape_bound}}},
        {"modar", {{"model_dim", m.modar.model_dim}, {"heads", m.modar.heads},
                   {"ffn_hidden", m.modar.ffn_hidden}, {"pose_clamp", m.modar.pose_clamp},
                   {"rho_init", m.modar.rho_init}, {"bidirectional_kv", m.modar.bidirectional_kv},
                   {"fixed_rho", m.modar.fixed_rho}}},
        {"flags", {{"rgb_only", m.flags.rgb_only}, {"mask_fusion", m.flags.mask_fusion},
                   {"quality_depth", m.flags.quality_depth}, {"dmaps", m.flags.dmaps},
                   {"modar", m.flags.modar}}},
        {"regressor_hidden", m.regressor_hidden}}},
      {"weights", {{"mesh", c.weights.mesh}, {"joint", c.weights.joint}, {"pose", c.weights.pose},
                   {"shape", c.weights.shape}, {"smooth", c.weights.smooth}}},
      {"schedule",
       {{"phase1_epochs", s.phase1_epochs}, {"phase2_epochs", s.phase2_epochs},
        {"phase1_lr", s.phase1_lr}, {"phase2_lr", s.phase2_lr}, {"momentum", s.momentum},
        {"decay_points", s.decay_points}, {"decay_factor", s.decay_factor},
        {"smooth_delay", s.smooth_delay}, {"grad_clip", s.grad_clip}}},
  };
}

// Settings shared across modules are kept in one place.
void sync_derived(RunConfig& c) {
  c.model.fusion.channels = c.data.channels;
  c.model.camera = c.data.camera;
  c.model.modar.shape_bound = c.model.dmaps.shape_bound;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader r(j, "");
  r.get("seed", c.seed);
  r.get("out_dir", c.out_dir);
  r.get("oracle_bypass", c.oracle_bypass);
  r.get("train_sequences", c.train_sequences);
  r.get("eval_sequences", c.eval_sequences);
  {
    ObjectReader b = r.child("body");
    b.get("joints", c.body.joints);
    b.get("shape_dims", c.body.shape_dims);
    b.get("vertices", c.body.vertices);
    b.get("seed", c.body.seed);
    b.finish();
  }
  read_data(r.child("data"), c.data);
  read_model(r.child("model"), c.model);
  read_weights(r.child("weights"), c.weights);
  read_schedule(r.child("schedule"), c.schedule);
  r.finish();
  sync_derived(c);
  c.validate();
  return c;
}

std::string run_config_to_json(const RunConfig& config) { return config_json(config).dump(2); }

// ---------------------------------------------------------------------------
// Training

BodyTemplate make_body(const TemplateConfig& config) {
  return build_template(config.joints, config.shape_dims, config.vertices, config.seed);
}

Dataset make_run_dataset(const BodyTemplate& tmpl, const RunConfig& config) {
  return make_dataset(tmpl, config.data, config.train_sequences, config.eval_sequences,
                      derive_seed(config.seed, "data"));
}

ModelParams init_params(const RunConfig& config, const BodyTemplate& tmpl) {
  Rng rng(derive_seed(config.seed, "init"));
  return make_model_params(config.model, tmpl, config.data.grid, rng);
}

namespace {

void sgd_step(std::vector<Param*>& params, double lr, double momentum, double clip) {
  double norm2 = 0.0;
  for (const Param* p : params) norm2 += p->grad.squaredNorm();
  const double norm = std::sqrt(norm2);
  const double scale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
  for (Param* p : params) {
    p->velocity = momentum * p->velocity + scale * p->grad;
    p->value -= lr * p->velocity;
  }
}

void reset_velocity(std::vector<Param*>& params) {
  for (Param* p : params) p->velocity.setZero();
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int phase, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "order", static_cast<std::uint64_t>(phase * 100000 + epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void divergence_snapshot(const RunConfig& config, int phase, int epoch, const std::string& sample,
                         double loss) {
  const std::string msg = "non-finite loss in phase " + std::to_string(phase) + " epoch " +
                          std::to_string(epoch) + " on sample " + sample;
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    std::ofstream os(std::filesystem::path(config.out_dir) / "divergence.json");
    os << json{{"phase", phase}, {"epoch", epoch}, {"sample", sample},
               {"loss", std::isnan(loss) ? "nan" : "inf"}}.dump(2) << '\n';
  }
  throw std::runtime_error(msg);
}

double run_epoch(const RunConfig& config, const BodyTemplate& tmpl, const ModelConfig& model,
                 const LossWeights& weights, const std::vector<SequenceSample>& train,
                 ModelParams& params, std::vector<Param*>& active, std::vector<Param*>& all,
                 double lr, int phase, int epoch) {
  double total = 0.0;
  const int root = tmpl.tree.root();
  for (std::size_t idx : epoch_order(train.size(), config.seed, phase, epoch)) {
    const SequenceSample& sample = train[idx];
    zero_grads(all);
    ModelTape tape;
    const Prediction pred = model_forward(tmpl, model, params, sample, &tape);
    LossGrads grads;
    const LossTerms terms = total_loss(pred.state, ground_truth_state(sample), weights, root, &grads);
    if (!std::isfinite(terms.total)) divergence_snapshot(config, phase, epoch, sample.id, terms.total);
    model_backward(tmpl, model, params, tape, grads);
    sgd_step(active, lr, config.schedule.momentum, config.schedule.grad_clip);
    total += terms.total;
  }
  return train.empty() ? 0.0 : total / static_cast<double>(train.size());
}

ModelConfig phase1_model(const ModelConfig& model) {
  ModelConfig m = model;
  m.flags.dmaps = false;
  m.flags.modar = false;
  return m;
}

LossWeights phase1_weights(const LossWeights& w) {
  LossWeights out;
  out.mesh = 0.0;
  out.joint = w.joint;
  out.pose = 0.0;
  out.shape = 0.0;
  out.smooth = 0.0;
  return out;
}

void save_checkpoint(const RunConfig& config, ModelParams& params, const std::string& name) {
  if (config.out_dir.empty()) return;
  std::filesystem::create_directories(config.out_dir);
  save_container((std::filesystem::path(config.out_dir) / name).string(), params_to_container(params));
}

}  // namespace

double dataset_loss(const BodyTemplate& tmpl, const ModelConfig& model, const ModelParams& params,
                    const std::vector<SequenceSample>& data, const LossWeights& weights) {
  double total = 0.0;
  for (const auto& s : data) {
    const Prediction pred = model_forward(tmpl, model, params, s);
    total += total_loss(pred.state, ground_truth_state(s), weights, tmpl.tree.root()).total;
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

std::vector<EpochLog> train_phase1(const RunConfig& config, const BodyTemplate& tmpl,
                                   const std::vector<SequenceSample>& train, ModelParams& params,
                                   const ProgressFn& progress) {
  std::vector<Param*> active, all;
  params.collect_phase1(active);
  params.collect(all);
  reset_velocity(all);
  const ModelConfig model = phase1_model(config.model);
  const LossWeights weights = phase1_weights(config.weights);
  std::vector<EpochLog> logs;
  for (int e = 0; e < config.schedule.phase1_epochs; ++e) {
    EpochLog log{1, e, config.schedule.phase1_lr, 0.0};
    log.mean_loss = run_epoch(config, tmpl, model, weights, train, params, active, all,
                              log.learning_rate, 1, e);
    logs.push_back(log);
    if (progress) progress(log);
  }
  return logs;
}

std::vector<EpochLog> train_phase2(const RunConfig& config, const BodyTemplate& tmpl,
                                   const std::vector<SequenceSample>& train, ModelParams& params,
                                   const ProgressFn& progress) {
  std::vector<Param*> all;
  params.collect(all);
  reset_velocity(all);
  std::vector<EpochLog> logs;
  for (int e = 0; e < config.schedule.phase2_epochs; ++e) {
    LossWeights weights = config.weights;
    if (!config.schedule.smooth_enabled(e)) weights.smooth = 0.0;
    EpochLog log{2, e, config.schedule.phase2_rate(e), 0.0};
    log.mean_loss = run_epoch(config, tmpl, config.model, weights, train, params, all, all,
                              log.learning_rate, 2, e);
    logs.push_back(log);
    if (progress) progress(log);
  }
  return logs;
}

TrainedModel train(const RunConfig& config, const BodyTemplate& tmpl, const Dataset& data,
                   RunReport* report, const ProgressFn& progress) {
  config.validate();
  TrainedModel out{config.model, init_params(config, tmpl)};
  auto logs = train_phase1(config, tmpl, data.train, out.params, progress);
  save_checkpoint(config, out.params, "checkpoint_phase1.txt");
  auto logs2 = train_phase2(config, tmpl, data.train, out.params, progress);
  save_checkpoint(config, out.params, "checkpoint_phase2.txt");
  if (report) {
    report->curve = std::move(logs);
    report->curve.insert(report->curve.end(), logs2.begin(), logs2.end());
  }
  return out;
}

MetricReport evaluate(const BodyTemplate& tmpl, const TrainedModel& model,
                      const std::vector<SequenceSample>& data, const RunConfig& config) {
  MetricReport report;
  MetricOptions options;
  options.root = tmpl.tree.root();
  options.fps = config.data.camera.fps;
  options.accel_root_relative = true;
  for (const auto& s : data) {
    if (s.gt_joints.empty() || s.gt_joints.front().rows() != tmpl.joint_count() ||
        s.gt_vertices.front().rows() != tmpl.vertex_count()) {
      throw std::invalid_argument("evaluate: sample '" + s.id + "' does not match the body template");
    }
    const SequenceState gt = ground_truth_state(s);
    const SequenceState pred =
        config.oracle_bypass ? gt : model_forward(tmpl, model.config, model.params, s).state;
    report.sequences.push_back(evaluate_sequence(pred, gt, options, s.id));
  }
  return report;
}

// ---------------------------------------------------------------------------

std::vector<AblationCell> ablation_cells() {
  std::vector<AblationCell> cells;
  AblationFlags f;
  f = {true, false, false, false, false};
  cells.push_back({"RGB-only", f});
  f = {false, true, false, false, false};
  cells.push_back({"+mask fusion", f});
  f = {false, true, true, false, false};
  cells.push_back({"+quality depth", f});
  f = {false, true, true, true, false};
  cells.push_back({"+D-MAPS (w/o MoDAR)", f});
  f = {false, true, true, false, true};
  cells.push_back({"+MoDAR (w/o D-MAPS)", f});
  f = {false, true, true, true, true};
  cells.push_back({"complete", f});
  return cells;
}

namespace {

std::string phase1_key(const AblationFlags& f) {
  return std::to_string(f.rgb_only) + std::to_string(f.mask_fusion) + std::to_string(f.quality_depth);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::vector<RunReport> ablation_suite(const RunConfig& config, const ProgressFn& progress) {
  config.validate();
  const BodyTemplate tmpl = make_body(config.body);
  const Dataset data = make_run_dataset(tmpl, config);
  const std::string train_hash = dataset_hash(data.train);
  const std::string eval_hash = dataset_hash(data.eval);
  std::map<std::string, std::pair<ModelParams, std::vector<EpochLog>>> phase1_cache;
  std::vector<RunReport> reports;
  for (const AblationCell& cell : ablation_cells()) {
    const auto start = std::chrono::steady_clock::now();
    RunConfig cfg = config;
    cfg.model.flags = cell.flags;
    cfg.out_dir.clear();
    const std::string key = phase1_key(cell.flags);
    if (!phase1_cache.count(key)) {
      ModelParams params = init_params(cfg, tmpl);
      auto logs = train_phase1(cfg, tmpl, data.train, params, progress);
      phase1_cache.emplace(key, std::make_pair(std::move(params), std::move(logs)));
    }
    const auto& cached = phase1_cache.at(key);
    TrainedModel model{cfg.model, cached.first};
    RunReport report;
    report.label = cell.name;
    report.curve = cached.second;
    auto logs2 = train_phase2(cfg, tmpl, data.train, model.params, progress);
    report.curve.insert(report.curve.end(), logs2.begin(), logs2.end());
    report.metrics = evaluate(tmpl, model, data.eval, cfg);
    report.config_json = run_config_to_json(cfg);
    report.config_hash = sha256_hex(report.config_json);
    report.train_hash = train_hash;
    report.eval_hash = eval_hash;
    report.seconds = seconds_since(start);
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<SweepRow> seq_length_sweep(const RunConfig& config, const std::vector<int>& lengths,
                                       const ProgressFn& progress) {
  config.validate();
  for (int t : lengths) {
    if (t < 3) throw std::invalid_argument("seq_length_sweep: lengths must be >= 3");
  }
  const BodyTemplate tmpl = make_body(config.body);
  std::vector<SweepRow> rows;
  for (int t : lengths) {
    RunConfig cfg = config;
    cfg.data.frames = t;
    cfg.out_dir.clear();
    const Dataset data = make_run_dataset(tmpl, cfg);
    const TrainedModel model = train(cfg, tmpl, data, nullptr, progress);
    const MetricReport m = evaluate(tmpl, model, data.eval, cfg);
    rows.push_back({t, m.mean_mpjpe(), m.mean_pa_mpjpe(), m.mean_accel()});
  }
  return rows;
}

// ---------------------------------------------------------------------------

std::string summary_json(const RunReport& report) {
  json curve = json::array();
  for (const auto& e : report.curve) {
    curve.push_back({{"phase", e.phase}, {"epoch", e.epoch}, {"learning_rate", e.learning_rate},
                     {"mean_loss", e.mean_loss}});
  }
  json j{{"label", report.label},
         {"metrics", json::parse(report.metrics.to_json())},
         {"curve", curve},
         {"seconds", report.seconds},
         {"hashes", {{"config", report.config_hash}, {"train", report.train_hash}, {"eval", report.eval_hash}}}};
  j["config"] = report.config_json.empty() ? json::object() : json::parse(report.config_json);
  return j.dump(2);
}

void write_run_outputs(const std::string& dir, const RunReport& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(std::filesystem::path(dir) / "metrics.csv");
    if (!os) throw std::runtime_error("cannot write metrics.csv in '" + dir + "'");
    report.metrics.write_csv(os);
  }
  std::ofstream os(std::filesystem::path(dir) / "summary.json");
  if (!os) throw std::runtime_error("cannot write summary.json in '" + dir + "'");
  os << summary_json(report) << '\n';
}

void write_table2(const std::string& path, const std::vector<RunReport>& reports) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << "cell,mpjpe_mm,pa_mpjpe_mm,mpvpe_mm,accel_mm_s2\n";
  os.precision(17);
  for (const auto& r : reports) {
    os << '"' << r.label << "\"," << r.metrics.mean_mpjpe() << ',' << r.metrics.mean_pa_mpjpe() << ','
       << r.metrics.mean_mpvpe() << ',' << r.metrics.mean_accel() << '\n';
  }
}

void write_sweep(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << "frames,mpjpe_mm,pa_mpjpe_mm,accel_mm_s2\n";
  os.precision(17);
  for (const auto& r : rows) os << r.frames << ',' << r.mpjpe << ',' << r.pa_mpjpe << ',' << r.accel << '\n';
}

}  // namespace depthmesh
