// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/diagnostics.hpp"

#include "depthmesh/dmaps.hpp"
#include "depthmesh/fusion.hpp"
#include "depthmesh/model.hpp"
#include "depthmesh/modar.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace depthmesh {
namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Moves every parameter off its initialization so zero-initialized layers pass gradients.
void perturb(std::vector<Param*>& params, Rng& rng, double sigma) {
  for (Param* p : params) p->value += gaussian(p->value.rows(), p->value.cols(), rng, sigma);
}

// Keeps every ReLU pre-activation well away from zero so central differences never straddle a kink.
void separate_relu(LayerParams& layer, Rng& rng) {
  layer.weights.value *= 0.1;
  std::bernoulli_distribution active(0.75);
  for (Eigen::Index i = 0; i < layer.bias.value.size(); ++i) {
    layer.bias.value(i) = active(rng) ? 2.0 : -2.0;
  }
}

Quat4 random_unit_quat(Rng& rng, double max_angle) {
  Vec3 v = gaussian(3, 1, rng);
  v *= uniform(rng, 0.0, max_angle) / std::max(v.norm(), 1e-12);
  return exp_map(v);
}

double dot(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b).sum(); }

// ---------------------------------------------------------------------------
// Fusion

struct FusionState {
  FusionParams params;
  int grid = 4;
  int levels = 1;
  Matrix rgb, depth, raw_depth, readout;
};

GradBlockInstance fusion_instance(const std::string& block, Rng& rng) {
  auto s = std::make_shared<FusionState>();
  FusionConfig fc;
  fc.channels = uniform_int(rng, 2, 6);
  fc.mask_hidden = uniform_int(rng, 2, 6);
  fc.gate_hidden = uniform_int(rng, 2, 6);
  fc.levels = block == "fusion_pathway" ? 2 : 1;
  s->levels = fc.levels;
  s->params = make_fusion_params(fc, rng);
  std::vector<Param*> all;
  s->params.collect(all);
  perturb(all, rng, 0.3);
  separate_relu(s->params.mask_in, rng);
  separate_relu(s->params.gate_in, rng);
  s->grid = block == "fusion_pathway" ? 4 : uniform_int(rng, 2, 4);
  const int cells = s->grid * s->grid;
  s->rgb = gaussian(cells, fc.channels, rng);
  s->depth = gaussian(cells, fc.channels, rng);
  s->raw_depth = gaussian(cells / 4, fc.channels, rng);
  s->readout = gaussian(cells, fc.channels, rng);

  GradBlockInstance inst;
  inst.block = block;
  if (block == "fusion_mask") {
    s->params.mask_in.collect(inst.params);
    s->params.mask_out.collect(inst.params);
  } else if (block == "fusion_gates") {
    s->params.gate_in.collect(inst.params);
    s->params.gate_out.collect(inst.params);
  } else {
    s->params.projection.collect(inst.params);
    s->params.refine.collect(inst.params);
  }
  FusionState* st = s.get();
  if (block == "fusion_pathway") {
    inst.loss = [st](bool with_grad) {
      DepthPathwayTape path;
      const FeatureGrid depth = mock_depth_pathway(FeatureGrid(st->grid / 2, st->grid / 2,
                                                               st->raw_depth),
                                                   st->params.refine, st->grid, st->grid, path);
      MultiScaleTape tape;
      const Matrix fused = fuse_multiscale(FeatureGrid(st->grid, st->grid, st->rgb), depth,
                                           st->params, st->levels, &tape);
      if (with_grad) {
        const Matrix d_depth = fuse_multiscale_backward(st->params, tape, st->readout);
        mock_depth_pathway_backward(st->params.refine, path,
                                    FeatureGrid(st->grid, st->grid, d_depth));
      }
      return dot(fused, st->readout);
    };
  } else {
    inst.loss = [st](bool with_grad) {
      FuseTape tape;
      const FusionOutput out = fuse(st->rgb, st->depth, st->params, tape);
      if (with_grad) fuse_backward(st->params, tape, st->readout);
      return dot(out.fused, st->readout);
    };
  }
  inst.state = s;
  return inst;
}

// ---------------------------------------------------------------------------
// D-MAPS

const BodyTemplate& humanoid() {
  static const BodyTemplate tmpl = build_template();
  return tmpl;
}

struct DmapsState {
  DmapsConfig config;
  DmapsParams params;
  MotionTokens motion;
  std::vector<Matrix> fused, depth;
  std::vector<FrameFeatures> features;
  Vector confidence;
  std::vector<std::vector<Quat4>> readout;
  Vector shape_readout;
  int grid = 4;
};

GradBlockInstance dmaps_instance(const std::string& block, Rng& rng) {
  const BodyTemplate& tmpl = humanoid();
  const int joints = tmpl.joint_count();
  auto s = std::make_shared<DmapsState>();
  const int channels = uniform_int(rng, 2, 4);
  const int frames = uniform_int(rng, 2, 4);
  s->config.twist_hidden = uniform_int(rng, 4, 8);
  s->config.attention_heads = 2;
  s->params = make_dmaps_params(s->config, tmpl, channels, rng);
  std::vector<Param*> all;
  s->params.collect(all);
  perturb(all, rng, 0.05);
  separate_relu(s->params.twist_in, rng);
  s->params.eta.value(0, 0) = uniform(rng, 1.0, 5.0);
  const Vector coefficients = gaussian(tmpl.shape_dims(), 1, rng, 0.5);
  const ShapedRest rest = apply_shape(tmpl, coefficients);
  for (int t = 0; t < frames; ++t) {
    PoseParams pose = PoseParams::identity(joints);
    for (auto& r : pose.rotations) r = canonical(random_unit_quat(rng, 0.5));
    Points lifted = forward_kinematics(rest.joints, tmpl.tree, pose).joints;
    const Eigen::RowVector3d root = lifted.row(tmpl.tree.root());
    lifted.rowwise() -= root;
    lifted += gaussian(joints, 3, rng, 0.01);
    lifted.row(tmpl.tree.root()).setZero();
    s->motion.lifted.push_back(lifted);
    Keypoints kp(joints, 2);
    for (Eigen::Index i = 0; i < kp.size(); ++i) kp.data()[i] = uniform(rng, -0.9, 0.9);
    s->motion.keypoints.push_back(kp);
    s->fused.push_back(gaussian(s->grid * s->grid, channels, rng));
    s->depth.push_back(gaussian(s->grid * s->grid, channels, rng));
  }
  for (int t = 0; t < frames; ++t) {
    const auto u = static_cast<std::size_t>(t);
    s->features.push_back({s->grid, s->grid, &s->fused[u], &s->depth[u]});
  }
  s->confidence = Vector(frames);
  for (int t = 0; t < frames; ++t) s->confidence(t) = uniform(rng, 0.1, 1.0);
  for (int t = 0; t < frames; ++t) {
    std::vector<Quat4> row;
    for (int j = 0; j < joints; ++j) row.push_back(gaussian(4, 1, rng));
    s->readout.push_back(row);
  }
  s->shape_readout = gaussian(tmpl.shape_dims(), 1, rng);

  GradBlockInstance inst;
  inst.block = block;
  if (block == "twist_head") {
    s->params.twist_in.collect(inst.params);
    s->params.twist_out.collect(inst.params);
  } else {
    s->params.shape_head.collect(inst.params);
    inst.params.push_back(&s->params.eta);
  }
  DmapsState* st = s.get();
  inst.loss = [st](bool with_grad) {
    const BodyTemplate& body = humanoid();
    DmapsTape tape;
    const InitResult out = dmaps_forward(body, st->config, st->params, st->motion, st->features,
                                         st->confidence, &tape);
    double loss = st->shape_readout.dot(out.shape);
    for (std::size_t t = 0; t < out.poses.size(); ++t) {
      for (std::size_t j = 0; j < out.poses[t].size(); ++j) {
        loss += st->readout[t][j].dot(out.poses[t][j]);
      }
    }
    if (with_grad) {
      dmaps_backward(body, st->config, st->params, tape, st->readout, st->shape_readout,
                     st->features);
    }
    return loss;
  };
  inst.state = s;
  return inst;
}

// The temporal block on its own: per-frame rotation-vector tokens in, residual out.
struct TemporalState {
  MultiHeadAttention block;
  Matrix tokens, readout;
};

GradBlockInstance temporal_instance(Rng& rng) {
  auto s = std::make_shared<TemporalState>();
  const int width = 3 * humanoid().joint_count();
  const int frames = uniform_int(rng, 2, 6);
  s->block = make_attention("dmaps.temporal", width, width, width, 2, true, rng);
  std::vector<Param*> params;
  s->block.collect(params);
  perturb(params, rng, 0.3);
  s->tokens = gaussian(frames, width, rng, 0.5);
  s->readout = gaussian(frames, width, rng);

  GradBlockInstance inst;
  inst.block = "temporal_attention";
  inst.params = params;
  TemporalState* st = s.get();
  inst.loss = [st](bool with_grad) {
    MultiHeadTape tape;
    const Matrix out = attention_forward(st->block, st->tokens, st->tokens, tape);
    if (with_grad) attention_backward(st->block, tape, st->readout);
    return dot(out, st->readout);
  };
  inst.state = s;
  return inst;
}

// ---------------------------------------------------------------------------
// MoDAR

struct ModarState {
  ModarConfig config;
  ModarParams params;
  MotionTokens motion;
  std::vector<Matrix> fused;
  std::vector<const Matrix*> fused_ptrs;
  std::vector<std::vector<Quat4>> pose_init, readout;
  Vector shape_init, shape_readout;
};

GradBlockInstance modar_instance(const std::string& block, Rng& rng) {
  auto s = std::make_shared<ModarState>();
  const int joints = uniform_int(rng, 2, 5);
  const int shape_dims = uniform_int(rng, 1, 3);
  const int channels = uniform_int(rng, 2, 4);
  const int frames = uniform_int(rng, 2, 4);
  const int cells = uniform_int(rng, 2, 6);
  s->config.heads = 2;
  s->config.model_dim = 2 * uniform_int(rng, 2, 4);
  s->config.ffn_hidden = uniform_int(rng, 4, 10);
  // Either never or always active, never near the norm boundary.
  s->config.pose_clamp = uniform_int(rng, 0, 1) == 1 ? 10.0 : 0.02;
  s->config.bidirectional_kv = uniform_int(rng, 0, 1) == 1;
  s->params = make_modar_params(s->config, joints, shape_dims, channels, rng);
  std::vector<Param*> all;
  s->params.collect(all);
  perturb(all, rng, 0.3);
  separate_relu(s->params.ffn_in, rng);

  for (int t = 0; t < frames; ++t) {
    s->motion.lifted.push_back(gaussian(joints, 3, rng, 0.3));
    Keypoints kp(joints, 2);
    for (Eigen::Index i = 0; i < kp.size(); ++i) kp.data()[i] = uniform(rng, -0.9, 0.9);
    s->motion.keypoints.push_back(kp);
    s->fused.push_back(gaussian(cells, channels, rng));
    std::vector<Quat4> init, read;
    for (int j = 0; j < joints; ++j) {
      init.push_back(canonical(random_unit_quat(rng, 1.5)).coeffs());
      read.push_back(gaussian(4, 1, rng));
    }
    s->pose_init.push_back(init);
    s->readout.push_back(read);
  }
  for (const Matrix& f : s->fused) s->fused_ptrs.push_back(&f);
  s->shape_init = gaussian(shape_dims, 1, rng);
  s->shape_readout = gaussian(shape_dims, 1, rng);

  GradBlockInstance inst;
  inst.block = block;
  ModarParams& p = s->params;
  if (block == "modar_block1") {
    p.block1.collect(inst.params);
    p.embed.collect(inst.params);
    p.project.collect(inst.params);
  } else if (block == "modar_block2") {
    p.block2.collect(inst.params);
    p.norm.collect(inst.params);
    p.ffn_in.collect(inst.params);
    p.ffn_out.collect(inst.params);
  } else if (block == "modar_residual_heads") {
    p.pose_delta.collect(inst.params);
    p.shape_delta.collect(inst.params);
  } else {
    p.pose_gate.collect(inst.params);
    p.shape_gate.collect(inst.params);
    inst.params.push_back(&p.rho_logit);
  }
  ModarState* st = s.get();
  inst.loss = [st](bool with_grad) {
    ModarTape tape;
    const ModarOutput out = modar_forward(st->config, st->params, st->motion, st->fused_ptrs,
                                          st->pose_init, st->shape_init, &tape);
    double loss = st->shape_readout.dot(out.refined.shape);
    for (std::size_t t = 0; t < out.refined.poses.size(); ++t) {
      for (std::size_t j = 0; j < out.refined.poses[t].size(); ++j) {
        loss += st->readout[t][j].dot(out.refined.poses[t][j]);
      }
    }
    if (with_grad) modar_backward(st->config, st->params, tape, st->readout, st->shape_readout);
    return loss;
  };
  inst.state = s;
  return inst;
}

// ---------------------------------------------------------------------------
// Baseline regressor (exercised through the full model with every other component off)

struct RegressorState {
  ModelConfig config;
  ModelParams params;
  SequenceSample sample;
  std::vector<Points> joint_readout, vertex_readout;
  std::vector<std::vector<Quat4>> rotation_readout;
  Vector shape_readout;
};

GradBlockInstance regressor_instance(Rng& rng) {
  const BodyTemplate& tmpl = humanoid();
  auto s = std::make_shared<RegressorState>();
  SynthConfig data;
  data.frames = uniform_int(rng, 2, 3);
  data.grid = 4;
  data.occlusion_rate = 0.0;
  s->sample = make_sample(tmpl, data, rng(), "grad");
  for (FeatureGrid& g : s->sample.rgb) g.cells = gaussian(g.cells.rows(), g.cells.cols(), rng);
  s->config.fusion.channels = data.channels;
  s->config.camera = data.camera;
  s->config.regressor_hidden = uniform_int(rng, 4, 8);
  s->config.flags = AblationFlags{true, false, false, false, false};
  s->params = make_model_params(s->config, tmpl, data.grid, rng);
  std::vector<Param*> reg;
  s->params.regressor_in.collect(reg);
  s->params.regressor_out.collect(reg);
  perturb(reg, rng, 0.02);
  separate_relu(s->params.regressor_in, rng);

  const int joints = tmpl.joint_count();
  for (int t = 0; t < data.frames; ++t) {
    s->joint_readout.push_back(gaussian(joints, 3, rng));
    s->vertex_readout.push_back(gaussian(tmpl.vertex_count(), 3, rng, 0.1));
    std::vector<Quat4> q;
    for (int j = 0; j < joints; ++j) q.push_back(gaussian(4, 1, rng));
    s->rotation_readout.push_back(q);
  }
  s->shape_readout = gaussian(tmpl.shape_dims(), 1, rng);

  GradBlockInstance inst;
  inst.block = "regressor";
  inst.params = reg;
  RegressorState* st = s.get();
  // Positions are read relative to the root so the estimated translation drops out.
  inst.loss = [st](bool with_grad) {
    const BodyTemplate& body = humanoid();
    const int root = body.tree.root();
    ModelTape tape;
    const Prediction pred = model_forward(body, st->config, st->params, st->sample, &tape);
    const SequenceState& state = pred.state;
    double loss = st->shape_readout.dot(state.shape);
    LossGrads grads;
    grads.shape = st->shape_readout;
    for (std::size_t t = 0; t < state.joints.size(); ++t) {
      const Eigen::RowVector3d origin = state.joints[t].row(root);
      Points rel_j = state.joints[t];
      rel_j.rowwise() -= origin;
      Points rel_v = state.vertices[t];
      rel_v.rowwise() -= origin;
      loss += dot(rel_j, st->joint_readout[t]) + dot(rel_v, st->vertex_readout[t]);
      for (std::size_t j = 0; j < state.rotations[t].size(); ++j) {
        loss += st->rotation_readout[t][j].dot(state.rotations[t][j]);
      }
      Points dj = st->joint_readout[t];
      dj.row(root) -= st->joint_readout[t].colwise().sum() + st->vertex_readout[t].colwise().sum();
      grads.joints.push_back(dj);
      grads.vertices.push_back(st->vertex_readout[t]);
      grads.rotations.push_back(st->rotation_readout[t]);
    }
    if (with_grad) model_backward(body, st->config, st->params, tape, grads);
    return loss;
  };
  inst.state = s;
  return inst;
}

}  // namespace

std::vector<std::string> grad_block_names() {
  return {"fusion_mask",  "fusion_gates",         "fusion_pathway", "twist_head",
          "temporal_attention", "shape_head",     "modar_block1",   "modar_block2",
          "modar_residual_heads", "modar_gates",  "regressor"};
}

GradBlockInstance make_grad_block_instance(const std::string& block, std::uint64_t seed) {
  Rng rng(derive_seed(seed, block));
  if (block.rfind("fusion_", 0) == 0) {
    if (block == "fusion_mask" || block == "fusion_gates" || block == "fusion_pathway") {
      return fusion_instance(block, rng);
    }
  } else if (block == "twist_head" || block == "shape_head") {
    return dmaps_instance(block, rng);
  } else if (block == "temporal_attention") {
    return temporal_instance(rng);
  } else if (block.rfind("modar_", 0) == 0) {
    if (block == "modar_block1" || block == "modar_block2" || block == "modar_residual_heads" ||
        block == "modar_gates") {
      return modar_instance(block, rng);
    }
  } else if (block == "regressor") {
    return regressor_instance(rng);
  }
  throw std::invalid_argument("unknown gradient-check block: " + block);
}

std::vector<BlockCheckSummary> run_block_grad_checks(int instances, std::uint64_t seed,
                                                     double tolerance, double step,
                                                     std::size_t entries_per_param) {
  if (instances <= 0) throw std::invalid_argument("run_block_grad_checks: instances must be > 0");
  std::vector<BlockCheckSummary> out;
  for (const std::string& block : grad_block_names()) {
    BlockCheckSummary summary;
    summary.block = block;
    for (int i = 0; i < instances; ++i) {
      const std::uint64_t instance_seed = derive_seed(seed, block, static_cast<std::uint64_t>(i));
      GradBlockInstance inst = make_grad_block_instance(block, instance_seed);
      for (std::size_t k = 0; k < inst.params.size(); ++k) {
        Param* const one[] = {inst.params[k]};
        const GradCheckReport report = grad_check(inst.loss, one, step, tolerance,
                                                  entries_per_param, derive_seed(instance_seed, k), 4);
        summary.entries += report.entries_checked;
        summary.max_rel_error = std::max(summary.max_rel_error, report.max_rel_error);
      }
      ++summary.instances;
    }
    summary.passed = summary.max_rel_error < tolerance;
    out.push_back(summary);
  }
  return out;
}

}  // namespace depthmesh
