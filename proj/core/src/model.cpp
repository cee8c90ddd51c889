// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/model.hpp"

#include <Eigen/QR>

#include <cmath>
#include <stdexcept>
#include <string>

namespace depthmesh {

void ModelConfig::validate(const BodyTemplate& tmpl) const {
  if (fusion.channels < 2 * tmpl.joint_count()) {
    throw std::invalid_argument("model: channels must be at least twice the joint count");
  }
  if (regressor_hidden <= 0) throw std::invalid_argument("model: regressor width must be positive");
  if ((3 * tmpl.joint_count()) % dmaps.attention_heads != 0) {
    throw std::invalid_argument("model: temporal attention heads must divide 3J");
  }
  if (modar.model_dim % modar.heads != 0) {
    throw std::invalid_argument("model: refinement heads must divide the model width");
  }
  camera.validate();
}

void ModelParams::collect(std::vector<Param*>& out) {
  fusion.collect(out);
  dmaps.collect(out);
  modar.collect(out);
  regressor_in.collect(out);
  regressor_out.collect(out);
}

void ModelParams::collect_phase1(std::vector<Param*>& out) {
  fusion.collect(out);
  regressor_in.collect(out);
  regressor_out.collect(out);
}

ModelParams make_model_params(const ModelConfig& config, const BodyTemplate& tmpl, int grid,
                              Rng& rng) {
  config.validate(tmpl);
  const int c = config.fusion.channels;
  const int j = tmpl.joint_count();
  ModelParams p;
  p.fusion = make_fusion_params(config.fusion, rng);
  p.dmaps = make_dmaps_params(config.dmaps, tmpl, c, rng);
  p.modar = make_modar_params(config.modar, j, tmpl.shape_dims(), c, rng);
  p.regressor_in = make_dense("regressor.in", grid * grid * c, config.regressor_hidden,
                              Activation::kRelu, rng);
  p.regressor_out = make_dense_zero("regressor.out", config.regressor_hidden,
                                    3 * j + tmpl.shape_dims(), Activation::kLinear);
  return p;
}

TextContainer params_to_container(ModelParams& params) {
  std::vector<Param*> all;
  params.collect(all);
  TextContainer c;
  c.kind = "model-params";
  c.set_meta("count", std::to_string(all.size()));
  for (Param* p : all) c.add(p->name, p->value);
  return c;
}

void params_from_container(ModelParams& params, const TextContainer& container) {
  if (container.kind != "model-params") throw std::runtime_error("not a model-params container");
  std::vector<Param*> all;
  params.collect(all);
  for (Param* p : all) {
    const Matrix& m = container.matrix(p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
      throw std::runtime_error("checkpoint shape mismatch for '" + p->name + "'");
    }
    p->value = m;
  }
}

SequenceState ground_truth_state(const SequenceSample& sample) {
  SequenceState s;
  s.joints = sample.gt_joints;
  s.vertices = sample.gt_vertices;
  s.shape = sample.gt_shape;
  for (const auto& pose : sample.gt_poses) {
    std::vector<Quat4> frame;
    frame.reserve(pose.rotations.size());
    for (const auto& q : pose.rotations) frame.push_back(q.coeffs());
    s.rotations.push_back(std::move(frame));
  }
  return s;
}

Vec3 estimate_translation(const Points& relative, const Keypoints& keypoints,
                          const CameraModel& camera) {
  const Eigen::Index j = relative.rows();
  Eigen::MatrixXd a(2 * j, 3);
  Eigen::VectorXd b(2 * j);
  const double sx = 0.5 * camera.image_width / camera.focal;
  const double sy = 0.5 * camera.image_height / camera.focal;
  for (Eigen::Index k = 0; k < j; ++k) {
    // x + tx = ax (z + tz), likewise for y.
    const double ax = keypoints(k, 0) * sx;
    const double ay = keypoints(k, 1) * sy;
    a.row(2 * k) << 1.0, 0.0, -ax;
    b(2 * k) = ax * relative(k, 2) - relative(k, 0);
    a.row(2 * k + 1) << 0.0, 1.0, -ay;
    b(2 * k + 1) = ay * relative(k, 2) - relative(k, 1);
  }
  Vec3 t = a.colPivHouseholderQr().solve(b);
  if (!t.allFinite() || t.z() <= 0.1) t = Vec3(0.0, 0.0, 4.0);
  return t;
}

namespace {

Matrix flatten_rows(const std::vector<FrameTape>& frames) {
  const auto cells = frames.front().fused.size();
  Matrix x(static_cast<Eigen::Index>(frames.size()), cells);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    x.row(static_cast<Eigen::Index>(t)) =
        Eigen::Map<const RowVector>(frames[t].fused.data(), cells);
  }
  return x;
}

}  // namespace

Prediction model_forward(const BodyTemplate& tmpl, const ModelConfig& config,
                         const ModelParams& params, const SequenceSample& sample,
                         ModelTape* tape) {
  const int frames = sample.frames();
  const int joints = tmpl.joint_count();
  const int s = tmpl.shape_dims();
  const int c = config.fusion.channels;
  if (frames < 1) throw std::invalid_argument("model_forward: empty sequence");
  if (sample.rgb.empty() || sample.rgb.front().channels() != c) {
    throw std::invalid_argument("model_forward: feature channels do not match the model");
  }
  if (params.regressor_in.in_dim() != sample.grid * sample.grid * c) {
    throw std::invalid_argument("model_forward: grid size does not match the model");
  }
  if (sample.gt_joints.front().rows() != joints) {
    throw std::invalid_argument("model_forward: joint count does not match the template");
  }
  ModelTape local;
  ModelTape& tp = tape ? *tape : local;
  const auto uf = static_cast<std::size_t>(frames);
  tp.frames.assign(uf, FrameTape{});
  const AblationFlags& flags = config.flags;
  const int g = sample.grid;

  for (std::size_t t = 0; t < uf; ++t) {
    FrameTape& ft = tp.frames[t];
    ft.grid = g;
    const FeatureGrid& rgb = sample.rgb[t];
    if (flags.rgb_only) {
      ft.fused = rgb.cells;
      continue;
    }
    FeatureGrid depth = mock_depth_pathway(sample.depth[t], params.fusion.refine, g, g, ft.depth_pathway);
    if (flags.quality_depth) {
      ft.depth_confidence = sample.confidence[t].values;
      depth.cells = depth.cells.array().colwise() * ft.depth_confidence.array();
    }
    ft.depth = depth.cells;
    if (flags.mask_fusion) {
      ft.fused = fuse_multiscale(rgb, depth, params.fusion, config.fusion.levels, &ft.multiscale);
    } else {
      ft.plain_input.resize(rgb.cells.rows(), 2 * c);
      ft.plain_input << rgb.cells, depth.cells;
      ft.fused = dense_forward(params.fusion.projection, ft.plain_input, ft.plain_projection);
    }
  }

  const MotionTokens motion = sample.motion();
  tp.features.assign(uf, FrameFeatures{});
  for (std::size_t t = 0; t < uf; ++t) {
    tp.features[t] = FrameFeatures{g, g, &tp.frames[t].fused,
                                   flags.rgb_only ? nullptr : &tp.frames[t].depth};
  }

  if (flags.dmaps) {
    InitResult init = dmaps_forward(tmpl, config.dmaps, params.dmaps, motion, tp.features,
                                    sample.mean_confidence(), &tp.dmaps);
    tp.init_poses = std::move(init.poses);
    tp.init_shape = std::move(init.shape);
  } else {
    const Matrix x = flatten_rows(tp.frames);
    const Matrix h = dense_forward(params.regressor_in, x, tp.regressor_in);
    tp.regressor_raw = dense_forward(params.regressor_out, h, tp.regressor_out);
    tp.init_poses.assign(uf, std::vector<Quat4>(static_cast<std::size_t>(joints)));
    for (int t = 0; t < frames; ++t) {
      for (int j = 0; j < joints; ++j) {
        const Vec3 v = tp.regressor_raw.block(t, 3 * j, 1, 3).transpose();
        tp.init_poses[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = exp_map(v);
      }
    }
    tp.regressor_shape_pre = tp.regressor_raw.rightCols(s).colwise().mean().transpose();
    const double bound = config.dmaps.shape_bound;
    tp.init_shape = tp.regressor_shape_pre.cwiseMax(-bound).cwiseMin(bound);
  }

  Prediction pred;
  std::vector<std::vector<Quat4>> poses;
  Vector shape;
  if (flags.modar) {
    std::vector<const Matrix*> fused(uf);
    for (std::size_t t = 0; t < uf; ++t) fused[t] = &tp.frames[t].fused;
    ModarOutput out = modar_forward(config.modar, params.modar, motion, fused, tp.init_poses,
                                    tp.init_shape, &tp.modar);
    poses = std::move(out.refined.poses);
    shape = std::move(out.refined.shape);
    pred.pose_gates = std::move(out.gates);
  } else {
    poses = tp.init_poses;
    shape = tp.init_shape;
  }

  pred.state.shape = shape;
  for (std::size_t t = 0; t < uf; ++t) {
    const Vec3 translation = estimate_translation(sample.lifted[t], sample.keypoints[t], config.camera);
    BodyOutput body = pose_body(tmpl, shape, poses[t], translation, &tp.frames[t].body);
    pred.translation.push_back(translation);
    pred.state.joints.push_back(std::move(body.joints));
    pred.state.vertices.push_back(std::move(body.vertices));
  }
  pred.state.rotations = std::move(poses);
  tp.recorded = true;
  return pred;
}

void model_backward(const BodyTemplate& tmpl, const ModelConfig& config, ModelParams& params,
                    const ModelTape& tape, const LossGrads& grads) {
  if (!tape.recorded) throw std::logic_error("backward through unrecorded node: model");
  const auto uf = tape.frames.size();
  const int joints = tmpl.joint_count();
  const int s = tmpl.shape_dims();
  const AblationFlags& flags = config.flags;

  std::vector<std::vector<Quat4>> d_poses(uf);
  Vector d_shape = grads.shape;
  for (std::size_t t = 0; t < uf; ++t) {
    BodyGrads bg = pose_body_backward(tmpl, tape.frames[t].body, grads.joints[t], grads.vertices[t]);
    d_poses[t] = std::move(bg.rotations);
    for (std::size_t j = 0; j < d_poses[t].size(); ++j) d_poses[t][j] += grads.rotations[t][j];
    d_shape += bg.shape;
  }

  std::vector<Matrix> d_fused(uf);
  for (std::size_t t = 0; t < uf; ++t) d_fused[t] = Matrix::Zero(tape.frames[t].fused.rows(), tape.frames[t].fused.cols());
  std::vector<Matrix> d_depth_extra(uf);

  if (flags.modar) {
    ModarGrads mg = modar_backward(config.modar, params.modar, tape.modar, d_poses, d_shape);
    d_poses = std::move(mg.pose_init);
    d_shape = std::move(mg.shape_init);
    for (std::size_t t = 0; t < uf; ++t) d_fused[t] += mg.fused[t];
  }

  if (flags.dmaps) {
    DmapsFeatureGrads fg =
        dmaps_backward(tmpl, config.dmaps, params.dmaps, tape.dmaps, d_poses, d_shape, tape.features);
    for (std::size_t t = 0; t < uf; ++t) {
      if (t < fg.fused.size() && fg.fused[t].size() > 0) d_fused[t] += fg.fused[t];
      if (t < fg.depth.size() && fg.depth[t].size() > 0) d_depth_extra[t] = fg.depth[t];
    }
  } else {
    const auto frames = static_cast<Eigen::Index>(uf);
    Matrix d_raw = Matrix::Zero(frames, 3 * joints + s);
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (int j = 0; j < joints; ++j) {
        const Vec3 v = tape.regressor_raw.block(t, 3 * j, 1, 3).transpose();
        d_raw.block(t, 3 * j, 1, 3) =
            (exp_map_jacobian(v).transpose() * d_poses[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)])
                .transpose();
      }
    }
    const double bound = config.dmaps.shape_bound;
    for (int k = 0; k < s; ++k) {
      if (std::abs(tape.regressor_shape_pre(k)) >= bound) continue;
      d_raw.col(3 * joints + k).array() += d_shape(k) / static_cast<double>(frames);
    }
    const Matrix dh = dense_backward(params.regressor_out, tape.regressor_out, d_raw);
    const Matrix dx = dense_backward(params.regressor_in, tape.regressor_in, dh);
    for (std::size_t t = 0; t < uf; ++t) {
      d_fused[t] += Eigen::Map<const Matrix>(dx.row(static_cast<Eigen::Index>(t)).data(),
                                             d_fused[t].rows(), d_fused[t].cols());
    }
  }

  if (flags.rgb_only) return;
  for (std::size_t t = 0; t < uf; ++t) {
    const FrameTape& ft = tape.frames[t];
    Matrix d_depth;
    if (flags.mask_fusion) {
      d_depth = fuse_multiscale_backward(params.fusion, ft.multiscale, d_fused[t]);
    } else {
      const Matrix d_in = dense_backward(params.fusion.projection, ft.plain_projection, d_fused[t]);
      d_depth = d_in.rightCols(ft.depth.cols());
    }
    if (d_depth_extra[t].size() > 0) d_depth += d_depth_extra[t];
    if (flags.quality_depth) d_depth = d_depth.array().colwise() * ft.depth_confidence.array();
    mock_depth_pathway_backward(params.fusion.refine, ft.depth_pathway,
                                FeatureGrid(ft.grid, ft.grid, d_depth));
  }
}

}  // namespace depthmesh
