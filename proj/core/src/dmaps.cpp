// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/dmaps.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace depthmesh {

namespace {

constexpr double kDegenerateBone = 1e-9;

const Quat4 kIdentityQuat(1.0, 0.0, 0.0, 0.0);

Quat4 conjugate(const Quat4& q) { return {q(0), -q(1), -q(2), -q(3)}; }

Quat4 twist_quat(const Vec3& axis, double angle) {
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), s * axis(0), s * axis(1), s * axis(2)};
}

Vec3 row3(const Points& p, int r) { return p.row(r).transpose(); }

}  // namespace

Vector temporal_weights(const Vector& mean_confidence, double eta) {
  return mean_confidence.unaryExpr([eta](double m) { return sigmoid(eta * m); });
}

double fusion_gate(const Vector& mean_confidence, double eta) {
  if (mean_confidence.size() == 0) throw std::invalid_argument("fusion_gate: empty sequence");
  return sigmoid(eta * mean_confidence.mean());
}

Vector estimate_bone_lengths(const std::vector<Points>& joints, const KinematicTree& tree,
                             const Vector& weights) {
  if (joints.empty() || static_cast<Eigen::Index>(joints.size()) != weights.size()) {
    throw std::invalid_argument("estimate_bone_lengths: need one weight per frame, T >= 1");
  }
  const double total = weights.sum();
  if (!(total > 0.0)) throw std::invalid_argument("estimate_bone_lengths: weights sum to zero");
  Vector acc = Vector::Zero(tree.bone_count());
  for (std::size_t t = 0; t < joints.size(); ++t) {
    acc += weights(static_cast<Eigen::Index>(t)) * bone_lengths(joints[t], tree);
  }
  return acc / total;
}

Vector calibrate_bone_lengths(const Vector& estimated, const Vector& template_lengths,
                              double alpha, std::vector<int>* degenerate) {
  if (estimated.size() != template_lengths.size()) {
    throw std::invalid_argument("calibrate_bone_lengths: length vectors differ in size");
  }
  Vector out(estimated.size());
  for (Eigen::Index b = 0; b < estimated.size(); ++b) {
    if (!(estimated(b) > 0.0)) {
      out(b) = template_lengths(b);
      if (degenerate) degenerate->push_back(static_cast<int>(b));
    } else {
      out(b) = alpha * estimated(b) + (1.0 - alpha) * template_lengths(b);
    }
  }
  return out;
}

CalibrationState calibrate(const std::vector<Points>& lifted, const Vector& mean_confidence,
                           const BodyTemplate& tmpl, double eta) {
  CalibrationState c;
  c.mean_confidence = mean_confidence;
  c.eta = eta;
  c.weights = temporal_weights(mean_confidence, eta);
  c.alpha = fusion_gate(mean_confidence, eta);
  c.estimated = estimate_bone_lengths(lifted, tmpl.tree, c.weights);
  c.calibrated = calibrate_bone_lengths(c.estimated, tmpl.template_bone_lengths, c.alpha,
                                        &c.degenerate_bones);
  return c;
}

Matrix shape_length_jacobian(const BodyTemplate& tmpl) {
  const auto& bones = tmpl.tree.bones();
  Matrix g(tmpl.tree.bone_count(), tmpl.shape_dims());
  for (int b = 0; b < tmpl.tree.bone_count(); ++b) {
    const Bone& bone = bones[static_cast<std::size_t>(b)];
    const Vec3 d = row3(tmpl.rest_joints, bone.child) - row3(tmpl.rest_joints, bone.parent);
    const double len = d.norm();
    for (int k = 0; k < tmpl.shape_dims(); ++k) {
      const Points& f = tmpl.joint_basis[static_cast<std::size_t>(k)];
      g(b, k) = d.dot(row3(f, bone.child) - row3(f, bone.parent)) / (len * len);
    }
  }
  return g;
}

LayerParams analytic_shape_head(const BodyTemplate& tmpl) {
  const Matrix g = shape_length_jacobian(tmpl);
  LayerParams head = make_dense_zero("dmaps.shape_head", g.rows(), g.cols(), Activation::kLinear);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double cutoff = 1e-12 * std::max(1.0, sv.size() > 0 ? sv(0) : 1.0);
  Eigen::VectorXd inv = sv.unaryExpr([cutoff](double s) { return s > cutoff ? 1.0 / s : 0.0; });
  head.weights.value = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return head;
}

ShapeParams init_shape(const Vector& calibrated, const BodyTemplate& tmpl, const LayerParams& head,
                       double bound) {
  const Vector& bar = tmpl.template_bone_lengths;
  if (calibrated.size() != bar.size()) {
    throw std::invalid_argument("init_shape: one calibrated length per bone required");
  }
  Matrix x(1, bar.size());
  x.row(0) = ((calibrated - bar).array() / bar.array()).matrix().transpose();
  const Matrix raw = dense_forward(head, x);
  ShapeParams s;
  s.bound = bound;
  s.coefficients = raw.row(0).transpose().cwiseMax(-bound).cwiseMin(bound);
  return s;
}

// ---------------------------------------------------------------------------

void DmapsParams::collect(std::vector<Param*>& out) {
  out.push_back(&eta);
  twist_in.collect(out);
  twist_out.collect(out);
  temporal.collect(out);
  shape_head.collect(out);
}

DmapsParams make_dmaps_params(const DmapsConfig& config, const BodyTemplate& tmpl, int channels,
                              Rng& rng) {
  const int j = tmpl.joint_count();
  const int tokens = 3 * j;
  if (config.attention_heads <= 0 || tokens % config.attention_heads != 0) {
    throw std::invalid_argument("make_dmaps_params: attention heads must divide 3J = " +
                                std::to_string(tokens));
  }
  DmapsParams p;
  p.eta = Param("dmaps.eta", Matrix::Constant(1, 1, config.eta_init));
  p.twist_in = make_dense("dmaps.twist_in", 10 * channels + j, config.twist_hidden,
                          Activation::kRelu, rng);
  p.twist_out = make_dense_zero("dmaps.twist_out", config.twist_hidden, 1, Activation::kLinear);
  p.temporal = make_attention("dmaps.temporal", tokens, tokens, tokens, config.attention_heads,
                              true, rng);
  p.shape_head = analytic_shape_head(tmpl);
  return p;
}

TreeRoles tree_roles(const BodyTemplate& tmpl) {
  const KinematicTree& tree = tmpl.tree;
  const int n = tree.joint_count();
  TreeRoles r;
  r.role.resize(static_cast<std::size_t>(n));
  r.rest_axis.assign(static_cast<std::size_t>(n), Vec3::Zero());
  r.primary.assign(static_cast<std::size_t>(n), -1);
  r.secondary.assign(static_cast<std::size_t>(n), -1);
  for (int j = 0; j < n; ++j) {
    const auto& kids = tree.children(j);
    const auto u = static_cast<std::size_t>(j);
    if (kids.empty()) {
      r.role[u] = JointRole::kLeaf;
      continue;
    }
    r.primary[u] = kids[0];
    const Vec3 axis = row3(tmpl.rest_joints, kids[0]) - row3(tmpl.rest_joints, j);
    r.rest_axis[u] = axis.normalized();
    if (kids.size() >= 2) {
      r.role[u] = JointRole::kFrameAligned;
      r.secondary[u] = kids[1];
    } else {
      r.role[u] = JointRole::kSwingTwist;
    }
  }
  return r;
}

int keypoint_cell(double u, double v, int height, int width) {
  const int x = std::clamp(static_cast<int>(std::floor(0.5 * (u + 1.0) * width)), 0, width - 1);
  const int y = std::clamp(static_cast<int>(std::floor(0.5 * (v + 1.0) * height)), 0, height - 1);
  return y * width + x;
}

namespace {

// Local rotations of one frame from lifted joints and per-joint twist angles. Frame-aligned
// joints take their world frame from the two reference bones; swing-twist joints swing their rest
// axis onto the observed bone expressed in the parent's estimated frame, then twist about it.
void solve_frame(const BodyTemplate& tmpl, const TreeRoles& roles, const Points& lifted,
                 const Vector& twist, PoseFrameTape& f, std::vector<int>* flagged) {
  const KinematicTree& tree = tmpl.tree;
  const int n = tree.joint_count();
  const auto un = static_cast<std::size_t>(n);
  f.local.assign(un, kIdentityQuat);
  f.global.assign(un, kIdentityQuat);
  f.swing.assign(un, kIdentityQuat);
  f.twist.assign(un, kIdentityQuat);
  f.swing_jacobian.assign(un, Eigen::Matrix<double, 4, 3>::Zero());
  f.observed.assign(un, Vec3::Zero());
  f.twist_angle = twist;
  for (int j : tree.order()) {
    const auto u = static_cast<std::size_t>(j);
    const int p = tree.parent(j);
    const Quat4 gp = p < 0 ? kIdentityQuat : f.global[static_cast<std::size_t>(p)];
    switch (roles.role[u]) {
      case JointRole::kLeaf:
        f.local[u] = kIdentityQuat;
        f.global[u] = gp;
        break;
      case JointRole::kFrameAligned: {
        const int c0 = roles.primary[u];
        const int c1 = roles.secondary[u];
        const Vec3 rest0 = row3(tmpl.rest_joints, c0) - row3(tmpl.rest_joints, j);
        const Vec3 rest1 = row3(tmpl.rest_joints, c1) - row3(tmpl.rest_joints, j);
        const Vec3 obs0 = row3(lifted, c0) - row3(lifted, j);
        const Vec3 obs1 = row3(lifted, c1) - row3(lifted, j);
        f.observed[u] = obs0;
        Quat4 world = kIdentityQuat;
        if (obs0.norm() < kDegenerateBone) {
          if (flagged) flagged->push_back(j);
          world = gp;
        } else {
          world = align_two_vectors(rest0, rest1, obs0, obs1).coeffs();
        }
        f.global[u] = world;
        f.local[u] = hamilton(conjugate(gp), world);
        break;
      }
      case JointRole::kSwingTwist: {
        const int c = roles.primary[u];
        const Vec3 obs = row3(lifted, c) - row3(lifted, j);
        f.observed[u] = obs;
        const Vec3 in_parent = rotation_matrix(gp).transpose() * obs;
        if (obs.norm() < kDegenerateBone) {
          if (flagged) flagged->push_back(j);
          f.swing[u] = kIdentityQuat;
          f.swing_jacobian[u].setZero();
        } else {
          f.swing[u] = swing_quat(roles.rest_axis[u], in_parent, &f.swing_jacobian[u]);
        }
        f.twist[u] = twist_quat(roles.rest_axis[u], twist(j));
        f.local[u] = hamilton(f.swing[u], f.twist[u]);
        f.global[u] = hamilton(gp, f.local[u]);
        break;
      }
    }
  }
}

// [fused cell | 3x3 depth patch | one-hot joint] per swing-twist joint.
Matrix twist_inputs(const FrameFeatures& feat, const std::vector<int>& joints,
                    const std::vector<int>& cells, int joint_count, int channels) {
  Matrix in = Matrix::Zero(static_cast<Eigen::Index>(joints.size()), 10 * channels + joint_count);
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const int j = joints[i];
    const int cell = cells[static_cast<std::size_t>(j)];
    const auto r = static_cast<Eigen::Index>(i);
    if (feat.fused) in.block(r, 0, 1, channels) = feat.fused->row(cell);
    if (feat.depth) {
      const int cy = cell / feat.width;
      const int cx = cell % feat.width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = cy + dy;
          const int x = cx + dx;
          if (y < 0 || y >= feat.height || x < 0 || x >= feat.width) continue;
          const int k = (dy + 1) * 3 + (dx + 1);
          in.block(r, channels * (1 + k), 1, channels) = feat.depth->row(y * feat.width + x);
        }
      }
    }
    in(r, 10 * channels + j) = 1.0;
  }
  return in;
}

}  // namespace

std::vector<UnitQuaternion> init_pose_analytic(const BodyTemplate& tmpl, const Points& lifted) {
  const TreeRoles roles = tree_roles(tmpl);
  PoseFrameTape f;
  solve_frame(tmpl, roles, lifted, Vector::Zero(tmpl.joint_count()), f, nullptr);
  std::vector<UnitQuaternion> out;
  out.reserve(f.local.size());
  for (const Quat4& q : f.local) out.push_back(canonical(q));
  return out;
}

InitResult dmaps_forward(const BodyTemplate& tmpl, const DmapsConfig& config,
                         const DmapsParams& params, const MotionTokens& motion,
                         const std::vector<FrameFeatures>& features,
                         const Vector& mean_confidence, DmapsTape* tape) {
  const int frames = motion.frames();
  const int n = tmpl.joint_count();
  if (frames < 1 || static_cast<int>(features.size()) != frames ||
      mean_confidence.size() != frames ||
      static_cast<int>(motion.keypoints.size()) != frames) {
    throw std::invalid_argument("dmaps_forward: per-frame inputs must agree on T >= 1");
  }
  const int channels = static_cast<int>((params.twist_in.in_dim() - n) / 10);
  const TreeRoles roles = tree_roles(tmpl);
  std::vector<int> twist_joints;
  for (int j = 0; j < n; ++j) {
    if (roles.role[static_cast<std::size_t>(j)] == JointRole::kSwingTwist) twist_joints.push_back(j);
  }

  DmapsTape local_tape;
  DmapsTape& t = tape ? *tape : local_tape;
  t.frames.assign(static_cast<std::size_t>(frames), PoseFrameTape{});
  t.flagged_bones.clear();
  t.tokens.resize(frames, 3 * n);

  for (int f = 0; f < frames; ++f) {
    PoseFrameTape& ft = t.frames[static_cast<std::size_t>(f)];
    const FrameFeatures& feat = features[static_cast<std::size_t>(f)];
    const Keypoints& kp = motion.keypoints[static_cast<std::size_t>(f)];
    if (motion.lifted[static_cast<std::size_t>(f)].rows() != n || kp.rows() != n) {
      throw std::invalid_argument("dmaps_forward: joint count mismatch in frame " +
                                  std::to_string(f));
    }
    ft.cells.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      ft.cells[static_cast<std::size_t>(j)] = keypoint_cell(kp(j, 0), kp(j, 1), feat.height, feat.width);
    }
    ft.twist_joints = twist_joints;
    Vector angles = Vector::Zero(n);
    if (!twist_joints.empty()) {
      ft.twist_input = twist_inputs(feat, twist_joints, ft.cells, n, channels);
      const Matrix z = dense_forward(params.twist_out,
                                     dense_forward(params.twist_in, ft.twist_input, ft.twist_in),
                                     ft.twist_out);
      for (std::size_t i = 0; i < twist_joints.size(); ++i) {
        angles(twist_joints[i]) = config.twist_scale * std::tanh(z(static_cast<Eigen::Index>(i), 0));
      }
    }
    solve_frame(tmpl, roles, motion.lifted[static_cast<std::size_t>(f)], angles, ft,
                &t.flagged_bones);
    for (int j = 0; j < n; ++j) {
      t.tokens.block(f, 3 * j, 1, 3) = log_map(ft.local[static_cast<std::size_t>(j)]).transpose();
    }
  }

  t.delta = attention_forward(params.temporal, t.tokens, t.tokens, t.temporal);

  InitResult out;
  out.poses.resize(static_cast<std::size_t>(frames));
  for (int f = 0; f < frames; ++f) {
    auto& pose = out.poses[static_cast<std::size_t>(f)];
    pose.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      const Vec3 d = t.delta.block(f, 3 * j, 1, 3).transpose();
      pose[static_cast<std::size_t>(j)] =
          hamilton(exp_map(d), t.frames[static_cast<std::size_t>(f)].local[static_cast<std::size_t>(j)]);
    }
  }

  // Shape from calibrated bone lengths.
  const double eta = params.eta.value(0, 0);
  t.calibration = calibrate(motion.lifted, mean_confidence, tmpl, eta);
  t.frame_lengths.resize(frames, tmpl.tree.bone_count());
  for (int f = 0; f < frames; ++f) {
    t.frame_lengths.row(f) = bone_lengths(motion.lifted[static_cast<std::size_t>(f)], tmpl.tree).transpose();
  }
  const Vector& bar = tmpl.template_bone_lengths;
  t.shape_input = ((t.calibration.calibrated - bar).array() / bar.array()).matrix();
  const Matrix raw = dense_forward(params.shape_head, Matrix(t.shape_input.transpose()), t.shape_tape);
  t.shape_raw = raw.row(0).transpose();
  out.shape = t.shape_raw.cwiseMax(-config.shape_bound).cwiseMin(config.shape_bound);
  out.calibration = t.calibration;
  t.recorded = true;
  return out;
}

DmapsFeatureGrads dmaps_backward(const BodyTemplate& tmpl, const DmapsConfig& config,
                                 DmapsParams& params, const DmapsTape& tape,
                                 const std::vector<std::vector<Quat4>>& d_poses,
                                 const Vector& d_shape, const std::vector<FrameFeatures>& features) {
  if (!tape.recorded) throw std::logic_error("backward through unrecorded node: dmaps");
  const int frames = static_cast<int>(tape.frames.size());
  const int n = tmpl.joint_count();
  const KinematicTree& tree = tmpl.tree;
  const TreeRoles roles = tree_roles(tmpl);
  const int channels = static_cast<int>((params.twist_in.in_dim() - n) / 10);

  // Shape and calibration.
  {
    Vector draw = d_shape;
    for (Eigen::Index k = 0; k < draw.size(); ++k) {
      if (std::abs(tape.shape_raw(k)) >= config.shape_bound) draw(k) = 0.0;
    }
    const Matrix dx = dense_backward(params.shape_head, tape.shape_tape, Matrix(draw.transpose()));
    const CalibrationState& c = tape.calibration;
    const Vector& bar = tmpl.template_bone_lengths;
    Vector dbz = (dx.row(0).transpose().array() / bar.array()).matrix();
    for (int b : c.degenerate_bones) dbz(b) = 0.0;
    const double dalpha = dbz.dot(c.estimated - bar);
    const Vector dest = c.alpha * dbz;
    const double wsum = c.weights.sum();
    double deta = dalpha * c.alpha * (1.0 - c.alpha) * c.mean_confidence.mean();
    for (int f = 0; f < frames; ++f) {
      const double dw = dest.dot(tape.frame_lengths.row(f).transpose() - c.estimated) / wsum;
      const double w = c.weights(f);
      deta += dw * w * (1.0 - w) * c.mean_confidence(f);
    }
    params.eta.grad(0, 0) += deta;
  }

  // Temporal aggregation: pose = exp(delta) * local.
  Matrix ddelta = Matrix::Zero(frames, 3 * n);
  std::vector<std::vector<Quat4>> dlocal(static_cast<std::size_t>(frames),
                                         std::vector<Quat4>(static_cast<std::size_t>(n), Quat4::Zero()));
  for (int f = 0; f < frames; ++f) {
    const auto& ft = tape.frames[static_cast<std::size_t>(f)];
    for (int j = 0; j < n; ++j) {
      const auto u = static_cast<std::size_t>(j);
      const Vec3 d = tape.delta.block(f, 3 * j, 1, 3).transpose();
      const Quat4 e = exp_map(d);
      const Quat4& dp = d_poses[static_cast<std::size_t>(f)][u];
      const Quat4 de = hamilton_jacobian_left(ft.local[u]).transpose() * dp;
      dlocal[static_cast<std::size_t>(f)][u] += hamilton_jacobian_right(e).transpose() * dp;
      ddelta.block(f, 3 * j, 1, 3) = (exp_map_jacobian(d).transpose() * de).transpose();
    }
  }
  const MultiHeadGrads ag = attention_backward(params.temporal, tape.temporal, ddelta);
  const Matrix dtokens = ag.queries + ag.keys_values;

  DmapsFeatureGrads out;
  out.fused.resize(static_cast<std::size_t>(frames));
  out.depth.resize(static_cast<std::size_t>(frames));

  for (int f = 0; f < frames; ++f) {
    const auto& ft = tape.frames[static_cast<std::size_t>(f)];
    auto& dl = dlocal[static_cast<std::size_t>(f)];
    for (int j = 0; j < n; ++j) {
      const auto u = static_cast<std::size_t>(j);
      dl[u] += log_map_jacobian(ft.local[u]).transpose() * dtokens.block(f, 3 * j, 1, 3).transpose();
    }

    std::vector<Quat4> dglobal(static_cast<std::size_t>(n), Quat4::Zero());
    Vector dtheta = Vector::Zero(n);
    const auto& order = tree.order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int j = *it;
      const auto u = static_cast<std::size_t>(j);
      const int p = tree.parent(j);
      const Quat4 gp = p < 0 ? kIdentityQuat : ft.global[static_cast<std::size_t>(p)];
      Quat4 dgp = Quat4::Zero();
      switch (roles.role[u]) {
        case JointRole::kLeaf:
          dgp += dglobal[u];
          break;
        case JointRole::kFrameAligned: {
          // local = conj(gp) * world with world fixed by the observation.
          const Quat4 dconj = hamilton_jacobian_left(ft.global[u]).transpose() * dl[u];
          dgp += Quat4(dconj(0), -dconj(1), -dconj(2), -dconj(3));
          break;
        }
        case JointRole::kSwingTwist: {
          const Quat4 dlocal_total =
              dl[u] + hamilton_jacobian_right(gp).transpose() * dglobal[u];
          dgp += hamilton_jacobian_left(ft.local[u]).transpose() * dglobal[u];
          const Quat4 dswing = hamilton_jacobian_left(ft.twist[u]).transpose() * dlocal_total;
          const Quat4 dtwist = hamilton_jacobian_right(ft.swing[u]).transpose() * dlocal_total;
          const double th = ft.twist_angle(j);
          const Vec3& axis = roles.rest_axis[u];
          dtheta(j) = dtwist(0) * (-0.5 * std::sin(0.5 * th)) +
                      0.5 * std::cos(0.5 * th) * axis.dot(dtwist.tail<3>());
          const Vec3 db = ft.swing_jacobian[u].transpose() * dswing;
          const Mat3 dR = ft.observed[u] * db.transpose();
          if (p >= 0) dgp += rotation_matrix_grad(gp, dR);
          break;
        }
      }
      if (p >= 0) dglobal[static_cast<std::size_t>(p)] += dgp;
    }

    const FrameFeatures& feat = features[static_cast<std::size_t>(f)];
    out.fused[static_cast<std::size_t>(f)] = Matrix::Zero(feat.height * feat.width, channels);
    out.depth[static_cast<std::size_t>(f)] = Matrix::Zero(feat.height * feat.width, channels);
    if (ft.twist_joints.empty()) continue;
    Matrix dz(static_cast<Eigen::Index>(ft.twist_joints.size()), 1);
    for (std::size_t i = 0; i < ft.twist_joints.size(); ++i) {
      const int j = ft.twist_joints[i];
      const double th = ft.twist_angle(j) / config.twist_scale;
      dz(static_cast<Eigen::Index>(i), 0) = dtheta(j) * config.twist_scale * (1.0 - th * th);
    }
    const Matrix dhidden = dense_backward(params.twist_out, ft.twist_out, dz);
    const Matrix dinput = dense_backward(params.twist_in, ft.twist_in, dhidden);
    Matrix& dfused = out.fused[static_cast<std::size_t>(f)];
    Matrix& ddepth = out.depth[static_cast<std::size_t>(f)];
    for (std::size_t i = 0; i < ft.twist_joints.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const int cell = ft.cells[static_cast<std::size_t>(ft.twist_joints[i])];
      dfused.row(cell) += dinput.block(r, 0, 1, channels);
      const int cy = cell / feat.width;
      const int cx = cell % feat.width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = cy + dy;
          const int x = cx + dx;
          if (y < 0 || y >= feat.height || x < 0 || x >= feat.width) continue;
          const int k = (dy + 1) * 3 + (dx + 1);
          ddepth.row(y * feat.width + x) += dinput.block(r, channels * (1 + k), 1, channels);
        }
      }
    }
  }
  return out;
}

}  // namespace depthmesh
