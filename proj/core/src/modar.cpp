// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/modar.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace depthmesh {

void ModarParams::collect(std::vector<Param*>& out) {
  embed.collect(out);
  project.collect(out);
  block1.collect(out);
  block2.collect(out);
  norm.collect(out);
  ffn_in.collect(out);
  ffn_out.collect(out);
  pose_delta.collect(out);
  pose_gate.collect(out);
  shape_delta.collect(out);
  shape_gate.collect(out);
  out.push_back(&rho_logit);
}

ModarParams make_modar_params(const ModarConfig& config, int joints, int shape_dims, int channels,
                              Rng& rng) {
  if (!(config.rho_init > 0.0 && config.rho_init < 1.0)) {
    throw std::invalid_argument("make_modar_params: rho_init must lie in (0, 1)");
  }
  const int d = config.model_dim;
  ModarParams p;
  p.embed = make_dense("modar.embed", 5 + joints, d, Activation::kLinear, rng);
  p.project = make_dense("modar.project", channels, d, Activation::kLinear, rng);
  p.block1 = make_attention("modar.block1", d, d, d, config.heads, true, rng);
  p.block2 = make_attention("modar.block2", d, d, d, config.heads, true, rng);
  p.norm = make_layer_norm("modar.norm", d);
  p.ffn_in = make_dense("modar.ffn_in", d, config.ffn_hidden, Activation::kRelu, rng);
  p.ffn_out = make_dense_zero("modar.ffn_out", config.ffn_hidden, d, Activation::kLinear);
  p.pose_delta = make_dense_zero("modar.pose_delta", d, 3, Activation::kLinear);
  p.pose_gate = make_dense("modar.pose_gate", d, 3, Activation::kSigmoid, rng);
  p.shape_delta = make_dense_zero("modar.shape_delta", d, shape_dims, Activation::kLinear);
  p.shape_gate = make_dense("modar.shape_gate", d, shape_dims, Activation::kSigmoid, rng);
  p.rho_logit =
      Param("modar.rho_logit", Matrix::Constant(1, 1, std::log(config.rho_init / (1.0 - config.rho_init))));
  return p;
}

double smoothing_factor(const ModarConfig& config, const ModarParams& params) {
  if (config.fixed_rho != 0.0) {
    if (!(config.fixed_rho > 0.0 && config.fixed_rho <= 1.0)) {
      throw std::invalid_argument("smoothing factor must lie in (0, 1]");
    }
    return config.fixed_rho;
  }
  return sigmoid(params.rho_logit.value(0, 0));
}

Matrix motion_token_features(const Points& lifted, const Keypoints& keypoints) {
  const Eigen::Index j = lifted.rows();
  if (keypoints.rows() != j) {
    throw std::invalid_argument("motion_token_features: joint count mismatch");
  }
  Matrix u = Matrix::Zero(j, 5 + j);
  u.leftCols(3) = lifted;
  u.middleCols(3, 2) = keypoints;
  u.rightCols(j).setIdentity();
  return u;
}

// ---------------------------------------------------------------------------

Matrix build_context(const ModarConfig& config, const ModarParams& params, const Matrix& tokens,
                     const Matrix& fused, ContextTape* tape) {
  ContextTape local;
  ContextTape& t = tape ? *tape : local;
  t.fused_rows = fused.rows();
  const Matrix h0 = dense_forward(params.embed, tokens, t.embed);
  const Matrix zp = dense_forward(params.project, fused, t.project);
  const Matrix h1 = h0 + attention_forward(params.block1, h0, zp, t.block1);
  Matrix h2;
  if (config.bidirectional_kv) {
    Matrix kv(zp.rows() + h1.rows(), zp.cols());
    kv.topRows(zp.rows()) = zp;
    kv.bottomRows(h1.rows()) = h1;
    h2 = h1 + attention_forward(params.block2, h1, kv, t.block2);
  } else {
    h2 = h1 + attention_forward(params.block2, h1, zp, t.block2);
  }
  const Matrix n = layer_norm(params.norm, h2, t.norm);
  const Matrix out = n + dense_forward(params.ffn_out, dense_forward(params.ffn_in, n, t.ffn_in), t.ffn_out);
  t.recorded = true;
  return out;
}

Matrix build_context_backward(const ModarConfig& config, ModarParams& params,
                              const ContextTape& tape, const Matrix& upstream) {
  if (!tape.recorded) throw std::logic_error("backward through unrecorded node: modar context");
  const Matrix dn =
      upstream + dense_backward(params.ffn_in, tape.ffn_in,
                                dense_backward(params.ffn_out, tape.ffn_out, upstream));
  const Matrix dh2 = layer_norm_backward(params.norm, tape.norm, dn);
  const MultiHeadGrads g2 = attention_backward(params.block2, tape.block2, dh2);
  Matrix dh1 = dh2 + g2.queries;
  Matrix dzp;
  if (config.bidirectional_kv) {
    dzp = g2.keys_values.topRows(tape.fused_rows);
    dh1 += g2.keys_values.bottomRows(g2.keys_values.rows() - tape.fused_rows);
  } else {
    dzp = g2.keys_values;
  }
  const MultiHeadGrads g1 = attention_backward(params.block1, tape.block1, dh1);
  const Matrix dh0 = dh1 + g1.queries;
  dzp += g1.keys_values;
  dense_backward(params.embed, tape.embed, dh0);
  return dense_backward(params.project, tape.project, dzp);
}

// ---------------------------------------------------------------------------

Matrix causal_filter(const Matrix& x0, const Matrix& residual, double rho) {
  if (!(rho > 0.0) || rho > 1.0) throw std::invalid_argument("causal_filter: rho must lie in (0, 1]");
  if (x0.rows() != residual.rows() || x0.cols() != residual.cols()) {
    throw std::invalid_argument("causal_filter: track shapes differ");
  }
  Matrix x(x0.rows(), x0.cols());
  if (x0.rows() == 0) return x;
  RowVector prev = x0.row(0);
  for (Eigen::Index t = 0; t < x0.rows(); ++t) {
    // Incremental form keeps a constant track exactly fixed.
    const RowVector target = x0.row(t) + residual.row(t);
    prev = rho == 1.0 ? target : RowVector(prev + rho * (target - prev));
    x.row(t) = prev;
  }
  return x;
}

FilterGrads causal_filter_backward(const Matrix& x0, const Matrix& residual, const Matrix& filtered,
                                   double rho, const Matrix& upstream) {
  FilterGrads g;
  g.x0 = Matrix::Zero(x0.rows(), x0.cols());
  g.residual = Matrix::Zero(x0.rows(), x0.cols());
  RowVector carry = RowVector::Zero(x0.cols());
  for (Eigen::Index t = x0.rows() - 1; t >= 0; --t) {
    const RowVector gt = upstream.row(t) + carry;
    const RowVector prev = t > 0 ? RowVector(filtered.row(t - 1)) : RowVector(x0.row(0));
    const RowVector target = x0.row(t) + residual.row(t);
    g.x0.row(t) += rho * gt;
    g.residual.row(t) = rho * gt;
    g.rho += gt.dot(target - prev);
    carry = (1.0 - rho) * gt;
  }
  if (x0.rows() > 0) g.x0.row(0) += carry;
  return g;
}

Matrix parameter_track(const std::vector<std::vector<Quat4>>& poses, const Vector& shape) {
  const auto frames = static_cast<Eigen::Index>(poses.size());
  const auto joints = frames > 0 ? static_cast<Eigen::Index>(poses[0].size()) : 0;
  Matrix x(frames, 3 * joints + shape.size());
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index j = 0; j < joints; ++j) {
      x.block(t, 3 * j, 1, 3) =
          log_map(poses[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)]).transpose();
    }
    x.block(t, 3 * joints, 1, shape.size()) = shape.transpose();
  }
  return x;
}

Refined apply_refinement(const std::vector<std::vector<Quat4>>& pose_init, const Vector& shape_init,
                         const Matrix& x0, const Matrix& filtered, double bound) {
  const auto frames = static_cast<Eigen::Index>(pose_init.size());
  if (x0.rows() != frames || filtered.rows() != frames || x0.cols() != filtered.cols()) {
    throw std::invalid_argument("apply_refinement: track dimensions do not match the poses");
  }
  Refined out;
  out.poses.resize(pose_init.size());
  const Eigen::Index s = shape_init.size();
  const Eigen::Index joints = (x0.cols() - s) / 3;
  Vector shift = Vector::Zero(s);
  for (Eigen::Index t = 0; t < frames; ++t) {
    auto& pose = out.poses[static_cast<std::size_t>(t)];
    pose.resize(static_cast<std::size_t>(joints));
    for (Eigen::Index j = 0; j < joints; ++j) {
      const Vec3 delta = (filtered.block(t, 3 * j, 1, 3) - x0.block(t, 3 * j, 1, 3)).transpose();
      const Quat4& p = pose_init[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
      pose[static_cast<std::size_t>(j)] = delta.isZero(0.0) ? p : hamilton(exp_map(delta), p);
    }
    shift += (filtered.block(t, 3 * joints, 1, s) - x0.block(t, 3 * joints, 1, s)).transpose();
  }
  if (frames > 0) shift /= static_cast<double>(frames);
  out.shape = (shape_init + shift).cwiseMax(-bound).cwiseMin(bound);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Matrix clamp_rows(const Matrix& v, double limit) {
  Matrix out = v;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double n = v.row(r).norm();
    if (n > limit) out.row(r) *= limit / n;
  }
  return out;
}

Matrix clamp_rows_backward(const Matrix& v, double limit, const Matrix& upstream) {
  Matrix out = upstream;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double n = v.row(r).norm();
    if (n > limit) {
      const RowVector u = v.row(r) / n;
      out.row(r) = (limit / n) * (upstream.row(r) - upstream.row(r).dot(u) * u);
    }
  }
  return out;
}

}  // namespace

ModarOutput modar_forward(const ModarConfig& config, const ModarParams& params,
                          const MotionTokens& motion, const std::vector<const Matrix*>& fused,
                          const std::vector<std::vector<Quat4>>& pose_init, const Vector& shape_init,
                          ModarTape* tape) {
  const int frames = motion.frames();
  if (static_cast<int>(fused.size()) != frames || static_cast<int>(pose_init.size()) != frames) {
    throw std::invalid_argument("modar_forward: frame count mismatch (motion " +
                                std::to_string(frames) + ", fused " + std::to_string(fused.size()) +
                                ", poses " + std::to_string(pose_init.size()) + ")");
  }
  ModarTape local;
  ModarTape& t = tape ? *tape : local;
  const auto uf = static_cast<std::size_t>(frames);
  t.context.assign(uf, ContextTape{});
  t.features.assign(uf, Matrix{});
  t.pose_delta.assign(uf, DenseTape{});
  t.pose_gate.assign(uf, DenseTape{});
  t.pose_raw.assign(uf, Matrix{});
  t.shape_delta.assign(uf, DenseTape{});
  t.shape_gate.assign(uf, DenseTape{});
  t.pose_init = pose_init;
  t.shape_init = shape_init;
  t.rho = smoothing_factor(config, params);
  t.x0 = parameter_track(pose_init, shape_init);

  const Eigen::Index joints = motion.frames() > 0 ? motion.lifted[0].rows() : 0;
  const Eigen::Index s = shape_init.size();
  t.residual.resize(frames, 3 * joints + s);
  ModarOutput out;
  out.gates.resize(uf);
  for (int f = 0; f < frames; ++f) {
    const auto u = static_cast<std::size_t>(f);
    const Matrix tokens = motion_token_features(motion.lifted[u], motion.keypoints[u]);
    t.features[u] = build_context(config, params, tokens, *fused[u], &t.context[u]);
    const Matrix& fp = t.features[u];
    t.pose_raw[u] = dense_forward(params.pose_delta, fp, t.pose_delta[u]);
    const Matrix delta = clamp_rows(t.pose_raw[u], config.pose_clamp);
    const Matrix gate = dense_forward(params.pose_gate, fp, t.pose_gate[u]);
    const Matrix pooled = fp.colwise().mean();
    const Matrix sdelta = dense_forward(params.shape_delta, pooled, t.shape_delta[u]);
    const Matrix sgate = dense_forward(params.shape_gate, pooled, t.shape_gate[u]);
    for (Eigen::Index j = 0; j < joints; ++j) {
      t.residual.block(f, 3 * j, 1, 3) = gate.row(j).cwiseProduct(delta.row(j));
    }
    t.residual.block(f, 3 * joints, 1, s) = sgate.cwiseProduct(sdelta);
    out.gates[u] = gate;
  }
  t.filtered = causal_filter(t.x0, t.residual, t.rho);
  out.refined = apply_refinement(pose_init, shape_init, t.x0, t.filtered, config.shape_bound);
  t.recorded = true;
  return out;
}

ModarGrads modar_backward(const ModarConfig& config, ModarParams& params, const ModarTape& tape,
                          const std::vector<std::vector<Quat4>>& d_poses, const Vector& d_shape) {
  if (!tape.recorded) throw std::logic_error("backward through unrecorded node: modar");
  const auto frames = static_cast<Eigen::Index>(tape.pose_init.size());
  const Eigen::Index s = tape.shape_init.size();
  const Eigen::Index joints = (tape.x0.cols() - s) / 3;

  ModarGrads g;
  g.pose_init.assign(static_cast<std::size_t>(frames),
                     std::vector<Quat4>(static_cast<std::size_t>(joints), Quat4::Zero()));
  Matrix dx = Matrix::Zero(frames, tape.x0.cols());
  Matrix dx0 = Matrix::Zero(frames, tape.x0.cols());

  // Shape: clamp(s_init + mean_t(x_t - x0_t)).
  Vector shift = Vector::Zero(s);
  for (Eigen::Index t = 0; t < frames; ++t) {
    shift += (tape.filtered.block(t, 3 * joints, 1, s) - tape.x0.block(t, 3 * joints, 1, s)).transpose();
  }
  if (frames > 0) shift /= static_cast<double>(frames);
  const Vector pre = tape.shape_init + shift;
  Vector dpre = d_shape;
  for (Eigen::Index k = 0; k < s; ++k) {
    if (std::abs(pre(k)) >= config.shape_bound) dpre(k) = 0.0;
  }
  g.shape_init = dpre;
  for (Eigen::Index t = 0; t < frames; ++t) {
    dx.block(t, 3 * joints, 1, s) += dpre.transpose() / static_cast<double>(frames);
    dx0.block(t, 3 * joints, 1, s) -= dpre.transpose() / static_cast<double>(frames);
  }

  // Pose: exp(x_t - x0_t) * p_init.
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index j = 0; j < joints; ++j) {
      const auto ut = static_cast<std::size_t>(t);
      const auto uj = static_cast<std::size_t>(j);
      const Vec3 delta = (tape.filtered.block(t, 3 * j, 1, 3) - tape.x0.block(t, 3 * j, 1, 3)).transpose();
      const Quat4& p = tape.pose_init[ut][uj];
      const Quat4& dp = d_poses[ut][uj];
      const Quat4 e = exp_map(delta);
      g.pose_init[ut][uj] += hamilton_jacobian_right(e).transpose() * dp;
      const Vec3 dd = exp_map_jacobian(delta).transpose() * (hamilton_jacobian_left(p).transpose() * dp);
      dx.block(t, 3 * j, 1, 3) += dd.transpose();
      dx0.block(t, 3 * j, 1, 3) -= dd.transpose();
    }
  }

  const FilterGrads fg = causal_filter_backward(tape.x0, tape.residual, tape.filtered, tape.rho, dx);
  dx0 += fg.x0;
  if (config.fixed_rho == 0.0) {
    params.rho_logit.grad(0, 0) += fg.rho * tape.rho * (1.0 - tape.rho);
  }

  // x0 = [log p_init | s_init].
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index j = 0; j < joints; ++j) {
      const auto ut = static_cast<std::size_t>(t);
      const auto uj = static_cast<std::size_t>(j);
      g.pose_init[ut][uj] +=
          log_map_jacobian(tape.pose_init[ut][uj]).transpose() * dx0.block(t, 3 * j, 1, 3).transpose();
    }
    g.shape_init += dx0.block(t, 3 * joints, 1, s).transpose();
  }

  g.fused.resize(static_cast<std::size_t>(frames));
  for (Eigen::Index t = 0; t < frames; ++t) {
    const auto u = static_cast<std::size_t>(t);
    const Matrix& fp = tape.features[u];
    Matrix dres_pose(joints, 3);
    for (Eigen::Index j = 0; j < joints; ++j) {
      dres_pose.row(j) = fg.residual.block(t, 3 * j, 1, 3);
    }
    const Matrix delta = clamp_rows(tape.pose_raw[u], config.pose_clamp);
    const Matrix& gate = tape.pose_gate[u].output;
    const Matrix ddelta = clamp_rows_backward(tape.pose_raw[u], config.pose_clamp,
                                              dres_pose.cwiseProduct(gate));
    Matrix dfp = dense_backward(params.pose_delta, tape.pose_delta[u], ddelta);
    dfp += dense_backward(params.pose_gate, tape.pose_gate[u], dres_pose.cwiseProduct(delta));

    const Matrix dres_shape = fg.residual.block(t, 3 * joints, 1, s);
    const Matrix& sdelta = tape.shape_delta[u].output;
    const Matrix& sgate = tape.shape_gate[u].output;
    Matrix dpooled = dense_backward(params.shape_delta, tape.shape_delta[u], dres_shape.cwiseProduct(sgate));
    dpooled += dense_backward(params.shape_gate, tape.shape_gate[u], dres_shape.cwiseProduct(sdelta));
    dfp.rowwise() += dpooled.row(0) / static_cast<double>(fp.rows());
    g.fused[u] = build_context_backward(config, params, tape.context[u], dfp);
  }
  return g;
}

}  // namespace depthmesh
