// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/dmaps.hpp"
#include "depthmesh/numerics.hpp"
#include "depthmesh/rotation.hpp"

#include <vector>

namespace depthmesh {

struct ModarConfig {
  int model_dim = 32;
  int heads = 2;
  int ffn_hidden = 64;
  double pose_clamp = 0.5;  // radians per joint per pass
  double rho_init = 0.7;
  /// Second block attends over [fused; motion] when true, fused tokens only when false.
  bool bidirectional_kv = true;
  /// Values in (0, 1] replace the learned smoothing factor.
  double fixed_rho = 0.0;
  double shape_bound = 5.0;
};

struct ModarParams {
  LayerParams embed;    // motion token features -> D
  LayerParams project;  // fused channels -> D
  MultiHeadAttention block1;
  MultiHeadAttention block2;
  LayerNormParams norm;
  LayerParams ffn_in;   // relu
  LayerParams ffn_out;  // zero at init
  LayerParams pose_delta;  // per joint D -> 3, zero at init
  LayerParams pose_gate;   // per joint D -> 3, sigmoid
  LayerParams shape_delta; // pooled D -> S, zero at init
  LayerParams shape_gate;  // pooled D -> S, sigmoid
  Param rho_logit;         // 1 x 1

  void collect(std::vector<Param*>& out);
};

ModarParams make_modar_params(const ModarConfig& config, int joints, int shape_dims, int channels,
                              Rng& rng);

double smoothing_factor(const ModarConfig& config, const ModarParams& params);

/// Per-joint token features: [lifted xyz | keypoint uv | one-hot joint].
Matrix motion_token_features(const Points& lifted, const Keypoints& keypoints);

struct ContextTape {
  DenseTape embed, project;
  MultiHeadTape block1, block2;
  LayerNormTape norm;
  DenseTape ffn_in, ffn_out;
  Eigen::Index fused_rows = 0;
  bool recorded = false;
};

/// Two stacked cross-attention blocks (motion queries, fused keys/values), layer norm and a
/// residual feed-forward layer. Returns F' as J x D.
Matrix build_context(const ModarConfig& config, const ModarParams& params, const Matrix& tokens,
                     const Matrix& fused, ContextTape* tape = nullptr);
/// Gradient with respect to the fused tokens.
Matrix build_context_backward(const ModarConfig& config, ModarParams& params,
                              const ContextTape& tape, const Matrix& upstream);

/// x_t = (1 - rho) x_{t-1} + rho (x0_t + residual_t), x_0 := x0_1. Rows are frames.
Matrix causal_filter(const Matrix& x0, const Matrix& residual, double rho);

struct FilterGrads {
  Matrix x0;
  Matrix residual;
  double rho = 0.0;
};

FilterGrads causal_filter_backward(const Matrix& x0, const Matrix& residual, const Matrix& filtered,
                                   double rho, const Matrix& upstream);

struct Refined {
  std::vector<std::vector<Quat4>> poses;
  Vector shape;
};

/// Composes exp(x_t - x0_t) onto each initial rotation (pose block, 3 per joint) and averages the
/// filtered shape block over frames, clamped to +-bound.
Refined apply_refinement(const std::vector<std::vector<Quat4>>& pose_init, const Vector& shape_init,
                         const Matrix& x0, const Matrix& filtered, double bound);

/// Flattened per-frame coordinates [log(p_j) for each joint | shape].
Matrix parameter_track(const std::vector<std::vector<Quat4>>& poses, const Vector& shape);

struct ModarTape {
  std::vector<ContextTape> context;
  std::vector<Matrix> features;  // F' per frame
  std::vector<DenseTape> pose_delta, pose_gate;
  std::vector<Matrix> pose_raw;  // before the norm clamp
  std::vector<DenseTape> shape_delta, shape_gate;
  Matrix x0, residual, filtered;
  std::vector<std::vector<Quat4>> pose_init;
  Vector shape_init;
  double rho = 1.0;
  bool recorded = false;
};

struct ModarOutput {
  Refined refined;
  std::vector<Matrix> gates;  // per frame, J x 3 pose gates
};

ModarOutput modar_forward(const ModarConfig& config, const ModarParams& params,
                          const MotionTokens& motion, const std::vector<const Matrix*>& fused,
                          const std::vector<std::vector<Quat4>>& pose_init, const Vector& shape_init,
                          ModarTape* tape = nullptr);

struct ModarGrads {
  std::vector<std::vector<Quat4>> pose_init;
  Vector shape_init;
  std::vector<Matrix> fused;
};

ModarGrads modar_backward(const ModarConfig& config, ModarParams& params, const ModarTape& tape,
                          const std::vector<std::vector<Quat4>>& d_poses, const Vector& d_shape);

}  // namespace depthmesh
