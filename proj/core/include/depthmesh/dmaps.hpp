// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/body_model.hpp"
#include "depthmesh/numerics.hpp"
#include "depthmesh/rotation.hpp"

#include <vector>

namespace depthmesh {

/// N x 2 image coordinates, normalized to [-1, 1] across the image.
using Keypoints = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

struct MotionTokens {
  std::vector<Points> lifted;        // per frame, J x 3, pelvis at the origin (meters)
  std::vector<Keypoints> keypoints;  // per frame, J x 2

  int frames() const { return static_cast<int>(lifted.size()); }
};

struct CalibrationState {
  Vector mean_confidence;  // per frame
  double eta = 0.0;
  Vector weights;          // per frame
  double alpha = 0.0;
  Vector estimated;        // per bone
  Vector calibrated;       // per bone
  std::vector<int> degenerate_bones;
};

/// w_t = sigmoid(eta * m_t).
Vector temporal_weights(const Vector& mean_confidence, double eta);
/// alpha = sigmoid(eta * mean_t m_t). Rejects an empty sequence.
double fusion_gate(const Vector& mean_confidence, double eta);
/// Weighted temporal mean of every bone's length. Rejects all-zero weights.
Vector estimate_bone_lengths(const std::vector<Points>& joints, const KinematicTree& tree,
                             const Vector& weights);
/// Per-bone convex blend; non-positive estimates fall back to the template and are reported in
/// `degenerate` when given.
Vector calibrate_bone_lengths(const Vector& estimated, const Vector& template_lengths,
                              double alpha, std::vector<int>* degenerate = nullptr);
/// Full calibration chain from per-frame confidences and lifted joints.
CalibrationState calibrate(const std::vector<Points>& lifted, const Vector& mean_confidence,
                           const BodyTemplate& tmpl, double eta);

/// d((L_b(s) - L_b(0)) / L_b(0)) / ds_k at s = 0, bones x S.
Matrix shape_length_jacobian(const BodyTemplate& tmpl);
/// Single linear layer set to pinv(shape_length_jacobian), zero bias.
LayerParams analytic_shape_head(const BodyTemplate& tmpl);
/// Regresses shape from relative bone-length deviations, clamped to +-bound.
ShapeParams init_shape(const Vector& calibrated, const BodyTemplate& tmpl, const LayerParams& head,
                       double bound);

// ---------------------------------------------------------------------------
// Learned initialization

struct DmapsConfig {
  int twist_hidden = 32;
  double twist_scale = 1.5;  // radians at tanh saturation
  int attention_heads = 2;   // must divide 3J
  double eta_init = 4.0;
  double shape_bound = 5.0;
};

struct DmapsParams {
  Param eta;                       // 1 x 1
  LayerParams twist_in;            // relu
  LayerParams twist_out;           // linear, zero at init
  MultiHeadAttention temporal;     // tokens: per-frame concatenated rotation vectors
  LayerParams shape_head;          // analytic init

  void collect(std::vector<Param*>& out);
};

DmapsParams make_dmaps_params(const DmapsConfig& config, const BodyTemplate& tmpl, int channels,
                              Rng& rng);

/// Per-frame feature inputs for the twist head.
struct FrameFeatures {
  int height = 0;
  int width = 0;
  const Matrix* fused = nullptr;  // cells x C
  const Matrix* depth = nullptr;  // cells x C
};

/// How each joint's local rotation is formed.
enum class JointRole { kFrameAligned, kSwingTwist, kLeaf };

struct PoseFrameTape {
  std::vector<Quat4> local;   // before temporal aggregation
  std::vector<Quat4> global;
  std::vector<Quat4> swing;
  std::vector<Quat4> twist;
  std::vector<Eigen::Matrix<double, 4, 3>> swing_jacobian;
  std::vector<Vec3> observed;  // bone direction in world
  Vector twist_angle;           // per joint (0 where no twist)
  DenseTape twist_in, twist_out;
  Matrix twist_input;
  std::vector<int> twist_joints;
  std::vector<int> cells;       // per joint: projected cell index
};

struct DmapsTape {
  std::vector<PoseFrameTape> frames;
  Matrix tokens;                // T x 3J
  Matrix delta;                 // T x 3J
  MultiHeadTape temporal;
  CalibrationState calibration;
  Matrix frame_lengths;         // T x bones, from the lifted joints
  Vector shape_input;
  DenseTape shape_tape;
  Vector shape_raw;
  std::vector<int> flagged_bones;  // degenerate observed directions (joint index)
  bool recorded = false;
};

struct InitResult {
  std::vector<std::vector<Quat4>> poses;  // per frame, per joint local rotation (unit)
  Vector shape;
  CalibrationState calibration;
};

/// Rest direction of the bone each joint drives, role per joint, and the two reference children
/// of frame-aligned joints.
struct TreeRoles {
  std::vector<JointRole> role;
  std::vector<Vec3> rest_axis;   // unit, for swing-twist joints
  std::vector<int> primary;      // first child or -1
  std::vector<int> secondary;    // second child or -1
};
TreeRoles tree_roles(const BodyTemplate& tmpl);

/// Projected grid cell of a normalized keypoint.
int keypoint_cell(double u, double v, int height, int width);

InitResult dmaps_forward(const BodyTemplate& tmpl, const DmapsConfig& config,
                         const DmapsParams& params, const MotionTokens& motion,
                         const std::vector<FrameFeatures>& features,
                         const Vector& mean_confidence, DmapsTape* tape = nullptr);

struct DmapsFeatureGrads {
  std::vector<Matrix> fused;  // per frame, cells x C
  std::vector<Matrix> depth;
};

/// `d_poses` per frame per joint with respect to the unit quaternions of InitResult::poses;
/// `d_shape` with respect to the unclamped-then-clamped shape.
DmapsFeatureGrads dmaps_backward(const BodyTemplate& tmpl, const DmapsConfig& config,
                                 DmapsParams& params, const DmapsTape& tape,
                                 const std::vector<std::vector<Quat4>>& d_poses,
                                 const Vector& d_shape, const std::vector<FrameFeatures>& features);

/// Analytic pose initialization without learned terms (zero twist, no temporal mixing).
std::vector<UnitQuaternion> init_pose_analytic(const BodyTemplate& tmpl, const Points& lifted);

}  // namespace depthmesh
