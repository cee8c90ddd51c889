// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/body_model.hpp"
#include "depthmesh/numerics.hpp"
#include "depthmesh/rotation.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace depthmesh {

struct LossWeights {
  double mesh = 1.0;
  double joint = 5.0;
  double pose = 1.0;
  double shape = 0.1;
  double smooth = 0.5;

  /// Throws std::invalid_argument on negative or non-finite weights.
  void validate() const;
};

/// A predicted or ground-truth sequence. Rotations are local per joint.
struct SequenceState {
  std::vector<Points> joints;
  std::vector<Points> vertices;
  std::vector<std::vector<Quat4>> rotations;
  Vector shape;

  int frames() const { return static_cast<int>(joints.size()); }
};

struct LossTerms {
  double mesh = 0.0;
  double joint = 0.0;
  double pose = 0.0;
  double shape = 0.0;
  double smooth = 0.0;
  double total = 0.0;
  std::vector<std::string> warnings;
};

/// Gradient of the total loss with respect to every prediction field.
struct LossGrads {
  std::vector<Points> joints;
  std::vector<Points> vertices;
  std::vector<std::vector<Quat4>> rotations;
  Vector shape;
};

/// Joint and mesh terms compare positions relative to the root joint of each frame.
/// L_mesh: mean L1 vertex deviation. L_joint: mean squared joint distance. L_pose: mean squared
/// Frobenius distance of rotation matrices. L_shape: squared coefficient distance.
/// L_smooth: mean squared second difference of root-relative predicted joints (0 when T < 3).
LossTerms total_loss(const SequenceState& pred, const SequenceState& target,
                     const LossWeights& weights, int root, LossGrads* grads = nullptr);

// ---------------------------------------------------------------------------

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

struct ProcrustesResult {
  Similarity transform;
  Points aligned;
  double residual = 0.0;  // sum of squared distances after alignment
  bool degenerate = false;
};

/// Closed-form similarity alignment of `pred` onto `gt`, reflections excluded.
ProcrustesResult procrustes_align(const Points& pred, const Points& gt);

/// Mean distance over non-root joints after subtracting each frame's root joint, in mm.
double mpjpe(const std::vector<Points>& pred, const std::vector<Points>& gt, int root);
/// Mean per-joint distance after per-frame Procrustes alignment, in mm.
double pa_mpjpe(const std::vector<Points>& pred, const std::vector<Points>& gt);
/// Mean vertex distance with vertices expressed relative to each frame's root joint, in mm.
double mpvpe(const std::vector<Points>& pred_vertices, const std::vector<Points>& gt_vertices,
             const std::vector<Points>& pred_joints, const std::vector<Points>& gt_joints,
             int root);
/// Mean norm of the second-difference acceleration error in mm/s^2. A negative `root` uses
/// absolute positions; otherwise positions are taken relative to that joint. Requires T >= 3.
double accel_error(const std::vector<Points>& pred, const std::vector<Points>& gt, double fps,
                   int root = -1);

double frame_mpjpe(const Points& pred, const Points& gt, int root);
double frame_pa_mpjpe(const Points& pred, const Points& gt);

struct SequenceMetrics {
  std::string id;
  int frames = 0;
  double mpjpe = 0.0;
  double pa_mpjpe = 0.0;
  double mpvpe = 0.0;
  double accel = 0.0;
  std::vector<double> frame_mpjpe;
  std::vector<double> frame_pa_mpjpe;
};

struct MetricOptions {
  int root = 0;
  double fps = 30.0;
  bool accel_root_relative = true;
};

SequenceMetrics evaluate_sequence(const SequenceState& pred, const SequenceState& gt,
                                  const MetricOptions& options, std::string id = {});

struct MetricReport {
  std::vector<SequenceMetrics> sequences;

  double mean_mpjpe() const;
  double mean_pa_mpjpe() const;
  double mean_mpvpe() const;
  double mean_accel() const;

  /// Header `sequence,frames,mpjpe_mm,pa_mpjpe_mm,mpvpe_mm,accel_mm_s2`, one row per sequence.
  void write_csv(std::ostream& os) const;
  /// Aggregate means, sequence count and per-frame breakdowns.
  std::string to_json() const;
};

}  // namespace depthmesh
