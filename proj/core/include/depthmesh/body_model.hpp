// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/numerics.hpp"
#include "depthmesh/rotation.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace depthmesh {

/// N x 3 positions in meters.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct Bone {
  int parent = -1;
  int child = -1;
};

class KinematicTree {
 public:
  KinematicTree() = default;
  /// Rejects parent lists without exactly one root (-1), with out-of-range parents, or cycles.
  explicit KinematicTree(std::vector<int> parents);

  int joint_count() const { return static_cast<int>(parents_.size()); }
  int bone_count() const { return static_cast<int>(bones_.size()); }
  int root() const { return root_; }
  int parent(int joint) const { return parents_[static_cast<std::size_t>(joint)]; }
  const std::vector<int>& parents() const { return parents_; }
  const std::vector<int>& children(int joint) const {
    return children_[static_cast<std::size_t>(joint)];
  }
  /// Bones ordered so every bone appears after the bone feeding its parent.
  const std::vector<Bone>& bones() const { return bones_; }
  /// Root-first topological order of joints.
  const std::vector<int>& order() const { return order_; }
  /// Index into bones() of the bone ending at `joint`; -1 for the root.
  int bone_into(int joint) const { return bone_into_[static_cast<std::size_t>(joint)]; }

 private:
  std::vector<int> parents_;
  std::vector<std::vector<int>> children_;
  std::vector<Bone> bones_;
  std::vector<int> order_;
  std::vector<int> bone_into_;
  int root_ = -1;
};

struct BodyTemplate {
  KinematicTree tree;
  std::vector<std::string> joint_names;
  Points rest_joints;
  Points rest_vertices;
  Matrix skin_weights;              // V x J, rows sum to 1
  std::vector<Points> joint_basis;  // S fields, each J x 3 (meters per unit coefficient)
  std::vector<Points> vertex_basis; // S fields, each V x 3
  Vector template_bone_lengths;     // per bone, tree.bones() order
  std::vector<int> vertex_anchor_bone;
  std::vector<double> vertex_anchor_t;

  int joint_count() const { return tree.joint_count(); }
  int vertex_count() const { return static_cast<int>(rest_vertices.rows()); }
  int shape_dims() const { return static_cast<int>(joint_basis.size()); }
};

struct PoseParams {
  std::vector<UnitQuaternion> rotations;  // local, one per joint
  Vec3 translation = Vec3::Zero();

  static PoseParams identity(int joints);
};

struct ShapeParams {
  Vector coefficients;
  double bound = 5.0;
};

struct ShapedRest {
  Points joints;
  Points vertices;
};

struct FkResult {
  Points joints;
  std::vector<Mat3> global_rotations;
};

/// J == 16 builds the humanoid (pelvis root, spine, neck, head, legs, arms); other counts build
/// a seeded random tree. Shape directions: global scale, leg length, arm length, torso width,
/// then seeded bone subsets.
BodyTemplate build_template(int joint_count = 16, int shape_dims = 4, int vertex_count = 192,
                            std::uint64_t seed = 0);

ShapedRest apply_shape(const BodyTemplate& tmpl, const ShapeParams& shape);
ShapedRest apply_shape(const BodyTemplate& tmpl, const Vector& coefficients);

FkResult forward_kinematics(const Points& rest_joints, const KinematicTree& tree,
                            const PoseParams& pose);

Points skin_vertices(const BodyTemplate& tmpl, const ShapedRest& rest, const FkResult& fk);

/// Euclidean length of every bone, in tree.bones() order.
Vector bone_lengths(const Points& joints, const KinematicTree& tree);

/// Rescales each bone of `rest` to `target_lengths`, root to leaves; vertices follow their
/// anchor bone with the offset from the anchor scaled by the bone's factor.
ShapedRest scale_template_along_tree(const BodyTemplate& tmpl, const ShapedRest& rest,
                                     const Vector& target_lengths);
ShapedRest scale_template_along_tree(const BodyTemplate& tmpl, const Vector& target_lengths);

// ---------------------------------------------------------------------------
// Differentiable posing used by training: shape + local rotations -> joints, vertices.

struct BodyTape {
  Vector shape;
  ShapedRest rest;
  std::vector<Quat4> rotations;
  std::vector<Mat3> local;
  std::vector<Mat3> global;
  bool recorded = false;
};

struct BodyOutput {
  Points joints;
  Points vertices;
};

struct BodyGrads {
  std::vector<Quat4> rotations;
  Vector shape;
};

BodyOutput pose_body(const BodyTemplate& tmpl, const Vector& shape,
                     const std::vector<Quat4>& rotations, const Vec3& translation,
                     BodyTape* tape = nullptr);
BodyGrads pose_body_backward(const BodyTemplate& tmpl, const BodyTape& tape,
                             const Points& d_joints, const Points& d_vertices);

// ---------------------------------------------------------------------------
// Plain-text template container (header with J, V, S; then rows of reals).

void write_template(std::ostream& os, const BodyTemplate& tmpl);
BodyTemplate read_template(std::istream& is);

}  // namespace depthmesh
