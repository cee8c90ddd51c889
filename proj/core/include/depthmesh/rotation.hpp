// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

namespace depthmesh {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// Raw (w, x, y, z) quaternion used on the differentiable path.
using Quat4 = Eigen::Vector4d;

/// Unit quaternion kept in canonical sign: w > 0, or w == 0 and the first nonzero
/// vector component positive.
struct UnitQuaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static UnitQuaternion identity() { return {}; }
  Vec3 vec() const { return {x, y, z}; }
  Quat4 coeffs() const { return {w, x, y, z}; }
  double norm() const;
  bool is_identity() const { return w == 1.0 && x == 0.0 && y == 0.0 && z == 0.0; }
};

/// Normalizes and applies the canonical sign.
UnitQuaternion canonical(double w, double x, double y, double z);
UnitQuaternion canonical(const Quat4& q);
UnitQuaternion inverse(const UnitQuaternion& q);

UnitQuaternion quat_from_axis_angle(const Vec3& axis, double angle);
/// Hamilton product, renormalized, canonical sign.
UnitQuaternion compose(const UnitQuaternion& a, const UnitQuaternion& b);
Mat3 quat_to_matrix(const UnitQuaternion& q);
UnitQuaternion matrix_to_quat(const Mat3& m);
Vec3 rotate(const UnitQuaternion& q, const Vec3& v);
/// Rotation angle in [0, pi].
double rotation_angle(const UnitQuaternion& q);

/// Minimal-angle rotation taking normalize(from) to normalize(to). Antiparallel inputs rotate
/// by pi about normalize(from x e), e the basis vector least aligned with `from`.
UnitQuaternion swing_between(const Vec3& from, const Vec3& to);

struct SwingTwist {
  UnitQuaternion swing;
  UnitQuaternion twist;
  Vec3 axis;
};

/// q = swing * twist with twist about `axis` and swing's axis perpendicular to it.
SwingTwist swing_twist_decompose(const UnitQuaternion& q, const Vec3& axis);
/// Signed twist angle about `axis` in (-pi, pi].
double twist_angle(const UnitQuaternion& q, const Vec3& axis);

/// Rotation mapping the rest frame spanned by (primary, secondary) onto the observed one.
/// Falls back to `swing_between` when either secondary direction is parallel to its primary.
UnitQuaternion align_two_vectors(const Vec3& rest_primary, const Vec3& rest_secondary,
                                 const Vec3& obs_primary, const Vec3& obs_secondary);

/// Exponential map: rotation vector (axis * angle) -> quaternion.
UnitQuaternion quat_from_rotation_vector(const Vec3& v);
/// Logarithm: quaternion -> rotation vector with angle in [0, pi].
Vec3 rotation_vector(const UnitQuaternion& q);

// ---------------------------------------------------------------------------
// Differentiable path (no renormalization, no sign canonicalization)

Quat4 hamilton(const Quat4& a, const Quat4& b);
/// Jacobians of hamilton(a, b) with respect to a and b.
Eigen::Matrix4d hamilton_jacobian_left(const Quat4& b);
Eigen::Matrix4d hamilton_jacobian_right(const Quat4& a);

Quat4 exp_map(const Vec3& v);
Eigen::Matrix<double, 4, 3> exp_map_jacobian(const Vec3& v);
/// log of the canonical representative (sign flipped when w < 0).
Vec3 log_map(const Quat4& q);
Eigen::Matrix<double, 3, 4> log_map_jacobian(const Quat4& q);

/// swing_between(from_unit, to) as a raw quaternion, with its Jacobian with respect to `to`
/// when `jacobian` is non-null. The Jacobian is zero at the antiparallel fallback.
Quat4 swing_quat(const Vec3& from_unit, const Vec3& to, Eigen::Matrix<double, 4, 3>* jacobian);

/// Rotation matrix of a unit quaternion and the pullback of a matrix gradient onto q.
Mat3 rotation_matrix(const Quat4& q);
Quat4 rotation_matrix_grad(const Quat4& q, const Mat3& upstream);

}  // namespace depthmesh
