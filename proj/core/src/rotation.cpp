// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/rotation.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace depthmesh {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3 least_aligned_axis(const Vec3& v) {
  int best = 0;
  for (int i = 1; i < 3; ++i) {
    if (std::abs(v(i)) < std::abs(v(best))) best = i;
  }
  return Vec3::Unit(best);
}

}  // namespace

double UnitQuaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

UnitQuaternion canonical(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("canonical: quaternion has zero or non-finite norm");
  }
  if (std::abs(n - 1.0) > 0.0) {
    w /= n;
    x /= n;
    y /= n;
    z /= n;
  }
  bool flip = w < 0.0;
  if (w == 0.0) {
    const double first = x != 0.0 ? x : (y != 0.0 ? y : z);
    flip = first < 0.0;
  }
  if (flip) return {-w, -x, -y, -z};
  return {w, x, y, z};
}

UnitQuaternion canonical(const Quat4& q) { return canonical(q(0), q(1), q(2), q(3)); }

UnitQuaternion inverse(const UnitQuaternion& q) { return canonical(q.w, -q.x, -q.y, -q.z); }

UnitQuaternion quat_from_axis_angle(const Vec3& axis, double angle) {
  if (std::abs(axis.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument("quat_from_axis_angle: axis must be unit length");
  }
  const double s = std::sin(0.5 * angle);
  return canonical(std::cos(0.5 * angle), s * axis(0), s * axis(1), s * axis(2));
}

Quat4 hamilton(const Quat4& a, const Quat4& b) {
  return {a(0) * b(0) - a(1) * b(1) - a(2) * b(2) - a(3) * b(3),
          a(0) * b(1) + a(1) * b(0) + a(2) * b(3) - a(3) * b(2),
          a(0) * b(2) - a(1) * b(3) + a(2) * b(0) + a(3) * b(1),
          a(0) * b(3) + a(1) * b(2) - a(2) * b(1) + a(3) * b(0)};
}

Eigen::Matrix4d hamilton_jacobian_left(const Quat4& b) {
  // d(a*b)/da
  Eigen::Matrix4d m;
  m << b(0), -b(1), -b(2), -b(3),
       b(1), b(0), b(3), -b(2),
       b(2), -b(3), b(0), b(1),
       b(3), b(2), -b(1), b(0);
  return m;
}

Eigen::Matrix4d hamilton_jacobian_right(const Quat4& a) {
  // d(a*b)/db
  Eigen::Matrix4d m;
  m << a(0), -a(1), -a(2), -a(3),
       a(1), a(0), -a(3), a(2),
       a(2), a(3), a(0), -a(1),
       a(3), -a(2), a(1), a(0);
  return m;
}

UnitQuaternion compose(const UnitQuaternion& a, const UnitQuaternion& b) {
  return canonical(hamilton(a.coeffs(), b.coeffs()));
}

Mat3 rotation_matrix(const Quat4& q) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Quat4 rotation_matrix_grad(const Quat4& q, const Mat3& g) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Mat3 dw, dx, dy, dz;
  dw << 0, -z, y, z, 0, -x, -y, x, 0;
  dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  return 2.0 * Quat4(g.cwiseProduct(dw).sum(), g.cwiseProduct(dx).sum(),
                     g.cwiseProduct(dy).sum(), g.cwiseProduct(dz).sum());
}

Mat3 quat_to_matrix(const UnitQuaternion& q) { return rotation_matrix(q.coeffs()); }

UnitQuaternion matrix_to_quat(const Mat3& m) {
  const Eigen::Quaterniond q(m);
  return canonical(q.w(), q.x(), q.y(), q.z());
}

Vec3 rotate(const UnitQuaternion& q, const Vec3& v) { return quat_to_matrix(q) * v; }

double rotation_angle(const UnitQuaternion& q) {
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w));
}

UnitQuaternion swing_between(const Vec3& from, const Vec3& to) {
  const double nf = from.norm();
  const double nt = to.norm();
  if (!(nf > 0.0) || !(nt > 0.0)) {
    throw std::invalid_argument("swing_between: zero-length direction");
  }
  const Vec3 a = from / nf;
  const Vec3 b = to / nt;
  const double d = a.dot(b);
  if (1.0 + d < 1e-12) {
    const Vec3 axis = a.cross(least_aligned_axis(a)).normalized();
    return canonical(0.0, axis(0), axis(1), axis(2));
  }
  const Vec3 c = a.cross(b);
  return canonical(1.0 + d, c(0), c(1), c(2));
}

SwingTwist swing_twist_decompose(const UnitQuaternion& q, const Vec3& axis) {
  if (std::abs(axis.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument("swing_twist_decompose: axis must be unit length");
  }
  const Vec3 p = q.vec().dot(axis) * axis;
  SwingTwist out;
  out.axis = axis;
  const double n = std::sqrt(q.w * q.w + p.squaredNorm());
  if (n < 1e-14) {
    out.twist = UnitQuaternion::identity();
  } else {
    out.twist = canonical(q.w, p(0), p(1), p(2));
  }
  out.swing = compose(q, inverse(out.twist));
  return out;
}

double twist_angle(const UnitQuaternion& q, const Vec3& axis) {
  const double proj = q.vec().dot(axis);
  double angle = 2.0 * std::atan2(proj, q.w);
  if (angle > kPi) angle -= 2.0 * kPi;
  if (angle <= -kPi) angle += 2.0 * kPi;
  return angle;
}

UnitQuaternion align_two_vectors(const Vec3& rest_primary, const Vec3& rest_secondary,
                                 const Vec3& obs_primary, const Vec3& obs_secondary) {
  auto frame = [](const Vec3& p, const Vec3& s, Mat3& out) {
    const double np = p.norm();
    if (!(np > 0.0)) return false;
    const Vec3 e1 = p / np;
    const Vec3 t = s - s.dot(e1) * e1;
    const double nt = t.norm();
    if (nt < 1e-9 * std::max(1.0, s.norm())) return false;
    const Vec3 e2 = t / nt;
    out.col(0) = e1;
    out.col(1) = e2;
    out.col(2) = e1.cross(e2);
    return true;
  };
  Mat3 rest, obs;
  if (!frame(rest_primary, rest_secondary, rest) || !frame(obs_primary, obs_secondary, obs)) {
    return swing_between(rest_primary, obs_primary);
  }
  return matrix_to_quat(obs * rest.transpose());
}

Quat4 exp_map(const Vec3& v) {
  const double theta = v.norm();
  double s;
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    s = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
  } else {
    s = std::sin(0.5 * theta) / theta;
  }
  return {std::cos(0.5 * theta), s * v(0), s * v(1), s * v(2)};
}

Eigen::Matrix<double, 4, 3> exp_map_jacobian(const Vec3& v) {
  const double theta = v.norm();
  double s, ds_over_theta;
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    s = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
    ds_over_theta = -1.0 / 24.0 + t2 / 960.0 - t2 * t2 / 107520.0;
  } else {
    const double half = 0.5 * theta;
    s = std::sin(half) / theta;
    ds_over_theta = (half * std::cos(half) - std::sin(half)) / (theta * theta * theta);
  }
  Eigen::Matrix<double, 4, 3> j;
  j.row(0) = -0.5 * s * v.transpose();
  j.bottomRows<3>() = s * Mat3::Identity() + ds_over_theta * v * v.transpose();
  return j;
}

UnitQuaternion quat_from_rotation_vector(const Vec3& v) { return canonical(exp_map(v)); }

Vec3 log_map(const Quat4& q_in) {
  const Quat4 q = q_in(0) < 0.0 ? Quat4(-q_in) : q_in;
  const Vec3 u = q.tail<3>();
  const double n = u.norm();
  const double w = q(0);
  double k;
  if (n < 1e-3 * std::abs(w)) {
    const double r2 = (n / w) * (n / w);
    k = (2.0 / w) * (1.0 - r2 / 3.0 + r2 * r2 / 5.0);
  } else {
    k = 2.0 * std::atan2(n, w) / n;
  }
  return k * u;
}

Eigen::Matrix<double, 3, 4> log_map_jacobian(const Quat4& q_in) {
  const double sign = q_in(0) < 0.0 ? -1.0 : 1.0;
  const Quat4 q = sign * q_in;
  const Vec3 u = q.tail<3>();
  const double n = u.norm();
  const double w = q(0);
  const double r2 = n * n + w * w;
  double k, dk_dn_over_n;
  if (n < 1e-3 * std::abs(w)) {
    const double rr = (n / w) * (n / w);
    k = (2.0 / w) * (1.0 - rr / 3.0 + rr * rr / 5.0);
    dk_dn_over_n = (2.0 / (w * w * w)) * (-2.0 / 3.0 + 4.0 * rr / 5.0 - 6.0 * rr * rr / 7.0);
  } else {
    const double at = std::atan2(n, w);
    k = 2.0 * at / n;
    dk_dn_over_n = 2.0 * (w * n / r2 - at) / (n * n * n);
  }
  const double dk_dw = -2.0 / r2;
  Eigen::Matrix<double, 3, 4> j;
  j.col(0) = dk_dw * u;
  j.rightCols<3>() = k * Mat3::Identity() + dk_dn_over_n * u * u.transpose();
  return sign * j;
}

Quat4 swing_quat(const Vec3& from_unit, const Vec3& to, Eigen::Matrix<double, 4, 3>* jacobian) {
  const double nb = to.norm();
  if (!(nb > 0.0)) throw std::invalid_argument("swing_quat: zero-length direction");
  const Vec3 u = to / nb;
  const double d = from_unit.dot(u);
  if (1.0 + d < 1e-12) {
    if (jacobian) jacobian->setZero();
    return swing_between(from_unit, to).coeffs();
  }
  const Vec3 c = from_unit.cross(u);
  const Quat4 raw(1.0 + d, c(0), c(1), c(2));
  const double n = raw.norm();
  const Quat4 q = raw / n;
  if (jacobian) {
    Eigen::Matrix<double, 4, 3> draw_du;
    draw_du.row(0) = from_unit.transpose();
    draw_du.bottomRows<3>() << 0.0, -from_unit(2), from_unit(1),
                               from_unit(2), 0.0, -from_unit(0),
                               -from_unit(1), from_unit(0), 0.0;
    const Eigen::Matrix4d dq_draw = (Eigen::Matrix4d::Identity() - q * q.transpose()) / n;
    const Mat3 du_db = (Mat3::Identity() - u * u.transpose()) / nb;
    *jacobian = dq_draw * draw_du * du_db;
  }
  return q;
}

Vec3 rotation_vector(const UnitQuaternion& q) { return log_map(q.coeffs()); }

}  // namespace depthmesh
