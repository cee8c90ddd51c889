// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace depthmesh {

KinematicTree::KinematicTree(std::vector<int> parents) : parents_(std::move(parents)) {
  const int n = static_cast<int>(parents_.size());
  if (n == 0) throw std::invalid_argument("KinematicTree: no joints");
  children_.assign(static_cast<std::size_t>(n), {});
  for (int j = 0; j < n; ++j) {
    const int p = parents_[static_cast<std::size_t>(j)];
    if (p == -1) {
      if (root_ != -1) throw std::invalid_argument("KinematicTree: more than one root");
      root_ = j;
    } else if (p < 0 || p >= n || p == j) {
      throw std::invalid_argument("KinematicTree: invalid parent index for joint " +
                                  std::to_string(j));
    } else {
      children_[static_cast<std::size_t>(p)].push_back(j);
    }
  }
  if (root_ == -1) throw std::invalid_argument("KinematicTree: no root");

  bone_into_.assign(static_cast<std::size_t>(n), -1);
  order_.push_back(root_);
  for (std::size_t head = 0; head < order_.size(); ++head) {
    const int j = order_[head];
    for (int c : children_[static_cast<std::size_t>(j)]) {
      bone_into_[static_cast<std::size_t>(c)] = static_cast<int>(bones_.size());
      bones_.push_back({j, c});
      order_.push_back(c);
    }
  }
  if (static_cast<int>(order_.size()) != n) {
    throw std::invalid_argument("KinematicTree: cycle or disconnected joint");
  }
}

PoseParams PoseParams::identity(int joints) {
  PoseParams p;
  p.rotations.assign(static_cast<std::size_t>(joints), UnitQuaternion::identity());
  return p;
}

// ---------------------------------------------------------------------------

namespace {

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b, double* t_out) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  if (t_out) *t_out = t;
  return (p - (a + t * ab)).norm();
}

struct Skeleton {
  std::vector<int> parents;
  std::vector<std::string> names;
  Points joints;
  // Per-bone coefficient of each semantic shape direction, indexed [k][bone-by-child].
  std::vector<std::vector<double>> bone_factors;
  std::vector<double> radius;  // per child joint: limb thickness of the bone ending there
};

Skeleton humanoid16(int shape_dims, Rng& rng) {
  Skeleton s;
  s.parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 2, 10, 11, 2, 13, 14};
  s.names = {"pelvis",     "spine",   "neck",    "head",       "l_hip",   "l_knee",
             "l_ankle",    "r_hip",   "r_knee",  "r_ankle",    "l_shoulder", "l_elbow",
             "l_wrist",    "r_shoulder", "r_elbow", "r_wrist"};
  // Camera convention: y points down, the subject faces -z.
  const double offsets[16][3] = {
      {0.0, 0.0, 0.0},     {0.0, -0.25, 0.0},  {0.0, -0.25, 0.0}, {0.0, -0.22, 0.0},
      {0.10, 0.04, 0.0},   {0.01, 0.42, 0.0},  {0.0, 0.40, 0.0},  {-0.10, 0.04, 0.0},
      {-0.01, 0.42, 0.0},  {0.0, 0.40, 0.0},   {0.18, 0.04, 0.0}, {0.26, 0.0, 0.0},
      {0.24, 0.0, 0.0},    {-0.18, 0.04, 0.0}, {-0.26, 0.0, 0.0}, {-0.24, 0.0, 0.0}};
  const double radii[16] = {0.0,  0.13, 0.12, 0.09, 0.10, 0.07, 0.05, 0.10,
                            0.07, 0.05, 0.07, 0.05, 0.04, 0.07, 0.05, 0.04};
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  s.joints = Points::Zero(16, 3);
  s.radius.assign(16, 0.0);
  for (int j = 1; j < 16; ++j) {
    const Vec3 off(offsets[j][0], offsets[j][1], offsets[j][2]);
    s.joints.row(j) = s.joints.row(s.parents[static_cast<std::size_t>(j)]) +
                      (off * (1.0 + jitter(rng))).transpose();
    s.radius[static_cast<std::size_t>(j)] = radii[j];
  }
  s.bone_factors.assign(static_cast<std::size_t>(shape_dims), std::vector<double>(16, 0.0));
  for (int j = 1; j < 16; ++j) {
    const auto u = static_cast<std::size_t>(j);
    s.bone_factors[0][u] = 0.04;
    if (shape_dims > 1 && (j == 5 || j == 6 || j == 8 || j == 9)) s.bone_factors[1][u] = 0.05;
    if (shape_dims > 2 && (j == 11 || j == 12 || j == 14 || j == 15)) s.bone_factors[2][u] = 0.05;
    if (shape_dims > 3 && (j == 4 || j == 7 || j == 10 || j == 13)) s.bone_factors[3][u] = 0.08;
  }
  std::bernoulli_distribution pick(0.4);
  for (int k = 4; k < shape_dims; ++k) {
    for (int j = 1; j < 16; ++j) {
      if (pick(rng)) s.bone_factors[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] = 0.03;
    }
  }
  return s;
}

Skeleton random_tree(int joint_count, int shape_dims, Rng& rng) {
  Skeleton s;
  s.parents.assign(static_cast<std::size_t>(joint_count), -1);
  s.joints = Points::Zero(joint_count, 3);
  s.radius.assign(static_cast<std::size_t>(joint_count), 0.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> length(0.15, 0.3);
  for (int j = 0; j < joint_count; ++j) s.names.push_back("joint_" + std::to_string(j));
  for (int j = 1; j < joint_count; ++j) {
    std::uniform_int_distribution<int> par(std::max(0, j - 3), j - 1);
    const int p = par(rng);
    s.parents[static_cast<std::size_t>(j)] = p;
    Vec3 dir(normal(rng), normal(rng), normal(rng));
    dir.normalize();
    const double len = length(rng);
    s.joints.row(j) = s.joints.row(p) + (len * dir).transpose();
    s.radius[static_cast<std::size_t>(j)] = std::clamp(0.2 * len, 0.03, 0.08);
  }
  s.bone_factors.assign(static_cast<std::size_t>(shape_dims),
                        std::vector<double>(static_cast<std::size_t>(joint_count), 0.0));
  for (int j = 1; j < joint_count; ++j) {
    s.bone_factors[0][static_cast<std::size_t>(j)] = 0.04;
    if (shape_dims > 1) {
      const int k = 1 + (j - 1) % (shape_dims - 1);
      s.bone_factors[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] = 0.05;
    }
  }
  return s;
}

}  // namespace

BodyTemplate build_template(int joint_count, int shape_dims, int vertex_count,
                            std::uint64_t seed) {
  if (joint_count < 4 || shape_dims < 1 || vertex_count < joint_count) {
    throw std::invalid_argument("build_template: require J >= 4, S >= 1, V >= J");
  }
  Rng rng(derive_seed(seed, "template"));
  Skeleton sk = joint_count == 16 ? humanoid16(shape_dims, rng)
                                  : random_tree(joint_count, shape_dims, rng);

  BodyTemplate t;
  t.tree = KinematicTree(sk.parents);
  t.joint_names = sk.names;
  t.rest_joints = sk.joints;
  const auto& bones = t.tree.bones();
  const int nb = t.tree.bone_count();

  // Joint displacement fields: each bone on the root path stretches along itself.
  t.joint_basis.assign(static_cast<std::size_t>(shape_dims), Points::Zero(joint_count, 3));
  for (int k = 0; k < shape_dims; ++k) {
    Points& field = t.joint_basis[static_cast<std::size_t>(k)];
    for (const Bone& b : bones) {
      const double c = sk.bone_factors[static_cast<std::size_t>(k)][static_cast<std::size_t>(b.child)];
      field.row(b.child) =
          field.row(b.parent) + c * (t.rest_joints.row(b.child) - t.rest_joints.row(b.parent));
    }
  }

  // Vertices: round-robin over bones, random position along the bone and lateral offset.
  std::uniform_real_distribution<double> along(0.05, 0.95);
  std::normal_distribution<double> normal(0.0, 1.0);
  t.rest_vertices = Points::Zero(vertex_count, 3);
  t.vertex_anchor_bone.resize(static_cast<std::size_t>(vertex_count));
  t.vertex_anchor_t.resize(static_cast<std::size_t>(vertex_count));
  t.vertex_basis.assign(static_cast<std::size_t>(shape_dims), Points::Zero(vertex_count, 3));
  for (int v = 0; v < vertex_count; ++v) {
    const int bi = v % nb;
    const Bone& b = bones[static_cast<std::size_t>(bi)];
    const Vec3 a = t.rest_joints.row(b.parent).transpose();
    const Vec3 c = t.rest_joints.row(b.child).transpose();
    const Vec3 axis = (c - a).normalized();
    Vec3 lateral;
    do {
      lateral = Vec3(normal(rng), normal(rng), normal(rng));
      lateral -= lateral.dot(axis) * axis;
    } while (lateral.norm() < 1e-3);
    lateral.normalize();
    const double tau = along(rng);
    const Vec3 offset = sk.radius[static_cast<std::size_t>(b.child)] * lateral;
    t.rest_vertices.row(v) = (a + tau * (c - a) + offset).transpose();
    t.vertex_anchor_bone[static_cast<std::size_t>(v)] = bi;
    t.vertex_anchor_t[static_cast<std::size_t>(v)] = tau;
    for (int k = 0; k < shape_dims; ++k) {
      const Points& jf = t.joint_basis[static_cast<std::size_t>(k)];
      const double f = sk.bone_factors[static_cast<std::size_t>(k)][static_cast<std::size_t>(b.child)];
      t.vertex_basis[static_cast<std::size_t>(k)].row(v) =
          jf.row(b.parent) + tau * (jf.row(b.child) - jf.row(b.parent)) + f * offset.transpose();
    }
  }

  // Skin weights: inverse distance to the two nearest bones, credited to each bone's driving
  // (parent) joint.
  t.skin_weights = Matrix::Zero(vertex_count, joint_count);
  for (int v = 0; v < vertex_count; ++v) {
    const Vec3 p = t.rest_vertices.row(v).transpose();
    std::vector<std::pair<double, int>> dist;
    for (int bi = 0; bi < nb; ++bi) {
      const Bone& b = bones[static_cast<std::size_t>(bi)];
      dist.emplace_back(segment_distance(p, t.rest_joints.row(b.parent).transpose(),
                                         t.rest_joints.row(b.child).transpose(), nullptr),
                        bi);
    }
    std::partial_sort(dist.begin(), dist.begin() + std::min(2, nb), dist.end());
    double total = 0.0;
    for (int n = 0; n < std::min(2, nb); ++n) {
      const double w = 1.0 / (dist[static_cast<std::size_t>(n)].first + 1e-6);
      t.skin_weights(v, bones[static_cast<std::size_t>(dist[static_cast<std::size_t>(n)].second)].parent) += w;
      total += w;
    }
    t.skin_weights.row(v) /= total;
  }

  t.template_bone_lengths = bone_lengths(t.rest_joints, t.tree);
  return t;
}

ShapedRest apply_shape(const BodyTemplate& tmpl, const Vector& coefficients) {
  if (coefficients.size() != tmpl.shape_dims()) {
    throw std::invalid_argument("apply_shape: expected " + std::to_string(tmpl.shape_dims()) +
                                " coefficients, got " + std::to_string(coefficients.size()));
  }
  ShapedRest out{tmpl.rest_joints, tmpl.rest_vertices};
  for (int k = 0; k < tmpl.shape_dims(); ++k) {
    const double s = coefficients(k);
    if (s == 0.0) continue;
    out.joints += s * tmpl.joint_basis[static_cast<std::size_t>(k)];
    out.vertices += s * tmpl.vertex_basis[static_cast<std::size_t>(k)];
  }
  return out;
}

ShapedRest apply_shape(const BodyTemplate& tmpl, const ShapeParams& shape) {
  return apply_shape(tmpl, shape.coefficients);
}

FkResult forward_kinematics(const Points& rest_joints, const KinematicTree& tree,
                            const PoseParams& pose) {
  const int n = tree.joint_count();
  if (rest_joints.rows() != n || static_cast<int>(pose.rotations.size()) != n) {
    throw std::invalid_argument("forward_kinematics: joint count mismatch");
  }
  FkResult out;
  out.joints.resize(n, 3);
  out.global_rotations.assign(static_cast<std::size_t>(n), Mat3::Identity());
  const int r = tree.root();
  out.global_rotations[static_cast<std::size_t>(r)] =
      quat_to_matrix(pose.rotations[static_cast<std::size_t>(r)]);
  out.joints.row(r) = rest_joints.row(r) + pose.translation.transpose();
  for (const Bone& b : tree.bones()) {
    const Mat3& gp = out.global_rotations[static_cast<std::size_t>(b.parent)];
    out.global_rotations[static_cast<std::size_t>(b.child)] =
        gp * quat_to_matrix(pose.rotations[static_cast<std::size_t>(b.child)]);
    const Vec3 offset = (rest_joints.row(b.child) - rest_joints.row(b.parent)).transpose();
    out.joints.row(b.child) = out.joints.row(b.parent) + (gp * offset).transpose();
  }
  return out;
}

Points skin_vertices(const BodyTemplate& tmpl, const ShapedRest& rest, const FkResult& fk) {
  const int nv = static_cast<int>(rest.vertices.rows());
  Points out = Points::Zero(nv, 3);
  for (int v = 0; v < nv; ++v) {
    const Vec3 pv = rest.vertices.row(v).transpose();
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < tmpl.joint_count(); ++j) {
      const double w = tmpl.skin_weights(v, j);
      if (w == 0.0) continue;
      acc += w * (fk.global_rotations[static_cast<std::size_t>(j)] *
                      (pv - rest.joints.row(j).transpose()) +
                  fk.joints.row(j).transpose());
    }
    out.row(v) = acc.transpose();
  }
  return out;
}

Vector bone_lengths(const Points& joints, const KinematicTree& tree) {
  Vector out(tree.bone_count());
  for (int b = 0; b < tree.bone_count(); ++b) {
    const Bone& bone = tree.bones()[static_cast<std::size_t>(b)];
    out(b) = (joints.row(bone.child) - joints.row(bone.parent)).norm();
  }
  return out;
}

ShapedRest scale_template_along_tree(const BodyTemplate& tmpl, const ShapedRest& rest,
                                     const Vector& target_lengths) {
  const KinematicTree& tree = tmpl.tree;
  if (target_lengths.size() != tree.bone_count()) {
    throw std::invalid_argument("scale_template_along_tree: one target length per bone");
  }
  for (int b = 0; b < target_lengths.size(); ++b) {
    if (!(target_lengths(b) > 0.0)) {
      throw std::invalid_argument("scale_template_along_tree: non-positive target length");
    }
  }
  const Vector current = bone_lengths(rest.joints, tree);
  Vector factor(tree.bone_count());
  ShapedRest out;
  out.joints = rest.joints;
  for (int b = 0; b < tree.bone_count(); ++b) {
    const Bone& bone = tree.bones()[static_cast<std::size_t>(b)];
    factor(b) = current(b) > 0.0 ? target_lengths(b) / current(b) : 1.0;
    out.joints.row(bone.child) =
        out.joints.row(bone.parent) +
        factor(b) * (rest.joints.row(bone.child) - rest.joints.row(bone.parent));
  }
  out.vertices = rest.vertices;
  for (int v = 0; v < rest.vertices.rows(); ++v) {
    const int b = tmpl.vertex_anchor_bone[static_cast<std::size_t>(v)];
    const double tau = tmpl.vertex_anchor_t[static_cast<std::size_t>(v)];
    const Bone& bone = tree.bones()[static_cast<std::size_t>(b)];
    const auto old_anchor =
        rest.joints.row(bone.parent) + tau * (rest.joints.row(bone.child) - rest.joints.row(bone.parent));
    const auto new_anchor =
        out.joints.row(bone.parent) + tau * (out.joints.row(bone.child) - out.joints.row(bone.parent));
    out.vertices.row(v) = new_anchor + factor(b) * (rest.vertices.row(v) - old_anchor);
  }
  return out;
}

ShapedRest scale_template_along_tree(const BodyTemplate& tmpl, const Vector& target_lengths) {
  return scale_template_along_tree(tmpl, ShapedRest{tmpl.rest_joints, tmpl.rest_vertices},
                                   target_lengths);
}

// ---------------------------------------------------------------------------

BodyOutput pose_body(const BodyTemplate& tmpl, const Vector& shape,
                     const std::vector<Quat4>& rotations, const Vec3& translation,
                     BodyTape* tape) {
  const int n = tmpl.joint_count();
  if (static_cast<int>(rotations.size()) != n) {
    throw std::invalid_argument("pose_body: one rotation per joint required");
  }
  ShapedRest rest = apply_shape(tmpl, shape);
  std::vector<Mat3> local(static_cast<std::size_t>(n));
  std::vector<Mat3> global(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) local[static_cast<std::size_t>(j)] = rotation_matrix(rotations[static_cast<std::size_t>(j)]);

  BodyOutput out;
  out.joints.resize(n, 3);
  const int r = tmpl.tree.root();
  global[static_cast<std::size_t>(r)] = local[static_cast<std::size_t>(r)];
  out.joints.row(r) = rest.joints.row(r) + translation.transpose();
  for (const Bone& b : tmpl.tree.bones()) {
    const Mat3& gp = global[static_cast<std::size_t>(b.parent)];
    global[static_cast<std::size_t>(b.child)] = gp * local[static_cast<std::size_t>(b.child)];
    out.joints.row(b.child) =
        out.joints.row(b.parent) +
        (gp * (rest.joints.row(b.child) - rest.joints.row(b.parent)).transpose()).transpose();
  }

  const int nv = tmpl.vertex_count();
  out.vertices = Points::Zero(nv, 3);
  for (int v = 0; v < nv; ++v) {
    Vec3 acc = Vec3::Zero();
    const Vec3 pv = rest.vertices.row(v).transpose();
    for (int j = 0; j < n; ++j) {
      const double w = tmpl.skin_weights(v, j);
      if (w == 0.0) continue;
      acc += w * (global[static_cast<std::size_t>(j)] * (pv - rest.joints.row(j).transpose()) +
                  out.joints.row(j).transpose());
    }
    out.vertices.row(v) = acc.transpose();
  }

  if (tape) {
    tape->shape = shape;
    tape->rest = std::move(rest);
    tape->rotations = rotations;
    tape->local = std::move(local);
    tape->global = std::move(global);
    tape->recorded = true;
  }
  return out;
}

BodyGrads pose_body_backward(const BodyTemplate& tmpl, const BodyTape& tape,
                             const Points& d_joints, const Points& d_vertices) {
  if (!tape.recorded) throw std::logic_error("backward through unrecorded node: pose_body");
  const int n = tmpl.joint_count();
  const ShapedRest& rest = tape.rest;
  Points dpos = d_joints;
  std::vector<Mat3> dglobal(static_cast<std::size_t>(n), Mat3::Zero());
  Points drest_joints = Points::Zero(n, 3);
  Points drest_vertices = Points::Zero(tmpl.vertex_count(), 3);

  for (int v = 0; v < tmpl.vertex_count(); ++v) {
    const Vec3 dv = d_vertices.row(v).transpose();
    if (dv.isZero(0.0)) continue;
    const Vec3 pv = rest.vertices.row(v).transpose();
    for (int j = 0; j < n; ++j) {
      const double w = tmpl.skin_weights(v, j);
      if (w == 0.0) continue;
      const Vec3 rel = pv - rest.joints.row(j).transpose();
      dglobal[static_cast<std::size_t>(j)] += w * dv * rel.transpose();
      dpos.row(j) += w * dv.transpose();
      const Vec3 back = w * (tape.global[static_cast<std::size_t>(j)].transpose() * dv);
      drest_vertices.row(v) += back.transpose();
      drest_joints.row(j) -= back.transpose();
    }
  }

  std::vector<Mat3> dlocal(static_cast<std::size_t>(n), Mat3::Zero());
  const auto& bones = tmpl.tree.bones();
  for (auto it = bones.rbegin(); it != bones.rend(); ++it) {
    const int p = it->parent;
    const int c = it->child;
    const Mat3& gp = tape.global[static_cast<std::size_t>(p)];
    const Vec3 offset = (rest.joints.row(c) - rest.joints.row(p)).transpose();
    const Vec3 dc = dpos.row(c).transpose();
    dpos.row(p) += dc.transpose();
    dglobal[static_cast<std::size_t>(p)] += dc * offset.transpose();
    const Vec3 doff = gp.transpose() * dc;
    drest_joints.row(c) += doff.transpose();
    drest_joints.row(p) -= doff.transpose();
    // global_c = global_p * local_c
    dglobal[static_cast<std::size_t>(p)] +=
        dglobal[static_cast<std::size_t>(c)] * tape.local[static_cast<std::size_t>(c)].transpose();
    dlocal[static_cast<std::size_t>(c)] += gp.transpose() * dglobal[static_cast<std::size_t>(c)];
  }
  const int r = tmpl.tree.root();
  dlocal[static_cast<std::size_t>(r)] += dglobal[static_cast<std::size_t>(r)];
  drest_joints.row(r) += dpos.row(r);

  BodyGrads g;
  g.rotations.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    g.rotations[static_cast<std::size_t>(j)] =
        rotation_matrix_grad(tape.rotations[static_cast<std::size_t>(j)], dlocal[static_cast<std::size_t>(j)]);
  }
  g.shape = Vector::Zero(tmpl.shape_dims());
  for (int k = 0; k < tmpl.shape_dims(); ++k) {
    g.shape(k) = tmpl.joint_basis[static_cast<std::size_t>(k)].cwiseProduct(drest_joints).sum() +
                 tmpl.vertex_basis[static_cast<std::size_t>(k)].cwiseProduct(drest_vertices).sum();
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

void write_points(std::ostream& os, const Points& p) {
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    os << p(r, 0) << ' ' << p(r, 1) << ' ' << p(r, 2) << '\n';
  }
}

Points read_points(std::istream& is, Eigen::Index rows) {
  Points p(rows, 3);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!(is >> p(r, 0) >> p(r, 1) >> p(r, 2))) {
      throw std::runtime_error("read_template: truncated point block");
    }
  }
  return p;
}

void expect_token(std::istream& is, const std::string& token) {
  std::string got;
  if (!(is >> got) || got != token) {
    throw std::runtime_error("read_template: expected '" + token + "', got '" + got + "'");
  }
}

}  // namespace

void write_template(std::ostream& os, const BodyTemplate& t) {
  const auto old_precision = os.precision(std::numeric_limits<double>::max_digits10);
  os << "depthmesh-template 1\n";
  os << t.joint_count() << ' ' << t.vertex_count() << ' ' << t.shape_dims() << '\n';
  os << "parents";
  for (int p : t.tree.parents()) os << ' ' << p;
  os << "\nnames";
  for (const auto& n : t.joint_names) os << ' ' << n;
  os << "\njoints\n";
  write_points(os, t.rest_joints);
  os << "vertices\n";
  write_points(os, t.rest_vertices);
  os << "skin_weights\n";
  for (Eigen::Index v = 0; v < t.skin_weights.rows(); ++v) {
    for (Eigen::Index j = 0; j < t.skin_weights.cols(); ++j) {
      os << (j ? " " : "") << t.skin_weights(v, j);
    }
    os << '\n';
  }
  for (int k = 0; k < t.shape_dims(); ++k) {
    os << "joint_basis " << k << '\n';
    write_points(os, t.joint_basis[static_cast<std::size_t>(k)]);
    os << "vertex_basis " << k << '\n';
    write_points(os, t.vertex_basis[static_cast<std::size_t>(k)]);
  }
  os << "anchors\n";
  for (int v = 0; v < t.vertex_count(); ++v) {
    os << t.vertex_anchor_bone[static_cast<std::size_t>(v)] << ' '
       << t.vertex_anchor_t[static_cast<std::size_t>(v)] << '\n';
  }
  os.precision(old_precision);
}

BodyTemplate read_template(std::istream& is) {
  expect_token(is, "depthmesh-template");
  int version = 0;
  is >> version;
  if (version != 1) throw std::runtime_error("read_template: unsupported version");
  int nj = 0, nv = 0, ns = 0;
  if (!(is >> nj >> nv >> ns) || nj <= 0 || nv <= 0 || ns <= 0) {
    throw std::runtime_error("read_template: bad header");
  }
  BodyTemplate t;
  expect_token(is, "parents");
  std::vector<int> parents(static_cast<std::size_t>(nj));
  for (int& p : parents) is >> p;
  t.tree = KinematicTree(parents);
  expect_token(is, "names");
  t.joint_names.resize(static_cast<std::size_t>(nj));
  for (auto& n : t.joint_names) is >> n;
  expect_token(is, "joints");
  t.rest_joints = read_points(is, nj);
  expect_token(is, "vertices");
  t.rest_vertices = read_points(is, nv);
  expect_token(is, "skin_weights");
  t.skin_weights.resize(nv, nj);
  for (int v = 0; v < nv; ++v) {
    for (int j = 0; j < nj; ++j) is >> t.skin_weights(v, j);
  }
  for (int k = 0; k < ns; ++k) {
    expect_token(is, "joint_basis");
    int kk = -1;
    is >> kk;
    t.joint_basis.push_back(read_points(is, nj));
    expect_token(is, "vertex_basis");
    is >> kk;
    t.vertex_basis.push_back(read_points(is, nv));
  }
  expect_token(is, "anchors");
  t.vertex_anchor_bone.resize(static_cast<std::size_t>(nv));
  t.vertex_anchor_t.resize(static_cast<std::size_t>(nv));
  for (int v = 0; v < nv; ++v) {
    is >> t.vertex_anchor_bone[static_cast<std::size_t>(v)] >> t.vertex_anchor_t[static_cast<std::size_t>(v)];
  }
  if (!is) throw std::runtime_error("read_template: truncated input");
  t.template_bone_lengths = bone_lengths(t.rest_joints, t.tree);
  return t;
}

}  // namespace depthmesh
