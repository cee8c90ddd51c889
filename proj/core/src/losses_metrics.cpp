// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/losses_metrics.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <json.hpp>

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace depthmesh {

namespace {

constexpr double kMillimeters = 1000.0;

void check_sequences(const std::vector<Points>& a, const std::vector<Points>& b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": frame counts differ");
  }
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].rows() != b[t].rows()) {
      throw std::invalid_argument(std::string(what) + ": point counts differ");
    }
  }
}

void check_root(int root, Eigen::Index joints, const char* what) {
  if (root < 0 || root >= joints) throw std::invalid_argument(std::string(what) + ": bad root index");
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

void LossWeights::validate() const {
  for (double w : {mesh, joint, pose, shape, smooth}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
}

LossTerms total_loss(const SequenceState& pred, const SequenceState& target,
                     const LossWeights& weights, int root, LossGrads* grads) {
  weights.validate();
  check_sequences(pred.joints, target.joints, "total_loss joints");
  check_sequences(pred.vertices, target.vertices, "total_loss vertices");
  if (pred.rotations.size() != target.rotations.size() || pred.shape.size() != target.shape.size()) {
    throw std::invalid_argument("total_loss: rotation or shape dimensions differ");
  }
  const int frames = pred.frames();
  LossTerms terms;
  if (frames == 0) return terms;
  const Eigen::Index joints = pred.joints[0].rows();
  const Eigen::Index verts = pred.vertices.empty() ? 0 : pred.vertices[0].rows();
  check_root(root, joints, "total_loss");

  if (grads) {
    grads->joints.assign(static_cast<std::size_t>(frames), Points::Zero(joints, 3));
    grads->vertices.assign(static_cast<std::size_t>(frames), Points::Zero(verts, 3));
    grads->rotations.assign(pred.rotations.size(), {});
    for (std::size_t t = 0; t < pred.rotations.size(); ++t) {
      grads->rotations[t].assign(pred.rotations[t].size(), Quat4::Zero());
    }
    grads->shape = Vector::Zero(pred.shape.size());
  }

  const double joint_norm = 1.0 / static_cast<double>(frames * joints);
  const double vert_norm = verts > 0 ? 1.0 / static_cast<double>(frames * verts) : 0.0;
  std::vector<Points> rel(static_cast<std::size_t>(frames));

  for (int t = 0; t < frames; ++t) {
    const auto u = static_cast<std::size_t>(t);
    const RowVector pr = pred.joints[u].row(root);
    const RowVector gr = target.joints[u].row(root);
    rel[u] = pred.joints[u].rowwise() - pr;
    const Points dj = rel[u] - Points(target.joints[u].rowwise() - gr);
    terms.joint += dj.squaredNorm() * joint_norm;
    if (verts > 0) {
      const Points dv = Points(pred.vertices[u].rowwise() - pr) - Points(target.vertices[u].rowwise() - gr);
      terms.mesh += dv.cwiseAbs().sum() * vert_norm;
      if (grads) {
        const Points sv = dv.unaryExpr([](double x) { return sign(x); });
        const double w = weights.mesh * vert_norm;
        grads->vertices[u] += w * sv;
        grads->joints[u].row(root) -= w * sv.colwise().sum();
      }
    }
    if (grads) {
      const double w = weights.joint * 2.0 * joint_norm;
      grads->joints[u] += w * dj;
      grads->joints[u].row(root) -= w * dj.colwise().sum();
    }
  }

  std::size_t rot_count = 0;
  for (const auto& frame : pred.rotations) rot_count += frame.size();
  if (rot_count > 0) {
    const double rot_norm = 1.0 / static_cast<double>(rot_count);
    for (std::size_t t = 0; t < pred.rotations.size(); ++t) {
      if (pred.rotations[t].size() != target.rotations[t].size()) {
        throw std::invalid_argument("total_loss: rotation counts differ");
      }
      for (std::size_t j = 0; j < pred.rotations[t].size(); ++j) {
        const Mat3 d = rotation_matrix(pred.rotations[t][j]) - rotation_matrix(target.rotations[t][j]);
        terms.pose += d.squaredNorm() * rot_norm;
        if (grads) {
          grads->rotations[t][j] =
              rotation_matrix_grad(pred.rotations[t][j], weights.pose * 2.0 * rot_norm * d);
        }
      }
    }
  }

  const Vector ds = pred.shape - target.shape;
  terms.shape = ds.squaredNorm();
  if (grads) grads->shape = weights.shape * 2.0 * ds;

  if (frames < 3) {
    terms.warnings.emplace_back("fewer than 3 frames: smoothness term set to 0");
  } else {
    const double smooth_norm = 1.0 / static_cast<double>((frames - 2) * joints);
    for (int t = 1; t + 1 < frames; ++t) {
      const auto u = static_cast<std::size_t>(t);
      const Points a = rel[u + 1] - 2.0 * rel[u] + rel[u - 1];
      terms.smooth += a.squaredNorm() * smooth_norm;
      if (grads && weights.smooth > 0.0) {
        const Points g = weights.smooth * 2.0 * smooth_norm * a;
        const RowVector gs = g.colwise().sum();
        grads->joints[u + 1] += g;
        grads->joints[u + 1].row(root) -= gs;
        grads->joints[u] -= 2.0 * g;
        grads->joints[u].row(root) += 2.0 * gs;
        grads->joints[u - 1] += g;
        grads->joints[u - 1].row(root) -= gs;
      }
    }
  }

  terms.total = weights.mesh * terms.mesh + weights.joint * terms.joint + weights.pose * terms.pose +
                weights.shape * terms.shape + weights.smooth * terms.smooth;
  return terms;
}

// ---------------------------------------------------------------------------

ProcrustesResult procrustes_align(const Points& pred, const Points& gt) {
  if (pred.rows() != gt.rows()) throw std::invalid_argument("procrustes_align: point counts differ");
  if (pred.rows() < 3) throw std::invalid_argument("procrustes_align: needs at least 3 points");
  const RowVector mu_p = pred.colwise().mean();
  const RowVector mu_g = gt.colwise().mean();
  const Points x = pred.rowwise() - mu_p;
  const Points y = gt.rowwise() - mu_g;
  if (y.squaredNorm() <= 1e-24) {
    throw std::invalid_argument("procrustes_align: target points coincide");
  }
  ProcrustesResult out;
  const Mat3 cov = x.transpose() * y;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Vec3 d(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  const Vec3 sv = svd.singularValues();
  out.degenerate = sv(1) <= 1e-12 * std::max(sv(0), 1e-300);
  const double var = x.squaredNorm();
  out.transform.rotation = v * d.asDiagonal() * u.transpose();
  out.transform.scale = var > 0.0 ? sv.dot(d) / var : 0.0;
  if (var <= 0.0) out.degenerate = true;
  out.transform.translation =
      mu_g.transpose() - out.transform.scale * out.transform.rotation * mu_p.transpose();
  out.aligned = (out.transform.scale * (pred * out.transform.rotation.transpose())).rowwise() +
                out.transform.translation.transpose();
  out.residual = (out.aligned - gt).squaredNorm();
  return out;
}

double frame_mpjpe(const Points& pred, const Points& gt, int root) {
  check_root(root, pred.rows(), "mpjpe");
  if (pred.rows() != gt.rows()) throw std::invalid_argument("mpjpe: joint counts differ");
  if (pred.rows() < 2) return 0.0;
  const Points d = Points(pred.rowwise() - pred.row(root)) - Points(gt.rowwise() - gt.row(root));
  double sum = 0.0;
  for (Eigen::Index j = 0; j < d.rows(); ++j) {
    if (j != root) sum += d.row(j).norm();
  }
  return kMillimeters * sum / static_cast<double>(d.rows() - 1);
}

double frame_pa_mpjpe(const Points& pred, const Points& gt) {
  const ProcrustesResult r = procrustes_align(pred, gt);
  return kMillimeters * (r.aligned - gt).rowwise().norm().mean();
}

double mpjpe(const std::vector<Points>& pred, const std::vector<Points>& gt, int root) {
  check_sequences(pred, gt, "mpjpe");
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) sum += frame_mpjpe(pred[t], gt[t], root);
  return sum / static_cast<double>(pred.size());
}

double pa_mpjpe(const std::vector<Points>& pred, const std::vector<Points>& gt) {
  check_sequences(pred, gt, "pa_mpjpe");
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) sum += frame_pa_mpjpe(pred[t], gt[t]);
  return sum / static_cast<double>(pred.size());
}

double mpvpe(const std::vector<Points>& pred_vertices, const std::vector<Points>& gt_vertices,
             const std::vector<Points>& pred_joints, const std::vector<Points>& gt_joints,
             int root) {
  check_sequences(pred_vertices, gt_vertices, "mpvpe");
  check_sequences(pred_joints, gt_joints, "mpvpe joints");
  if (pred_vertices.size() != pred_joints.size()) {
    throw std::invalid_argument("mpvpe: vertex and joint sequences differ in length");
  }
  if (pred_vertices.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < pred_vertices.size(); ++t) {
    check_root(root, pred_joints[t].rows(), "mpvpe");
    const Points d = Points(pred_vertices[t].rowwise() - pred_joints[t].row(root)) -
                     Points(gt_vertices[t].rowwise() - gt_joints[t].row(root));
    if (d.rows() > 0) sum += d.rowwise().norm().mean();
  }
  return kMillimeters * sum / static_cast<double>(pred_vertices.size());
}

double accel_error(const std::vector<Points>& pred, const std::vector<Points>& gt, double fps,
                   int root) {
  check_sequences(pred, gt, "accel_error");
  if (pred.size() < 3) throw std::invalid_argument("accel_error: needs at least 3 frames");
  if (!(fps > 0.0)) throw std::invalid_argument("accel_error: fps must be positive");
  auto positions = [root](const Points& p) {
    if (root < 0) return p;
    check_root(root, p.rows(), "accel_error");
    return Points(p.rowwise() - p.row(root));
  };
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 1; t + 1 < pred.size(); ++t) {
    const Points ap = positions(pred[t + 1]) - 2.0 * positions(pred[t]) + positions(pred[t - 1]);
    const Points ag = positions(gt[t + 1]) - 2.0 * positions(gt[t]) + positions(gt[t - 1]);
    sum += (ap - ag).rowwise().norm().sum();
    count += static_cast<std::size_t>(ap.rows());
  }
  if (count == 0) return 0.0;
  return kMillimeters * fps * fps * sum / static_cast<double>(count);
}

SequenceMetrics evaluate_sequence(const SequenceState& pred, const SequenceState& gt,
                                  const MetricOptions& options, std::string id) {
  SequenceMetrics m;
  m.id = std::move(id);
  m.frames = pred.frames();
  check_sequences(pred.joints, gt.joints, "evaluate_sequence");
  for (std::size_t t = 0; t < pred.joints.size(); ++t) {
    m.frame_mpjpe.push_back(frame_mpjpe(pred.joints[t], gt.joints[t], options.root));
    m.frame_pa_mpjpe.push_back(frame_pa_mpjpe(pred.joints[t], gt.joints[t]));
  }
  if (m.frames > 0) {
    double a = 0.0, b = 0.0;
    for (int t = 0; t < m.frames; ++t) {
      a += m.frame_mpjpe[static_cast<std::size_t>(t)];
      b += m.frame_pa_mpjpe[static_cast<std::size_t>(t)];
    }
    m.mpjpe = a / m.frames;
    m.pa_mpjpe = b / m.frames;
  }
  m.mpvpe = mpvpe(pred.vertices, gt.vertices, pred.joints, gt.joints, options.root);
  m.accel = m.frames >= 3 ? accel_error(pred.joints, gt.joints, options.fps,
                                        options.accel_root_relative ? options.root : -1)
                          : 0.0;
  return m;
}

namespace {

template <typename F>
double mean_over(const std::vector<SequenceMetrics>& seqs, F field) {
  if (seqs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : seqs) sum += field(s);
  return sum / static_cast<double>(seqs.size());
}

}  // namespace

double MetricReport::mean_mpjpe() const {
  return mean_over(sequences, [](const SequenceMetrics& s) { return s.mpjpe; });
}
double MetricReport::mean_pa_mpjpe() const {
  return mean_over(sequences, [](const SequenceMetrics& s) { return s.pa_mpjpe; });
}
double MetricReport::mean_mpvpe() const {
  return mean_over(sequences, [](const SequenceMetrics& s) { return s.mpvpe; });
}
double MetricReport::mean_accel() const {
  return mean_over(sequences, [](const SequenceMetrics& s) { return s.accel; });
}

void MetricReport::write_csv(std::ostream& os) const {
  os << "sequence,frames,mpjpe_mm,pa_mpjpe_mm,mpvpe_mm,accel_mm_s2\n";
  const auto old = os.precision(17);
  for (const auto& s : sequences) {
    os << s.id << ',' << s.frames << ',' << s.mpjpe << ',' << s.pa_mpjpe << ',' << s.mpvpe << ','
       << s.accel << '\n';
  }
  os.precision(old);
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["sequences"] = sequences.size();
  j["mpjpe_mm"] = mean_mpjpe();
  j["pa_mpjpe_mm"] = mean_pa_mpjpe();
  j["mpvpe_mm"] = mean_mpvpe();
  j["accel_mm_s2"] = mean_accel();
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : sequences) {
    per.push_back({{"id", s.id},
                   {"frame_mpjpe_mm", s.frame_mpjpe},
                   {"frame_pa_mpjpe_mm", s.frame_pa_mpjpe}});
  }
  j["per_frame"] = per;
  return j.dump(2);
}

}  // namespace depthmesh
