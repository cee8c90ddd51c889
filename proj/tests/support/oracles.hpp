// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scalar reference implementations in plain loops, independent of the library's layer helpers.

#include "depthmesh/dmaps.hpp"
#include "depthmesh/fusion.hpp"
#include "depthmesh/modar.hpp"

#include <cmath>
#include <vector>

namespace depthmesh::oracle {

using Rows = std::vector<std::vector<double>>;

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Rows rows_of(const Matrix& m) {
  Rows out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = m(r, c);
  }
  return out;
}

inline Matrix matrix_of(const Rows& rows) {
  const auto cols = rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.front().size());
  Matrix m(static_cast<Eigen::Index>(rows.size()), cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  return m;
}

inline std::vector<double> dense(const LayerParams& p, const std::vector<double>& x) {
  const auto& w = p.weights.value;
  std::vector<double> out(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index o = 0; o < w.rows(); ++o) {
    double s = p.bias.value(0, o);
    for (Eigen::Index k = 0; k < w.cols(); ++k) s += w(o, k) * x[static_cast<std::size_t>(k)];
    switch (p.kind) {
      case Activation::kLinear:
        break;
      case Activation::kRelu:
        s = s > 0.0 ? s : 0.0;
        break;
      case Activation::kSigmoid:
        s = sigmoid_scalar(s);
        break;
    }
    out[static_cast<std::size_t>(o)] = s;
  }
  return out;
}

inline Rows dense_rows(const LayerParams& p, const Rows& x) {
  Rows out;
  out.reserve(x.size());
  for (const auto& row : x) out.push_back(dense(p, row));
  return out;
}

/// Multi-head scaled dot-product attention with output projection.
inline Rows attention(const MultiHeadAttention& block, const Rows& queries, const Rows& kv) {
  const Rows q = dense_rows(block.query, queries);
  const Rows k = dense_rows(block.key, kv);
  const Rows v = dense_rows(block.value, kv);
  const std::size_t dim = static_cast<std::size_t>(block.model_dim());
  const std::size_t dh = dim / static_cast<std::size_t>(block.heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Rows concat(q.size(), std::vector<double>(dim, 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t h = 0; h < static_cast<std::size_t>(block.heads); ++h) {
      std::vector<double> logits(k.size());
      double peak = -INFINITY;
      for (std::size_t j = 0; j < k.size(); ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += q[i][h * dh + d] * k[j][h * dh + d];
        logits[j] = s * scale;
        peak = std::max(peak, logits[j]);
      }
      double z = 0.0;
      for (double& l : logits) {
        l = std::exp(l - peak);
        z += l;
      }
      for (std::size_t j = 0; j < k.size(); ++j) {
        for (std::size_t d = 0; d < dh; ++d) concat[i][h * dh + d] += logits[j] / z * v[j][h * dh + d];
      }
    }
  }
  return dense_rows(block.output, concat);
}

inline Rows layer_norm(const LayerNormParams& p, const Rows& x) {
  Rows out = x;
  for (auto& row : out) {
    const double n = static_cast<double>(row.size());
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + p.epsilon);
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = (row[c] - mean) * inv * p.gain.value(0, static_cast<Eigen::Index>(c)) +
               p.offset.value(0, static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

inline Rows add(Rows a, const Rows& b) {
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t c = 0; c < a[r].size(); ++c) a[r][c] += b[r][c];
  }
  return a;
}

/// Depth-modulated RGB, pooled channel gates and the gated concatenation projection.
inline Matrix fuse(const Matrix& rgb, const Matrix& depth, const FusionParams& p) {
  const Rows r = rows_of(rgb), d = rows_of(depth);
  const std::size_t cells = r.size(), c = cells ? r.front().size() : 0;
  Rows modulated(cells, std::vector<double>(c));
  for (std::size_t i = 0; i < cells; ++i) {
    const std::vector<double> mask = dense(p.mask_out, dense(p.mask_in, d[i]));
    for (std::size_t k = 0; k < c; ++k) modulated[i][k] = mask[k] * r[i][k];
  }
  std::vector<double> pooled(2 * c, 0.0);
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      pooled[k] += modulated[i][k] / static_cast<double>(cells);
      pooled[c + k] += d[i][k] / static_cast<double>(cells);
    }
  }
  const std::vector<double> q = dense(p.gate_out, dense(p.gate_in, pooled));
  Rows gated(cells, std::vector<double>(2 * c));
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      gated[i][k] = q[k] * modulated[i][k];
      gated[i][c + k] = q[c + k] * d[i][k];
    }
  }
  return matrix_of(dense_rows(p.projection, gated));
}

struct Calibration {
  double alpha = 0.0;
  std::vector<double> estimated;
  std::vector<double> calibrated;
};

/// Confidence-weighted temporal bone lengths blended with the template by the sequence gate.
inline Calibration calibrate(const std::vector<Points>& lifted, const Vector& confidence,
                             const BodyTemplate& tmpl, double eta) {
  const std::size_t frames = lifted.size();
  Calibration out;
  double msum = 0.0;
  for (std::size_t f = 0; f < frames; ++f) msum += confidence(static_cast<Eigen::Index>(f));
  out.alpha = sigmoid_scalar(eta * msum / static_cast<double>(frames));
  const auto& bones = tmpl.tree.bones();
  out.estimated.assign(bones.size(), 0.0);
  out.calibrated.assign(bones.size(), 0.0);
  for (const Bone& b : bones) {
    double num = 0.0, den = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
      const double w = sigmoid_scalar(eta * confidence(static_cast<Eigen::Index>(f)));
      const Points& p = lifted[f];
      double len2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double diff = p(b.child, a) - p(b.parent, a);
        len2 += diff * diff;
      }
      num += w * std::sqrt(len2);
      den += w;
    }
    const auto k = static_cast<std::size_t>(tmpl.tree.bone_into(b.child));
    out.estimated[k] = num / den;
    out.calibrated[k] = out.alpha * out.estimated[k] +
                        (1.0 - out.alpha) * tmpl.template_bone_lengths(static_cast<Eigen::Index>(k));
  }
  return out;
}

/// Context features F' for one frame: two cross-attention blocks, norm and residual feed-forward.
inline Rows context(const ModarConfig& config, const ModarParams& p, const Matrix& tokens,
                    const Matrix& fused) {
  const Rows h0 = dense_rows(p.embed, rows_of(tokens));
  const Rows z = dense_rows(p.project, rows_of(fused));
  const Rows h1 = add(h0, attention(p.block1, h0, z));
  Rows kv = z;
  if (config.bidirectional_kv) kv.insert(kv.end(), h1.begin(), h1.end());
  const Rows h2 = add(h1, attention(p.block2, h1, kv));
  const Rows n = layer_norm(p.norm, h2);
  return add(n, dense_rows(p.ffn_out, dense_rows(p.ffn_in, n)));
}

/// Gated residual track and the causal recurrence x_t = (1 - rho) x_{t-1} + rho (x0_t + r_t).
struct Refinement {
  Rows residual;
  Rows filtered;
};

inline Refinement refine(const ModarConfig& config, const ModarParams& p, const std::vector<Rows>& features,
                         const Matrix& x0, double rho) {
  Refinement out;
  const std::size_t frames = features.size();
  const auto width = static_cast<std::size_t>(x0.cols());
  for (std::size_t f = 0; f < frames; ++f) {
    const Rows& fp = features[f];
    const std::size_t joints = fp.size();
    std::vector<double> r(width, 0.0);
    std::vector<double> pooled(fp.front().size(), 0.0);
    for (std::size_t j = 0; j < joints; ++j) {
      std::vector<double> delta = dense(p.pose_delta, fp[j]);
      const std::vector<double> gate = dense(p.pose_gate, fp[j]);
      const double norm = std::sqrt(delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]);
      const double shrink = norm > config.pose_clamp ? config.pose_clamp / norm : 1.0;
      for (std::size_t a = 0; a < 3; ++a) r[3 * j + a] = gate[a] * delta[a] * shrink;
      for (std::size_t c = 0; c < pooled.size(); ++c) pooled[c] += fp[j][c] / static_cast<double>(joints);
    }
    const std::vector<double> sd = dense(p.shape_delta, pooled);
    const std::vector<double> sg = dense(p.shape_gate, pooled);
    for (std::size_t k = 0; k < sd.size(); ++k) r[3 * joints + k] = sg[k] * sd[k];
    out.residual.push_back(r);
  }
  std::vector<double> prev(width);
  for (std::size_t c = 0; c < width; ++c) prev[c] = x0(0, static_cast<Eigen::Index>(c));
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<double> x(width);
    for (std::size_t c = 0; c < width; ++c) {
      const double target = x0(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(c)) + out.residual[f][c];
      x[c] = (1.0 - rho) * prev[c] + rho * target;
    }
    out.filtered.push_back(x);
    prev = x;
  }
  return out;
}

}  // namespace depthmesh::oracle
