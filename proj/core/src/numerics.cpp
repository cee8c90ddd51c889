// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace depthmesh {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_recorded(bool recorded, const char* what) {
  if (!recorded) {
    throw std::logic_error(std::string("backward through unrecorded node: ") + what);
  }
}

}  // namespace

Param::Param(std::string param_name, Matrix init)
    : name(std::move(param_name)),
      value(std::move(init)),
      grad(Matrix::Zero(value.rows(), value.cols())),
      velocity(Matrix::Zero(value.rows(), value.cols())) {}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ (stream * 0x2545F4914F6CDD1DULL + 1));
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
  // FNV-1a over the tag so stream ids stay stable across builds.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(derive_seed(base, h), index);
}

Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& x, const Matrix& upstream) {
  return upstream.array() * (x.array() > 0.0).cast<double>();
}

Matrix sigmoid_backward(const Matrix& y, const Matrix& upstream) {
  return upstream.array() * y.array() * (1.0 - y.array());
}

// ---------------------------------------------------------------------------

void LayerParams::collect(std::vector<Param*>& out) {
  out.push_back(&weights);
  if (use_bias) out.push_back(&bias);
}

LayerParams make_dense(const std::string& name, Eigen::Index in, Eigen::Index out, Activation kind,
                       Rng& rng) {
  return LayerParams{Param(name + ".w", xavier_uniform(out, in, rng)),
                     Param(name + ".b", Matrix::Zero(1, out)), kind};
}

LayerParams make_dense_zero(const std::string& name, Eigen::Index in, Eigen::Index out,
                            Activation kind) {
  return LayerParams{Param(name + ".w", Matrix::Zero(out, in)),
                     Param(name + ".b", Matrix::Zero(1, out)), kind};
}

Matrix dense_forward(const LayerParams& params, const Matrix& input) {
  if (input.cols() != params.in_dim()) {
    throw std::invalid_argument("dense_forward: input " + shape_of(input) +
                                " incompatible with weights " + shape_of(params.weights.value));
  }
  Matrix z = input * params.weights.value.transpose();
  z.rowwise() += params.bias.value.row(0);
  switch (params.kind) {
    case Activation::kLinear:
      return z;
    case Activation::kSigmoid:
      return sigmoid(z);
    case Activation::kRelu:
      return relu(z);
  }
  return z;
}

Matrix dense_forward(const LayerParams& params, const Matrix& input, DenseTape& tape) {
  tape.input = input;
  tape.output = dense_forward(params, input);
  tape.recorded = true;
  return tape.output;
}

Matrix dense_backward(LayerParams& params, const DenseTape& tape, const Matrix& upstream) {
  require_recorded(tape.recorded, "dense");
  Matrix dz;
  switch (params.kind) {
    case Activation::kLinear:
      dz = upstream;
      break;
    case Activation::kSigmoid:
      dz = sigmoid_backward(tape.output, upstream);
      break;
    case Activation::kRelu:
      dz = upstream.array() * (tape.output.array() > 0.0).cast<double>();
      break;
  }
  params.weights.grad.noalias() += dz.transpose() * tape.input;
  params.bias.grad.row(0) += dz.colwise().sum();
  return dz * params.weights.value;
}

// ---------------------------------------------------------------------------

void LayerNormParams::collect(std::vector<Param*>& out) {
  out.push_back(&gain);
  out.push_back(&offset);
}

LayerNormParams make_layer_norm(const std::string& name, Eigen::Index dim, double epsilon) {
  return LayerNormParams{Param(name + ".gain", Matrix::Ones(1, dim)),
                         Param(name + ".offset", Matrix::Zero(1, dim)), epsilon};
}

namespace {

Matrix normalize_rows(const Matrix& input, double epsilon, Vector* inv_std_out) {
  if (epsilon < 0) throw std::invalid_argument("layer_norm: epsilon must be >= 0");
  const auto d = static_cast<double>(input.cols());
  Matrix out(input.rows(), input.cols());
  Vector inv_std(input.rows());
  for (Eigen::Index r = 0; r < input.rows(); ++r) {
    const double mean = input.row(r).sum() / d;
    const RowVector centered = input.row(r).array() - mean;
    const double var = centered.squaredNorm() / d;
    if (var + epsilon <= 0.0) {
      throw std::invalid_argument("layer_norm: zero-variance row with epsilon = 0");
    }
    inv_std(r) = 1.0 / std::sqrt(var + epsilon);
    out.row(r) = centered * inv_std(r);
  }
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return out;
}

}  // namespace

Matrix layer_norm(const Matrix& input, const RowVector& gain, const RowVector& offset,
                  double epsilon) {
  if (gain.size() != input.cols() || offset.size() != input.cols()) {
    throw std::invalid_argument("layer_norm: gain/offset length must equal input columns");
  }
  Matrix out = normalize_rows(input, epsilon, nullptr);
  out.array().rowwise() *= gain.array();
  out.rowwise() += offset;
  return out;
}

Matrix layer_norm(const LayerNormParams& params, const Matrix& input, LayerNormTape& tape) {
  if (params.gain.value.cols() != input.cols()) {
    throw std::invalid_argument("layer_norm: gain/offset length must equal input columns");
  }
  tape.normalized = normalize_rows(input, params.epsilon, &tape.inv_std);
  tape.recorded = true;
  Matrix out = tape.normalized;
  out.array().rowwise() *= params.gain.value.row(0).array();
  out.rowwise() += params.offset.value.row(0);
  return out;
}

Matrix layer_norm_backward(LayerNormParams& params, const LayerNormTape& tape,
                           const Matrix& upstream) {
  require_recorded(tape.recorded, "layer_norm");
  const Matrix& xhat = tape.normalized;
  params.gain.grad.row(0) += (upstream.array() * xhat.array()).colwise().sum().matrix();
  params.offset.grad.row(0) += upstream.colwise().sum();

  Matrix dxhat = upstream;
  dxhat.array().rowwise() *= params.gain.value.row(0).array();
  const auto d = static_cast<double>(xhat.cols());
  Matrix dx(xhat.rows(), xhat.cols());
  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
    const double sum_d = dxhat.row(r).sum();
    const double sum_dx = dxhat.row(r).dot(xhat.row(r));
    dx.row(r) = (tape.inv_std(r) / d) *
                (d * dxhat.row(r).array() - sum_d - xhat.row(r).array() * sum_dx).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------

Matrix row_softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    RowVector e = (logits.row(r).array() - m).exp().matrix();
    p.row(r) = e / e.sum();
  }
  return p;
}

namespace {

void check_attention_shapes(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (k.rows() == 0) throw std::invalid_argument("cross_attention: empty key set");
  if (q.cols() != k.cols()) {
    throw std::invalid_argument("cross_attention: query dim " + std::to_string(q.cols()) +
                                " != key dim " + std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw std::invalid_argument("cross_attention: key count " + std::to_string(k.rows()) +
                                " != value count " + std::to_string(v.rows()));
  }
}

}  // namespace

Matrix cross_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                       double scale) {
  check_attention_shapes(queries, keys, values);
  const Matrix probs = row_softmax((queries * keys.transpose()) * scale);
  return probs * values;
}

Matrix cross_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                       double scale, AttentionTape& tape) {
  check_attention_shapes(queries, keys, values);
  tape.queries = queries;
  tape.keys = keys;
  tape.values = values;
  tape.scale = scale;
  tape.probs = row_softmax((queries * keys.transpose()) * scale);
  tape.recorded = true;
  return tape.probs * values;
}

AttentionGrads cross_attention_backward(const AttentionTape& tape, const Matrix& upstream) {
  require_recorded(tape.recorded, "cross_attention");
  const Matrix& p = tape.probs;
  AttentionGrads g;
  g.values = p.transpose() * upstream;
  const Matrix dp = upstream * tape.values.transpose();
  Matrix ds = dp;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double inner = dp.row(r).dot(p.row(r));
    ds.row(r) = p.row(r).array() * (dp.row(r).array() - inner);
  }
  ds *= tape.scale;
  g.queries = ds * tape.keys;
  g.keys = ds.transpose() * tape.queries;
  return g;
}

void MultiHeadAttention::collect(std::vector<Param*>& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
}

MultiHeadAttention make_attention(const std::string& name, Eigen::Index query_in,
                                  Eigen::Index kv_in, Eigen::Index model_dim, int heads,
                                  bool zero_output, Rng& rng) {
  if (heads <= 0 || model_dim % heads != 0) {
    throw std::invalid_argument("make_attention: model_dim must be divisible by heads");
  }
  MultiHeadAttention block;
  block.query = make_dense(name + ".q", query_in, model_dim, Activation::kLinear, rng);
  block.key = make_dense(name + ".k", kv_in, model_dim, Activation::kLinear, rng);
  block.key.use_bias = false;
  block.value = make_dense(name + ".v", kv_in, model_dim, Activation::kLinear, rng);
  block.output = zero_output
                     ? make_dense_zero(name + ".o", model_dim, model_dim, Activation::kLinear)
                     : make_dense(name + ".o", model_dim, model_dim, Activation::kLinear, rng);
  block.heads = heads;
  return block;
}

Matrix attention_forward(const MultiHeadAttention& block, const Matrix& queries,
                         const Matrix& keys_values, MultiHeadTape& tape) {
  const Matrix q = dense_forward(block.query, queries, tape.query);
  const Matrix k = dense_forward(block.key, keys_values, tape.key);
  const Matrix v = dense_forward(block.value, keys_values, tape.value);
  const Eigen::Index dh = block.model_dim() / block.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix concat(q.rows(), block.model_dim());
  tape.heads.assign(static_cast<std::size_t>(block.heads), AttentionTape{});
  for (int h = 0; h < block.heads; ++h) {
    const Eigen::Index c0 = h * dh;
    concat.middleCols(c0, dh) =
        cross_attention(q.middleCols(c0, dh), k.middleCols(c0, dh), v.middleCols(c0, dh), scale,
                        tape.heads[static_cast<std::size_t>(h)]);
  }
  tape.recorded = true;
  return dense_forward(block.output, concat, tape.output);
}

MultiHeadGrads attention_backward(MultiHeadAttention& block, const MultiHeadTape& tape,
                                  const Matrix& upstream) {
  require_recorded(tape.recorded, "multi_head_attention");
  const Matrix dconcat = dense_backward(block.output, tape.output, upstream);
  const Eigen::Index dh = block.model_dim() / block.heads;
  Matrix dq(dconcat.rows(), block.model_dim());
  Matrix dk(tape.key.output.rows(), block.model_dim());
  Matrix dv(tape.value.output.rows(), block.model_dim());
  for (int h = 0; h < block.heads; ++h) {
    const Eigen::Index c0 = h * dh;
    const AttentionGrads g =
        cross_attention_backward(tape.heads[static_cast<std::size_t>(h)], dconcat.middleCols(c0, dh));
    dq.middleCols(c0, dh) = g.queries;
    dk.middleCols(c0, dh) = g.keys;
    dv.middleCols(c0, dh) = g.values;
  }
  MultiHeadGrads out;
  out.queries = dense_backward(block.query, tape.query, dq);
  out.keys_values = dense_backward(block.key, tape.key, dk);
  out.keys_values += dense_backward(block.value, tape.value, dv);
  return out;
}

// ---------------------------------------------------------------------------

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

std::size_t total_size(std::span<Param* const> params) {
  std::size_t n = 0;
  for (const Param* p : params) n += static_cast<std::size_t>(p->size());
  return n;
}

GradCheckReport grad_check(const std::function<double(bool)>& fn, std::span<Param* const> params,
                           double step, double tolerance, std::size_t max_entries,
                           std::uint64_t seed, int stencil) {
  if (step <= 0) throw std::invalid_argument("grad_check: step must be positive");
  if (stencil != 2 && stencil != 4) throw std::invalid_argument("grad_check: stencil must be 2 or 4");
  zero_grads(params);
  const double base = fn(true);
  if (!std::isfinite(base)) throw std::domain_error("grad_check: non-finite function value");

  // Flat index -> (param, offset).
  std::vector<std::pair<std::size_t, Eigen::Index>> entries;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index i = 0; i < params[p]->size(); ++i) entries.emplace_back(p, i);
  }
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  if (max_entries > 0 && max_entries < order.size()) {
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(max_entries);
    std::sort(order.begin(), order.end());
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t idx : order) {
    auto [p, i] = entries[idx];
    double& slot = params[p]->value.data()[i];
    const double analytic = params[p]->grad.data()[i];
    const double saved = slot;
    auto at = [&](double offset) {
      slot = saved + offset;
      const double value = fn(false);
      slot = saved;
      if (!std::isfinite(value)) throw std::domain_error("grad_check: non-finite function value");
      return value;
    };
    const double numeric =
        stencil == 2 ? (at(step) - at(-step)) / (2.0 * step)
                     : (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) /
                           (12.0 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (report.entries_checked == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_parameter_index = idx;
    }
    ++report.entries_checked;
  }
  return report;
}

}  // namespace depthmesh
