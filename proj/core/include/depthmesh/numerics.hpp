// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace depthmesh {

/// Row-major dense matrix; every learned weight and every token set lives in one.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation { kLinear, kSigmoid, kRelu };

/// A trainable tensor with its gradient accumulator and momentum buffer.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix velocity;

  Param() = default;
  Param(std::string param_name, Matrix init);

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

/// Explicit-seed generator used for every initialization and data draw.
using Rng = std::mt19937_64;

/// Mixes a base seed with a stream id so independent consumers get independent streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);

double sigmoid(double x);
Matrix sigmoid(const Matrix& x);

// ---------------------------------------------------------------------------
// Dense (per-row linear map + activation)

struct LayerParams {
  Param weights;  // out x in
  Param bias;     // 1 x out
  Activation kind = Activation::kLinear;
  bool use_bias = true;  // when false the bias stays zero and is not trained

  Eigen::Index in_dim() const { return weights.value.cols(); }
  Eigen::Index out_dim() const { return weights.value.rows(); }
  void collect(std::vector<Param*>& out);
};

/// Xavier-uniform weights, zero bias.
LayerParams make_dense(const std::string& name, Eigen::Index in, Eigen::Index out, Activation kind,
                       Rng& rng);
/// All-zero weights and bias (residual branches that must start as no-ops).
LayerParams make_dense_zero(const std::string& name, Eigen::Index in, Eigen::Index out,
                            Activation kind);

struct DenseTape {
  Matrix input;
  Matrix output;
  bool recorded = false;
};

Matrix dense_forward(const LayerParams& params, const Matrix& input);
Matrix dense_forward(const LayerParams& params, const Matrix& input, DenseTape& tape);
/// Accumulates weight/bias gradients and returns d(loss)/d(input).
Matrix dense_backward(LayerParams& params, const DenseTape& tape, const Matrix& upstream);

// ---------------------------------------------------------------------------
// Layer normalization (per row)

struct LayerNormParams {
  Param gain;    // 1 x D
  Param offset;  // 1 x D
  double epsilon = 1e-5;
  void collect(std::vector<Param*>& out);
};

LayerNormParams make_layer_norm(const std::string& name, Eigen::Index dim, double epsilon = 1e-5);

struct LayerNormTape {
  Matrix normalized;  // x-hat before gain/offset
  Vector inv_std;
  bool recorded = false;
};

Matrix layer_norm(const Matrix& input, const RowVector& gain, const RowVector& offset,
                  double epsilon);
Matrix layer_norm(const LayerNormParams& params, const Matrix& input, LayerNormTape& tape);
Matrix layer_norm_backward(LayerNormParams& params, const LayerNormTape& tape,
                           const Matrix& upstream);

// ---------------------------------------------------------------------------
// Scaled dot-product cross attention

/// Row softmax with max subtraction.
Matrix row_softmax(const Matrix& logits);

struct AttentionTape {
  Matrix queries, keys, values;
  Matrix probs;
  double scale = 1.0;
  bool recorded = false;
};

struct AttentionGrads {
  Matrix queries, keys, values;
};

Matrix cross_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                       double scale);
Matrix cross_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                       double scale, AttentionTape& tape);
AttentionGrads cross_attention_backward(const AttentionTape& tape, const Matrix& upstream);

/// Projected multi-head attention: out = Wo * concat_h softmax(Qh Khᵀ/√dh) Vh.
struct MultiHeadAttention {
  LayerParams query;
  LayerParams key;
  LayerParams value;
  LayerParams output;
  int heads = 1;

  Eigen::Index model_dim() const { return query.out_dim(); }
  void collect(std::vector<Param*>& out);
};

/// `zero_output` makes the block an exact residual no-op until trained.
MultiHeadAttention make_attention(const std::string& name, Eigen::Index query_in,
                                  Eigen::Index kv_in, Eigen::Index model_dim, int heads,
                                  bool zero_output, Rng& rng);

struct MultiHeadTape {
  DenseTape query, key, value, output;
  std::vector<AttentionTape> heads;
  bool recorded = false;
};

struct MultiHeadGrads {
  Matrix queries;
  Matrix keys_values;
};

Matrix attention_forward(const MultiHeadAttention& block, const Matrix& queries,
                         const Matrix& keys_values, MultiHeadTape& tape);
MultiHeadGrads attention_backward(MultiHeadAttention& block, const MultiHeadTape& tape,
                                  const Matrix& upstream);

// ---------------------------------------------------------------------------
// Elementwise helpers used by composite blocks

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& upstream);
Matrix sigmoid_backward(const Matrix& y, const Matrix& upstream);  // y = sigmoid(x)

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_parameter_index = 0;
  double tolerance = 0.0;
  std::size_t entries_checked = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// `fn(true)` must evaluate the scalar loss and accumulate analytic gradients into the params;
/// `fn(false)` evaluates only. Parameter entries are indexed consecutively across `params`.
/// With `max_entries > 0` a seeded random subset of entries is checked. `stencil` selects the
/// 2-point or the 4-point (fourth-order) central difference.
GradCheckReport grad_check(const std::function<double(bool)>& fn, std::span<Param* const> params,
                           double step, double tolerance, std::size_t max_entries = 0,
                           std::uint64_t seed = 0, int stencil = 2);

void zero_grads(std::span<Param* const> params);
std::size_t total_size(std::span<Param* const> params);

}  // namespace depthmesh
