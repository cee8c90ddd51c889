// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/fusion.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace depthmesh {
namespace {

using testing::max_rel_error;
using testing::numeric_gradient;
using testing::random_matrix;

FusionParams random_fusion(int channels, Rng& rng, double sigma = 0.5) {
  FusionConfig config;
  config.channels = channels;
  config.mask_hidden = 3;
  config.gate_hidden = 4;
  FusionParams p = make_fusion_params(config, rng);
  std::vector<Param*> all;
  p.collect(all);
  for (Param* q : all) q->value += random_matrix(q->value.rows(), q->value.cols(), rng, sigma);
  return p;
}

TEST(Grid, RejectsInconsistentShapes) {
  EXPECT_THROW(FeatureGrid(2, 2, Matrix::Zero(3, 1)), std::invalid_argument);
  EXPECT_THROW(FeatureGrid(0, 2, Matrix::Zero(0, 1)), std::invalid_argument);
  EXPECT_THROW(FeatureGrid(1, 1, Matrix::Zero(1, 0)), std::invalid_argument);
}

TEST(DepthPathway, IdentityRefineUnitFactorIsPassThrough) {
  Rng rng(1);
  LayerParams refine = make_dense_zero("r", 3, 3, Activation::kLinear);
  refine.weights.value.setIdentity();
  const FeatureGrid raw(4, 4, random_matrix(16, 3, rng));
  ConfidenceMap conf{4, 4, Vector::Constant(16, 0.3)};
  const auto [out, c] = mock_depth_pathway(raw, conf, refine, 4, 4);
  EXPECT_EQ(out.cells, raw.cells);
  EXPECT_EQ(c.values, conf.values);
}

TEST(DepthPathway, SingleCellUpsamplesToIdenticalCells) {
  LayerParams refine = make_dense_zero("r", 2, 2, Activation::kLinear);
  refine.weights.value.setIdentity();
  Matrix cell(1, 2);
  cell << 0.25, -1.5;
  const auto [out, c] = mock_depth_pathway(FeatureGrid(1, 1, cell), ConfidenceMap{}, refine, 2, 2);
  ASSERT_EQ(out.height, 2);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(out.cells.row(i), cell.row(0));
}

TEST(DepthPathway, UpsampledCellsMatchRefinedSources) {
  Rng rng(2);
  LayerParams refine = make_dense("r", 3, 3, Activation::kLinear, rng);
  refine.bias.value = random_matrix(1, 3, rng);
  const FeatureGrid raw(4, 4, random_matrix(16, 3, rng));
  const auto [out, c] = mock_depth_pathway(raw, ConfidenceMap{}, refine, 8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const RowVector src = raw.cells.row((y / 2) * 4 + x / 2);
      const RowVector expected = (refine.weights.value * src.transpose()).transpose() + refine.bias.value.row(0);
      EXPECT_LT((out.cells.row(y * 8 + x) - expected).cwiseAbs().maxCoeff(), 1e-14);
    }
  }
}

TEST(DepthPathway, NonDivisibleResolutionRejected) {
  LayerParams refine = make_dense_zero("r", 1, 1, Activation::kLinear);
  EXPECT_THROW(mock_depth_pathway(FeatureGrid::zeros(3, 3, 1), ConfidenceMap{}, refine, 8, 8),
               std::invalid_argument);
  EXPECT_THROW(mock_depth_pathway(FeatureGrid::zeros(2, 4, 1), ConfidenceMap{}, refine, 8, 8),
               std::invalid_argument);
}

TEST(DepthPathway, BackwardMatchesFiniteDifferences) {
  Rng rng(3);
  LayerParams refine = make_dense("r", 2, 2, Activation::kLinear, rng);
  const FeatureGrid raw(2, 2, random_matrix(4, 2, rng));
  const Matrix up = random_matrix(16, 2, rng);
  auto fn = [&](bool with_grad) {
    DepthPathwayTape tape;
    const FeatureGrid out = mock_depth_pathway(raw, refine, 4, 4, tape);
    if (with_grad) mock_depth_pathway_backward(refine, tape, FeatureGrid(4, 4, up));
    return out.cells.cwiseProduct(up).sum();
  };
  std::vector<Param*> params;
  refine.collect(params);
  EXPECT_LT(grad_check(fn, params, 1e-6, 1e-6).max_rel_error, 1e-6);
}

TEST(Pooling, AveragePoolAndBackwardAreAdjoint) {
  Rng rng(4);
  const FeatureGrid x(4, 4, random_matrix(16, 3, rng));
  const FeatureGrid y(2, 2, random_matrix(4, 3, rng));
  const double lhs = average_pool(x, 2).cells.cwiseProduct(y.cells).sum();
  const double rhs = x.cells.cwiseProduct(average_pool_backward(y, 2).cells).sum();
  EXPECT_NEAR(lhs, rhs, 1e-12);
  const double lhs_up = upsample_nearest(y, 2).cells.cwiseProduct(x.cells).sum();
  const double rhs_up = y.cells.cwiseProduct(upsample_nearest_backward(x, 2).cells).sum();
  EXPECT_NEAR(lhs_up, rhs_up, 1e-12);
  EXPECT_THROW(average_pool(FeatureGrid::zeros(3, 3, 1), 2), std::invalid_argument);
}

TEST(Mask, ZeroHeadGivesHalf) {
  Rng rng(5);
  const LayerParams in = make_dense_zero("a", 3, 4, Activation::kRelu);
  const LayerParams out = make_dense_zero("b", 4, 3, Activation::kSigmoid);
  const Matrix m = modulation_mask(random_matrix(6, 3, rng), in, out);
  EXPECT_TRUE((m.array() == 0.5).all());
}

TEST(Mask, EntriesInOpenUnitInterval) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    LayerParams in = make_dense("a", 3, 4, Activation::kRelu, rng);
    LayerParams out = make_dense("b", 4, 3, Activation::kSigmoid, rng);
    const Matrix m = modulation_mask(random_matrix(5, 3, rng, 3.0), in, out);
    EXPECT_TRUE((m.array() > 0.0).all() && (m.array() < 1.0).all());
  }
}

TEST(Mask, HandComputedSingleCell) {
  LayerParams in = make_dense_zero("a", 2, 2, Activation::kRelu);
  in.weights.value << 1.0, -1.0, 0.5, 2.0;
  in.bias.value << 0.1, -3.0;
  LayerParams out = make_dense_zero("b", 2, 2, Activation::kSigmoid);
  out.weights.value << 1.0, 4.0, -2.0, 0.5;
  out.bias.value << 0.0, 0.25;
  Matrix d(1, 2);
  d << 0.6, 0.2;
  // hidden = relu(0.6 - 0.2 + 0.1, 0.3 + 0.4 - 3) = (0.5, 0)
  const Matrix m = modulation_mask(d, in, out);
  EXPECT_NEAR(m(0, 0), sigmoid(0.5), 1e-15);
  EXPECT_NEAR(m(0, 1), sigmoid(-1.0 + 0.25), 1e-15);
}

TEST(Gates, ZeroHeadGivesHalf) {
  Rng rng(7);
  const LayerParams in = make_dense_zero("a", 4, 3, Activation::kRelu);
  const LayerParams out = make_dense_zero("b", 3, 4, Activation::kSigmoid);
  const Gates g = channel_gates(random_matrix(5, 2, rng), random_matrix(5, 2, rng), in, out);
  EXPECT_TRUE((g.rgb.array() == 0.5).all());
  EXPECT_TRUE((g.depth.array() == 0.5).all());
}

TEST(Gates, InvariantToCellPermutation) {
  Rng rng(8);
  const LayerParams in = make_dense("a", 6, 5, Activation::kRelu, rng);
  const LayerParams out = make_dense("b", 5, 6, Activation::kSigmoid, rng);
  const Matrix r = random_matrix(9, 3, rng), d = random_matrix(9, 3, rng);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix rp(9, 3), dp(9, 3);
  for (int i = 0; i < 9; ++i) {
    rp.row(i) = r.row(perm[static_cast<std::size_t>(i)]);
    dp.row(i) = d.row(perm[static_cast<std::size_t>(i)]);
  }
  const Gates a = channel_gates(r, d, in, out), b = channel_gates(rp, dp, in, out);
  EXPECT_LT((a.rgb - b.rgb).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((a.depth - b.depth).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Gates, HandComputedSingleCell) {
  LayerParams in = make_dense_zero("a", 4, 1, Activation::kRelu);
  in.weights.value << 1.0, 0.0, -1.0, 2.0;
  LayerParams out = make_dense_zero("b", 1, 4, Activation::kSigmoid);
  out.weights.value << 1.0, -1.0, 0.5, 2.0;
  Matrix r(1, 2), d(1, 2);
  r << 0.3, 0.7;
  d << 0.1, 0.4;
  // hidden = relu(0.3 - 0.1 + 0.8) = 1
  const Gates g = channel_gates(r, d, in, out);
  EXPECT_NEAR(g.rgb(0), sigmoid(1.0), 1e-15);
  EXPECT_NEAR(g.rgb(1), sigmoid(-1.0), 1e-15);
  EXPECT_NEAR(g.depth(0), sigmoid(0.5), 1e-15);
  EXPECT_NEAR(g.depth(1), sigmoid(2.0), 1e-15);
}

TEST(Gates, DepthBiasIncreaseRaisesEveryDepthGate) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const LayerParams in = make_dense("a", 6, 5, Activation::kRelu, rng);
    LayerParams out = make_dense("b", 5, 6, Activation::kSigmoid, rng);
    const Matrix r = random_matrix(4, 3, rng), d = random_matrix(4, 3, rng);
    const Gates before = channel_gates(r, d, in, out);
    out.bias.value.rightCols(3).array() += 0.2;
    const Gates after = channel_gates(r, d, in, out);
    EXPECT_TRUE((after.depth.array() > before.depth.array()).all());
    EXPECT_EQ(after.rgb, before.rgb);
  }
}

TEST(Fuse, ZeroDepthGateRemovesDepth) {
  Rng rng(10);
  FusionParams p = random_fusion(3, rng);
  p.projection.weights.value.setZero();
  p.projection.weights.value.leftCols(3).setIdentity();
  p.projection.weights.value.rightCols(3).setIdentity();
  p.projection.bias.value.setZero();
  p.gate_out.weights.value.bottomRows(3).setZero();
  p.gate_out.bias.value.rightCols(3).setConstant(-1e4);
  const Matrix r = random_matrix(4, 3, rng), d = random_matrix(4, 3, rng);
  const FusionOutput out = fuse(r, d, p);
  EXPECT_TRUE((out.gates.depth.array() == 0.0).all());
  const Matrix expected = out.mask.cwiseProduct(r).array().rowwise() * out.gates.rgb.array();
  EXPECT_LT((out.fused - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Fuse, SymmetricStreamsDoubleTheGatedInput) {
  Rng rng(11);
  FusionParams p = random_fusion(3, rng);
  p.mask_out.weights.value.setZero();
  p.mask_out.bias.value.setConstant(1e4);
  p.gate_out.weights.value.setZero();
  p.gate_out.bias.value.setConstant(0.4);
  p.projection.weights.value.setZero();
  p.projection.weights.value.leftCols(3).setIdentity();
  p.projection.weights.value.rightCols(3).setIdentity();
  p.projection.bias.value.setZero();
  const Matrix r = random_matrix(4, 3, rng);
  const FusionOutput out = fuse(r, r, p);
  EXPECT_TRUE((out.mask.array() == 1.0).all());
  const Matrix expected = 2.0 * (r.array().rowwise() * out.gates.rgb.array()).matrix();
  EXPECT_LT((out.fused - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Fuse, MatchesPerCellOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 1 + trial % 4;
    const FusionParams p = random_fusion(c, rng);
    const Matrix r = random_matrix(1 + trial % 6, c, rng), d = random_matrix(r.rows(), c, rng);
    const FusionOutput out = fuse(r, d, p);
    EXPECT_LT((out.fused - oracle::fuse(r, d, p)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE((out.mask.array() > 0).all() && (out.mask.array() < 1).all());
  }
}

TEST(Fuse, DepthIgnoredWhenGateClosedAndMaskOpen) {
  Rng rng(13);
  FusionParams p = random_fusion(3, rng);
  p.mask_in.weights.value.setZero();
  p.mask_out.weights.value.setZero();
  p.mask_out.bias.value.setConstant(1e4);
  p.gate_in.weights.value.rightCols(3).setZero();
  p.gate_out.weights.value.bottomRows(3).setZero();
  p.gate_out.bias.value.rightCols(3).setConstant(-1e4);
  const Matrix r = random_matrix(4, 3, rng);
  const Matrix reference = fuse(r, random_matrix(4, 3, rng), p).fused;
  for (int trial = 0; trial < 10; ++trial) {
    EXPECT_EQ(fuse(r, random_matrix(4, 3, rng, 5.0), p).fused, reference);
  }
}

TEST(Fuse, InitializationAveragesHalfGatedStreams) {
  Rng rng(14);
  FusionConfig config;
  config.channels = 4;
  const FusionParams p = make_fusion_params(config, rng);
  const Matrix r = random_matrix(6, 4, rng), d = random_matrix(6, 4, rng);
  const FusionOutput out = fuse(r, d, p);
  const Matrix expected = 0.5 * (0.5 * 0.5 * r + 0.5 * d);
  EXPECT_LT((out.fused - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Fuse, ShapeMismatchRejected) {
  Rng rng(15);
  const FusionParams p = random_fusion(3, rng);
  EXPECT_THROW(fuse(Matrix::Zero(4, 3), Matrix::Zero(5, 3), p), std::invalid_argument);
  EXPECT_THROW(fuse(Matrix::Zero(4, 3), Matrix::Zero(4, 2), p), std::invalid_argument);
}

TEST(Fuse, BackwardInputsMatchFiniteDifferences) {
  Rng rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    FusionParams p = random_fusion(3, rng, 0.3);
    p.mask_in.bias.value.setConstant(1.0);
    p.gate_in.bias.value.setConstant(1.0);
    const Matrix r = random_matrix(4, 3, rng), d = random_matrix(4, 3, rng, 0.2);
    const Matrix up = random_matrix(4, 3, rng);
    FuseTape tape;
    fuse(r, d, p, tape);
    const FuseGrads g = fuse_backward(p, tape, up);
    const Matrix nr = numeric_gradient([&](const Matrix& x) { return fuse(x, d, p).fused.cwiseProduct(up).sum(); }, r);
    const Matrix nd = numeric_gradient([&](const Matrix& x) { return fuse(r, x, p).fused.cwiseProduct(up).sum(); }, d);
    EXPECT_LT(max_rel_error(g.rgb, nr), 1e-5);
    EXPECT_LT(max_rel_error(g.depth, nd), 1e-5);
  }
}

TEST(MultiScale, SingleLevelEqualsFuse) {
  Rng rng(17);
  const FusionParams p = random_fusion(2, rng);
  const FeatureGrid r(4, 4, random_matrix(16, 2, rng)), d(4, 4, random_matrix(16, 2, rng));
  EXPECT_EQ(fuse_multiscale(r, d, p, 1), fuse(r.cells, d.cells, p).fused);
}

TEST(MultiScale, TwoLevelsSumUpsampledCoarseFusion) {
  Rng rng(18);
  const FusionParams p = random_fusion(2, rng);
  const FeatureGrid r(4, 4, random_matrix(16, 2, rng)), d(4, 4, random_matrix(16, 2, rng));
  const Matrix coarse = oracle::fuse(average_pool(r, 2).cells, average_pool(d, 2).cells, p);
  const Matrix fine = oracle::fuse(r.cells, d.cells, p);
  const Matrix total = fuse_multiscale(r, d, p, 2);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const RowVector expected = fine.row(y * 4 + x) + coarse.row((y / 2) * 2 + x / 2);
      EXPECT_LT((total.row(y * 4 + x) - expected).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
  EXPECT_THROW(fuse_multiscale(FeatureGrid(3, 3, Matrix::Zero(9, 2)), FeatureGrid(3, 3, Matrix::Zero(9, 2)), p, 2),
               std::invalid_argument);
}

}  // namespace
}  // namespace depthmesh
