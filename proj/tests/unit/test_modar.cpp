// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/modar.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace depthmesh {
namespace {

using testing::max_rel_error;
using testing::numeric_gradient;
using testing::random_matrix;
using testing::random_rotation;
using testing::uniform;

Quat4 conj(const Quat4& q) { return {q(0), -q(1), -q(2), -q(3)}; }

struct ModarCase {
  ModarConfig config;
  ModarParams params;
  MotionTokens motion;
  std::vector<Matrix> fused;
  std::vector<std::vector<Quat4>> pose_init;
  Vector shape_init;

  ModarCase(int frames, int joints, int shapes, int channels, int cells, Rng& rng) {
    config.model_dim = 8;
    config.ffn_hidden = 12;
    params = make_modar_params(config, joints, shapes, channels, rng);
    for (int t = 0; t < frames; ++t) {
      motion.lifted.push_back(random_matrix(joints, 3, rng, 0.3));
      Keypoints kp(joints, 2);
      for (Eigen::Index i = 0; i < kp.size(); ++i) kp.data()[i] = uniform(rng, -0.9, 0.9);
      motion.keypoints.push_back(kp);
      fused.push_back(random_matrix(cells, channels, rng));
      std::vector<Quat4> pose;
      for (int j = 0; j < joints; ++j) pose.push_back(random_rotation(rng, 1.5).coeffs());
      pose_init.push_back(pose);
    }
    shape_init = random_matrix(shapes, 1, rng);
  }

  void randomize(Rng& rng, double sigma = 0.3) {
    std::vector<Param*> all;
    params.collect(all);
    for (Param* p : all) p->value += random_matrix(p->value.rows(), p->value.cols(), rng, sigma);
  }

  std::vector<const Matrix*> fused_ptrs() const {
    std::vector<const Matrix*> out;
    for (const Matrix& m : fused) out.push_back(&m);
    return out;
  }

  ModarOutput run() const {
    return modar_forward(config, params, motion, fused_ptrs(), pose_init, shape_init);
  }
};

TEST(Context, SingleFusedTokenGivesItsValueProjection) {
  Rng rng(1);
  const MultiHeadAttention block = make_attention("a", 6, 6, 6, 2, false, rng);
  const Matrix kv = random_matrix(1, 6, rng);
  MultiHeadTape tape;
  const Matrix out = attention_forward(block, random_matrix(5, 6, rng), kv, tape);
  const Matrix expected = dense_forward(block.output, dense_forward(block.value, kv));
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    EXPECT_LT((out.row(r) - expected.row(0)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Context, ZeroResidualBranchesGiveNormalizedEmbedding) {
  Rng rng(2);
  ModarCase c(1, 4, 2, 3, 5, rng);
  const Matrix tokens = motion_token_features(c.motion.lifted[0], c.motion.keypoints[0]);
  const Matrix out = build_context(c.config, c.params, tokens, c.fused[0]);
  LayerNormTape tape;
  const Matrix expected = layer_norm(c.params.norm, dense_forward(c.params.embed, tokens), tape);
  EXPECT_EQ(out, expected);
}

TEST(Context, MatchesStepByStepComposition) {
  Rng rng(3);
  for (bool bidirectional : {true, false}) {
    ModarCase c(2, 3, 2, 3, 3, rng);
    c.config.bidirectional_kv = bidirectional;
    c.randomize(rng);
    for (int f = 0; f < 2; ++f) {
      const auto u = static_cast<std::size_t>(f);
      const Matrix tokens = motion_token_features(c.motion.lifted[u], c.motion.keypoints[u]);
      const ModarParams& p = c.params;
      MultiHeadTape t1, t2;
      LayerNormTape tn;
      const Matrix h0 = dense_forward(p.embed, tokens);
      const Matrix z = dense_forward(p.project, c.fused[u]);
      const Matrix h1 = h0 + attention_forward(p.block1, h0, z, t1);
      Matrix kv = z;
      if (bidirectional) {
        kv.resize(z.rows() + h1.rows(), z.cols());
        kv << z, h1;
      }
      const Matrix h2 = h1 + attention_forward(p.block2, h1, kv, t2);
      const Matrix n = layer_norm(p.norm, h2, tn);
      const Matrix expected = n + dense_forward(p.ffn_out, relu(dense_forward(p.ffn_in, n)));
      const Matrix got = build_context(c.config, p, tokens, c.fused[u]);
      EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Context, TokenFeatureLayout) {
  Points lifted(2, 3);
  lifted << 1, 2, 3, 4, 5, 6;
  Keypoints kp(2, 2);
  kp << 0.1, 0.2, 0.3, 0.4;
  const Matrix u = motion_token_features(lifted, kp);
  ASSERT_EQ(u.cols(), 7);
  EXPECT_EQ(u.row(1), (RowVector(7) << 4, 5, 6, 0.3, 0.4, 0, 1).finished());
  EXPECT_THROW(motion_token_features(lifted, Keypoints::Zero(3, 2)), std::invalid_argument);
}

TEST(Filter, RhoOneDisablesCarry) {
  Rng rng(4);
  const Matrix x0 = random_matrix(6, 3, rng), r = random_matrix(6, 3, rng);
  EXPECT_EQ(causal_filter(x0, r, 1.0), Matrix(x0 + r));
}

TEST(Filter, ConstantTrackIsFixedPoint) {
  Rng rng(5);
  const RowVector c = random_matrix(1, 4, rng);
  const Matrix x0 = c.replicate(7, 1);
  for (double rho : {0.1, 0.5, 0.7, 1.0}) {
    EXPECT_EQ(causal_filter(x0, Matrix::Zero(7, 4), rho), x0);
  }
}

TEST(Filter, ScalarRecurrenceExample) {
  Matrix x0(2, 1), r(2, 1);
  x0 << 1, 1;
  r << 0.2, -0.2;
  const Matrix x = causal_filter(x0, r, 0.5);
  EXPECT_NEAR(x(0, 0), 1.1, 1e-15);
  EXPECT_NEAR(x(1, 0), 0.95, 1e-15);
}

TEST(Filter, RejectsInvalidRho) {
  const Matrix z = Matrix::Zero(3, 2);
  EXPECT_THROW(causal_filter(z, z, 0.0), std::invalid_argument);
  EXPECT_THROW(causal_filter(z, z, -0.2), std::invalid_argument);
  EXPECT_THROW(causal_filter(z, z, 1.5), std::invalid_argument);
  EXPECT_THROW(causal_filter(z, Matrix::Zero(2, 2), 0.5), std::invalid_argument);
  ModarConfig config;
  config.fixed_rho = -1.0;
  Rng rng(6);
  const ModarParams p = make_modar_params(ModarConfig{}, 2, 1, 2, rng);
  EXPECT_THROW(smoothing_factor(config, p), std::invalid_argument);
}

TEST(Filter, PrefixIsBitExactUnderFuturePerturbation) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x0 = random_matrix(8, 3, rng), r = random_matrix(8, 3, rng);
    const int t = 1 + trial % 7;
    Matrix x0p = x0, rp = r;
    x0p.bottomRows(8 - t) += random_matrix(8 - t, 3, rng);
    rp.bottomRows(8 - t) += random_matrix(8 - t, 3, rng);
    const double rho = uniform(rng, 0.05, 1.0);
    EXPECT_EQ(causal_filter(x0, r, rho).topRows(t), causal_filter(x0p, rp, rho).topRows(t));
  }
}

TEST(Filter, SmoothsWhiteNoiseResiduals) {
  Rng rng(8);
  int wins = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x0 = random_matrix(1, 5, rng).replicate(32, 1);
    const Matrix r = random_matrix(32, 5, rng, 0.1);
    const auto accel = [](const Matrix& x) {
      return (x.bottomRows(x.rows() - 2) - 2 * x.middleRows(1, x.rows() - 2) + x.topRows(x.rows() - 2))
          .squaredNorm();
    };
    if (accel(causal_filter(x0, r, 0.5)) < accel(x0 + r)) ++wins;
  }
  EXPECT_GE(wins, 95);
}

TEST(Filter, BackwardMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x0 = random_matrix(5, 2, rng), r = random_matrix(5, 2, rng), up = random_matrix(5, 2, rng);
    const double rho = uniform(rng, 0.1, 0.9);
    const FilterGrads g = causal_filter_backward(x0, r, causal_filter(x0, r, rho), rho, up);
    const auto loss = [&](const Matrix& a, const Matrix& b, double p) { return causal_filter(a, b, p).cwiseProduct(up).sum(); };
    EXPECT_LT(max_rel_error(g.x0, numeric_gradient([&](const Matrix& a) { return loss(a, r, rho); }, x0)), 1e-6);
    EXPECT_LT(max_rel_error(g.residual, numeric_gradient([&](const Matrix& b) { return loss(x0, b, rho); }, r)), 1e-6);
    const double h = 1e-6;
    const double num = (loss(x0, r, rho + h) - loss(x0, r, rho - h)) / (2 * h);
    EXPECT_NEAR(g.rho, num, 1e-6 * std::max(1.0, std::abs(num)));
  }
}

TEST(Refinement, ZeroIncrementsReturnInitialization) {
  Rng rng(10);
  ModarCase c(3, 4, 2, 2, 2, rng);
  const Matrix x0 = parameter_track(c.pose_init, c.shape_init);
  const Refined out = apply_refinement(c.pose_init, c.shape_init, x0, x0, 5.0);
  EXPECT_EQ(out.poses, c.pose_init);
  EXPECT_EQ(out.shape, c.shape_init);
}

TEST(Refinement, InverseIncrementGivesIdentity) {
  Rng rng(11);
  ModarCase c(1, 3, 1, 2, 2, rng);
  const Matrix x0 = parameter_track(c.pose_init, c.shape_init);
  Matrix x = x0;
  x.block(0, 3, 1, 3) -= log_map(c.pose_init[0][1]).transpose();
  const Refined out = apply_refinement(c.pose_init, c.shape_init, x0, x, 5.0);
  EXPECT_LT((canonical(out.poses[0][1]).coeffs() - Quat4(1, 0, 0, 0)).norm(), 1e-12);
  EXPECT_EQ(out.poses[0][0], c.pose_init[0][0]);
}

TEST(Refinement, IncrementRoundTrip) {
  Rng rng(12);
  ModarCase c(4, 5, 2, 2, 2, rng);
  const Matrix x0 = parameter_track(c.pose_init, c.shape_init);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = x0 + random_matrix(x0.rows(), x0.cols(), rng, 0.3);
    const Refined out = apply_refinement(c.pose_init, c.shape_init, x0, x, 50.0);
    for (int t = 0; t < 4; ++t) {
      for (int j = 0; j < 5; ++j) {
        const auto [ut, uj] = std::pair{static_cast<std::size_t>(t), static_cast<std::size_t>(j)};
        const Vec3 back = log_map(hamilton(out.poses[ut][uj], conj(c.pose_init[ut][uj])));
        EXPECT_LT((back - (x - x0).block(t, 3 * j, 1, 3).transpose()).norm(), 1e-8);
      }
    }
    const Vector mean_shift = (x - x0).rightCols(2).colwise().mean().transpose();
    EXPECT_LT((out.shape - (c.shape_init + mean_shift)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Refinement, ShapeIsClampedToBound) {
  Rng rng(13);
  ModarCase c(2, 2, 2, 2, 2, rng);
  const Matrix x0 = parameter_track(c.pose_init, c.shape_init);
  Matrix x = x0;
  x.rightCols(2).array() += 100.0;
  const Refined out = apply_refinement(c.pose_init, c.shape_init, x0, x, 3.0);
  EXPECT_TRUE((out.shape.array() == 3.0).all());
}

TEST(Modar, ZeroInitWithUnitRhoIsExactNoOp) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    ModarCase c(5, 6, 3, 4, 9, rng);
    c.config.fixed_rho = 1.0;
    const ModarOutput out = c.run();
    EXPECT_EQ(out.refined.poses, c.pose_init);
    EXPECT_EQ(out.refined.shape, c.shape_init);
  }
}

TEST(Modar, GatesInOpenUnitInterval) {
  Rng rng(15);
  ModarCase c(3, 4, 2, 3, 4, rng);
  c.randomize(rng, 0.3);
  for (const Matrix& g : c.run().gates) {
    EXPECT_TRUE((g.array() > 0.0).all() && (g.array() < 1.0).all());
  }
}

TEST(Modar, CausalUnderFuturePerturbation) {
  Rng rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    ModarCase c(6, 4, 2, 3, 4, rng);
    c.randomize(rng);
    const ModarOutput base = c.run();
    const int t = 1 + trial % 5;
    ModarCase perturbed = c;
    for (int f = t; f < 6; ++f) {
      const auto u = static_cast<std::size_t>(f);
      perturbed.fused[u] += random_matrix(4, 3, rng);
      perturbed.motion.lifted[u] += random_matrix(4, 3, rng, 0.1);
      perturbed.pose_init[u][0] = random_rotation(rng).coeffs();
    }
    const ModarOutput moved = perturbed.run();
    for (int f = 0; f < t; ++f) {
      EXPECT_EQ(moved.refined.poses[static_cast<std::size_t>(f)], base.refined.poses[static_cast<std::size_t>(f)]);
    }
  }
}

TEST(Modar, PoseIncrementRespectsClamp) {
  Rng rng(17);
  ModarCase c(3, 4, 2, 3, 4, rng);
  c.randomize(rng, 2.0);
  c.config.fixed_rho = 1.0;
  c.config.pose_clamp = 0.05;
  const ModarOutput out = c.run();
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      const Vec3 inc = log_map(hamilton(out.refined.poses[t][j], conj(c.pose_init[t][j])));
      EXPECT_LE(inc.norm(), 0.05 + 1e-12);
    }
  }
}

TEST(Modar, LearnedSmoothingStartsAtConfiguredValue) {
  Rng rng(18);
  const ModarConfig config;
  const ModarParams p = make_modar_params(config, 3, 2, 2, rng);
  EXPECT_NEAR(smoothing_factor(config, p), 0.7, 1e-15);
  ModarConfig bad;
  bad.rho_init = 1.0;
  EXPECT_THROW(make_modar_params(bad, 3, 2, 2, rng), std::invalid_argument);
}

TEST(Modar, FrameCountMismatchRejected) {
  Rng rng(19);
  ModarCase c(3, 4, 2, 3, 4, rng);
  c.fused.pop_back();
  EXPECT_THROW(c.run(), std::invalid_argument);
}

}  // namespace
}  // namespace depthmesh
