// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/body_model.hpp"
#include "depthmesh/losses_metrics.hpp"
#include "depthmesh/modar.hpp"
#include "depthmesh/numerics.hpp"
#include "depthmesh/pipeline.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace depthmesh;

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void BM_CrossAttention(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<Eigen::Index>(state.range(0));
  const Matrix q = gaussian(16, 32, rng), k = gaussian(n, 32, rng), v = gaussian(n, 32, rng);
  for (auto _ : state) benchmark::DoNotOptimize(cross_attention(q, k, v, 1.0 / std::sqrt(32.0)));
}
BENCHMARK(BM_CrossAttention)->Arg(16)->Arg(64)->Arg(256);

void BM_PoseBody(benchmark::State& state) {
  const BodyTemplate tmpl = build_template();
  Rng rng(2);
  std::vector<Quat4> rotations;
  for (int j = 0; j < tmpl.joint_count(); ++j) {
    rotations.push_back(exp_map(Vec3(gaussian(3, 1, rng) * 0.3)));
  }
  const Vector shape = gaussian(4, 1, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pose_body(tmpl, shape, rotations, Vec3(0, 0, 4)));
  }
}
BENCHMARK(BM_PoseBody);

void BM_Procrustes(benchmark::State& state) {
  Rng rng(3);
  const Points a = gaussian(16, 3, rng), b = gaussian(16, 3, rng);
  for (auto _ : state) benchmark::DoNotOptimize(procrustes_align(a, b));
}
BENCHMARK(BM_Procrustes);

void BM_CausalFilter(benchmark::State& state) {
  Rng rng(4);
  const auto frames = static_cast<Eigen::Index>(state.range(0));
  const Matrix x0 = gaussian(frames, 52, rng), r = gaussian(frames, 52, rng);
  for (auto _ : state) benchmark::DoNotOptimize(causal_filter(x0, r, 0.7));
}
BENCHMARK(BM_CausalFilter)->Arg(8)->Arg(32);

void BM_ModelForward(benchmark::State& state) {
  RunConfig config;
  config.data.frames = static_cast<int>(state.range(0));
  const BodyTemplate tmpl = make_body(config.body);
  const SequenceSample sample = make_sample(tmpl, config.data, 5, "bench");
  const ModelParams params = init_params(config, tmpl);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(tmpl, config.model, params, sample));
}
BENCHMARK(BM_ModelForward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
