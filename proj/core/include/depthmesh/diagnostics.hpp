// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/numerics.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace depthmesh {

/// A randomly sized instance of one learned block with a random linear read-out as the loss.
struct GradBlockInstance {
  std::string block;
  std::shared_ptr<void> state;  // owns parameters and inputs
  std::vector<Param*> params;   // the block's own parameters
  /// `loss(true)` also accumulates analytic gradients into `params`.
  std::function<double(bool)> loss;
};

/// fusion_mask, fusion_gates, fusion_pathway, twist_head, temporal_attention, shape_head,
/// modar_block1, modar_block2, modar_residual_heads, modar_gates, regressor.
std::vector<std::string> grad_block_names();

GradBlockInstance make_grad_block_instance(const std::string& block, std::uint64_t seed);

struct BlockCheckSummary {
  std::string block;
  int instances = 0;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Fourth-order central differences on up to `entries_per_param` entries of every parameter.
std::vector<BlockCheckSummary> run_block_grad_checks(int instances, std::uint64_t seed,
                                                     double tolerance = 1e-4, double step = 5e-4,
                                                     std::size_t entries_per_param = 6);

}  // namespace depthmesh
