// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/numerics.hpp"

#include <utility>
#include <vector>

namespace depthmesh {

/// H x W grid of C-channel cells stored as an (H*W) x C matrix, cell (y, x) at row y*W + x.
struct FeatureGrid {
  int height = 0;
  int width = 0;
  Matrix cells;

  FeatureGrid() = default;
  FeatureGrid(int h, int w, Matrix data);
  static FeatureGrid zeros(int h, int w, int channels);

  int channels() const { return static_cast<int>(cells.cols()); }
  int cell_count() const { return height * width; }
  int index(int y, int x) const { return y * width + x; }
};

/// Per-cell depth reliability in [0, 1], row-major H x W.
struct ConfidenceMap {
  int height = 0;
  int width = 0;
  Vector values;
};

struct FusionConfig {
  int channels = 32;
  int mask_hidden = 16;
  int gate_hidden = 16;
  int levels = 2;
};

struct FusionParams {
  LayerParams refine;      // psi: per-cell C -> C, identity at init
  LayerParams mask_in;     // per-cell C -> hidden, relu
  LayerParams mask_out;    // per-cell hidden -> C, sigmoid
  LayerParams gate_in;     // pooled 2C -> hidden, relu
  LayerParams gate_out;    // hidden -> 2C, sigmoid
  LayerParams projection;  // per-cell 2C -> C, [I/2 | I/2] at init

  void collect(std::vector<Param*>& out);
};

/// Identity refinement, mask and gates starting at 0.5, averaging projection.
FusionParams make_fusion_params(const FusionConfig& config, Rng& rng);

/// Nearest-neighbour upsampling by an integer factor.
FeatureGrid upsample_nearest(const FeatureGrid& grid, int factor);
/// Sums each output cell's gradient back onto its source cell.
FeatureGrid upsample_nearest_backward(const FeatureGrid& upstream, int factor);
/// Mean over factor x factor blocks.
FeatureGrid average_pool(const FeatureGrid& grid, int factor);
FeatureGrid average_pool_backward(const FeatureGrid& upstream, int factor);

struct DepthPathwayTape {
  DenseTape refine;
  int factor = 1;
  bool recorded = false;
};

/// Per-cell linear refinement of the reduced-resolution depth grid followed by nearest-neighbour
/// upsampling to height x width. Confidence is passed through unchanged.
std::pair<FeatureGrid, ConfidenceMap> mock_depth_pathway(const FeatureGrid& raw_depth,
                                                         const ConfidenceMap& confidence,
                                                         const LayerParams& refine, int height,
                                                         int width);
FeatureGrid mock_depth_pathway(const FeatureGrid& raw_depth, const LayerParams& refine,
                               int height, int width, DepthPathwayTape& tape);
/// Accumulates refine gradients from an upstream gradient on the upsampled grid.
void mock_depth_pathway_backward(LayerParams& refine, const DepthPathwayTape& tape,
                                 const FeatureGrid& upstream);

/// Per-cell sigmoid(W2 relu(W1 d + b1) + b2), one value per cell and channel.
Matrix modulation_mask(const Matrix& depth_cells, const LayerParams& mask_in,
                       const LayerParams& mask_out);

struct Gates {
  RowVector rgb;
  RowVector depth;
};

/// Mean-pools both streams, concatenates, runs the gate MLP.
Gates channel_gates(const Matrix& rgb_cells, const Matrix& depth_cells, const LayerParams& gate_in,
                    const LayerParams& gate_out);

struct FusionOutput {
  Matrix fused;  // cells x C
  Matrix mask;   // cells x C
  Gates gates;
};

/// Single-level gated fusion of matching grids.
FusionOutput fuse(const Matrix& rgb_cells, const Matrix& depth_cells, const FusionParams& params);

struct FuseTape {
  DenseTape mask_in, mask_out, gate_in, gate_out, projection;
  Matrix rgb, depth, mask, gated_rgb_in;
  Gates gates;
  bool recorded = false;
};

FusionOutput fuse(const Matrix& rgb_cells, const Matrix& depth_cells, const FusionParams& params,
                  FuseTape& tape);

struct FuseGrads {
  Matrix rgb;
  Matrix depth;
};

FuseGrads fuse_backward(FusionParams& params, const FuseTape& tape, const Matrix& upstream);

struct MultiScaleTape {
  std::vector<FuseTape> levels;
  int height = 0;
  int width = 0;
  bool recorded = false;
};

/// Fuses the full grid and `levels - 1` average-pooled copies (shared parameters), upsamples and
/// sums. Every level must divide the grid evenly.
Matrix fuse_multiscale(const FeatureGrid& rgb, const FeatureGrid& depth, const FusionParams& params,
                       int levels, MultiScaleTape* tape = nullptr);
/// Returns the gradient with respect to the depth grid (the RGB grid is an input).
Matrix fuse_multiscale_backward(FusionParams& params, const MultiScaleTape& tape,
                                const Matrix& upstream);

}  // namespace depthmesh
