// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/fusion.hpp"

#include <stdexcept>
#include <string>

namespace depthmesh {

FeatureGrid::FeatureGrid(int h, int w, Matrix data) : height(h), width(w), cells(std::move(data)) {
  if (h <= 0 || w <= 0 || cells.rows() != static_cast<Eigen::Index>(h) * w || cells.cols() <= 0) {
    throw std::invalid_argument("FeatureGrid: cell matrix must be (H*W) x C with H, W, C > 0");
  }
}

FeatureGrid FeatureGrid::zeros(int h, int w, int channels) {
  return FeatureGrid(h, w, Matrix::Zero(static_cast<Eigen::Index>(h) * w, channels));
}

void FusionParams::collect(std::vector<Param*>& out) {
  refine.collect(out);
  mask_in.collect(out);
  mask_out.collect(out);
  gate_in.collect(out);
  gate_out.collect(out);
  projection.collect(out);
}

FusionParams make_fusion_params(const FusionConfig& config, Rng& rng) {
  const int c = config.channels;
  if (c <= 0 || config.mask_hidden <= 0 || config.gate_hidden <= 0 || config.levels <= 0) {
    throw std::invalid_argument("make_fusion_params: sizes must be positive");
  }
  FusionParams p;
  p.refine = make_dense_zero("fusion.refine", c, c, Activation::kLinear);
  p.refine.weights.value.setIdentity();
  p.mask_in = make_dense("fusion.mask_in", c, config.mask_hidden, Activation::kRelu, rng);
  p.mask_out = make_dense_zero("fusion.mask_out", config.mask_hidden, c, Activation::kSigmoid);
  p.gate_in = make_dense("fusion.gate_in", 2 * c, config.gate_hidden, Activation::kRelu, rng);
  p.gate_out =
      make_dense_zero("fusion.gate_out", config.gate_hidden, 2 * c, Activation::kSigmoid);
  p.projection = make_dense_zero("fusion.projection", 2 * c, c, Activation::kLinear);
  p.projection.weights.value.leftCols(c).diagonal().setConstant(0.5);
  p.projection.weights.value.rightCols(c).diagonal().setConstant(0.5);
  return p;
}

// ---------------------------------------------------------------------------

FeatureGrid upsample_nearest(const FeatureGrid& grid, int factor) {
  if (factor <= 0) throw std::invalid_argument("upsample_nearest: factor must be positive");
  if (factor == 1) return grid;
  const int h = grid.height * factor;
  const int w = grid.width * factor;
  Matrix out(static_cast<Eigen::Index>(h) * w, grid.channels());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.row(y * w + x) = grid.cells.row(grid.index(y / factor, x / factor));
    }
  }
  return FeatureGrid(h, w, std::move(out));
}

FeatureGrid upsample_nearest_backward(const FeatureGrid& upstream, int factor) {
  if (factor == 1) return upstream;
  const int h = upstream.height / factor;
  const int w = upstream.width / factor;
  FeatureGrid out = FeatureGrid::zeros(h, w, upstream.channels());
  for (int y = 0; y < upstream.height; ++y) {
    for (int x = 0; x < upstream.width; ++x) {
      out.cells.row(out.index(y / factor, x / factor)) += upstream.cells.row(upstream.index(y, x));
    }
  }
  return out;
}

FeatureGrid average_pool(const FeatureGrid& grid, int factor) {
  if (factor <= 0 || grid.height % factor != 0 || grid.width % factor != 0) {
    throw std::invalid_argument("average_pool: factor must divide the grid");
  }
  if (factor == 1) return grid;
  FeatureGrid out = FeatureGrid::zeros(grid.height / factor, grid.width / factor, grid.channels());
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      out.cells.row(out.index(y / factor, x / factor)) += inv * grid.cells.row(grid.index(y, x));
    }
  }
  return out;
}

FeatureGrid average_pool_backward(const FeatureGrid& upstream, int factor) {
  if (factor == 1) return upstream;
  FeatureGrid up = upsample_nearest(upstream, factor);
  up.cells *= 1.0 / (factor * factor);
  return up;
}

// ---------------------------------------------------------------------------

namespace {

int upsample_factor(const FeatureGrid& raw, int height, int width) {
  if (raw.height <= 0 || height % raw.height != 0 || width % raw.width != 0 ||
      height / raw.height != width / raw.width) {
    throw std::invalid_argument("mock_depth_pathway: reduced grid " + std::to_string(raw.height) +
                                "x" + std::to_string(raw.width) + " does not divide " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  return height / raw.height;
}

}  // namespace

std::pair<FeatureGrid, ConfidenceMap> mock_depth_pathway(const FeatureGrid& raw_depth,
                                                         const ConfidenceMap& confidence,
                                                         const LayerParams& refine, int height,
                                                         int width) {
  const int factor = upsample_factor(raw_depth, height, width);
  FeatureGrid refined(raw_depth.height, raw_depth.width, dense_forward(refine, raw_depth.cells));
  return {upsample_nearest(refined, factor), confidence};
}

FeatureGrid mock_depth_pathway(const FeatureGrid& raw_depth, const LayerParams& refine,
                               int height, int width, DepthPathwayTape& tape) {
  tape.factor = upsample_factor(raw_depth, height, width);
  FeatureGrid refined(raw_depth.height, raw_depth.width,
                      dense_forward(refine, raw_depth.cells, tape.refine));
  tape.recorded = true;
  return upsample_nearest(refined, tape.factor);
}

void mock_depth_pathway_backward(LayerParams& refine, const DepthPathwayTape& tape,
                                 const FeatureGrid& upstream) {
  if (!tape.recorded) throw std::logic_error("backward through unrecorded node: depth pathway");
  const FeatureGrid reduced = upsample_nearest_backward(upstream, tape.factor);
  dense_backward(refine, tape.refine, reduced.cells);
}

Matrix modulation_mask(const Matrix& depth_cells, const LayerParams& mask_in,
                       const LayerParams& mask_out) {
  return dense_forward(mask_out, dense_forward(mask_in, depth_cells));
}

Gates channel_gates(const Matrix& rgb_cells, const Matrix& depth_cells, const LayerParams& gate_in,
                    const LayerParams& gate_out) {
  if (rgb_cells.cols() != depth_cells.cols()) {
    throw std::invalid_argument("channel_gates: streams must have the same channel count");
  }
  const Eigen::Index c = rgb_cells.cols();
  Matrix pooled(1, 2 * c);
  pooled.leftCols(c) = rgb_cells.colwise().mean();
  pooled.rightCols(c) = depth_cells.colwise().mean();
  const Matrix q = dense_forward(gate_out, dense_forward(gate_in, pooled));
  return {q.leftCols(c), q.rightCols(c)};
}

FusionOutput fuse(const Matrix& rgb_cells, const Matrix& depth_cells, const FusionParams& params) {
  FuseTape tape;
  return fuse(rgb_cells, depth_cells, params, tape);
}

FusionOutput fuse(const Matrix& rgb_cells, const Matrix& depth_cells, const FusionParams& params,
                  FuseTape& tape) {
  if (rgb_cells.rows() != depth_cells.rows() || rgb_cells.cols() != depth_cells.cols()) {
    throw std::invalid_argument("fuse: RGB and depth grids must have identical shape");
  }
  const Eigen::Index c = rgb_cells.cols();
  tape.rgb = rgb_cells;
  tape.depth = depth_cells;
  tape.mask = dense_forward(params.mask_out, dense_forward(params.mask_in, depth_cells, tape.mask_in),
                            tape.mask_out);
  const Matrix modulated = tape.mask.cwiseProduct(rgb_cells);

  Matrix pooled(1, 2 * c);
  pooled.leftCols(c) = modulated.colwise().mean();
  pooled.rightCols(c) = depth_cells.colwise().mean();
  const Matrix q = dense_forward(params.gate_out, dense_forward(params.gate_in, pooled, tape.gate_in),
                                 tape.gate_out);
  tape.gates = {q.leftCols(c), q.rightCols(c)};

  Matrix gated(rgb_cells.rows(), 2 * c);
  gated.leftCols(c) = modulated.array().rowwise() * tape.gates.rgb.array();
  gated.rightCols(c) = depth_cells.array().rowwise() * tape.gates.depth.array();
  tape.gated_rgb_in = modulated;

  FusionOutput out;
  out.fused = dense_forward(params.projection, gated, tape.projection);
  out.mask = tape.mask;
  out.gates = tape.gates;
  tape.recorded = true;
  return out;
}

FuseGrads fuse_backward(FusionParams& params, const FuseTape& tape, const Matrix& upstream) {
  if (!tape.recorded) throw std::logic_error("backward through unrecorded node: fuse");
  const Eigen::Index c = tape.rgb.cols();
  const auto cells = static_cast<double>(tape.rgb.rows());
  const Matrix dgated = dense_backward(params.projection, tape.projection, upstream);
  const Matrix& modulated = tape.gated_rgb_in;

  Matrix dq(1, 2 * c);
  dq.leftCols(c) = dgated.leftCols(c).cwiseProduct(modulated).colwise().sum();
  dq.rightCols(c) = dgated.rightCols(c).cwiseProduct(tape.depth).colwise().sum();
  Matrix dmodulated = dgated.leftCols(c).array().rowwise() * tape.gates.rgb.array();
  Matrix ddepth = dgated.rightCols(c).array().rowwise() * tape.gates.depth.array();

  const Matrix dpooled =
      dense_backward(params.gate_in, tape.gate_in, dense_backward(params.gate_out, tape.gate_out, dq));
  dmodulated.rowwise() += dpooled.leftCols(c).row(0) / cells;
  ddepth.rowwise() += dpooled.rightCols(c).row(0) / cells;

  FuseGrads g;
  g.rgb = dmodulated.cwiseProduct(tape.mask);
  const Matrix dmask = dmodulated.cwiseProduct(tape.rgb);
  ddepth += dense_backward(params.mask_in, tape.mask_in,
                           dense_backward(params.mask_out, tape.mask_out, dmask));
  g.depth = std::move(ddepth);
  return g;
}

// ---------------------------------------------------------------------------

Matrix fuse_multiscale(const FeatureGrid& rgb, const FeatureGrid& depth, const FusionParams& params,
                       int levels, MultiScaleTape* tape) {
  if (rgb.height != depth.height || rgb.width != depth.width) {
    throw std::invalid_argument("fuse_multiscale: grid size mismatch");
  }
  if (levels <= 0) throw std::invalid_argument("fuse_multiscale: levels must be positive");
  MultiScaleTape local;
  MultiScaleTape& t = tape ? *tape : local;
  t.levels.assign(static_cast<std::size_t>(levels), FuseTape{});
  t.height = rgb.height;
  t.width = rgb.width;
  Matrix total;
  for (int l = 0; l < levels; ++l) {
    const int factor = 1 << l;
    const FeatureGrid r = average_pool(rgb, factor);
    const FeatureGrid d = average_pool(depth, factor);
    FusionOutput out = fuse(r.cells, d.cells, params, t.levels[static_cast<std::size_t>(l)]);
    const FeatureGrid up = upsample_nearest(FeatureGrid(r.height, r.width, std::move(out.fused)), factor);
    if (l == 0) {
      total = up.cells;
    } else {
      total += up.cells;
    }
  }
  t.recorded = true;
  return total;
}

Matrix fuse_multiscale_backward(FusionParams& params, const MultiScaleTape& tape,
                                const Matrix& upstream) {
  if (!tape.recorded) throw std::logic_error("backward through unrecorded node: fuse_multiscale");
  Matrix ddepth = Matrix::Zero(upstream.rows(), upstream.cols());
  const FeatureGrid up(tape.height, tape.width, upstream);
  for (std::size_t l = 0; l < tape.levels.size(); ++l) {
    const int factor = 1 << l;
    const FeatureGrid coarse = upsample_nearest_backward(up, factor);
    const FuseGrads g = fuse_backward(params, tape.levels[l], coarse.cells);
    const FeatureGrid dd(coarse.height, coarse.width, g.depth);
    ddepth += average_pool_backward(dd, factor).cells;
  }
  return ddepth;
}

}  // namespace depthmesh
