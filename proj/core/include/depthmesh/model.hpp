// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/body_model.hpp"
#include "depthmesh/dmaps.hpp"
#include "depthmesh/fusion.hpp"
#include "depthmesh/io.hpp"
#include "depthmesh/losses_metrics.hpp"
#include "depthmesh/modar.hpp"
#include "depthmesh/synth.hpp"

#include <string>
#include <vector>

namespace depthmesh {

/// Which components are active. Disabled components are bypassed entirely.
struct AblationFlags {
  bool rgb_only = false;       // fused features are the RGB grid; depth is never read
  bool mask_fusion = true;     // modulation mask and channel gates (otherwise plain projection)
  bool quality_depth = true;   // depth features scaled by per-cell confidence
  bool dmaps = true;           // analytic + learned initialization (otherwise the regressor)
  bool modar = true;           // temporal refinement of the parameter track
};

struct ModelConfig {
  FusionConfig fusion;
  DmapsConfig dmaps;
  ModarConfig modar;
  int regressor_hidden = 64;
  AblationFlags flags;
  CameraModel camera;

  void validate(const BodyTemplate& tmpl) const;
};

struct ModelParams {
  FusionParams fusion;
  DmapsParams dmaps;
  ModarParams modar;
  LayerParams regressor_in;   // flattened fused grid -> hidden, relu
  LayerParams regressor_out;  // hidden -> 3J + S, zero at init

  void collect(std::vector<Param*>& out);
  /// Fusion (including the depth refinement) and the regressor.
  void collect_phase1(std::vector<Param*>& out);
};

ModelParams make_model_params(const ModelConfig& config, const BodyTemplate& tmpl, int grid,
                              Rng& rng);

TextContainer params_to_container(ModelParams& params);
/// Names and shapes must match exactly.
void params_from_container(ModelParams& params, const TextContainer& container);

struct FrameTape {
  int grid = 0;
  DepthPathwayTape depth_pathway;
  Vector depth_confidence;  // per-cell scale applied to the depth features
  Matrix depth;      // post-quality depth features, cells x C
  Matrix fused;      // cells x C
  MultiScaleTape multiscale;
  DenseTape plain_projection;
  Matrix plain_input;
  BodyTape body;
};

struct ModelTape {
  std::vector<FrameTape> frames;
  DenseTape regressor_in, regressor_out;
  Matrix regressor_raw;                     // T x (3J + S)
  Vector regressor_shape_pre;               // before the clamp
  DmapsTape dmaps;
  ModarTape modar;
  std::vector<std::vector<Quat4>> init_poses;
  Vector init_shape;
  std::vector<FrameFeatures> features;
  bool recorded = false;
};

struct Prediction {
  SequenceState state;             // joints and vertices include the translation estimate
  std::vector<Vec3> translation;
  std::vector<Matrix> pose_gates;  // MoDAR pose gates when active
};

/// Full inference path for one sequence.
Prediction model_forward(const BodyTemplate& tmpl, const ModelConfig& config,
                         const ModelParams& params, const SequenceSample& sample,
                         ModelTape* tape = nullptr);

/// Accumulates parameter gradients given loss gradients with respect to the prediction.
void model_backward(const BodyTemplate& tmpl, const ModelConfig& config, ModelParams& params,
                    const ModelTape& tape, const LossGrads& grads);

/// Ground truth as a sequence state.
SequenceState ground_truth_state(const SequenceSample& sample);

/// Least-squares root translation from root-relative joints and normalized keypoints.
Vec3 estimate_translation(const Points& relative_joints, const Keypoints& keypoints,
                          const CameraModel& camera);

}  // namespace depthmesh
