// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/body_model.hpp"
#include "depthmesh/dmaps.hpp"
#include "depthmesh/fusion.hpp"
#include "depthmesh/io.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace depthmesh {

/// Pinhole camera looking along +z with image y pointing down.
struct CameraModel {
  double focal = 500.0;
  double cx = 128.0;
  double cy = 128.0;
  int image_width = 256;
  int image_height = 256;
  double fps = 30.0;

  void validate() const;
  /// Pixel coordinates. Throws std::domain_error for points at or behind the camera plane.
  Eigen::Vector2d project(const Vec3& point) const;
  /// Pixel coordinates mapped to [-1, 1] across the image.
  Eigen::Vector2d normalize(const Eigen::Vector2d& pixel) const;
};

/// Grid rectangle [y0, y1) x [x0, x1) on the feature grid, active for frames [first, last].
struct OcclusionSpec {
  int first_frame = 0;
  int last_frame = -1;
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  double confidence_floor = 0.05;

  bool active(int frame) const { return frame >= first_frame && frame <= last_frame; }
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

struct MotionConfig {
  double smoothness_band = 0.4;  // Hz
  double limb_limit = 1.2;       // rad
  double torso_limit = 0.35;     // rad
  double root_yaw = 0.7;         // rad
  double root_tilt = 0.15;       // rad
  double shape_range = 3.0;
  double depth_min = 3.0;
  double depth_max = 5.0;
  double sway = 0.03;            // m
};

struct SynthConfig {
  int frames = 16;
  int grid = 8;
  int channels = 32;
  int depth_stride = 2;
  CameraModel camera;
  MotionConfig motion;
  double noise_level = 0.1;
  double occlusion_rate = 0.2;  // expected fraction of occluded frames
  double confidence_floor = 0.05;
  double occlusion_noise_gain = 3.0;
  double lifter_noise = 0.01;    // m
  double keypoint_noise_px = 20.0;  // multiplied by noise_level
  double bump_sigma = 0.8;       // cells
  double mask_radius = 1.5;      // cells
  double marker_offset = 0.1;    // m

  void validate() const;
};

struct GroundTruthMotion {
  std::vector<PoseParams> poses;
  Vector shape;
};

/// Per-joint rotation-vector trajectories built from up to 3 sinusoids below the band plus a static
/// offset, each clamped to the joint's limit; leaf joints stay at identity.
GroundTruthMotion gen_motion(const BodyTemplate& tmpl, int frames, std::uint64_t seed,
                             const MotionConfig& config, double fps = 30.0);

struct SequenceSample {
  std::string id;
  std::uint64_t seed = 0;
  int grid = 0;
  int depth_grid = 0;
  double fps = 30.0;
  std::vector<PoseParams> gt_poses;
  Vector gt_shape;
  std::vector<Points> gt_joints;
  std::vector<Points> gt_vertices;
  std::vector<FeatureGrid> rgb;       // grid x grid
  std::vector<FeatureGrid> depth;     // depth_grid x depth_grid
  std::vector<ConfidenceMap> confidence;  // grid x grid
  std::vector<Vector> person_mask;    // grid x grid, 0 or 1
  std::vector<Keypoints> keypoints;
  std::vector<Points> lifted;
  std::vector<int> occluded;          // 0 or 1 per frame

  int frames() const { return static_cast<int>(gt_joints.size()); }
  /// Mean confidence over the person mask per frame.
  Vector mean_confidence() const;
  MotionTokens motion() const;
};

/// Observation fields. Per-joint channel groups:
///   rgb   channel 2j: Gaussian bump at joint j; channel 2j+1: bump at joint j's twist marker.
///   depth channel 2j: G_j (z_j - 4), channel 2j+1: G_j, with G_j a bump on the coarse grid, so the
///         camera depth of joint j decodes as 4 + ch[2j] / ch[2j+1].
void render_features(const BodyTemplate& tmpl, const SynthConfig& config,
                     const std::optional<OcclusionSpec>& occlusion, std::uint64_t seed,
                     SequenceSample& sample);

/// Decodes joint depth from a depth grid cell.
double decode_depth(const FeatureGrid& depth, int joint, int y, int x);

/// Ground truth plus observations for one seed; occlusion sampled from the configured rate.
SequenceSample make_sample(const BodyTemplate& tmpl, const SynthConfig& config, std::uint64_t seed,
                           std::string id);

/// Streams `count` samples with seeds derived from (seed, split, index).
std::vector<SequenceSample> make_split(const BodyTemplate& tmpl, const SynthConfig& config,
                                       const std::string& split, int count, std::uint64_t seed);

struct Dataset {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> eval;
};

Dataset make_dataset(const BodyTemplate& tmpl, const SynthConfig& config, int train_count,
                     int eval_count, std::uint64_t seed);

TextContainer sample_to_container(const SequenceSample& sample);
SequenceSample sample_from_container(const TextContainer& container);

/// SHA-256 over the serialized samples.
std::string dataset_hash(const std::vector<SequenceSample>& samples);

}  // namespace depthmesh
