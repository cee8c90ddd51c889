// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace depthmesh {

namespace {

constexpr double kDepthReference = 4.0;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

bool is_torso(const std::string& name) {
  return name.rfind("spine", 0) == 0 || name.rfind("neck", 0) == 0;
}

struct Sinusoid {
  double amplitude = 0.0;
  double frequency = 0.0;
  double phase = 0.0;
};

// Offset plus up to three sinusoids whose summed amplitude stays within `limit`.
struct Trajectory {
  double offset = 0.0;
  std::vector<Sinusoid> terms;

  double at(double seconds) const {
    double v = offset;
    for (const auto& s : terms) {
      v += s.amplitude * std::sin(2.0 * std::numbers::pi * s.frequency * seconds + s.phase);
    }
    return v;
  }
};

Trajectory random_trajectory(Rng& rng, double limit, double band) {
  Trajectory tr;
  tr.offset = uniform(rng, -0.5, 0.5) * limit;
  const int count = std::uniform_int_distribution<int>(1, 3)(rng);
  const double budget = limit - std::abs(tr.offset);
  for (int k = 0; k < count; ++k) {
    Sinusoid s;
    s.amplitude = uniform(rng, 0.0, budget / count);
    s.frequency = uniform(rng, 0.0, 1.0) * band;
    s.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    tr.terms.push_back(s);
  }
  return tr;
}

Vec3 clamp_norm(const Vec3& v, double limit) {
  const double n = v.norm();
  return n > limit ? Vec3(v * (limit / n)) : v;
}

Vec3 perpendicular(const Vec3& axis) {
  Vec3 p = axis.cross(Vec3::UnitZ());
  if (p.norm() < 1e-6) p = axis.cross(Vec3::UnitX());
  return p.normalized();
}

double bump(double dx, double dy, double sigma) {
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

// Continuous grid coordinates of a pixel, cell centers at integers.
Eigen::Vector2d grid_coords(const Eigen::Vector2d& pixel, const CameraModel& cam, int cells) {
  return {pixel.x() / (static_cast<double>(cam.image_width) / cells) - 0.5,
          pixel.y() / (static_cast<double>(cam.image_height) / cells) - 0.5};
}

std::pair<int, int> grid_cell(const Eigen::Vector2d& g, int cells) {
  const int x = std::clamp(static_cast<int>(std::lround(g.x())), 0, cells - 1);
  const int y = std::clamp(static_cast<int>(std::lround(g.y())), 0, cells - 1);
  return {y, x};
}

}  // namespace

void CameraModel::validate() const {
  if (!(focal > 0.0)) throw std::invalid_argument("camera focal length must be positive");
  if (!(fps > 0.0)) throw std::invalid_argument("camera fps must be positive");
  if (image_width <= 0 || image_height <= 0) throw std::invalid_argument("camera image size must be positive");
}

Eigen::Vector2d CameraModel::project(const Vec3& p) const {
  if (!(p.z() > 1e-9)) throw std::domain_error("point at or behind the camera plane");
  return {focal * p.x() / p.z() + cx, focal * p.y() / p.z() + cy};
}

Eigen::Vector2d CameraModel::normalize(const Eigen::Vector2d& pixel) const {
  return {(pixel.x() - cx) / (0.5 * image_width), (pixel.y() - cy) / (0.5 * image_height)};
}

void SynthConfig::validate() const {
  camera.validate();
  if (frames < 1) throw std::invalid_argument("synth: frames must be >= 1");
  if (grid < 1 || depth_stride < 1 || grid % depth_stride != 0) {
    throw std::invalid_argument("synth: depth stride must divide the grid");
  }
  if (noise_level < 0.0 || lifter_noise < 0.0) throw std::invalid_argument("synth: noise must be >= 0");
  if (occlusion_rate < 0.0 || occlusion_rate > 1.0) {
    throw std::invalid_argument("synth: occlusion rate must lie in [0, 1]");
  }
  if (confidence_floor < 0.0 || confidence_floor >= 1.0) {
    throw std::invalid_argument("synth: confidence floor must lie in [0, 1)");
  }
  if (motion.depth_min <= 0.0 || motion.depth_max < motion.depth_min) {
    throw std::invalid_argument("synth: bad subject depth range");
  }
}

GroundTruthMotion gen_motion(const BodyTemplate& tmpl, int frames, std::uint64_t seed,
                             const MotionConfig& config, double fps) {
  if (frames < 1) throw std::invalid_argument("gen_motion: frames must be >= 1");
  if (!(fps > 0.0)) throw std::invalid_argument("gen_motion: fps must be positive");
  Rng rng(seed);
  const int joints = tmpl.joint_count();
  const int root = tmpl.tree.root();
  const double band = std::max(config.smoothness_band, 0.0);

  std::vector<std::array<Trajectory, 3>> tracks(static_cast<std::size_t>(joints));
  std::vector<double> limits(static_cast<std::size_t>(joints), 0.0);
  for (int j = 0; j < joints; ++j) {
    const auto u = static_cast<std::size_t>(j);
    if (j == root) {
      tracks[u][0] = random_trajectory(rng, config.root_tilt, band);
      tracks[u][1] = random_trajectory(rng, config.root_yaw, band);
      tracks[u][2] = random_trajectory(rng, config.root_tilt, band);
      limits[u] = std::hypot(config.root_yaw, config.root_tilt, config.root_tilt);
    } else if (!tmpl.tree.children(j).empty()) {
      const double limit = is_torso(tmpl.joint_names[u]) ? config.torso_limit : config.limb_limit;
      for (auto& tr : tracks[u]) tr = random_trajectory(rng, limit, band);
      limits[u] = limit;
    }
  }
  std::array<Trajectory, 3> sway;
  for (auto& tr : sway) tr = random_trajectory(rng, config.sway, band);
  const Vec3 base(uniform(rng, -0.3, 0.3), uniform(rng, -0.15, 0.05),
                  uniform(rng, config.depth_min, config.depth_max));

  GroundTruthMotion out;
  out.shape = Vector(tmpl.shape_dims());
  for (Eigen::Index k = 0; k < out.shape.size(); ++k) {
    out.shape(k) = uniform(rng, -config.shape_range, config.shape_range);
  }
  out.poses.reserve(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    const double seconds = t / fps;
    PoseParams pose = PoseParams::identity(joints);
    for (int j = 0; j < joints; ++j) {
      const auto u = static_cast<std::size_t>(j);
      if (limits[u] == 0.0) continue;
      const Vec3 v(tracks[u][0].at(seconds), tracks[u][1].at(seconds), tracks[u][2].at(seconds));
      pose.rotations[u] = quat_from_rotation_vector(clamp_norm(v, limits[u]));
    }
    pose.translation = base + Vec3(sway[0].at(seconds), sway[1].at(seconds), sway[2].at(seconds));
    out.poses.push_back(pose);
  }
  return out;
}

// ---------------------------------------------------------------------------

Vector SequenceSample::mean_confidence() const {
  Vector m(frames());
  for (int t = 0; t < frames(); ++t) {
    const auto u = static_cast<std::size_t>(t);
    const double area = person_mask[u].sum();
    m(t) = area > 0.0 ? person_mask[u].dot(confidence[u].values) / area
                      : confidence[u].values.mean();
  }
  return m;
}

MotionTokens SequenceSample::motion() const {
  MotionTokens tokens;
  tokens.lifted = lifted;
  tokens.keypoints = keypoints;
  return tokens;
}

double decode_depth(const FeatureGrid& depth, int joint, int y, int x) {
  const int idx = depth.index(y, x);
  const double weight = depth.cells(idx, 2 * joint + 1);
  if (std::abs(weight) < 1e-300) throw std::domain_error("decode_depth: empty cell");
  return kDepthReference + depth.cells(idx, 2 * joint) / weight;
}

void render_features(const BodyTemplate& tmpl, const SynthConfig& config,
                     const std::optional<OcclusionSpec>& occlusion, std::uint64_t seed,
                     SequenceSample& sample) {
  config.validate();
  if (config.channels < 2 * tmpl.joint_count()) {
    throw std::invalid_argument("render_features: need at least two channels per joint");
  }
  const int frames = sample.frames();
  const int joints = tmpl.joint_count();
  const int root = tmpl.tree.root();
  const int g = config.grid;
  const int dg = config.grid / config.depth_stride;
  const CameraModel& cam = config.camera;
  Rng rng(seed);

  // Twist marker offsets in each joint's rest frame.
  std::vector<Vec3> marker_rest(static_cast<std::size_t>(joints));
  for (int j = 0; j < joints; ++j) {
    const auto& kids = tmpl.tree.children(j);
    Vec3 axis = Vec3::UnitY();
    if (!kids.empty()) {
      axis = (tmpl.rest_joints.row(kids.front()) - tmpl.rest_joints.row(j)).transpose().normalized();
    } else if (j != root) {
      axis = (tmpl.rest_joints.row(j) - tmpl.rest_joints.row(tmpl.tree.parent(j))).transpose().normalized();
    }
    marker_rest[static_cast<std::size_t>(j)] = config.marker_offset * perpendicular(axis);
  }
  const ShapedRest rest = apply_shape(tmpl, sample.gt_shape);

  sample.grid = g;
  sample.depth_grid = dg;
  sample.fps = cam.fps;
  sample.rgb.assign(static_cast<std::size_t>(frames), FeatureGrid::zeros(g, g, config.channels));
  sample.depth.assign(static_cast<std::size_t>(frames), FeatureGrid::zeros(dg, dg, config.channels));
  sample.confidence.assign(static_cast<std::size_t>(frames), ConfidenceMap{g, g, Vector::Ones(g * g)});
  sample.person_mask.assign(static_cast<std::size_t>(frames), Vector::Zero(g * g));
  sample.keypoints.assign(static_cast<std::size_t>(frames), Keypoints::Zero(joints, 2));
  sample.lifted.assign(static_cast<std::size_t>(frames), Points::Zero(joints, 3));
  sample.occluded.assign(static_cast<std::size_t>(frames), 0);

  for (int t = 0; t < frames; ++t) {
    const auto u = static_cast<std::size_t>(t);
    const Points& world = sample.gt_joints[u];
    const FkResult fk = forward_kinematics(rest.joints, tmpl.tree, sample.gt_poses[u]);
    const bool occ_frame = occlusion && occlusion->active(t);
    sample.occluded[u] = occ_frame ? 1 : 0;

    std::vector<Eigen::Vector2d> pixel(static_cast<std::size_t>(joints));
    std::vector<Eigen::Vector2d> cell(static_cast<std::size_t>(joints));
    std::vector<Eigen::Vector2d> marker_cell(static_cast<std::size_t>(joints));
    std::vector<double> gain(static_cast<std::size_t>(joints), 1.0);
    for (int j = 0; j < joints; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      const Vec3 p = world.row(j).transpose();
      pixel[uj] = cam.project(p);
      cell[uj] = grid_coords(pixel[uj], cam, g);
      const Vec3 marker = p + fk.global_rotations[uj] * marker_rest[uj];
      marker_cell[uj] = grid_coords(cam.project(marker), cam, g);
      if (occ_frame) {
        const auto [cy, cx] = grid_cell(cell[uj], g);
        if (occlusion->contains(cy, cx)) gain[uj] = config.occlusion_noise_gain;
      }
    }

    FeatureGrid& rgb = sample.rgb[u];
    Vector& mask = sample.person_mask[u];
    for (int y = 0; y < g; ++y) {
      for (int x = 0; x < g; ++x) {
        const int idx = rgb.index(y, x);
        for (int j = 0; j < joints; ++j) {
          const auto uj = static_cast<std::size_t>(j);
          const double dx = x - cell[uj].x();
          const double dy = y - cell[uj].y();
          rgb.cells(idx, 2 * j) = bump(dx, dy, config.bump_sigma);
          rgb.cells(idx, 2 * j + 1) =
              bump(x - marker_cell[uj].x(), y - marker_cell[uj].y(), config.bump_sigma);
          if (dx * dx + dy * dy <= config.mask_radius * config.mask_radius) mask(idx) = 1.0;
        }
        for (int c = 0; c < config.channels; ++c) rgb.cells(idx, c) += config.noise_level * gaussian(rng);
      }
    }

    FeatureGrid& depth = sample.depth[u];
    Vector coarse_error(dg * dg);
    for (int y = 0; y < dg; ++y) {
      for (int x = 0; x < dg; ++x) {
        const int idx = depth.index(y, x);
        for (int j = 0; j < joints; ++j) {
          const Eigen::Vector2d dc = grid_coords(pixel[static_cast<std::size_t>(j)], cam, dg);
          const double weight = bump(x - dc.x(), y - dc.y(), config.bump_sigma);
          depth.cells(idx, 2 * j) = weight * (world(j, 2) - kDepthReference);
          depth.cells(idx, 2 * j + 1) = weight;
        }
        const double e = config.noise_level * std::abs(gaussian(rng));
        coarse_error(idx) = e;
        for (int c = 0; c < config.channels; ++c) depth.cells(idx, c) += e * gaussian(rng);
      }
    }

    ConfidenceMap& conf = sample.confidence[u];
    for (int y = 0; y < g; ++y) {
      for (int x = 0; x < g; ++x) {
        const int coarse = (y / config.depth_stride) * dg + x / config.depth_stride;
        conf.values(y * g + x) = std::exp(-coarse_error(coarse));
      }
    }

    if (occ_frame) {
      for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
          if (!occlusion->contains(y, x)) continue;
          const int idx = y * g + x;
          conf.values(idx) = std::min(conf.values(idx), occlusion->confidence_floor);
          rgb.cells.row(idx).setZero();
          depth.cells.row((y / config.depth_stride) * dg + x / config.depth_stride).setZero();
        }
      }
    }

    const double kp_sigma = config.noise_level * config.keypoint_noise_px;
    for (int j = 0; j < joints; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      Eigen::Vector2d noisy = pixel[uj];
      noisy.x() += kp_sigma * gain[uj] * gaussian(rng);
      noisy.y() += kp_sigma * gain[uj] * gaussian(rng);
      sample.keypoints[u].row(j) = cam.normalize(noisy).transpose();
    }
    for (int j = 0; j < joints; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      Vec3 noise(gaussian(rng), gaussian(rng), gaussian(rng));
      if (j == root) continue;
      sample.lifted[u].row(j) =
          (world.row(j) - world.row(root)) + config.lifter_noise * gain[uj] * noise.transpose();
    }
  }
}

SequenceSample make_sample(const BodyTemplate& tmpl, const SynthConfig& config, std::uint64_t seed,
                           std::string id) {
  config.validate();
  SequenceSample s;
  s.id = std::move(id);
  s.seed = seed;
  const GroundTruthMotion motion =
      gen_motion(tmpl, config.frames, derive_seed(seed, "motion"), config.motion, config.camera.fps);
  s.gt_poses = motion.poses;
  s.gt_shape = motion.shape;
  for (const auto& pose : motion.poses) {
    std::vector<Quat4> rotations;
    rotations.reserve(pose.rotations.size());
    for (const auto& q : pose.rotations) rotations.push_back(q.coeffs());
    const BodyOutput body = pose_body(tmpl, motion.shape, rotations, pose.translation);
    s.gt_joints.push_back(body.joints);
    s.gt_vertices.push_back(body.vertices);
  }

  std::optional<OcclusionSpec> occlusion;
  Rng rng(derive_seed(seed, "occlusion"));
  const int count = std::binomial_distribution<int>(config.frames, config.occlusion_rate)(rng);
  const int first = std::uniform_int_distribution<int>(0, config.frames - std::max(count, 1))(rng);
  if (count > 0) {
    OcclusionSpec spec;
    spec.first_frame = first;
    spec.last_frame = first + count - 1;
    spec.confidence_floor = config.confidence_floor;
    const int g = config.grid;
    const int h = g / 2;
    // Candidate halves: top, bottom, left, right. Pick the one covering the most joints.
    const std::array<std::array<int, 4>, 4> halves{{{0, 0, h, g}, {h, 0, g, g}, {0, 0, g, h}, {0, h, g, g}}};
    int best = 0;
    int best_count = -1;
    for (int k = 0; k < 4; ++k) {
      int covered = 0;
      for (Eigen::Index j = 0; j < s.gt_joints[static_cast<std::size_t>(first)].rows(); ++j) {
        const Vec3 p = s.gt_joints[static_cast<std::size_t>(first)].row(j).transpose();
        const auto [cy, cx] = grid_cell(grid_coords(config.camera.project(p), config.camera, g), g);
        const auto& r = halves[static_cast<std::size_t>(k)];
        if (cy >= r[0] && cy < r[2] && cx >= r[1] && cx < r[3]) ++covered;
      }
      if (covered > best_count) {
        best_count = covered;
        best = k;
      }
    }
    const auto& r = halves[static_cast<std::size_t>(best)];
    spec.y0 = r[0];
    spec.x0 = r[1];
    spec.y1 = r[2];
    spec.x1 = r[3];
    occlusion = spec;
  }
  render_features(tmpl, config, occlusion, derive_seed(seed, "render"), s);
  return s;
}

std::vector<SequenceSample> make_split(const BodyTemplate& tmpl, const SynthConfig& config,
                                       const std::string& split, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_split: count must be >= 1");
  std::vector<SequenceSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, split, static_cast<std::uint64_t>(i));
    out.push_back(make_sample(tmpl, config, s, split + "-" + std::to_string(i)));
  }
  return out;
}

Dataset make_dataset(const BodyTemplate& tmpl, const SynthConfig& config, int train_count,
                     int eval_count, std::uint64_t seed) {
  Dataset d;
  d.train = make_split(tmpl, config, "train", train_count, seed);
  d.eval = make_split(tmpl, config, "eval", eval_count, seed);
  return d;
}

// ---------------------------------------------------------------------------

namespace {

std::string indexed(const std::string& name, std::size_t t) {
  return name + "[" + std::to_string(t) + "]";
}

Matrix as_matrix(const Vector& v) { return Matrix(v.transpose()); }

}  // namespace

TextContainer sample_to_container(const SequenceSample& s) {
  TextContainer c;
  c.kind = "sequence-sample";
  c.set_meta("id", s.id);
  c.set_meta("seed", std::to_string(s.seed));
  c.set_meta("frames", std::to_string(s.frames()));
  c.set_meta("grid", std::to_string(s.grid));
  c.set_meta("depth_grid", std::to_string(s.depth_grid));
  std::ostringstream fps;
  fps.precision(17);
  fps << s.fps;
  c.set_meta("fps", fps.str());
  c.add("gt_shape", as_matrix(s.gt_shape));
  Matrix occluded(1, s.frames());
  for (int t = 0; t < s.frames(); ++t) occluded(0, t) = s.occluded[static_cast<std::size_t>(t)];
  c.add("occluded", occluded);
  for (std::size_t t = 0; t < s.gt_joints.size(); ++t) {
    Matrix pose(static_cast<Eigen::Index>(s.gt_poses[t].rotations.size()) + 1, 4);
    for (std::size_t j = 0; j < s.gt_poses[t].rotations.size(); ++j) {
      pose.row(static_cast<Eigen::Index>(j)) = s.gt_poses[t].rotations[j].coeffs().transpose();
    }
    pose.row(pose.rows() - 1) << 0.0, s.gt_poses[t].translation.transpose();
    c.add(indexed("gt_pose", t), pose);
    c.add(indexed("gt_joints", t), s.gt_joints[t]);
    c.add(indexed("gt_vertices", t), s.gt_vertices[t]);
    c.add(indexed("rgb", t), s.rgb[t].cells);
    c.add(indexed("depth", t), s.depth[t].cells);
    c.add(indexed("confidence", t), as_matrix(s.confidence[t].values));
    c.add(indexed("person_mask", t), as_matrix(s.person_mask[t]));
    c.add(indexed("keypoints", t), s.keypoints[t]);
    c.add(indexed("lifted", t), s.lifted[t]);
  }
  return c;
}

SequenceSample sample_from_container(const TextContainer& c) {
  if (c.kind != "sequence-sample") throw std::runtime_error("not a sequence-sample container");
  SequenceSample s;
  s.id = c.meta_value("id");
  s.seed = std::stoull(c.meta_value("seed"));
  const int frames = std::stoi(c.meta_value("frames"));
  s.grid = std::stoi(c.meta_value("grid"));
  s.depth_grid = std::stoi(c.meta_value("depth_grid"));
  s.fps = std::stod(c.meta_value("fps"));
  s.gt_shape = c.matrix("gt_shape").row(0).transpose();
  const Matrix& occ = c.matrix("occluded");
  for (int t = 0; t < frames; ++t) s.occluded.push_back(static_cast<int>(occ(0, t)));
  for (int ti = 0; ti < frames; ++ti) {
    const auto t = static_cast<std::size_t>(ti);
    const Matrix& pose = c.matrix(indexed("gt_pose", t));
    PoseParams p;
    for (Eigen::Index j = 0; j + 1 < pose.rows(); ++j) {
      p.rotations.push_back(UnitQuaternion{pose(j, 0), pose(j, 1), pose(j, 2), pose(j, 3)});
    }
    p.translation = pose.row(pose.rows() - 1).tail<3>().transpose();
    s.gt_poses.push_back(p);
    s.gt_joints.emplace_back(c.matrix(indexed("gt_joints", t)));
    s.gt_vertices.emplace_back(c.matrix(indexed("gt_vertices", t)));
    s.rgb.emplace_back(s.grid, s.grid, c.matrix(indexed("rgb", t)));
    s.depth.emplace_back(s.depth_grid, s.depth_grid, c.matrix(indexed("depth", t)));
    s.confidence.push_back(ConfidenceMap{s.grid, s.grid, c.matrix(indexed("confidence", t)).row(0).transpose()});
    s.person_mask.emplace_back(c.matrix(indexed("person_mask", t)).row(0).transpose());
    s.keypoints.emplace_back(c.matrix(indexed("keypoints", t)));
    s.lifted.emplace_back(c.matrix(indexed("lifted", t)));
  }
  return s;
}

std::string dataset_hash(const std::vector<SequenceSample>& samples) {
  std::ostringstream os;
  for (const auto& s : samples) write_container(os, sample_to_container(s));
  return sha256_hex(os.str());
}

}  // namespace depthmesh
