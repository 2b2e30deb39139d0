#pragma once

// Deterministic synthetic radar scenes with exact ground truth: box-shaped
// instances and a planar static background observed by a forward-looking
// radar on a moving ego vehicle, plus a virtual camera that renders box
// silhouettes as tracked instance masks.

#include <cstdint>
#include <string>
#include <vector>

#include "iterflow/geom.hpp"
#include "iterflow/labeling.hpp"

namespace iterflow::synth {

struct InstanceSpec {
  geom::Category category = geom::Category::kCar;
  double length = 4.5;
  double width = 1.8;
  double height = 1.5;
  geom::Vec3 center = geom::Vec3(10.0, 0.0, -0.25);  // box center at t0, source sensor frame
  double yaw = 0.0;
  geom::Vec3 velocity = geom::Vec3::Zero();  // m/s
  double yaw_rate = 0.0;                      // rad/s
  std::size_t scatterers = 40;
};

geom::Calibration default_camera();

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<InstanceSpec> instances;
  geom::Vec3 ego_velocity = geom::Vec3::Zero();  // m/s, sensor frame
  double ego_yaw_rate = 0.0;
  double ground_z = -1.0;
  double min_range = 2.0;
  double max_range = 40.0;
  std::size_t background_points = 300;
  std::size_t clutter_points = 10;
  double detection_probability = 0.8;
  double position_noise = 0.0;  // sigma, m
  double rrv_noise = 0.0;       // sigma, m/s
  std::size_t points_per_frame = 0;  // 0 keeps every detection
  double dt = 0.1;                   // s
  int mask_dilation = 0;             // pixels; negative erodes
  geom::Calibration camera = default_camera();

  // Throws std::invalid_argument on non-finite kinematics, dt <= 0,
  // overlapping instance footprints or a scene that can produce no points.
  void validate() const;
};

struct FramePair {
  geom::RadarFrame source;
  geom::RadarFrame target;
  geom::RigidTransform ego;  // source sensor coordinates -> target sensor coordinates
  geom::Vec3 ego_velocity = geom::Vec3::Zero();  // odometry, m/s in the source sensor frame
  double dt = 0.1;
  geom::Calibration calib;
  labeling::InstanceMaskSet source_masks;
  labeling::InstanceMaskSet target_masks;
  // Generator noise levels (zero for noise-free or imported data).
  double position_noise = 0.0;
  double rrv_noise = 0.0;
  std::uint64_t seed = 0;
};

FramePair generate_pair(const SceneSpec& spec);

struct RandomSceneOptions {
  std::size_t min_instances = 1;
  std::size_t max_instances = 3;
  double moving_probability = 1.0;
  double max_ego_speed = 6.0;
  double max_ego_yaw_rate = 0.1;
  double position_noise = 0.02;
  double rrv_noise = 0.02;
  std::size_t background_points = 200;
  std::size_t clutter_points = 10;
  double detection_probability = 0.8;
  std::size_t points_per_frame = 0;
  double dt = 0.1;
  int mask_dilation = 0;
};

SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& options = {});

struct Issue {
  std::string check;
  std::string frame;
  std::size_t index = 0;
  std::string detail;
};

struct Diagnostics {
  std::vector<Issue> issues;
  std::size_t points_checked = 0;

  bool ok() const { return issues.empty(); }
  std::string summary() const;
};

// Internal-consistency checks: instance points project into their own mask,
// background points have |ARV| ~ 0 and rigid ego flow. Tolerances widen to
// 3 sigma of the recorded noise levels.
Diagnostics verify_pair(const FramePair& pair);

}  // namespace iterflow::synth
