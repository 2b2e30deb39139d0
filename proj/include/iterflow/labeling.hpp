#pragma once

// Weak labels: per-point instance ids from tracked 2D masks, the static point
// set from ego-compensated radial velocity, and rigid box-derived flow.

#include <cstdint>
#include <vector>

#include "iterflow/geom.hpp"

namespace iterflow::labeling {

struct InstanceMask {
  std::int32_t track_id = 0;
  std::vector<std::uint8_t> bitmap;  // row-major, width * height, nonzero = inside

  std::size_t area() const;
};

struct InstanceMaskSet {
  int width = 0;
  int height = 0;
  std::vector<InstanceMask> masks;

  // Track ids must be >= 1 and unique; bitmaps must match the image size.
  void validate() const;
  bool inside(std::size_t mask, int x, int y) const {
    return masks[mask].bitmap[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                              static_cast<std::size_t>(x)] != 0;
  }
};

// Track id per point (0 = background). Overlapping masks resolve to the one
// with the smaller area, then the smaller track id.
std::vector<std::int32_t> assign_instance_labels(const geom::RadarFrame& frame, const InstanceMaskSet& masks,
                                                 const geom::Calibration& calib);

struct InstanceAssignment {
  std::size_t num_instances = 0;           // G
  std::vector<std::int32_t> track_ids;     // instance g (1-based) -> track_ids[g - 1]
  std::vector<std::int32_t> source_labels;  // per source point, 0..G
  std::vector<std::int32_t> target_labels;  // per target point, 0..G
  std::vector<std::vector<std::int32_t>> source_sets;  // S_t^g at [g - 1]
  std::vector<std::vector<std::int32_t>> target_sets;  // S_{t+1}^g at [g - 1]
};

// Maps the shared track-id namespace onto dense instance indices 1..G (in
// increasing track-id order) and groups points per instance on both sides.
InstanceAssignment build_instance_sets(const std::vector<std::int32_t>& source_track_labels,
                                       const std::vector<std::int32_t>& target_track_labels);

// ARV_i = RRV_i + v_ego · r̂_i, r̂_i pointing from the sensor to the point.
std::vector<double> compensate_rrv(const geom::RadarFrame& frame, const geom::Vec3& ego_velocity,
                                   const geom::Vec3& sensor_origin = geom::Vec3::Zero());

// {i : |ARV_i| < threshold}
std::vector<std::int32_t> extract_static_set(const std::vector<double>& arv, double threshold);

struct TrackedBox {
  std::int32_t track_id = 0;
  geom::Vec3 center = geom::Vec3::Zero();
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
  double yaw = 0.0;
  double timestamp = 0.0;

  geom::RigidTransform pose() const { return geom::RigidTransform::from_yaw(yaw, center); }
  bool contains(const geom::Vec3& p, double margin = 1e-9) const;
};

enum class FlowUnit { kDisplacement, kVelocity };

// Flow of points inside box_t0 under the rigid motion carrying box_t0 onto
// box_t1. Velocity mode divides by t1 - t0.
geom::PointCloud rigid_flow_from_boxes(const geom::PointCloud& points_in_box, const TrackedBox& box_t0,
                                       const TrackedBox& box_t1, FlowUnit mode = FlowUnit::kDisplacement);

}  // namespace iterflow::labeling
