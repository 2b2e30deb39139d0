#include "iterflow/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace iterflow::labeling {

std::size_t InstanceMask::area() const {
  return static_cast<std::size_t>(std::count_if(bitmap.begin(), bitmap.end(), [](auto b) { return b != 0; }));
}

void InstanceMaskSet::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("InstanceMaskSet: image size must be positive");
  const auto pixels = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::set<std::int32_t> seen;
  for (const auto& m : masks) {
    if (m.track_id < 1) throw std::invalid_argument("InstanceMaskSet: track ids must be >= 1");
    if (!seen.insert(m.track_id).second)
      throw std::invalid_argument("InstanceMaskSet: duplicate track id " + std::to_string(m.track_id));
    if (m.bitmap.size() != pixels)
      throw std::invalid_argument("InstanceMaskSet: mask for track " + std::to_string(m.track_id) +
                                  " does not match the image size");
  }
}

std::vector<std::int32_t> assign_instance_labels(const geom::RadarFrame& frame, const InstanceMaskSet& masks,
                                                 const geom::Calibration& calib) {
  if (masks.width != calib.width || masks.height != calib.height)
    throw std::invalid_argument("assign_instance_labels: mask image " + std::to_string(masks.width) + "x" +
                                std::to_string(masks.height) + " does not match calibration " +
                                std::to_string(calib.width) + "x" + std::to_string(calib.height));
  masks.validate();

  // Foreground-most first: smaller masks win overlaps.
  std::vector<std::size_t> order(masks.masks.size());
  std::vector<std::size_t> areas(masks.masks.size());
  for (std::size_t m = 0; m < order.size(); ++m) {
    order[m] = m;
    areas[m] = masks.masks[m].area();
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (areas[a] != areas[b]) return areas[a] < areas[b];
    return masks.masks[a].track_id < masks.masks[b].track_id;
  });

  const auto pixels = geom::project_to_image(frame.positions, calib);
  std::vector<std::int32_t> labels(frame.size(), 0);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!pixels[i]) continue;
    const int x = static_cast<int>(std::floor(pixels[i]->u));
    const int y = static_cast<int>(std::floor(pixels[i]->v));
    for (auto m : order) {
      if (masks.inside(m, x, y)) {
        labels[i] = masks.masks[m].track_id;
        break;
      }
    }
  }
  return labels;
}

InstanceAssignment build_instance_sets(const std::vector<std::int32_t>& source_track_labels,
                                       const std::vector<std::int32_t>& target_track_labels) {
  std::set<std::int32_t> ids;
  for (auto t : source_track_labels)
    if (t != 0) ids.insert(t);
  for (auto t : target_track_labels)
    if (t != 0) ids.insert(t);

  InstanceAssignment a;
  a.num_instances = ids.size();
  a.track_ids.assign(ids.begin(), ids.end());
  std::unordered_map<std::int32_t, std::int32_t> dense;
  for (std::size_t g = 0; g < a.track_ids.size(); ++g) dense[a.track_ids[g]] = static_cast<std::int32_t>(g + 1);

  a.source_sets.resize(a.num_instances);
  a.target_sets.resize(a.num_instances);
  auto fill = [&](const std::vector<std::int32_t>& track, std::vector<std::int32_t>& labels,
                  std::vector<std::vector<std::int32_t>>& sets) {
    labels.resize(track.size());
    for (std::size_t i = 0; i < track.size(); ++i) {
      labels[i] = track[i] == 0 ? 0 : dense.at(track[i]);
      if (labels[i] > 0) sets[static_cast<std::size_t>(labels[i] - 1)].push_back(static_cast<std::int32_t>(i));
    }
  };
  fill(source_track_labels, a.source_labels, a.source_sets);
  fill(target_track_labels, a.target_labels, a.target_sets);
  return a;
}

std::vector<double> compensate_rrv(const geom::RadarFrame& frame, const geom::Vec3& ego_velocity,
                                   const geom::Vec3& sensor_origin) {
  std::vector<double> arv(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const geom::Vec3 ray = frame.positions.row(static_cast<Eigen::Index>(i)).transpose() - sensor_origin;
    const double range = ray.norm();
    if (range == 0.0)
      throw std::invalid_argument("compensate_rrv: point " + std::to_string(i) + " coincides with the sensor origin");
    arv[i] = frame.rrv[i] + ego_velocity.dot(ray / range);
  }
  return arv;
}

std::vector<std::int32_t> extract_static_set(const std::vector<double>& arv, double threshold) {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < arv.size(); ++i)
    if (std::abs(arv[i]) < threshold) out.push_back(static_cast<std::int32_t>(i));
  return out;
}

bool TrackedBox::contains(const geom::Vec3& p, double margin) const {
  const geom::Vec3 local = pose().inverse().apply(p);
  return std::abs(local.x()) <= length / 2 + margin && std::abs(local.y()) <= width / 2 + margin &&
         std::abs(local.z()) <= height / 2 + margin;
}

geom::PointCloud rigid_flow_from_boxes(const geom::PointCloud& points_in_box, const TrackedBox& box_t0,
                                       const TrackedBox& box_t1, FlowUnit mode) {
  if (box_t0.track_id != box_t1.track_id)
    throw std::invalid_argument("rigid_flow_from_boxes: boxes belong to different tracks");
  // Yaw-only boxes: p -> c1 + Rz(yaw1 - yaw0) (p - c0). Identical poses give
  // an exactly-identity motion.
  const geom::RigidTransform spin = geom::RigidTransform::from_yaw(box_t1.yaw - box_t0.yaw, geom::Vec3::Zero());
  geom::RigidTransform motion = spin;
  motion.translation = box_t1.center - spin.rotation * box_t0.center;
  geom::PointCloud flow = geom::rigid_flow(motion, points_in_box);
  if (mode == FlowUnit::kVelocity) {
    const double dt = box_t1.timestamp - box_t0.timestamp;
    if (!(dt > 0.0)) throw std::invalid_argument("rigid_flow_from_boxes: time interval must be positive in velocity mode");
    flow /= dt;
  }
  return flow;
}

}  // namespace iterflow::labeling
