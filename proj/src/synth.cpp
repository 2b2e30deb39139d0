#include "iterflow/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "iterflow/labeling.hpp"

namespace iterflow::synth {

using geom::Category;
using geom::PointCloud;
using geom::RigidTransform;
using geom::Vec3;

geom::Calibration default_camera() {
  geom::Calibration c;
  c.width = 640;
  c.height = 360;
  c.intrinsics << 320.0, 0.0, 320.0, 0.0, 320.0, 180.0, 0.0, 0.0, 1.0;
  // radar x forward, y left, z up -> camera x right, y down, z forward
  c.radar_to_camera.rotation << 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0;
  c.radar_to_camera.translation = Vec3::Zero();
  return c;
}

void SceneSpec::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("SceneSpec: dt must be positive");
  if (!ego_velocity.allFinite() || !std::isfinite(ego_yaw_rate))
    throw std::invalid_argument("SceneSpec: ego kinematics must be finite");
  if (!(min_range >= 0.0) || !(max_range > min_range)) throw std::invalid_argument("SceneSpec: invalid range limits");
  if (!(detection_probability > 0.0) || detection_probability > 1.0)
    throw std::invalid_argument("SceneSpec: detection probability must lie in (0, 1]");
  if (position_noise < 0.0 || rrv_noise < 0.0) throw std::invalid_argument("SceneSpec: noise levels must be >= 0");
  std::size_t total = background_points + clutter_points;
  for (const auto& inst : instances) {
    if (!inst.center.allFinite() || !inst.velocity.allFinite() || !std::isfinite(inst.yaw) ||
        !std::isfinite(inst.yaw_rate))
      throw std::invalid_argument("SceneSpec: instance kinematics must be finite");
    if (!(inst.length > 0.0) || !(inst.width > 0.0) || !(inst.height > 0.0))
      throw std::invalid_argument("SceneSpec: instance dimensions must be positive");
    total += inst.scatterers;
  }
  if (total == 0) throw std::invalid_argument("SceneSpec: scene contains no scatterers");
  for (std::size_t a = 0; a < instances.size(); ++a)
    for (std::size_t b = a + 1; b < instances.size(); ++b) {
      const auto& A = instances[a];
      const auto& B = instances[b];
      const double ra = 0.5 * std::hypot(A.length, A.width), rb = 0.5 * std::hypot(B.length, B.width);
      if ((A.center - B.center).head<2>().norm() < ra + rb)
        throw std::invalid_argument("SceneSpec: instances " + std::to_string(a) + " and " + std::to_string(b) +
                                    " overlap at t0");
    }
  camera.validate();
}

namespace {

struct Scatterer {
  Vec3 local;   // body frame (instances) or world frame (static)
  Vec3 normal;  // body-frame outward normal, zero for omnidirectional
  double rcs;
  int instance;  // -1 static background, -2 clutter
};

RigidTransform instance_pose(const InstanceSpec& inst, double t) {
  return RigidTransform::from_yaw(inst.yaw + inst.yaw_rate * t, inst.center + inst.velocity * t);
}

Vec3 instance_point_velocity(const InstanceSpec& inst, const Vec3& world, double t) {
  const Vec3 c = inst.center + inst.velocity * t;
  return inst.velocity + Vec3(0, 0, inst.yaw_rate).cross(world - c);
}

struct Observation {
  std::vector<Vec3> positions;  // frame coordinates
  std::vector<Vec3> true_world;
  std::vector<double> rcs, rrv;
  std::vector<int> instance;
};

// True when the open segment from `from` to `to` passes through the box.
bool segment_hits_box(const Vec3& from, const Vec3& to, const InstanceSpec& inst, const RigidTransform& pose,
                      double margin) {
  const RigidTransform inv = pose.inverse();
  const Vec3 a = inv.apply(from), b = inv.apply(to);
  const Vec3 half = Vec3(inst.length / 2, inst.width / 2, inst.height / 2).array() + margin;
  const Vec3 d = b - a;
  double t0 = 0.0, t1 = 1.0 - 1e-6;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-12) {
      if (a[k] < -half[k] || a[k] > half[k]) return false;
      continue;
    }
    double lo = (-half[k] - a[k]) / d[k], hi = (half[k] - a[k]) / d[k];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t0 > t1) return false;
  }
  return true;
}

bool in_frustum(const Vec3& p, const SceneSpec& spec) {
  const double range = p.norm();
  if (range < spec.min_range || range > spec.max_range) return false;
  if (p.z() < -3.0 || p.z() > 3.0) return false;
  const Vec3 cam = spec.camera.radar_to_camera.apply(p);
  if (cam.z() <= 1e-6) return false;
  const Vec3 h = spec.camera.intrinsics * cam;
  const double u = h.x() / cam.z(), v = h.y() / cam.z();
  return u >= 0 && v >= 0 && u < spec.camera.width && v < spec.camera.height;
}

// Observes every scatterer at time t from a sensor with pose `sensor`
// (sensor -> world) moving with world velocity `ego_world_velocity`.
Observation observe(const SceneSpec& spec, const std::vector<Scatterer>& scatterers, double t,
                    const RigidTransform& sensor, const Vec3& ego_world_velocity, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const RigidTransform world_to_sensor = sensor.inverse();
  std::vector<RigidTransform> poses;
  for (const auto& inst : spec.instances) poses.push_back(instance_pose(inst, t));
  // Shadows are widened by about two pixels at the occluder's range plus the
  // position noise, so points grazing a silhouette edge stay hidden.
  const double fx = spec.camera.intrinsics(0, 0);
  auto occluded = [&](const Vec3& world, int own) {
    for (std::size_t k = 0; k < poses.size(); ++k) {
      if (static_cast<int>(k) == own) continue;
      const double margin = 2.0 * (poses[k].translation - sensor.translation).norm() / fx + 4.0 * spec.position_noise;
      if (segment_hits_box(sensor.translation, world, spec.instances[k], poses[k], margin)) return true;
    }
    return false;
  };
  Observation obs;
  for (const auto& s : scatterers) {
    Vec3 world = s.local;
    Vec3 velocity = Vec3::Zero();
    if (s.instance >= 0) {
      const auto& inst = spec.instances[static_cast<std::size_t>(s.instance)];
      const RigidTransform pose = instance_pose(inst, t);
      world = pose.apply(s.local);
      velocity = instance_point_velocity(inst, world, t);
      const Vec3 normal = pose.rotation * s.normal;
      if (normal.dot(sensor.translation - world) <= 0.0) {
        unit(rng);  // keep the random stream aligned
        continue;
      }
    }
    const Vec3 local = world_to_sensor.apply(world);
    const bool detected = unit(rng) < spec.detection_probability;
    if (!detected || !in_frustum(local, spec) || occluded(world, s.instance)) continue;
    const Vec3 noise(gauss(rng), gauss(rng), gauss(rng));
    const double rrv_noise = gauss(rng);
    const double rcs_noise = gauss(rng);
    const Vec3 ray = (world - sensor.translation).normalized();
    obs.positions.push_back(local + spec.position_noise * noise);
    obs.true_world.push_back(world);
    obs.rrv.push_back((velocity - ego_world_velocity).dot(ray) + spec.rrv_noise * rrv_noise);
    obs.rcs.push_back(s.rcs + (spec.position_noise > 0.0 ? 0.5 * rcs_noise : 0.0));
    obs.instance.push_back(s.instance);
  }
  return obs;
}

std::vector<Scatterer> make_scatterers(const SceneSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Scatterer> out;
  const double half_fov = std::atan2(spec.camera.intrinsics(0, 2), spec.camera.intrinsics(0, 0));
  // Static ground field over the forward sector, extended so the moving
  // sensor still sees it at t1.
  for (std::size_t i = 0; i < spec.background_points; ++i) {
    const double r = std::sqrt(unit(rng) * (spec.max_range * spec.max_range - spec.min_range * spec.min_range) +
                               spec.min_range * spec.min_range);
    const double az = (2.0 * unit(rng) - 1.0) * (half_fov + 0.2);
    out.push_back({Vec3(r * std::cos(az), r * std::sin(az), spec.ground_z), Vec3::Zero(), -15.0 + 20.0 * unit(rng), -1});
  }
  for (std::size_t i = 0; i < spec.clutter_points; ++i) {
    const double r = spec.min_range + (spec.max_range - spec.min_range) * unit(rng);
    const double az = (2.0 * unit(rng) - 1.0) * half_fov;
    const double z = spec.ground_z + 3.0 * unit(rng);
    out.push_back({Vec3(r * std::cos(az), r * std::sin(az), z), Vec3::Zero(), -20.0 + 20.0 * unit(rng), -2});
  }
  for (std::size_t k = 0; k < spec.instances.size(); ++k) {
    const auto& inst = spec.instances[k];
    const double L = inst.length, W = inst.width, H = inst.height;
    // Sides and roof; the bottom face never reflects.
    const std::array<double, 5> areas{W * H, W * H, L * H, L * H, L * W};
    const double total = W * H * 2 + L * H * 2 + L * W;
    const double base_rcs = inst.category == Category::kCar ? 10.0 : inst.category == Category::kCyclist ? 2.0 : -5.0;
    for (std::size_t i = 0; i < inst.scatterers; ++i) {
      double pick = unit(rng) * total;
      std::size_t face = 0;
      while (face + 1 < areas.size() && pick > areas[face]) pick -= areas[face++];
      const double a = unit(rng) - 0.5, b = unit(rng) - 0.5;
      Vec3 p, n;
      switch (face) {
        case 0: p = Vec3(L / 2, a * W, b * H), n = Vec3::UnitX(); break;
        case 1: p = Vec3(-L / 2, a * W, b * H), n = -Vec3::UnitX(); break;
        case 2: p = Vec3(a * L, W / 2, b * H), n = Vec3::UnitY(); break;
        case 3: p = Vec3(a * L, -W / 2, b * H), n = -Vec3::UnitY(); break;
        default: p = Vec3(a * L, b * W, H / 2), n = Vec3::UnitZ(); break;
      }
      out.push_back({p, n, base_rcs + 4.0 * (unit(rng) - 0.5), static_cast<int>(k)});
    }
  }
  return out;
}

std::array<Vec3, 8> box_corners(const InstanceSpec& inst, const RigidTransform& pose) {
  std::array<Vec3, 8> c;
  int k = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) c[k++] = pose.apply(Vec3(sx * inst.length / 2, sy * inst.width / 2, sz * inst.height / 2));
  return c;
}

using Point2 = Eigen::Vector2d;

double cross2(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;  // counter-clockwise
}

void morph(std::vector<std::uint8_t>& bitmap, int width, int height, int radius) {
  if (radius == 0) return;
  const bool dilate = radius > 0;
  const int r = std::abs(radius);
  std::vector<std::uint8_t> out(bitmap.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      bool v = !dilate;
      for (int dy = -r; dy <= r && v != dilate; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx, yy = y + dy;
          const bool inside = xx >= 0 && yy >= 0 && xx < width && yy < height &&
                              bitmap[static_cast<std::size_t>(yy) * width + xx];
          if (dilate && inside) {
            v = true;
            break;
          }
          if (!dilate && !inside) {
            v = false;
            break;
          }
        }
      out[static_cast<std::size_t>(y) * width + x] = v;
    }
  bitmap.swap(out);
}

std::optional<std::vector<Point2>> project_hull(const std::array<Vec3, 8>& corners, const geom::Calibration& cam) {
  std::vector<Point2> projected;
  for (const auto& c : corners) {
    const Vec3 pc = cam.radar_to_camera.apply(c);
    if (pc.z() <= 1e-3) return std::nullopt;
    const Vec3 h = cam.intrinsics * pc;
    projected.emplace_back(h.x() / pc.z(), h.y() / pc.z());
  }
  auto hull = convex_hull(projected);
  if (hull.size() < 3) return std::nullopt;
  return hull;
}

constexpr double kHalfDiagonal = 0.70710678118654757;

// Sets every pixel whose center lies at signed distance >= `threshold` from
// all hull edges. -kHalfDiagonal gives a conservative raster (any pixel the
// hull can touch), +kHalfDiagonal only pixels fully inside.
std::vector<std::uint8_t> rasterize(const std::vector<Point2>& hull, const geom::Calibration& cam, double threshold) {
  std::vector<std::uint8_t> bitmap(static_cast<std::size_t>(cam.width) * cam.height, 0);
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : hull) {
    xmin = std::min(xmin, p.x()), xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y()), ymax = std::max(ymax, p.y());
  }
  const int x0 = std::max(0, static_cast<int>(std::max(-1.0, std::floor(xmin))) - 1);
  const int x1 = std::min(cam.width - 1, static_cast<int>(std::min(double(cam.width), std::ceil(xmax))) + 1);
  const int y0 = std::max(0, static_cast<int>(std::max(-1.0, std::floor(ymin))) - 1);
  const int y1 = std::min(cam.height - 1, static_cast<int>(std::min(double(cam.height), std::ceil(ymax))) + 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const Point2 center(x + 0.5, y + 0.5);
      bool inside = true;
      for (std::size_t e = 0; e < hull.size() && inside; ++e) {
        const Point2& a = hull[e];
        const Point2& b = hull[(e + 1) % hull.size()];
        inside = cross2(a, b, center) / (b - a).norm() >= threshold;
      }
      if (inside) bitmap[static_cast<std::size_t>(y) * cam.width + x] = 1;
    }
  return bitmap;
}

// Whether box a hides box b from `eye`. Disjoint footprints admit a
// separating line; the box on the eye's side of it is in front for every ray
// that meets both.
bool occludes(const std::array<Vec3, 8>& a, const std::array<Vec3, 8>& b, const Vec3& eye) {
  auto axes_of = [](const std::array<Vec3, 8>& c) {
    // corners 0,2,4: (-l,-w), (-l,+w), (+l,-w) at the bottom
    const Eigen::Vector2d e1 = (c[4] - c[0]).head<2>(), e2 = (c[2] - c[0]).head<2>();
    return std::array<Eigen::Vector2d, 2>{Eigen::Vector2d(-e1.y(), e1.x()), Eigen::Vector2d(-e2.y(), e2.x())};
  };
  auto range = [](const std::array<Vec3, 8>& c, const Eigen::Vector2d& axis) {
    double lo = 1e300, hi = -1e300;
    for (const auto& p : c) {
      const double v = axis.dot(p.head<2>());
      lo = std::min(lo, v), hi = std::max(hi, v);
    }
    return std::pair{lo, hi};
  };
  const auto aa = axes_of(a), ab = axes_of(b);
  for (const auto& axis : {aa[0], aa[1], ab[0], ab[1]}) {
    const auto [alo, ahi] = range(a, axis);
    const auto [blo, bhi] = range(b, axis);
    const double e = axis.dot(eye.head<2>());
    if (ahi < blo) return e < blo;  // a below b along the axis: a first when the eye is on a's side
    if (bhi < alo) return e > bhi;
  }
  // Overlapping footprints: fall back to center distance.
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (int k = 0; k < 8; ++k) ca += a[k] / 8.0, cb += b[k] / 8.0;
  return (ca - eye).norm() < (cb - eye).norm();
}

// Visible silhouettes: conservative raster of each box minus the pixels lying
// fully inside a box in front of it.
std::vector<labeling::InstanceMask> render_masks(const std::vector<std::array<Vec3, 8>>& boxes,
                                                 const geom::Calibration& cam, int dilation) {
  const Vec3 eye = cam.radar_to_camera.inverse().translation;
  std::vector<std::optional<std::vector<Point2>>> hulls;
  for (const auto& b : boxes) hulls.push_back(project_hull(b, cam));
  std::vector<labeling::InstanceMask> out;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    if (!hulls[k]) continue;
    auto bitmap = rasterize(*hulls[k], cam, -kHalfDiagonal);
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (j == k || !hulls[j] || !occludes(boxes[j], boxes[k], eye)) continue;
      const auto cover = rasterize(*hulls[j], cam, kHalfDiagonal);
      for (std::size_t p = 0; p < bitmap.size(); ++p)
        if (cover[p]) bitmap[p] = 0;
    }
    if (std::none_of(bitmap.begin(), bitmap.end(), [](std::uint8_t v) { return v != 0; })) continue;
    morph(bitmap, cam.width, cam.height, dilation);
    labeling::InstanceMask mask;
    mask.track_id = static_cast<std::int32_t>(k + 1);
    mask.bitmap = std::move(bitmap);
    out.push_back(std::move(mask));
  }
  return out;
}

geom::RadarFrame to_frame(const Observation& obs, const SceneSpec& spec) {
  geom::RadarFrame f;
  const auto n = static_cast<Eigen::Index>(obs.positions.size());
  f.positions.resize(n, 3);
  f.rcs = obs.rcs;
  f.rrv = obs.rrv;
  std::vector<std::int32_t> ids(obs.positions.size());
  std::vector<std::uint8_t> fg(obs.positions.size());
  std::vector<Category> cats(obs.positions.size());
  for (std::size_t i = 0; i < obs.positions.size(); ++i) {
    f.positions.row(static_cast<Eigen::Index>(i)) = obs.positions[i].transpose();
    const int inst = obs.instance[i];
    ids[i] = inst >= 0 ? inst + 1 : 0;
    fg[i] = inst >= 0;
    cats[i] = inst >= 0 ? spec.instances[static_cast<std::size_t>(inst)].category : Category::kNone;
  }
  f.gt_instance = std::move(ids);
  f.foreground_mask = std::move(fg);
  f.gt_category = std::move(cats);
  return f;
}

}  // namespace

FramePair generate_pair(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto scatterers = make_scatterers(spec, rng);

  // Ego pose at t1 in the t0 sensor frame.
  const RigidTransform sensor0 = RigidTransform::identity();
  const RigidTransform sensor1 = RigidTransform::from_yaw(spec.ego_yaw_rate * spec.dt, spec.ego_velocity * spec.dt);
  const Vec3 ego_v0 = spec.ego_velocity;
  const Vec3 ego_v1 = sensor1.rotation * spec.ego_velocity;

  FramePair pair;
  pair.seed = spec.seed;
  pair.dt = spec.dt;
  pair.calib = spec.camera;
  pair.ego = sensor1.inverse();
  pair.ego_velocity = spec.ego_velocity;
  pair.position_noise = spec.position_noise;
  pair.rrv_noise = spec.rrv_noise;

  // Source detections are drawn before anything that depends on dt.
  std::mt19937_64 src_rng(rng());
  std::mt19937_64 tgt_rng(rng());
  const Observation src = observe(spec, scatterers, 0.0, sensor0, ego_v0, src_rng);
  const Observation tgt = observe(spec, scatterers, spec.dt, sensor1, ego_v1, tgt_rng);
  if (src.positions.empty() || tgt.positions.empty())
    throw std::invalid_argument("generate_pair: scene produced an empty frame (seed " + std::to_string(spec.seed) + ")");

  pair.source = to_frame(src, spec);
  pair.target = to_frame(tgt, spec);

  // Exact rigid ground truth on the observed source positions.
  PointCloud flow(static_cast<Eigen::Index>(src.positions.size()), 3);
  for (std::size_t i = 0; i < src.positions.size(); ++i) {
    const Vec3& p = src.positions[i];
    Vec3 moved = p;
    const InstanceSpec* inst =
        src.instance[i] >= 0 ? &spec.instances[static_cast<std::size_t>(src.instance[i])] : nullptr;
    if (inst && (!inst->velocity.isZero(0.0) || inst->yaw_rate != 0.0)) {
      const RigidTransform motion = instance_pose(*inst, spec.dt).compose(instance_pose(*inst, 0.0).inverse());
      moved = motion.apply(p);
    }
    flow.row(static_cast<Eigen::Index>(i)) = (pair.ego.apply(moved) - p).transpose();
  }
  pair.source.gt_flow = std::move(flow);

  for (int frame = 0; frame < 2; ++frame) {
    auto& masks = frame == 0 ? pair.source_masks : pair.target_masks;
    masks.width = spec.camera.width;
    masks.height = spec.camera.height;
    const RigidTransform to_frame_coords = frame == 0 ? RigidTransform::identity() : pair.ego;
    std::vector<std::array<Vec3, 8>> boxes;
    for (const auto& inst : spec.instances)
      boxes.push_back(box_corners(inst, to_frame_coords.compose(instance_pose(inst, frame == 0 ? 0.0 : spec.dt))));
    masks.masks = render_masks(boxes, spec.camera, spec.mask_dilation);
  }

  if (spec.points_per_frame > 0) {
    pair.source = geom::sample_points(pair.source, spec.points_per_frame, spec.seed ^ 0x5A5A5A5AULL);
    pair.target = geom::sample_points(pair.target, spec.points_per_frame, spec.seed ^ 0xA5A5A5A5ULL);
  }
  return pair;
}

SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& options) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SceneSpec spec;
  spec.seed = seed;
  spec.background_points = options.background_points;
  spec.clutter_points = options.clutter_points;
  spec.detection_probability = options.detection_probability;
  spec.position_noise = options.position_noise;
  spec.rrv_noise = options.rrv_noise;
  spec.points_per_frame = options.points_per_frame;
  spec.dt = options.dt;
  spec.mask_dilation = options.mask_dilation;
  spec.ego_velocity = Vec3(uniform(0.0, options.max_ego_speed), 0.0, 0.0);
  spec.ego_yaw_rate = uniform(-options.max_ego_yaw_rate, options.max_ego_yaw_rate);

  const std::size_t span = options.max_instances - options.min_instances + 1;
  const std::size_t count = options.min_instances + static_cast<std::size_t>(unit(rng) * static_cast<double>(span)) % span;
  for (std::size_t k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      InstanceSpec inst;
      const double kind = unit(rng);
      double speed;
      if (kind < 0.5) {
        inst.category = Category::kCar;
        inst.length = uniform(3.8, 4.8), inst.width = uniform(1.6, 1.9), inst.height = uniform(1.4, 1.7);
        inst.scatterers = 80;
        speed = uniform(2.0, 8.0);
      } else if (kind < 0.75) {
        inst.category = Category::kCyclist;
        inst.length = uniform(1.6, 1.9), inst.width = uniform(0.5, 0.7), inst.height = uniform(1.6, 1.8);
        inst.scatterers = 40;
        speed = uniform(2.0, 6.0);
      } else {
        inst.category = Category::kPedestrian;
        inst.length = uniform(0.5, 0.7), inst.width = uniform(0.5, 0.7), inst.height = uniform(1.6, 1.9);
        inst.scatterers = 30;
        speed = uniform(0.8, 2.0);
      }
      const double range = uniform(6.0, 25.0);
      const double az = uniform(-0.6, 0.6);
      inst.center = Vec3(range * std::cos(az), range * std::sin(az), spec.ground_z + inst.height / 2);
      inst.yaw = uniform(-M_PI, M_PI);
      const bool moving = unit(rng) < options.moving_probability;
      inst.velocity = moving ? Vec3(speed * std::cos(inst.yaw), speed * std::sin(inst.yaw), 0.0) : Vec3::Zero();
      spec.instances.push_back(inst);
      bool overlap = false;
      for (std::size_t j = 0; j + 1 < spec.instances.size(); ++j) {
        const auto& o = spec.instances[j];
        const double gap = 0.5 * std::hypot(o.length, o.width) + 0.5 * std::hypot(inst.length, inst.width) + 0.5;
        if ((o.center - inst.center).head<2>().norm() < gap) overlap = true;
      }
      if (!overlap) break;
      spec.instances.pop_back();
    }
  }
  return spec;
}

std::string Diagnostics::summary() const {
  std::ostringstream os;
  os << (ok() ? "ok" : "FAILED") << ": " << points_checked << " points checked, " << issues.size() << " issue(s)";
  for (std::size_t i = 0; i < std::min<std::size_t>(issues.size(), 10); ++i)
    os << "\n  [" << issues[i].check << "] " << issues[i].frame << " point " << issues[i].index << ": "
       << issues[i].detail;
  return os.str();
}

Diagnostics verify_pair(const FramePair& pair) {
  Diagnostics d;
  const double pos_tol = 3.0 * pair.position_noise;
  const double rrv_tol = 3.0 * pair.rrv_noise + 1e-9;
  const double flow_tol = 1e-9;

  auto check_masks = [&](const geom::RadarFrame& frame, const labeling::InstanceMaskSet& masks, const char* name) {
    if (!frame.gt_instance) return;
    const auto pixels = geom::project_to_image(frame.positions, pair.calib);
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const auto id = (*frame.gt_instance)[i];
      if (id == 0) continue;
      ++d.points_checked;
      const auto it = std::find_if(masks.masks.begin(), masks.masks.end(), [id](const auto& m) { return m.track_id == id; });
      if (it == masks.masks.end()) {
        d.issues.push_back({"mask", name, i, "no mask for track " + std::to_string(id)});
        continue;
      }
      const auto mask_index = static_cast<std::size_t>(it - masks.masks.begin());
      if (!pixels[i]) {
        if (pos_tol == 0.0) d.issues.push_back({"mask", name, i, "instance point projects outside the image"});
        continue;
      }
      const int x = static_cast<int>(std::floor(pixels[i]->u));
      const int y = static_cast<int>(std::floor(pixels[i]->v));
      const int r = static_cast<int>(std::ceil(pos_tol * pair.calib.intrinsics(0, 0) / pixels[i]->depth));
      bool hit = false;
      for (int dy = -r; dy <= r && !hit; ++dy)
        for (int dx = -r; dx <= r && !hit; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= masks.width || yy >= masks.height) continue;
          hit = masks.inside(mask_index, xx, yy);
        }
      if (!hit)
        d.issues.push_back({"mask", name, i, "projection misses the mask of track " + std::to_string(id)});
    }
  };
  check_masks(pair.source, pair.source_masks, "source");
  check_masks(pair.target, pair.target_masks, "target");

  const auto& src = pair.source;
  if (src.gt_instance) {
    const auto arv = labeling::compensate_rrv(src, pair.ego_velocity);
    const PointCloud rigid = geom::rigid_flow(pair.ego, src.positions);
    for (std::size_t i = 0; i < src.size(); ++i) {
      if ((*src.gt_instance)[i] != 0) continue;
      ++d.points_checked;
      if (std::abs(arv[i]) >= rrv_tol)
        d.issues.push_back({"static_arv", "source", i, "|ARV| = " + std::to_string(std::abs(arv[i]))});
      if (src.gt_flow) {
        const double dev = (src.gt_flow->row(static_cast<Eigen::Index>(i)) - rigid.row(static_cast<Eigen::Index>(i))).norm();
        if (dev > flow_tol)
          d.issues.push_back({"static_flow", "source", i, "deviates from ego rigid flow by " + std::to_string(dev)});
      }
    }
  }
  return d;
}

}  // namespace iterflow::synth
