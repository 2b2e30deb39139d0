#include "iterflow/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>

namespace iterflow::geom {

const char* category_name(Category c) {
  switch (c) {
    case Category::kCar: return "car";
    case Category::kPedestrian: return "pedestrian";
    case Category::kCyclist: return "cyclist";
    case Category::kNone: break;
  }
  return "none";
}

Eigen::Matrix<double, Eigen::Dynamic, 5, Eigen::RowMajor> RadarFrame::features() const {
  Eigen::Matrix<double, Eigen::Dynamic, 5, Eigen::RowMajor> f(positions.rows(), 5);
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    f(i, 0) = positions(i, 0);
    f(i, 1) = positions(i, 1);
    f(i, 2) = positions(i, 2);
    f(i, 3) = rcs[static_cast<std::size_t>(i)];
    f(i, 4) = rrv[static_cast<std::size_t>(i)];
  }
  return f;
}

void RadarFrame::validate() const {
  const std::size_t n = size();
  auto check = [n](std::size_t len, const char* what) {
    if (len != n)
      throw std::invalid_argument(std::string("RadarFrame: ") + what + " has " + std::to_string(len) +
                                  " entries, expected " + std::to_string(n));
  };
  check(rcs.size(), "rcs");
  check(rrv.size(), "rrv");
  if (gt_flow) check(static_cast<std::size_t>(gt_flow->rows()), "gt_flow");
  if (gt_instance) check(gt_instance->size(), "gt_instance");
  if (foreground_mask) check(foreground_mask->size(), "foreground_mask");
  if (gt_category) check(gt_category->size(), "gt_category");
  if (!positions.allFinite()) throw std::invalid_argument("RadarFrame: non-finite position");
}

RigidTransform RigidTransform::from_yaw(double yaw, const Vec3& translation) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  t.translation = translation;
  return t;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform t;
  t.rotation = rotation.transpose();
  t.translation = -(t.rotation * translation);
  return t;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  RigidTransform t;
  t.rotation = rotation * other.rotation;
  t.translation = rotation * other.translation + translation;
  return t;
}

bool RigidTransform::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  if (((rotation.transpose() * rotation) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

void Calibration::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("Calibration: image size must be positive");
  if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0))
    throw std::invalid_argument("Calibration: focal lengths must be positive");
  if (std::abs(intrinsics.determinant()) < 1e-12) throw std::invalid_argument("Calibration: singular intrinsics");
  if (!radar_to_camera.is_valid()) throw std::invalid_argument("Calibration: extrinsic rotation is not orthonormal");
}

namespace {

inline double sq_dist(const PointCloud& a, Eigen::Index i, const PointCloud& b, Eigen::Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

struct Candidate {
  double d2;
  std::int32_t index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

void check_ball_args(double radius, std::size_t max_count) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball_query: radius must be positive");
  if (max_count < 1) throw std::invalid_argument("ball_query: max_count must be at least 1");
}

void emit(NeighborLists& out, std::vector<Candidate>& cand, std::size_t max_count) {
  const std::size_t keep = std::min(max_count, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end());
  for (std::size_t k = 0; k < keep; ++k) out.indices.push_back(cand[k].index);
  out.offsets.push_back(out.indices.size());
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

constexpr std::size_t kGridThreshold = 1024;

}  // namespace

NeighborLists ball_query_brute_force(const PointCloud& queries, const PointCloud& targets, double radius,
                                     std::size_t max_count, BallQueryOptions options) {
  check_ball_args(radius, max_count);
  const double r2 = radius * radius;
  NeighborLists out;
  out.offsets.reserve(static_cast<std::size_t>(queries.rows()) + 1);
  std::vector<Candidate> cand;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    cand.clear();
    for (Eigen::Index j = 0; j < targets.rows(); ++j) {
      if (options.exclude_self && j == q) continue;
      const double d2 = sq_dist(queries, q, targets, j);
      if (d2 <= r2) cand.push_back({d2, static_cast<std::int32_t>(j)});
    }
    emit(out, cand, max_count);
  }
  return out;
}

NeighborLists ball_query_grid(const PointCloud& queries, const PointCloud& targets, double radius,
                              std::size_t max_count, BallQueryOptions options) {
  check_ball_args(radius, max_count);
  const double r2 = radius * radius;
  auto key_of = [radius](double x, double y, double z) {
    return CellKey{static_cast<std::int64_t>(std::floor(x / radius)), static_cast<std::int64_t>(std::floor(y / radius)),
                   static_cast<std::int64_t>(std::floor(z / radius))};
  };
  std::unordered_map<CellKey, std::vector<std::int32_t>, CellHash> grid;
  for (Eigen::Index j = 0; j < targets.rows(); ++j)
    grid[key_of(targets(j, 0), targets(j, 1), targets(j, 2))].push_back(static_cast<std::int32_t>(j));

  NeighborLists out;
  out.offsets.reserve(static_cast<std::size_t>(queries.rows()) + 1);
  std::vector<Candidate> cand;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    cand.clear();
    const CellKey c = key_of(queries(q, 0), queries(q, 1), queries(q, 2));
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = grid.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
          if (it == grid.end()) continue;
          for (auto j : it->second) {
            if (options.exclude_self && j == q) continue;
            const double d2 = sq_dist(queries, q, targets, j);
            if (d2 <= r2) cand.push_back({d2, j});
          }
        }
    emit(out, cand, max_count);
  }
  return out;
}

NeighborLists ball_query(const PointCloud& queries, const PointCloud& targets, double radius, std::size_t max_count,
                         BallQueryOptions options) {
  if (static_cast<std::size_t>(targets.rows()) > kGridThreshold)
    return ball_query_grid(queries, targets, radius, max_count, options);
  return ball_query_brute_force(queries, targets, radius, max_count, options);
}

NearestNeighbor nearest_neighbor(const Vec3& query, const PointCloud& targets) {
  if (targets.rows() == 0) throw EmptySetError("nearest_neighbor: empty target set");
  NearestNeighbor best{0, std::numeric_limits<double>::infinity()};
  for (Eigen::Index j = 0; j < targets.rows(); ++j) {
    const double dx = query.x() - targets(j, 0);
    const double dy = query.y() - targets(j, 1);
    const double dz = query.z() - targets(j, 2);
    const double d2 = dx * dx + dy * dy + dz * dz;
    if (d2 < best.squared_distance) best = {static_cast<std::size_t>(j), d2};
  }
  return best;
}

PointCloud apply_transform(const RigidTransform& transform, const PointCloud& points) {
  PointCloud out(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out.row(i) = (transform.rotation * points.row(i).transpose() + transform.translation).transpose();
  return out;
}

PointCloud rigid_flow(const RigidTransform& transform, const PointCloud& points) {
  PointCloud out = apply_transform(transform, points);
  out -= points;
  return out;
}

std::vector<std::optional<Pixel>> project_to_image(const PointCloud& points, const Calibration& calib) {
  std::vector<std::optional<Pixel>> out(static_cast<std::size_t>(points.rows()));
  const Mat3& K = calib.intrinsics;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vec3 cam = calib.radar_to_camera.apply(points.row(i).transpose());
    if (cam.z() <= 1e-6) continue;
    const Vec3 h = K * cam;
    const double u = h.x() / cam.z();
    const double v = h.y() / cam.z();
    if (u < 0.0 || v < 0.0 || u >= calib.width || v >= calib.height) continue;
    out[static_cast<std::size_t>(i)] = Pixel{u, v, cam.z()};
  }
  return out;
}

Vec3 back_project(double u, double v, double depth, const Calibration& calib) {
  const Vec3 cam = calib.intrinsics.inverse() * Vec3(u * depth, v * depth, depth);
  return calib.radar_to_camera.inverse().apply(cam);
}

RadarFrame select_points(const RadarFrame& frame, const std::vector<std::size_t>& indices) {
  RadarFrame out;
  const auto n = static_cast<Eigen::Index>(indices.size());
  out.positions.resize(n, 3);
  out.rcs.resize(indices.size());
  out.rrv.resize(indices.size());
  if (frame.gt_flow) out.gt_flow = PointCloud(n, 3);
  if (frame.gt_instance) out.gt_instance = std::vector<std::int32_t>(indices.size());
  if (frame.foreground_mask) out.foreground_mask = std::vector<std::uint8_t>(indices.size());
  if (frame.gt_category) out.gt_category = std::vector<Category>(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = indices[k];
    if (src >= frame.size()) throw std::out_of_range("select_points: index out of range");
    const auto row = static_cast<Eigen::Index>(k);
    out.positions.row(row) = frame.positions.row(static_cast<Eigen::Index>(src));
    out.rcs[k] = frame.rcs[src];
    out.rrv[k] = frame.rrv[src];
    if (frame.gt_flow) out.gt_flow->row(row) = frame.gt_flow->row(static_cast<Eigen::Index>(src));
    if (frame.gt_instance) (*out.gt_instance)[k] = (*frame.gt_instance)[src];
    if (frame.foreground_mask) (*out.foreground_mask)[k] = (*frame.foreground_mask)[src];
    if (frame.gt_category) (*out.gt_category)[k] = (*frame.gt_category)[src];
  }
  return out;
}

RadarFrame sample_points(const RadarFrame& frame, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_points: sample size must be positive");
  if (frame.size() == 0) throw std::invalid_argument("sample_points: empty frame");
  std::mt19937_64 rng(seed);
  const std::size_t total = frame.size();
  std::vector<std::size_t> picks;
  if (total >= n) {
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    picks.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    picks.resize(n);
    for (auto& p : picks) p = pick(rng);
  }
  return select_points(frame, picks);
}

}  // namespace iterflow::geom
