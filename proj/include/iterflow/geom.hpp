#pragma once

// Point-cloud containers and the spatial primitives shared by the network,
// the label pipeline and the losses.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace iterflow::geom {

using PointCloud = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class Category : std::int32_t { kNone = 0, kCar = 1, kPedestrian = 2, kCyclist = 3 };

const char* category_name(Category c);

// One radar scan. Per-point layout follows [x, y, z, RCS, v_r].
struct RadarFrame {
  PointCloud positions;
  std::vector<double> rcs;
  std::vector<double> rrv;  // relative radial velocity, m/s, negative when closing

  std::optional<PointCloud> gt_flow;                 // m per frame interval
  std::optional<std::vector<std::int32_t>> gt_instance;  // track id, 0 = background
  std::optional<std::vector<std::uint8_t>> foreground_mask;
  std::optional<std::vector<Category>> gt_category;

  std::size_t size() const { return static_cast<std::size_t>(positions.rows()); }
  // N x 5 network input [x, y, z, RCS, RRV].
  Eigen::Matrix<double, Eigen::Dynamic, 5, Eigen::RowMajor> features() const;
  // Throws std::invalid_argument when per-point arrays disagree in length or
  // positions are non-finite.
  void validate() const;
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_yaw(double yaw, const Vec3& translation);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  // (this ∘ other)(p) = this(other(p))
  RigidTransform compose(const RigidTransform& other) const;
  bool is_valid(double tol = 1e-9) const;
};

struct Calibration {
  Mat3 intrinsics = Mat3::Identity();
  RigidTransform radar_to_camera;
  int width = 0;
  int height = 0;

  void validate() const;
};

// Compressed sparse rows of neighbor indices, one row per query.
struct NeighborLists {
  std::vector<std::size_t> offsets{0};
  std::vector<std::int32_t> indices;

  std::size_t queries() const { return offsets.size() - 1; }
  std::size_t count(std::size_t q) const { return offsets[q + 1] - offsets[q]; }
  const std::int32_t* begin(std::size_t q) const { return indices.data() + offsets[q]; }
  const std::int32_t* end(std::size_t q) const { return indices.data() + offsets[q + 1]; }
};

struct BallQueryOptions {
  // Skip target j for query j; used when querying a cloud against itself.
  bool exclude_self = false;
};

// Up to `max_count` targets within `radius` of each query, nearest first, ties
// by lower index. Empty rows when nothing is in range.
NeighborLists ball_query(const PointCloud& queries, const PointCloud& targets, double radius,
                         std::size_t max_count, BallQueryOptions options = {});
// Reference O(MN) scan; the accelerated path must agree with it exactly.
NeighborLists ball_query_brute_force(const PointCloud& queries, const PointCloud& targets, double radius,
                                     std::size_t max_count, BallQueryOptions options = {});
// Uniform-grid implementation used automatically above a size threshold.
NeighborLists ball_query_grid(const PointCloud& queries, const PointCloud& targets, double radius,
                              std::size_t max_count, BallQueryOptions options = {});

class EmptySetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NearestNeighbor {
  std::size_t index;
  double squared_distance;
};

NearestNeighbor nearest_neighbor(const Vec3& query, const PointCloud& targets);

PointCloud apply_transform(const RigidTransform& transform, const PointCloud& points);
// T∘p − p for every row.
PointCloud rigid_flow(const RigidTransform& transform, const PointCloud& points);

struct Pixel {
  double u;
  double v;
  double depth;  // camera-frame z
};

// Pixel coordinates per point, std::nullopt when the point is behind the
// camera (depth <= 1e-6) or lands outside the image.
std::vector<std::optional<Pixel>> project_to_image(const PointCloud& points, const Calibration& calib);
// Inverse of the projection at a known camera-frame depth, in radar coordinates.
Vec3 back_project(double u, double v, double depth, const Calibration& calib);

// Exactly n points: without replacement when the frame is large enough, with
// replacement otherwise. Annotations travel with their points.
RadarFrame sample_points(const RadarFrame& frame, std::size_t n, std::uint64_t seed);
RadarFrame select_points(const RadarFrame& frame, const std::vector<std::size_t>& indices);

}  // namespace iterflow::geom
