#pragma once

// Scene-flow evaluation: EPE, strict/relaxed accuracy, resolution-normalized
// EPE (overall, moving, static), 3-way EPE and speed-normalized per-category
// EPE.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iterflow/geom.hpp"

namespace iterflow::metrics {

inline constexpr double kDefaultResolutionRatio = 2.5;
inline constexpr double kDefaultMotionThreshold = 0.05;  // m per frame

double epe(const geom::PointCloud& pred, const geom::PointCloud& gt);
// Per-point end-point errors.
std::vector<double> point_errors(const geom::PointCloud& pred, const geom::PointCloud& gt);
// Fraction of points with error < 0.05 m or relative error < 5% (strict), or
// 0.1 m / 10% (relaxed). The relative clause is skipped when |gt| = 0.
double acc(const geom::PointCloud& pred, const geom::PointCloud& gt, bool strict);
double rne(const geom::PointCloud& pred, const geom::PointCloud& gt, double resolution_ratio = kDefaultResolutionRatio);

enum class Region : std::uint8_t { kForegroundDynamic, kBackgroundStatic, kForegroundStatic };

struct PointClassification {
  std::vector<std::uint8_t> moving;  // 1 = moving
  std::vector<Region> region;
};

// Moving iff |gt_i - (T∘x_i - x_i)| > threshold. Background movers count as
// foreground-dynamic for the 3-way split.
PointClassification classify_points(const geom::PointCloud& positions, const geom::PointCloud& gt_flow,
                                    const geom::RigidTransform& ego, const std::vector<std::uint8_t>& foreground,
                                    double motion_threshold = kDefaultMotionThreshold);

struct ThreeWay {
  double fd = 0.0;
  double bs = 0.0;
  double fs = 0.0;
  double mean = 0.0;  // over classes that have points
  std::size_t n_fd = 0, n_bs = 0, n_fs = 0;
};

ThreeWay three_way_epe(const geom::PointCloud& pred, const geom::PointCloud& gt, const PointClassification& cls);

// Per category: mean over FD points of |pred - gt| / |gt|, skipping |gt| < 1e-6.
std::map<std::string, double> speed_normalized_epe(const geom::PointCloud& pred, const geom::PointCloud& gt,
                                                   const PointClassification& cls,
                                                   const std::vector<geom::Category>& categories);

struct EvalReport {
  double epe = 0.0;
  double acc_s = 0.0;
  double acc_r = 0.0;
  double rne = 0.0;
  double mrne = 0.0;
  double srne = 0.0;
  ThreeWay three_way;
  std::map<std::string, double> per_category;
  std::size_t num_points = 0;
  std::size_t num_moving = 0;
  std::size_t num_static = 0;
};

struct EvalOptions {
  double resolution_ratio = kDefaultResolutionRatio;
  double motion_threshold = kDefaultMotionThreshold;
};

// Pools every point of every scene, then evaluates all metrics.
class Evaluator {
 public:
  explicit Evaluator(EvalOptions options = {}) : options_(options) {}

  void add(const geom::PointCloud& pred, const geom::PointCloud& gt, const geom::PointCloud& positions,
           const geom::RigidTransform& ego, const std::vector<std::uint8_t>& foreground,
           const std::vector<geom::Category>& categories);
  EvalReport report() const;
  std::size_t size() const { return static_cast<std::size_t>(pred_.rows()); }

 private:
  EvalOptions options_;
  geom::PointCloud pred_;
  geom::PointCloud gt_;
  PointClassification cls_;
  std::vector<geom::Category> categories_;
};

EvalReport evaluate(const geom::PointCloud& pred, const geom::PointCloud& gt, const PointClassification& cls,
                    const std::vector<geom::Category>& categories, double resolution_ratio = kDefaultResolutionRatio);

}  // namespace iterflow::metrics
