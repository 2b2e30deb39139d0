#include "iterflow/metrics.hpp"

#include <stdexcept>
#include <string>

namespace iterflow::metrics {

namespace {

void check_aligned(const geom::PointCloud& pred, const geom::PointCloud& gt, const char* op) {
  if (pred.rows() != gt.rows())
    throw std::invalid_argument(std::string(op) + ": prediction has " + std::to_string(pred.rows()) +
                                " points, ground truth has " + std::to_string(gt.rows()));
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> point_errors(const geom::PointCloud& pred, const geom::PointCloud& gt) {
  check_aligned(pred, gt, "point_errors");
  std::vector<double> e(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) e[static_cast<std::size_t>(i)] = (pred.row(i) - gt.row(i)).norm();
  return e;
}

double epe(const geom::PointCloud& pred, const geom::PointCloud& gt) {
  check_aligned(pred, gt, "epe");
  return mean_of(point_errors(pred, gt));
}

double acc(const geom::PointCloud& pred, const geom::PointCloud& gt, bool strict) {
  check_aligned(pred, gt, "acc");
  if (pred.rows() == 0) return 0.0;
  const double abs_tol = strict ? 0.05 : 0.1;
  const double rel_tol = strict ? 0.05 : 0.1;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const double err = (pred.row(i) - gt.row(i)).norm();
    const double mag = gt.row(i).norm();
    if (err < abs_tol || (mag > 0.0 && err / mag < rel_tol)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.rows());
}

double rne(const geom::PointCloud& pred, const geom::PointCloud& gt, double resolution_ratio) {
  if (!(resolution_ratio > 0.0)) throw std::invalid_argument("rne: resolution ratio must be positive");
  return epe(pred, gt) / resolution_ratio;
}

PointClassification classify_points(const geom::PointCloud& positions, const geom::PointCloud& gt_flow,
                                    const geom::RigidTransform& ego, const std::vector<std::uint8_t>& foreground,
                                    double motion_threshold) {
  check_aligned(positions, gt_flow, "classify_points");
  if (foreground.size() != static_cast<std::size_t>(positions.rows()))
    throw std::invalid_argument("classify_points: foreground mask length mismatch");
  const geom::PointCloud rigid = geom::rigid_flow(ego, positions);
  PointClassification cls;
  cls.moving.resize(foreground.size());
  cls.region.resize(foreground.size());
  for (std::size_t i = 0; i < foreground.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const bool moving = (gt_flow.row(row) - rigid.row(row)).norm() > motion_threshold;
    cls.moving[i] = moving;
    if (moving)
      cls.region[i] = Region::kForegroundDynamic;
    else
      cls.region[i] = foreground[i] ? Region::kForegroundStatic : Region::kBackgroundStatic;
  }
  return cls;
}

ThreeWay three_way_epe(const geom::PointCloud& pred, const geom::PointCloud& gt, const PointClassification& cls) {
  const auto err = point_errors(pred, gt);
  if (cls.region.size() != err.size()) throw std::invalid_argument("three_way_epe: classification length mismatch");
  double sum[3] = {0, 0, 0};
  std::size_t cnt[3] = {0, 0, 0};
  for (std::size_t i = 0; i < err.size(); ++i) {
    const auto r = static_cast<std::size_t>(cls.region[i]);
    sum[r] += err[i];
    ++cnt[r];
  }
  ThreeWay t;
  double acc_mean = 0.0;
  std::size_t present = 0;
  double* slots[3] = {&t.fd, &t.bs, &t.fs};
  for (std::size_t r = 0; r < 3; ++r) {
    if (cnt[r] == 0) continue;
    *slots[r] = sum[r] / static_cast<double>(cnt[r]);
    acc_mean += *slots[r];
    ++present;
  }
  t.n_fd = cnt[0];
  t.n_bs = cnt[1];
  t.n_fs = cnt[2];
  t.mean = present ? acc_mean / static_cast<double>(present) : 0.0;
  return t;
}

std::map<std::string, double> speed_normalized_epe(const geom::PointCloud& pred, const geom::PointCloud& gt,
                                                   const PointClassification& cls,
                                                   const std::vector<geom::Category>& categories) {
  check_aligned(pred, gt, "speed_normalized_epe");
  if (categories.size() != static_cast<std::size_t>(pred.rows()) || cls.region.size() != categories.size())
    throw std::invalid_argument("speed_normalized_epe: label length mismatch");
  std::map<std::string, std::pair<double, std::size_t>> acc_map;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (cls.region[i] != Region::kForegroundDynamic) continue;
    const auto row = static_cast<Eigen::Index>(i);
    const double speed = gt.row(row).norm();
    if (speed < 1e-6) continue;
    auto& slot = acc_map[geom::category_name(categories[i])];
    slot.first += (pred.row(row) - gt.row(row)).norm() / speed;
    slot.second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [name, s] : acc_map) out[name] = s.first / static_cast<double>(s.second);
  return out;
}

EvalReport evaluate(const geom::PointCloud& pred, const geom::PointCloud& gt, const PointClassification& cls,
                    const std::vector<geom::Category>& categories, double resolution_ratio) {
  if (!(resolution_ratio > 0.0)) throw std::invalid_argument("evaluate: resolution ratio must be positive");
  EvalReport r;
  const auto err = point_errors(pred, gt);
  r.num_points = err.size();
  r.epe = mean_of(err);
  r.acc_s = acc(pred, gt, true);
  r.acc_r = acc(pred, gt, false);
  r.rne = r.epe / resolution_ratio;
  std::vector<double> moving, still;
  for (std::size_t i = 0; i < err.size(); ++i) (cls.moving[i] ? moving : still).push_back(err[i]);
  r.num_moving = moving.size();
  r.num_static = still.size();
  r.mrne = mean_of(moving) / resolution_ratio;
  r.srne = mean_of(still) / resolution_ratio;
  r.three_way = three_way_epe(pred, gt, cls);
  r.per_category = speed_normalized_epe(pred, gt, cls, categories);
  return r;
}

void Evaluator::add(const geom::PointCloud& pred, const geom::PointCloud& gt, const geom::PointCloud& positions,
                    const geom::RigidTransform& ego, const std::vector<std::uint8_t>& foreground,
                    const std::vector<geom::Category>& categories) {
  check_aligned(pred, gt, "Evaluator::add");
  const auto cls = classify_points(positions, gt, ego, foreground, options_.motion_threshold);
  if (categories.size() != foreground.size()) throw std::invalid_argument("Evaluator::add: category length mismatch");
  const Eigen::Index base = pred_.rows();
  pred_.conservativeResize(base + pred.rows(), 3);
  gt_.conservativeResize(base + gt.rows(), 3);
  pred_.bottomRows(pred.rows()) = pred;
  gt_.bottomRows(gt.rows()) = gt;
  cls_.moving.insert(cls_.moving.end(), cls.moving.begin(), cls.moving.end());
  cls_.region.insert(cls_.region.end(), cls.region.begin(), cls.region.end());
  categories_.insert(categories_.end(), categories.begin(), categories.end());
}

EvalReport Evaluator::report() const {
  return evaluate(pred_, gt_, cls_, categories_, options_.resolution_ratio);
}

}  // namespace iterflow::metrics
