#pragma once

// Text and SVG exports of evaluation results.

#include <string>
#include <vector>

#include "iterflow/geom.hpp"
#include "iterflow/metrics.hpp"

namespace iterflow::report {

// Header plus one row; per-category columns follow the fixed ones.
std::string eval_csv(const metrics::EvalReport& r);
std::string eval_json(const metrics::EvalReport& r, const std::vector<std::pair<std::string, std::string>>& meta = {});

struct SweepPoint {
  double value = 0.0;
  metrics::EvalReport report;
};
std::string sweep_csv(const std::string& axis, const std::vector<SweepPoint>& rows);

struct Series {
  std::string name;
  std::vector<double> y;
};

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<double>& x, const std::vector<Series>& series);

// Bird's-eye view (x forward = up, y left = left): source points with ground
// truth arrows in green and predicted arrows in red.
std::string quiver_svg(const std::string& title, const geom::PointCloud& positions, const geom::PointCloud& prediction,
                       const geom::PointCloud& ground_truth);

}  // namespace iterflow::report
