#include "iterflow/report.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

namespace iterflow::report {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kCategories[] = {"car", "pedestrian", "cyclist"};

std::string header_fields() {
  std::string h = "epe,acc_s,acc_r,rne,mrne,srne,epe_fd,epe_bs,epe_fs,epe_3way,n_points,n_moving,n_static,n_fd,n_bs,n_fs";
  for (const char* c : kCategories) h += std::string(",snepe_") + c;
  return h;
}

std::string row_fields(const metrics::EvalReport& r) {
  std::ostringstream os;
  const auto& t = r.three_way;
  os << num(r.epe) << ',' << num(r.acc_s) << ',' << num(r.acc_r) << ',' << num(r.rne) << ',' << num(r.mrne) << ','
     << num(r.srne) << ',' << num(t.fd) << ',' << num(t.bs) << ',' << num(t.fs) << ',' << num(t.mean) << ','
     << r.num_points << ',' << r.num_moving << ',' << r.num_static << ',' << t.n_fd << ',' << t.n_bs << ',' << t.n_fs;
  for (const char* c : kCategories) {
    const auto it = r.per_category.find(c);
    os << ',' << (it == r.per_category.end() ? std::string() : num(it->second));
  }
  return os.str();
}

}  // namespace

std::string eval_csv(const metrics::EvalReport& r) { return header_fields() + "\n" + row_fields(r) + "\n"; }

std::string eval_json(const metrics::EvalReport& r, const std::vector<std::pair<std::string, std::string>>& meta) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : meta) j[k] = v;
  j["epe"] = r.epe;
  j["acc_s"] = r.acc_s;
  j["acc_r"] = r.acc_r;
  j["rne"] = r.rne;
  j["mrne"] = r.mrne;
  j["srne"] = r.srne;
  j["three_way"] = {{"fd", r.three_way.fd},     {"bs", r.three_way.bs},     {"fs", r.three_way.fs},
                    {"mean", r.three_way.mean}, {"n_fd", r.three_way.n_fd}, {"n_bs", r.three_way.n_bs},
                    {"n_fs", r.three_way.n_fs}};
  nlohmann::ordered_json cats = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.per_category) cats[k] = v;
  j["speed_normalized_epe"] = cats;
  j["num_points"] = r.num_points;
  j["num_moving"] = r.num_moving;
  j["num_static"] = r.num_static;
  return j.dump(2) + "\n";
}

std::string sweep_csv(const std::string& axis, const std::vector<SweepPoint>& rows) {
  std::string out = axis + "," + header_fields() + "\n";
  for (const auto& r : rows) out += num(r.value) + "," + row_fields(r.report) + "\n";
  return out;
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<double>& x, const std::vector<Series>& series) {
  const double W = 640, H = 400, left = 70, right = 20, top = 40, bottom = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!x.empty()) {
    xmin = *std::min_element(x.begin(), x.end());
    xmax = *std::max_element(x.begin(), x.end());
  }
  bool first = true;
  for (const auto& s : series)
    for (double y : s.y) {
      if (!std::isfinite(y)) continue;
      ymin = first ? y : std::min(ymin, y);
      ymax = first ? y : std::max(ymax, y);
      first = false;
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double v) { return left + (v - xmin) / (xmax - xmin) * (W - left - right); };
  auto py = [&](double v) { return H - bottom - (v - ymin) / (ymax - ymin) * (H - top - bottom); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
  }
  for (double xv : x)
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\">" << num(xv)
       << "</text>\n";
  os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << (top + H - bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < std::min(x.size(), series[s].y.size()); ++i)
      if (std::isfinite(series[s].y[i])) os << px(x[i]) << ',' << py(series[s].y[i]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < std::min(x.size(), series[s].y.size()); ++i)
      if (std::isfinite(series[s].y[i]))
        os << "<circle cx=\"" << px(x[i]) << "\" cy=\"" << py(series[s].y[i]) << "\" r=\"3\" fill=\"" << color
           << "\"/>\n";
    os << "<text x=\"" << W - right - 10 << "\" y=\"" << top + 16 * (s + 1) << "\" text-anchor=\"end\" fill=\""
       << color << "\">" << escape(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string quiver_svg(const std::string& title, const geom::PointCloud& positions, const geom::PointCloud& prediction,
                       const geom::PointCloud& ground_truth) {
  const double W = 600, H = 600, margin = 30;
  double xmin = 0, xmax = 1, ymin = -1, ymax = 1;
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    const double fx = positions(i, 0), fy = positions(i, 1);
    if (i == 0) xmin = xmax = fx, ymin = ymax = fy;
    xmin = std::min(xmin, fx), xmax = std::max(xmax, fx);
    ymin = std::min(ymin, fy), ymax = std::max(ymax, fy);
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1.0}) * 1.1;
  const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  const double s = (W - 2 * margin) / span;
  // forward (x) is up, left (y) is left
  auto sx = [&](double y) { return W / 2 - (y - cy) * s; };
  auto sy = [&](double x) { return H / 2 - (x - cx) * s; };
  constexpr double kArrowScale = 3.0;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  os << "<text x=\"10\" y=\"" << H - 10 << "\" fill=\"#2ca02c\">ground truth</text>\n";
  os << "<text x=\"110\" y=\"" << H - 10 << "\" fill=\"#d62728\">prediction</text>\n";
  os << "<text x=\"" << W - 10 << "\" y=\"" << H - 10 << "\" text-anchor=\"end\">arrows x" << kArrowScale
     << "</text>\n";
  auto arrows = [&](const geom::PointCloud& f, const char* color) {
    if (f.rows() != positions.rows()) return;
    for (Eigen::Index i = 0; i < positions.rows(); ++i) {
      const double x0 = positions(i, 0), y0 = positions(i, 1);
      const double x1 = x0 + kArrowScale * f(i, 0), y1 = y0 + kArrowScale * f(i, 1);
      os << "<line x1=\"" << num(sx(y0)) << "\" y1=\"" << num(sy(x0)) << "\" x2=\"" << num(sx(y1)) << "\" y2=\""
         << num(sy(x1)) << "\" stroke=\"" << color << "\" stroke-width=\"1.2\"/>\n";
    }
  };
  arrows(ground_truth, "#2ca02c");
  arrows(prediction, "#d62728");
  for (Eigen::Index i = 0; i < positions.rows(); ++i)
    os << "<circle cx=\"" << num(sx(positions(i, 1))) << "\" cy=\"" << num(sy(positions(i, 0)))
       << "\" r=\"1.8\" fill=\"black\"/>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace iterflow::report
