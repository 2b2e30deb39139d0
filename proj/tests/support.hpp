#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "iterflow/autodiff.hpp"
#include "iterflow/geom.hpp"

namespace testing {

using iterflow::ad::Shape;
using iterflow::ad::Tensor;
using iterflow::geom::PointCloud;

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent) {
  std::uniform_real_distribution<double> d(-extent, extent);
  PointCloud p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int j = 0; j < 3; ++j) p(i, j) = d(rng);
  return p;
}

// max |a - b| / max(1, |a|, |b|) over all entries
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// Central differences of f with respect to the leaf x (perturbed in place).
inline std::vector<double> numeric_gradient(Tensor& x, const std::function<double()>& f, double h = 1e-5) {
  auto data = x.mutable_data();
  std::vector<double> g(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double keep = data[i];
    data[i] = keep + h;
    const double up = f();
    data[i] = keep - h;
    const double down = f();
    data[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline std::vector<double> grad_of(const Tensor& x) {
  auto g = x.grad();
  if (g.empty()) return std::vector<double>(x.size(), 0.0);
  return {g.begin(), g.end()};
}

}  // namespace testing
