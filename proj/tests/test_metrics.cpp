#include <doctest.h>

#include "iterflow/metrics.hpp"
#include "support.hpp"

using namespace iterflow;
using namespace iterflow::metrics;
using geom::PointCloud;

TEST_CASE("epe") {
  PointCloud gt = PointCloud::Zero(2, 3), pred = PointCloud::Zero(2, 3);
  pred(0, 0) = 0.1;
  pred(1, 2) = 0.3;
  CHECK(epe(pred, gt) == doctest::Approx(0.2));
  CHECK(epe(gt, gt) == 0.0);
  CHECK(epe(2 * pred, gt) == doctest::Approx(0.4));
  CHECK_THROWS(epe(PointCloud::Zero(3, 3), gt));
}

TEST_CASE("accuracy") {
  PointCloud gt = PointCloud::Zero(1, 3), pred = PointCloud::Zero(1, 3);
  pred(0, 0) = 0.03;
  CHECK(acc(pred, gt, true) == 1.0);
  gt(0, 0) = 10.0;
  pred(0, 0) = 10.4;
  CHECK(acc(pred, gt, true) == 1.0);
  pred(0, 0) = 10.7;
  CHECK(acc(pred, gt, true) == 0.0);
  CHECK(acc(pred, gt, false) == 1.0);
  CHECK(acc(gt, gt, true) == 1.0);
  PointCloud zero_gt = PointCloud::Zero(1, 3), off = PointCloud::Zero(1, 3);
  off(0, 1) = 0.07;
  CHECK(acc(off, zero_gt, true) == 0.0);
  CHECK(acc(off, zero_gt, false) == 1.0);
}

TEST_CASE("resolution normalized epe") {
  PointCloud gt = PointCloud::Zero(1, 3), pred = PointCloud::Zero(1, 3);
  pred(0, 0) = 0.1045;
  CHECK(rne(pred, gt) == doctest::Approx(0.0418).epsilon(1e-12));
  CHECK(rne(pred, gt, 1.0) == epe(pred, gt));
  CHECK(rne(gt, gt) == 0.0);
}

TEST_CASE("classification") {
  PointCloud x(3, 3), gt = PointCloud::Zero(3, 3);
  x << 1, 0, 0, 2, 0, 0, 3, 0, 0;
  gt(0, 0) = 0.5;
  gt(2, 1) = 0.01;
  auto cls = classify_points(x, gt, geom::RigidTransform::identity(), {1, 1, 0});
  CHECK(cls.moving == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(cls.region[0] == Region::kForegroundDynamic);
  CHECK(cls.region[1] == Region::kForegroundStatic);
  CHECK(cls.region[2] == Region::kBackgroundStatic);
  auto strict = classify_points(x, gt, geom::RigidTransform::identity(), {1, 1, 0}, 0.0);
  CHECK(strict.moving == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(strict.region[2] == Region::kForegroundDynamic);
}

TEST_CASE("three way") {
  PointCloud gt = PointCloud::Zero(3, 3), pred = PointCloud::Zero(3, 3);
  pred(0, 0) = 0.3;
  pred(1, 0) = 0.1;
  pred(2, 0) = 0.05;
  PointClassification cls{{1, 0, 0},
                          {Region::kForegroundDynamic, Region::kBackgroundStatic, Region::kForegroundStatic}};
  auto t = three_way_epe(pred, gt, cls);
  CHECK(t.mean == doctest::Approx(0.15));
  CHECK(three_way_epe(gt, gt, cls).mean == 0.0);
  PointClassification no_fd{{0, 0, 0},
                            {Region::kBackgroundStatic, Region::kBackgroundStatic, Region::kForegroundStatic}};
  auto u = three_way_epe(pred, gt, no_fd);
  CHECK(u.n_fd == 0);
  CHECK(u.mean == doctest::Approx(((0.3 + 0.1) / 2 + 0.05) / 2));
}

TEST_CASE("speed normalized") {
  PointCloud gt = PointCloud::Zero(2, 3), pred = PointCloud::Zero(2, 3);
  gt(0, 0) = 1.0;
  pred(0, 0) = 1.9;
  PointClassification cls{{1, 0}, {Region::kForegroundDynamic, Region::kBackgroundStatic}};
  const std::vector<geom::Category> cats{geom::Category::kCar, geom::Category::kNone};
  CHECK(speed_normalized_epe(pred, gt, cls, cats).at("car") == doctest::Approx(0.9));
  CHECK(speed_normalized_epe(gt, gt, cls, cats).at("car") == 0.0);
  CHECK(speed_normalized_epe(PointCloud::Zero(2, 3), gt, cls, cats).at("car") == 1.0);
}

TEST_CASE("report invariants on random scenes") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 20 + rng() % 80;
    auto x = testing::random_cloud(rng, n, 10.0);
    auto gt = testing::random_cloud(rng, n, 0.2);
    const PointCloud pred = gt + testing::random_cloud(rng, n, 0.1);
    std::vector<std::uint8_t> fg(n);
    std::vector<geom::Category> cats(n);
    for (std::size_t i = 0; i < n; ++i) {
      fg[i] = rng() % 2;
      cats[i] = fg[i] ? static_cast<geom::Category>(1 + rng() % 3) : geom::Category::kNone;
    }
    const auto T = geom::RigidTransform::from_yaw(0.01, geom::Vec3(0.1, 0, 0));
    auto cls = classify_points(x, gt, T, fg);
    auto r = evaluate(pred, gt, cls, cats);
    CHECK(r.acc_s <= r.acc_r);
    CHECK(std::abs((r.num_moving * r.mrne + r.num_static * r.srne) / (r.num_moving + r.num_static) - r.rne) < 1e-9);

    const auto err = point_errors(pred, gt);
    double sums[3] = {0, 0, 0};
    std::size_t counts[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      sums[static_cast<int>(cls.region[i])] += err[i];
      ++counts[static_cast<int>(cls.region[i])];
    }
    if (counts[0]) CHECK(r.three_way.fd == doctest::Approx(sums[0] / counts[0]));
    if (counts[1]) CHECK(r.three_way.bs == doctest::Approx(sums[1] / counts[1]));
    if (counts[2]) CHECK(r.three_way.fs == doctest::Approx(sums[2] / counts[2]));
    double mean = 0;
    int present = 0;
    for (int c = 0; c < 3; ++c)
      if (counts[c]) mean += sums[c] / counts[c], ++present;
    CHECK(r.three_way.mean == doctest::Approx(mean / present));
  }
}

TEST_CASE("perfect prediction") {
  std::mt19937_64 rng(1);
  auto x = testing::random_cloud(rng, 40, 10.0), gt = testing::random_cloud(rng, 40, 0.5);
  Evaluator ev;
  ev.add(gt, gt, x, geom::RigidTransform::identity(), std::vector<std::uint8_t>(40, 1),
         std::vector<geom::Category>(40, geom::Category::kCar));
  auto r = ev.report();
  CHECK(r.epe == 0.0);
  CHECK(r.acc_s == 1.0);
  CHECK(r.acc_r == 1.0);
  CHECK(r.num_points == 40);
}
