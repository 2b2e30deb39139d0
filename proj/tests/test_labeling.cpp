#include <doctest.h>

#include "iterflow/labeling.hpp"
#include "support.hpp"

using namespace iterflow;
using namespace iterflow::labeling;
using geom::PointCloud;
using geom::Vec3;

namespace {

geom::Calibration tiny_camera() {
  geom::Calibration c;
  c.width = 4;
  c.height = 4;
  c.intrinsics << 1, 0, 2, 0, 1, 2, 0, 0, 1;
  return c;
}

InstanceMask box_mask(std::int32_t id, int x0, int y0, int x1, int y1) {
  InstanceMask m;
  m.track_id = id;
  m.bitmap.assign(16, 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.bitmap[static_cast<std::size_t>(y * 4 + x)] = 1;
  return m;
}

geom::RadarFrame frame(const PointCloud& p) {
  geom::RadarFrame f;
  f.positions = p;
  f.rcs.assign(static_cast<std::size_t>(p.rows()), 0.0);
  f.rrv.assign(static_cast<std::size_t>(p.rows()), 0.0);
  return f;
}

}  // namespace

TEST_CASE("labels from masks") {
  InstanceMaskSet set{4, 4, {box_mask(3, 0, 0, 4, 4), box_mask(7, 2, 2, 3, 3)}};
  PointCloud p(4, 3);
  // pixel (2.5, 2.5) overlaps both masks; (0.5, 0.5) only track 3; behind camera; outside the image
  p << 0.5, 0.5, 1, -1.5, -1.5, 1, 0, 0, -1, 10, 0, 1;
  auto labels = assign_instance_labels(frame(p), set, tiny_camera());
  CHECK(labels == std::vector<std::int32_t>{7, 3, 0, 0});

  InstanceMaskSet wrong{5, 4, {}};
  CHECK_THROWS(assign_instance_labels(frame(p), wrong, tiny_camera()));
  InstanceMaskSet dup{4, 4, {box_mask(1, 0, 0, 1, 1), box_mask(1, 1, 1, 2, 2)}};
  CHECK_THROWS(dup.validate());
}

TEST_CASE("instance sets") {
  auto none = build_instance_sets({0, 0}, {0});
  CHECK(none.num_instances == 0);
  CHECK(none.source_sets.empty());

  auto a = build_instance_sets({1, 2, 0, 2}, {3, 2, 0});
  CHECK(a.num_instances == 3);
  CHECK(a.track_ids == std::vector<std::int32_t>{1, 2, 3});
  CHECK(a.source_sets[1] == std::vector<std::int32_t>{1, 3});
  CHECK(a.target_sets[0].empty());
  CHECK(a.source_sets[2].empty());
  CHECK(a.target_sets[2] == std::vector<std::int32_t>{0});
  CHECK(a.source_labels == std::vector<std::int32_t>{1, 2, 0, 2});

  auto same = build_instance_sets({5, 9}, {9, 5});
  for (std::size_t g = 0; g < same.num_instances; ++g) {
    CHECK(!same.source_sets[g].empty());
    CHECK(!same.target_sets[g].empty());
  }
}

TEST_CASE("label totality") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::int32_t> s(30), t(25);
    for (auto& v : s) v = static_cast<std::int32_t>(rng() % 5);
    for (auto& v : t) v = static_cast<std::int32_t>(rng() % 5);
    auto a = build_instance_sets(s, t);
    std::vector<int> seen(s.size(), 0);
    for (std::size_t g = 0; g < a.num_instances; ++g)
      for (auto i : a.source_sets[g]) {
        ++seen[static_cast<std::size_t>(i)];
        CHECK(a.source_labels[static_cast<std::size_t>(i)] == static_cast<std::int32_t>(g + 1));
      }
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(seen[i] == (s[i] != 0 ? 1 : 0));
  }
}

TEST_CASE("ego compensation") {
  PointCloud p(2, 3);
  p << 10, 0, 0, 0, 10, 0;
  auto f = frame(p);
  f.rrv = {-1.0, 0.4};
  auto still = compensate_rrv(f, Vec3::Zero());
  CHECK(still == f.rrv);
  auto arv = compensate_rrv(f, Vec3(1, 0, 0));
  CHECK(arv[0] == doctest::Approx(0.0));
  CHECK(arv[1] == doctest::Approx(0.4));
  PointCloud at_origin = PointCloud::Zero(1, 3);
  CHECK_THROWS(compensate_rrv(frame(at_origin), Vec3(1, 0, 0)));
}

TEST_CASE("static set thresholding") {
  CHECK(extract_static_set({0.05, 0.2, -0.09}, 0.1) == std::vector<std::int32_t>{0, 2});
  CHECK(extract_static_set({0, 0, 0}, 0.1).size() == 3);
  CHECK(extract_static_set({0, 0.01}, 0.0).empty());
  std::mt19937_64 rng(4);
  auto arv = testing::uniform(rng, 200, -0.5, 0.5);
  for (double g = 0; g < 0.5; g += 0.05) {
    auto lo = extract_static_set(arv, g), hi = extract_static_set(arv, g + 0.05);
    CHECK(std::includes(hi.begin(), hi.end(), lo.begin(), lo.end()));
  }
}

TEST_CASE("box flow") {
  TrackedBox b0{.track_id = 1, .center = Vec3(5, 0, 0), .timestamp = 0.0};
  TrackedBox b1 = b0;
  b1.center = Vec3(6, 0, 0);
  b1.timestamp = 0.5;
  PointCloud p(2, 3);
  p << 5, 0.2, 0.1, 4.7, -0.3, 0;
  auto d = rigid_flow_from_boxes(p, b0, b1);
  CHECK(d(0, 0) == doctest::Approx(1.0));
  CHECK(d(1, 1) == doctest::Approx(0.0));
  auto v = rigid_flow_from_boxes(p, b0, b1, FlowUnit::kVelocity);
  CHECK(v(1, 0) == doctest::Approx(2.0));
  CHECK(rigid_flow_from_boxes(p, b0, b0).norm() == 0.0);
  b1.timestamp = 0.0;
  CHECK_THROWS(rigid_flow_from_boxes(p, b0, b1, FlowUnit::kVelocity));

  TrackedBox r1 = b0;
  r1.yaw = 0.3;
  r1.timestamp = 0.1;
  auto rot = rigid_flow_from_boxes(p, b0, r1);
  const auto T = r1.pose().compose(b0.pose().inverse());
  CHECK((rot.row(1).transpose() - (T.apply(p.row(1).transpose()) - p.row(1).transpose())).norm() < 1e-12);
}
