#include <doctest.h>

#include "iterflow/labeling.hpp"
#include "iterflow/synth.hpp"

using namespace iterflow;
using geom::Vec3;

namespace {

synth::SceneSpec one_car(Vec3 velocity, double dt = 0.1) {
  synth::SceneSpec s;
  s.seed = 4;
  synth::InstanceSpec car;
  car.center = Vec3(12, 1, -0.25);
  car.velocity = velocity;
  s.instances = {car};
  s.dt = dt;
  return s;
}

}  // namespace

TEST_CASE("static world gives zero flow and zero rrv") {
  auto s = one_car(Vec3::Zero());
  auto p = synth::generate_pair(s);
  REQUIRE(p.source.size() > 0);
  CHECK(p.source.gt_flow->cwiseAbs().maxCoeff() == 0.0);
  for (double v : p.source.rrv) CHECK(v == 0.0);
  CHECK(synth::verify_pair(p).ok());
}

TEST_CASE("translating instance") {
  auto p = synth::generate_pair(one_car(Vec3(1, 0, 0)));
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.source.size(); ++i) {
    const auto row = p.source.gt_flow->row(static_cast<Eigen::Index>(i));
    if ((*p.source.gt_instance)[i] == 1) {
      ++n;
      CHECK((row - Eigen::RowVector3d(0.1, 0, 0)).norm() < 1e-12);
      CHECK((*p.source.gt_category)[i] == geom::Category::kCar);
      CHECK((*p.source.foreground_mask)[i] == 1);
    } else {
      CHECK(row.norm() == 0.0);
    }
  }
  CHECK(n > 0);
}

TEST_CASE("generation is deterministic") {
  auto spec = synth::random_scene(77);
  auto a = synth::generate_pair(spec), b = synth::generate_pair(spec);
  CHECK(a.source.positions == b.source.positions);
  CHECK(a.target.positions == b.target.positions);
  CHECK(a.source.rrv == b.source.rrv);
  CHECK(*a.source.gt_flow == *b.source.gt_flow);
  CHECK(a.source_masks.masks.size() == b.source_masks.masks.size());
  for (std::size_t m = 0; m < a.source_masks.masks.size(); ++m)
    CHECK(a.source_masks.masks[m].bitmap == b.source_masks.masks[m].bitmap);
}

TEST_CASE("flow is additive over time") {
  auto s = one_car(Vec3(3, -1, 0));
  s.ego_velocity = Vec3(4, 0, 0);
  auto a = synth::generate_pair(s);
  s.dt = 0.2;
  auto b = synth::generate_pair(s);
  REQUIRE(a.source.positions == b.source.positions);
  CHECK((*b.source.gt_flow - 2 * *a.source.gt_flow).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("noise-free scenes pass every check") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    synth::RandomSceneOptions opt;
    opt.position_noise = 0;
    opt.rrv_noise = 0;
    auto p = synth::generate_pair(synth::random_scene(seed, opt));
    auto d = synth::verify_pair(p);
    CHECK_MESSAGE(d.ok(), d.summary());
    CHECK(d.points_checked > 0);
  }
}

TEST_CASE("mask labels reproduce generator membership") {
  synth::RandomSceneOptions opt;
  opt.position_noise = 0;
  opt.rrv_noise = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = synth::generate_pair(synth::random_scene(seed, opt));
    auto labels = labeling::assign_instance_labels(p.source, p.source_masks, p.calib);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if ((*p.source.gt_instance)[i] != 0) CHECK(labels[i] == (*p.source.gt_instance)[i]);
  }
}

TEST_CASE("compensated rrv recovers radial speed") {
  synth::RandomSceneOptions opt;
  opt.position_noise = 0;
  opt.rrv_noise = 0;
  opt.max_ego_yaw_rate = 0;
  auto spec = synth::random_scene(3, opt);
  for (auto& inst : spec.instances) inst.yaw_rate = 0;
  auto p = synth::generate_pair(spec);
  auto arv = labeling::compensate_rrv(p.source, p.ego_velocity);
  for (std::size_t i = 0; i < arv.size(); ++i) {
    const auto id = (*p.source.gt_instance)[i];
    const Vec3 x = p.source.positions.row(static_cast<Eigen::Index>(i)).transpose();
    const Vec3 v = id == 0 ? Vec3::Zero() : spec.instances[static_cast<std::size_t>(id - 1)].velocity;
    CHECK(std::abs(arv[i] - v.dot(x.normalized())) < 1e-9);
  }
}

TEST_CASE("corrupted labels are reported with their index") {
  synth::RandomSceneOptions opt;
  opt.position_noise = 0;
  opt.rrv_noise = 0;
  auto p = synth::generate_pair(synth::random_scene(5, opt));
  std::size_t victim = p.source.size();
  for (std::size_t i = 0; i < p.source.size(); ++i)
    if ((*p.source.gt_instance)[i] == 0 && p.source.positions(static_cast<Eigen::Index>(i), 2) < -0.9) {
      victim = i;
      break;
    }
  REQUIRE(victim < p.source.size());
  (*p.source.gt_instance)[victim] = 1;
  auto d = synth::verify_pair(p);
  REQUIRE(!d.ok());
  CHECK(d.issues[0].index == victim);
  CHECK(d.issues[0].frame == "source");

  auto q = synth::generate_pair(synth::random_scene(5, opt));
  q.source.rrv[2] += 0.5;
  auto e = synth::verify_pair(q);
  bool found = false;
  for (const auto& i : e.issues) found |= i.index == 2;
  CHECK(found);
}

TEST_CASE("noisy scenes stay within the three sigma tail") {
  std::size_t checked = 0, issues = 0;
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    auto d = synth::verify_pair(synth::generate_pair(synth::random_scene(seed)));
    checked += d.points_checked;
    issues += d.issues.size();
  }
  // two-sided 3 sigma tail is 0.27%
  CHECK(checked > 1000);
  CHECK(double(issues) / double(checked) < 0.01);
}

TEST_CASE("degenerate specs are rejected") {
  synth::SceneSpec s;
  s.background_points = 0;
  s.clutter_points = 0;
  CHECK_THROWS(synth::generate_pair(s));
  synth::SceneSpec bad;
  bad.dt = 0;
  CHECK_THROWS(synth::generate_pair(bad));
  synth::SceneSpec overlap = one_car(Vec3::Zero());
  overlap.instances.push_back(overlap.instances[0]);
  CHECK_THROWS(synth::generate_pair(overlap));
}

TEST_CASE("point budget") {
  auto s = one_car(Vec3(1, 0, 0));
  s.points_per_frame = 64;
  auto p = synth::generate_pair(s);
  CHECK(p.source.size() == 64);
  CHECK(p.target.size() == 64);
}
