#include <doctest.h>

#include <numeric>

#include "iterflow/model.hpp"
#include "support.hpp"

using namespace iterflow;
using ad::Shape;
using ad::Tensor;
using geom::PointCloud;

namespace {

model::IterFlowConfig small_config(std::uint64_t seed = 0) {
  model::IterFlowConfig c;
  c.feature_dim = 4;
  c.hidden_dim = 4;
  c.point_mlp_dim = 4;
  c.set_abstraction_dim = 4;
  c.correlation_dim = 4;
  c.motion_dim = 4;
  c.flow_embed_dim = 4;
  c.iterations = 2;
  c.radius = 1.5;
  c.seed = seed;
  return c;
}

geom::RadarFrame random_frame(std::mt19937_64& rng, std::size_t n, double extent = 2.0) {
  geom::RadarFrame f;
  f.positions = testing::random_cloud(rng, n, extent);
  f.rcs = testing::uniform(rng, n);
  f.rrv = testing::uniform(rng, n);
  return f;
}

void zero_params(ad::ParamStore& p, const std::string& prefix = "") {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.names()[i].rfind(prefix, 0) == 0)
      for (auto& v : p.tensors()[i].mutable_data()) v = 0.0;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("default parameter budget") {
  const auto n = model::parameter_count(model::IterFlowConfig{});
  CHECK(n >= 80000);
  CHECK(n <= 200000);
  CHECK(model::init_params(model::IterFlowConfig{}).total_parameters() == n);
}

TEST_CASE("config validation") {
  model::IterFlowConfig c;
  c.iterations = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.neighbors = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.radius = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("encoder with zero weights") {
  std::mt19937_64 rng(1);
  auto f = random_frame(rng, 10);
  auto cfg = small_config();
  auto p = model::init_params(cfg);
  zero_params(p, "enc.");
  auto e = model::encode<double>(f, p, cfg);
  for (double v : e.features.data()) CHECK(v == 0.0);
  CHECK(model::to_cloud(e.coords) == f.positions);
  auto m = e.as_matrix();
  CHECK(m.shape() == Shape{10, 3 + cfg.feature_dim});
  CHECK(m.at(3, 1) == f.positions(3, 1));
}

TEST_CASE("isolated point encodes through the point path only") {
  auto cfg = small_config();
  auto p = model::init_params(cfg);
  geom::RadarFrame f;
  f.positions.resize(1, 3);
  f.positions << 1, 2, 0.5;
  f.rcs = {0.3};
  f.rrv = {-0.4};
  auto e = model::encode<double>(f, p, cfg);
  // relu(relu([x, rcs, rrv] W0 + b0) W1 + b1) with zero pooled terms, then the projection
  const auto& w0 = p.get("enc.point0.w");
  const auto& b0 = p.get("enc.point0.b");
  const auto& w1 = p.get("enc.point1.w");
  const auto& b1 = p.get("enc.point1.b");
  const auto& wp = p.get("enc.proj.w");
  const auto& bp = p.get("enc.proj.b");
  const std::vector<double> in{1, 2, 0.5, 0.3, -0.4};
  const std::size_t P = cfg.point_mlp_dim, C = cfg.feature_dim;
  std::vector<double> h0(P), h1(P);
  for (std::size_t j = 0; j < P; ++j) {
    double s = b0.at(j);
    for (std::size_t i = 0; i < 5; ++i) s += in[i] * w0.at(i, j);
    h0[j] = std::max(0.0, s);
  }
  for (std::size_t j = 0; j < P; ++j) {
    double s = b1.at(j);
    for (std::size_t i = 0; i < P; ++i) s += h0[i] * w1.at(i, j);
    h1[j] = std::max(0.0, s);
  }
  for (std::size_t j = 0; j < C; ++j) {
    double s = bp.at(j);
    for (std::size_t i = 0; i < P; ++i) s += h1[i] * wp.at(i, j);
    CHECK(e.features.at(0, j) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("correlation on hand-set features") {
  auto cfg = small_config();
  cfg.feature_dim = 2;
  cfg.correlation_dim = 5;
  cfg.neighbors = 2;
  cfg.radius = 1.0;
  auto p = model::init_params(cfg);
  // identity on the 5-dim pair feature; the second layer also identity
  for (auto name : {"corr.0", "corr.1"}) {
    auto w = p.get(std::string(name) + ".w").mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < 5; ++i) w[i * 5 + i] = 1.0;
    auto b = p.get(std::string(name) + ".b").mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
  model::EncodedFrame<double> q{Tensor::constant(Shape{2, 3}, {0, 0, 0, 10, 10, 10}),
                                Tensor::constant(Shape{2, 2}, {2, 1, 1, 1})};
  model::EncodedFrame<double> t{Tensor::constant(Shape{3, 3}, {0.5, 0, 0, 0, 0.2, 0, 0, 0, 0.9}),
                                Tensor::constant(Shape{3, 2}, {1, 3, 2, 0.5, 5, 5})};
  auto c = model::correlate(q, t, p, cfg);
  REQUIRE(c.shape() == Shape{2, 5});
  // neighbors of q0: t1 (0.2) then t0 (0.5); pair = [f_y * f_q, y - q], relu'd twice
  const std::vector<double> expect{std::max(2.0 * 1, 2.0 * 2), std::max(3.0, 0.5), 0.5, 0.2, 0.0};
  for (std::size_t j = 0; j < 5; ++j) CHECK(c.at(0, j) == doctest::Approx(expect[j]));
  for (std::size_t j = 0; j < 5; ++j) CHECK(c.at(1, j) == 0.0);
}

TEST_CASE("gru with zero weights halves the state") {
  auto cfg = small_config();
  auto p = model::init_params(cfg);
  zero_params(p, "gru.");
  auto h = Tensor::constant(Shape{2, 4}, {0.5, -0.2, 0.9, 0.0, -0.7, 0.1, 0.3, 0.4});
  auto x = Tensor::constant(Shape{2, cfg.gru_input_dim()}, std::vector<double>(2 * cfg.gru_input_dim(), 0.3));
  auto state = h;
  for (int k = 1; k <= 5; ++k) {
    state = model::gru_step(state, x, p);
    for (std::size_t i = 0; i < 8; ++i) CHECK(state.data()[i] == doctest::Approx(std::pow(0.5, k) * h.data()[i]));
  }
}

TEST_CASE("gru from zero state stays bounded") {
  std::mt19937_64 rng(3);
  auto cfg = small_config();
  auto p = model::init_params(cfg);
  auto h = Tensor::zeros(Shape{6, 4});
  auto x = Tensor::constant(Shape{6, cfg.gru_input_dim()}, testing::uniform(rng, 6 * cfg.gru_input_dim(), -5, 5));
  model::GateTrace trace;
  auto next = model::gru_step(h, x, p, &trace);
  for (double v : next.data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  CHECK(trace.z_min[0] > 0.0);
  CHECK(trace.r_max[0] < 1.0);
}

TEST_CASE("flow head") {
  auto cfg = small_config();
  cfg.hidden_dim = 3;
  auto p = model::init_params(cfg);
  auto h = Tensor::constant(Shape{2, 3}, {0.2, 0.5, 0.1, 0.9, 0.3, 0.7});
  for (auto name : {"head.0", "head.1"}) {
    auto w = p.get(std::string(name) + ".w").mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    auto b = p.get(std::string(name) + ".b").mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
  CHECK(values(model::flow_head(h, p)) == values(h));
  for (auto& v : p.get("head.1.w").mutable_data()) v *= -2.5;
  auto scaled = model::flow_head(h, p);
  for (std::size_t i = 0; i < 6; ++i) CHECK(scaled.data()[i] == doctest::Approx(-2.5 * h.data()[i]));
  zero_params(p, "head.");
  const auto zero = model::flow_head(h, p);
  for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("assembled input with zero flow and zero biases") {
  auto cfg = small_config();
  auto p = model::init_params(cfg);
  zero_params(p, "motion.b");
  zero_params(p, "flow_embed.b");
  auto x = model::assemble_gru_input(Tensor::zeros(Shape{3, cfg.correlation_dim}), Tensor::zeros(Shape{3, cfg.feature_dim}),
                                     Tensor::zeros(Shape{3, 3}), p);
  CHECK(x.shape() == Shape{3, cfg.gru_input_dim()});
  for (double v : x.data()) CHECK(v == 0.0);
}

TEST_CASE("zero flow head gives zero flow") {
  std::mt19937_64 rng(2);
  auto src = random_frame(rng, 8), tgt = random_frame(rng, 9);
  auto cfg = small_config();
  auto p = model::init_params(cfg);
  zero_params(p, "head.");
  auto out = model::forward<double>(src, tgt, cfg, p);
  for (const auto& f : out.flows)
    for (double v : f.data()) CHECK(v == 0.0);
}

TEST_CASE("one iteration equals a manual pass") {
  std::mt19937_64 rng(8);
  auto src = random_frame(rng, 7), tgt = random_frame(rng, 6);
  auto cfg = small_config(4);
  cfg.iterations = 1;
  auto p = model::init_params(cfg);
  auto out = model::forward<double>(src, tgt, cfg, p);

  auto es = model::encode<double>(src, p, cfg, "enc");
  auto et = model::encode<double>(tgt, p, cfg, "enc");
  auto ctx = model::encode<double>(src, p, cfg, "ctx").features;
  auto h = model::initial_hidden(ctx, p);
  auto zero = Tensor::zeros(Shape{7, 3});
  auto corr = model::correlate(es, et, p, cfg);
  auto x = model::assemble_gru_input(corr, ctx, zero, p);
  auto delta = model::flow_head(model::gru_step(h, x, p), p);
  CHECK(values(out.final_flow()) == values(delta));
}

TEST_CASE("residuals accumulate and gates stay in range") {
  std::mt19937_64 rng(12);
  auto cfg = small_config(1);
  cfg.iterations = 6;
  auto p = model::init_params(cfg);
  auto src = random_frame(rng, 12), tgt = random_frame(rng, 12);
  model::GateTrace trace;
  auto out = model::forward<double>(src, tgt, cfg, p, &trace);
  std::vector<double> sum(36, 0.0);
  for (const auto& d : out.residuals)
    for (std::size_t i = 0; i < 36; ++i) sum[i] += d.data()[i];
  const auto final_flow = values(out.final_flow());
  for (std::size_t i = 0; i < 36; ++i) CHECK(final_flow[i] == doctest::Approx(sum[i]).epsilon(1e-12));
  REQUIRE(trace.z_min.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(trace.z_min[k] > 0);
    CHECK(trace.z_max[k] < 1);
    CHECK(trace.h_min[k] > -1);
    CHECK(trace.h_max[k] < 1);
  }
}

TEST_CASE("forward is deterministic and permutation equivariant") {
  std::mt19937_64 rng(21);
  auto cfg = small_config(2);
  auto p = model::init_params(cfg);
  auto src = random_frame(rng, 10), tgt = random_frame(rng, 11);
  const auto a = values(model::forward<double>(src, tgt, cfg, p).final_flow());
  CHECK(a == values(model::forward<double>(src, tgt, cfg, p).final_flow()));

  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permuted = geom::select_points(src, perm);
  const auto b = values(model::forward<double>(permuted, tgt, cfg, p).final_flow());
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(b[i * 3 + j] - a[perm[i] * 3 + j]) < 1e-12);
}

TEST_CASE("inner product variant runs") {
  std::mt19937_64 rng(6);
  auto cfg = small_config();
  cfg.product = model::CorrelationProduct::kInner;
  auto p = model::init_params(cfg);
  CHECK(p.get("corr.0.w").shape() == Shape{4, cfg.correlation_dim});
  auto out = model::forward<double>(random_frame(rng, 5), random_frame(rng, 5), cfg, p);
  CHECK(out.flows.size() == 2);
}

TEST_CASE("single precision inference tracks double") {
  std::mt19937_64 rng(13);
  auto cfg = small_config(3);
  auto p = model::init_params(cfg);
  auto src = random_frame(rng, 10), tgt = random_frame(rng, 10);
  auto d = model::to_cloud(model::forward<double>(src, tgt, cfg, p).final_flow());
  auto f = model::to_cloud(model::forward<float>(src, tgt, cfg, p.cast<float>()).final_flow());
  CHECK((d - f).cwiseAbs().maxCoeff() < 1e-4);
}
