#include <doctest.h>

#include "iterflow/autodiff.hpp"
#include "support.hpp"

using namespace iterflow;
using ad::Shape;
using ad::Tensor;
using testing::grad_of;
using testing::numeric_gradient;
using testing::relative_error;

TEST_CASE("sigmoid of zero") {
  auto y = ad::sigmoid(Tensor::constant(Shape{1}, {0.0}));
  CHECK(y.item() == 0.5);
}

TEST_CASE("max over axis 0") {
  auto x = Tensor::constant(Shape{2, 2}, {1, 5, 3, 2});
  auto m = ad::max_over_axis(x, 0);
  REQUIRE(m.size() == 2);
  CHECK(m.at(0) == 3);
  CHECK(m.at(1) == 5);
}

TEST_CASE("matmul against a triple loop") {
  std::mt19937_64 rng(7);
  auto a = testing::uniform(rng, 12), b = testing::uniform(rng, 8);
  auto c = ad::matmul(Tensor::constant(Shape{3, 4}, a), Tensor::constant(Shape{4, 2}, b));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 2 + j];
      CHECK(std::abs(c.at(i, j) - s) < 1e-12);
    }
}

TEST_CASE("gradient of sum of squares") {
  ad::Tape tape;
  auto x = Tensor::parameter(Shape{3}, {1, 2, 3});
  auto y = ad::sum(ad::mul(x, x));
  tape.backward(y);
  auto g = grad_of(x);
  CHECK(g == std::vector<double>{2, 4, 6});
}

TEST_CASE("constant root gives zero gradient") {
  ad::Tape tape;
  auto x = Tensor::parameter(Shape{3}, {1, 2, 3});
  auto unused = ad::scale(x, 2.0);
  auto w = Tensor::parameter(Shape{1}, {4.0});
  auto y = ad::sum(ad::mul(w, w));
  tape.backward(y);
  for (double v : grad_of(x)) CHECK(v == 0.0);
  CHECK(grad_of(w)[0] == doctest::Approx(8.0));
}

TEST_CASE("backward requires a scalar root") {
  ad::Tape tape;
  auto x = Tensor::parameter(Shape{3}, {1, 2, 3});
  auto y = ad::mul(x, x);
  CHECK_THROWS(tape.backward(y));
}

TEST_CASE("shape mismatch names the op") {
  auto a = Tensor::constant(Shape{2, 3}, std::vector<double>(6, 1.0));
  auto b = Tensor::constant(Shape{2, 2}, std::vector<double>(4, 1.0));
  try {
    (void)ad::matmul(a, b);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("max routes gradient to the lowest index on ties") {
  ad::Tape tape;
  auto x = Tensor::parameter(Shape{2, 2}, {4, 1, 4, 1});
  tape.backward(ad::sum(ad::max_over_axis(x, 0)));
  CHECK(grad_of(x) == std::vector<double>{1, 1, 0, 0});
}

TEST_CASE("min_select routes through the chosen element") {
  ad::Tape tape;
  auto a = Tensor::parameter(Shape{3}, {1, 5, 2});
  auto b = Tensor::parameter(Shape{3}, {3, 4, 2});
  tape.backward(ad::sum(ad::min_select(a, b)));
  CHECK(grad_of(a) == std::vector<double>{1, 0, 1});
  CHECK(grad_of(b) == std::vector<double>{0, 1, 0});
}

TEST_CASE("segment_max with an empty group") {
  ad::Tape tape;
  auto x = Tensor::parameter(Shape{3, 2}, {1, 4, 3, 2, 0, 7});
  const std::vector<std::size_t> offsets{0, 2, 2, 3};
  auto y = ad::segment_max(x, std::span<const std::size_t>(offsets));
  REQUIRE(y.shape() == Shape{3, 2});
  CHECK(y.at(0, 0) == 3);
  CHECK(y.at(0, 1) == 4);
  CHECK(y.at(1, 0) == 0);
  CHECK(y.at(1, 1) == 0);
  CHECK(y.at(2, 1) == 7);
  tape.backward(ad::sum(y));
  CHECK(grad_of(x) == std::vector<double>{0, 1, 1, 0, 1, 1});
}

namespace {

// A 20-parameter graph touching every primitive.
Tensor random_graph(const Tensor& x, const Tensor& w, const std::vector<ad::Index>& rows) {
  const std::span<const ad::Index> idx(rows);
  auto h = ad::tanh(ad::matmul(x, w));
  auto s = ad::sigmoid(ad::add(h, ad::scale(h, 0.5)));
  auto r = ad::relu(ad::sub(ad::mul(s, h), Tensor::constant(Shape{3}, {0.1, -0.2, 0.0})));
  auto g = ad::gather_rows(ad::concat<double>({r, h}, 1), idx);
  auto mx = ad::max_over_axis(g, 0);
  auto mn = ad::min_over_axis(g, 1);
  auto me = ad::mean_over_axis(g, 0);
  auto sm = ad::sum_over_axis(g, 1);
  auto nr = ad::l2_norm_rows(ad::gather_rows(x, idx));
  auto sel = ad::min_select(ad::scale(nr, 0.3), ad::mean_over_axis(g, 1));
  auto total = ad::add(ad::add(ad::sum(mx), ad::sum(mn)), ad::add(ad::sum(me), ad::scale(ad::sum(sm), 0.1)));
  return ad::add(total, ad::sum(sel));
}

}  // namespace

TEST_CASE("random graphs match finite differences") {
  const std::vector<ad::Index> rows{2, 0, 3, 2, 1};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = Tensor::parameter(Shape{4, 5}, testing::uniform(rng, 20));
    auto w = Tensor::constant(Shape{5, 3}, testing::uniform(rng, 15));
    {
      ad::Tape tape;
      tape.backward(random_graph(x, w, rows));
    }
    const auto analytic = grad_of(x);
    const auto numeric = numeric_gradient(x, [&] { return random_graph(x, w, rows).item(); });
    CHECK(relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(3);
    auto x = Tensor::parameter(Shape{4, 5}, testing::uniform(rng, 20));
    auto w = Tensor::constant(Shape{5, 3}, testing::uniform(rng, 15));
    ad::Tape tape;
    tape.backward(ad::sum(ad::tanh(ad::matmul(x, w))));
    return grad_of(x);
  };
  CHECK(run() == run());
}

TEST_CASE("tree reduction is independent of how parts were produced") {
  std::vector<std::vector<std::vector<double>>> parts;
  for (int s = 0; s < 7; ++s) parts.push_back({{double(s), 0.1 * s}, {1.0 / (s + 1)}});
  auto a = ad::tree_reduce(parts);
  auto b = ad::tree_reduce(parts);
  CHECK(a == b);
  CHECK(a[0][0] == doctest::Approx(21.0));
}

TEST_CASE("param store cast and fresh leaves") {
  ad::ParamStore p;
  p.add("a", Shape{2}, {1.5, -2.0});
  auto fresh = p.fresh_leaves();
  CHECK(fresh.get("a").data()[1] == -2.0);
  CHECK(fresh.get("a").node() != p.get("a").node());
  auto f = p.cast<float>();
  CHECK(f.get("a").data()[0] == 1.5f);
  CHECK(p.total_parameters() == 2);
}
