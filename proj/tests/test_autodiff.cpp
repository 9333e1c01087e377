#include <cmath>
#include <random>

#include "doctest.h"
#include "textspot/autodiff.hpp"
#include "textspot/error.hpp"

using namespace textspot;
using namespace textspot::ad;

namespace {

Tensor random_leaf(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Random projection of an op's output to a scalar so every output element
// contributes a distinct weight to the gradient.
double check_op(std::vector<Parameter> params, const std::function<Tensor()>& op, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> w;
  auto f = [&] {
    Tensor out = op();
    if (w.size() != out.numel()) {
      w.resize(out.numel());
      for (auto& x : w) x = u(rng);
    }
    return weighted_sum(out, w);
  };
  GradCheckOptions opts;
  opts.coords_per_param = 40;
  return gradient_check(f, params, opts).max_rel_error;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("relu forward and backward") {
    Tensor x = Tensor::from({2}, {-1, 2}, true);
    Tensor y = relu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 2.0);
    backward(sum(y));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
  }

  TEST_CASE("softmax of constants is uniform and rows sum to one") {
    Tensor c = Tensor::full({3, 5}, 2.5);
    Tensor s = softmax_lastdim(c);
    for (std::size_t i = 0; i < s.numel(); ++i) CHECK(s[i] == doctest::Approx(0.2).epsilon(1e-15));
    std::mt19937_64 rng(1);
    Tensor r = softmax_lastdim(random_leaf({40, 7}, rng, -20, 20));
    for (int row = 0; row < 40; ++row) {
      double total = 0;
      for (int j = 0; j < 7; ++j) total += r[row * 7 + j];
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
    std::vector<std::uint8_t> mask(5, 0);
    CHECK_THROWS_AS(softmax_lastdim(Tensor::full({1, 5}, 0.0), mask), NumericError);
  }

  TEST_CASE("matmul matches the naive triple loop") {
    std::mt19937_64 rng(2);
    Tensor a = random_leaf({2, 3}, rng), b = random_leaf({3, 4}, rng);
    Tensor c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 4});
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 4 + j];
        CHECK(c[i * 4 + j] == doctest::Approx(s).epsilon(1e-14));
      }
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
  }

  TEST_CASE("conv3x3 matches a direct convolution") {
    std::mt19937_64 rng(3);
    const int h = 7, w = 6, cin = 2, cout = 3;
    Tensor x = random_leaf({h, w, cin}, rng), k = random_leaf({9 * cin, cout}, rng), b = random_leaf({cout}, rng);
    for (int stride : {1, 2}) {
      Tensor y = conv3x3(x, k, b, stride);
      const int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
      REQUIRE(y.shape() == Shape{ho, wo, cout});
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
          for (int co = 0; co < cout; ++co) {
            double s = b[co];
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                for (int c = 0; c < cin; ++c) s += x[(iy * w + ix) * cin + c] * k[((ky * 3 + kx) * cin + c) * cout + co];
              }
            CHECK(y[(oy * wo + ox) * cout + co] == doctest::Approx(s).epsilon(1e-13));
          }
    }
  }

  TEST_CASE("bilinear gather") {
    // 2x2 map with scalar values 0,0 (top row) and 2,2 (bottom row)
    Tensor f = Tensor::from({2, 2, 1}, {0, 0, 2, 2}, true);
    std::vector<Point> mid{{0.5, 0.5}}, corner{{1.0, 0.0}};
    CHECK(bilinear_gather(f, mid)[0] == doctest::Approx(1.0));
    CHECK(bilinear_gather(f, corner)[0] == 0.0);
    Tensor g = bilinear_gather(f, std::vector<Point>{{0.25, 0.75}});
    backward(sum(g));
    // weights (1-0.25)(1-0.75), 0.25(1-0.75), (1-0.25)0.75, 0.25*0.75
    const double expect[] = {0.1875, 0.0625, 0.5625, 0.1875};
    for (int i = 0; i < 4; ++i) CHECK(f.grad()[i] == doctest::Approx(expect[i]).epsilon(1e-15));
  }

  TEST_CASE("every op passes a gradient check in isolation") {
    std::mt19937_64 rng(5);
    const double tol = 1e-6;
    Tensor a = random_leaf({4, 3}, rng), b = random_leaf({3, 5}, rng), v = random_leaf({3}, rng);
    Tensor a2 = random_leaf({4, 3}, rng);
    CHECK(check_op({{"a", a}, {"b", b}}, [&] { return matmul(a, b); }) < tol);
    CHECK(check_op({{"a", a}, {"v", v}}, [&] { return add(a, v); }) < tol);
    CHECK(check_op({{"a", a}, {"v", v}}, [&] { return sub(a, v); }) < tol);
    CHECK(check_op({{"a", a}, {"a2", a2}}, [&] { return mul(a, a2); }) < tol);
    CHECK(check_op({{"a", a}, {"v", v}}, [&] { return mul(a, v); }) < tol);
    CHECK(check_op({{"a", a}}, [&] { return scale(a, -1.7); }) < tol);
    CHECK(check_op({{"a", a}}, [&] { return transpose(a); }) < tol);
    CHECK(check_op({{"a", a}}, [&] { return reshape(a, {2, 6}); }) < tol);
    CHECK(check_op({{"a", a}, {"a2", a2}}, [&] { return concat_lastdim({a, a2}); }) < tol);
    CHECK(check_op({{"a", a}}, [&] { return sum(a); }) < tol);

    Tensor away = random_leaf({5, 4}, rng, 0.2, 1.0);
    auto& av = away.mutable_values();
    for (std::size_t i = 0; i < av.size(); i += 2) av[i] = -av[i];
    CHECK(check_op({{"x", away}}, [&] { return relu(away); }) < tol);

    Tensor logits = random_leaf({3, 4}, rng, -2, 2);
    std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 0};
    CHECK(check_op({{"l", logits}}, [&] { return softmax_lastdim(logits); }) < tol);
    CHECK(check_op({{"l", logits}}, [&] { return softmax_lastdim(logits, mask); }) < tol);
    std::vector<int> rows = {2, -1, 0, 0, 3};
    CHECK(check_op({{"a", a}}, [&] { return gather_rows(a, rows); }) < tol);
    Tensor t3 = random_leaf({2, 3, 4}, rng);
    CHECK(check_op({{"t", t3}}, [&] { return swap_last2(t3); }) < tol);
    CHECK(check_op({{"a", a}}, [&] { return l2_norm_rows(a); }) < tol);
    CHECK(check_op({{"a", a}}, [&] { return row_norms(a); }) < tol);
    std::vector<int> targets = {1, 0, 3};
    std::vector<double> weights = {0.5, 2.0, 1.0};
    CHECK(check_op({{"l", logits}}, [&] { return cross_entropy_logits(logits, targets); }) < tol);
    CHECK(check_op({{"l", logits}}, [&] { return cross_entropy_logits(logits, targets, weights); }) < tol);
    Tensor g = random_leaf({3}, rng, 0.5, 1.5), be = random_leaf({3}, rng);
    CHECK(check_op({{"a", a}, {"g", g}, {"b", be}}, [&] { return layer_norm(a, g, be); }) < tol);

    Tensor q = random_leaf({3, 4}, rng), keys = random_leaf({3, 5, 4}, rng);
    CHECK(check_op({{"q", q}, {"k", keys}}, [&] { return neighbor_scores(q, keys, 2); }) < tol);
    Tensor wts = random_leaf({3, 2, 5}, rng), vals = random_leaf({3, 5, 4}, rng);
    CHECK(check_op({{"w", wts}, {"v", vals}}, [&] { return head_aggregate(wts, vals); }) < tol);

    Tensor x = random_leaf({5, 4, 2}, rng), k = random_leaf({18, 3}, rng), cb = random_leaf({3}, rng);
    CHECK(check_op({{"x", x}, {"k", k}, {"b", cb}}, [&] { return conv3x3(x, k, cb, 1); }) < tol);
    CHECK(check_op({{"x", x}, {"k", k}, {"b", cb}}, [&] { return conv3x3(x, k, cb, 2); }) < tol);
    std::vector<Point> pts = {{0.3, 0.7}, {2.6, 1.2}, {-1.0, 5.0}, {1.5, 2.25}};
    CHECK(check_op({{"x", x}}, [&] { return bilinear_gather(x, pts); }) < tol);
  }

  TEST_CASE("quadratic gradient") {
    Tensor theta = Tensor::from({1}, {3.0}, true);
    std::vector<Parameter> params = {{"theta", theta}};
    auto f = [&] { return sum(mul(theta, theta)); };
    backward(f());
    CHECK(theta.grad()[0] == 6.0);
    theta.zero_grad();
    const GradCheckResult r = gradient_check(f, params);
    CHECK(r.max_rel_error < 1e-8);
  }

  TEST_CASE("backward is independent of traversal order") {
    std::mt19937_64 rng(8);
    Tensor a = random_leaf({6, 4}, rng), b = random_leaf({4, 4}, rng), c = random_leaf({4}, rng);
    auto f = [&] {
      Tensor h = relu(add(matmul(a, b), c));
      Tensor s = softmax_lastdim(matmul(h, b));
      return sum(mul(s, add(h, matmul(a, b))));
    };
    backward(f(), TraversalOrder::kParentsInOrder);
    const std::vector<double> ga(a.grad().begin(), a.grad().end()), gb(b.grad().begin(), b.grad().end());
    a.zero_grad();
    b.zero_grad();
    c.zero_grad();
    backward(f(), TraversalOrder::kParentsReversed);
    for (std::size_t i = 0; i < ga.size(); ++i) CHECK(std::abs(a.grad()[i] - ga[i]) < 1e-12);
    for (std::size_t i = 0; i < gb.size(); ++i) CHECK(std::abs(b.grad()[i] - gb[i]) < 1e-12);
  }

  TEST_CASE("checkpoint round trip") {
    std::mt19937_64 rng(1);
    ParameterStore s;
    s.add("w", {3, 4}, Init::kNormalFanIn, rng);
    s.add("b", {4}, Init::kUniformSmall, rng);
    const auto bytes = encode_checkpoint(s);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "TSCK");
    ParameterStore t;
    std::mt19937_64 other(99);
    t.add("w", {3, 4}, Init::kZeros, other);
    t.add("b", {4}, Init::kZeros, other);
    decode_checkpoint(bytes, t);
    for (std::size_t i = 0; i < 12; ++i)
      CHECK(t.get("w")[i] == static_cast<double>(static_cast<float>(s.get("w")[i])));
    ParameterStore wrong;
    wrong.add("w", {4, 3}, Init::kZeros, other);
    wrong.add("b", {4}, Init::kZeros, other);
    CHECK_THROWS_AS(decode_checkpoint(bytes, wrong), ShapeError);
    CHECK_THROWS_AS(s.add("w", {1}, Init::kZeros, rng), ConfigError);
  }
}
