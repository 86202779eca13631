#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "objgan/core/conv.hpp"
#include "objgan/core/gradcheck.hpp"
#include "objgan/core/ops.hpp"

using namespace objgan::ag;

namespace {

Var rand_param(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel_of(s));
  for (auto& x : v) x = d(rng);
  return parameter(std::move(s), std::move(v));
}

Var weights_like(const Var& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(x.numel());
  for (auto& a : v) a = d(rng);
  return constant(x.shape(), std::move(v));
}

}  // namespace

TEST_CASE("broadcast add/mul gradients") {
  Var a = rand_param({2, 3}, 1), b = rand_param({3}, 2);
  auto r = check_gradients([&] { return sum(mul(add(a, b), tanh(a))); }, {a, b});
  CHECK(r.ok());
}

TEST_CASE("softmax variants and reductions") {
  Var x = rand_param({3, 4}, 3);
  Var w = weights_like(x, 9);
  CHECK(check_gradients([&] { return sum(mul(softmax_axis(x, 1), w)); }, {x}).ok());
  CHECK(check_gradients([&] { return sum(mul(log_softmax_axis(x, 0), w)); }, {x}).ok());
  CHECK(check_gradients([&] { return sum(logsumexp_axis(x, 1)); }, {x}).ok());
  std::vector<bool> masked{false, true, false, false};
  CHECK(check_gradients([&] { return sum(mul(masked_softmax(x, 1, masked), w)); }, {x}).ok());
  Var s = masked_softmax(x, 1, masked);
  for (int r = 0; r < 3; ++r) {
    CHECK(s.at(r * 4 + 1) == 0.0);
    CHECK(s.at(r * 4) + s.at(r * 4 + 2) + s.at(r * 4 + 3) == Catch::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS(masked_softmax(x, 1, {true, true, true, true}));
}

TEST_CASE("shape ops gradients") {
  Var x = rand_param({2, 3, 4}, 4);
  Var w = weights_like(permute(x, {2, 0, 1}), 5);
  CHECK(check_gradients([&] { return sum(mul(permute(x, {2, 0, 1}), w)); }, {x}).ok());
  Var y = rand_param({2, 2, 4}, 6);
  Var wc = weights_like(concat({x, y}, 1), 7);
  CHECK(check_gradients([&] { return sum(mul(concat({x, y}, 1), wc)); }, {x, y}).ok());
  Var wn = weights_like(narrow(x, 2, 1, 2), 8);
  CHECK(check_gradients([&] { return sum(mul(narrow(x, 2, 1, 2), wn)); }, {x}).ok());
  Var m = rand_param({4, 3}, 9);
  Var wi = weights_like(index_select(m, {2, 0, 2}), 10);
  CHECK(check_gradients([&] { return sum(mul(index_select(m, {2, 0, 2}), wi)); }, {m}).ok());
  CHECK_THROWS(index_select(m, {4}));
}

TEST_CASE("matmul and cosine gradients") {
  Var a = rand_param({3, 4}, 11), b = rand_param({4, 2}, 12);
  Var w = weights_like(matmul(a, b), 13);
  CHECK(check_gradients([&] { return sum(mul(matmul(a, b), w)); }, {a, b}).ok());
  Var u = rand_param({5}, 14), v = rand_param({5}, 15);
  CHECK(check_gradients([&] { return cosine(u, v); }, {u, v}).ok());
}

TEST_CASE("conv2d matches direct loop and gradients") {
  Var x = rand_param({2, 3, 5, 5}, 16), w = rand_param({4, 3, 3, 3}, 17), b = rand_param({4}, 18);
  Var y = conv2d(x, w, b, 2, 1);
  REQUIRE(y.shape() == Shape{2, 4, 3, 3});
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double acc = b.at(o);
          for (int c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
                acc += x.at(((n * 3 + c) * 5 + iy) * 5 + ix) * w.at(((o * 3 + c) * 3 + ky) * 3 + kx);
              }
          CHECK(y.at(((n * 4 + o) * 3 + oy) * 3 + ox) == Catch::Approx(acc).epsilon(1e-12));
        }
  Var wy = weights_like(y, 19);
  CHECK(check_gradients([&] { return sum(mul(conv2d(x, w, b, 2, 1), wy)); }, {x, w, b}).ok());
}

TEST_CASE("spatial op gradients") {
  Var x = rand_param({1, 2, 4, 4}, 20);
  auto probe = [&](auto fn) {
    Var w = weights_like(fn(), 21);
    return check_gradients([&] { return sum(mul(fn(), w)); }, {x}).ok();
  };
  CHECK(probe([&] { return reflection_pad2d(x, 1); }));
  CHECK(probe([&] { return upsample_nearest(x, 2); }));
  CHECK(probe([&] { return avg_pool2d(x, 2); }));
  CHECK(probe([&] { return glu(x, 1); }));
  CHECK(probe([&] { return normalize_channels(x, true); }));
  CHECK(probe([&] { return global_avg_pool(x); }));
  Var xb = rand_param({3, 2, 2, 2}, 22);
  Var wb = weights_like(xb, 23);
  CHECK(check_gradients([&] { return sum(mul(normalize_channels(xb, false), wb)); }, {xb}).ok());
}

TEST_CASE("reflection pad values") {
  Var x = constant({1, 1, 1, 3}, {1, 2, 3});
  Var p = reflection_pad2d(reshape(concat({x, x, x}, 2), {1, 1, 3, 3}), 1);
  REQUIRE(p.shape() == Shape{1, 1, 5, 5});
  CHECK(p.at(0) == 2.0);
  CHECK(p.at(1) == 1.0);
  CHECK(p.at(4) == 2.0);
}

TEST_CASE("avg_pool is area average") {
  Var x = rand_param({1, 1, 4, 4}, 24);
  Var p = avg_pool2d(x, 2);
  double s = 0;
  for (double v : x.value()) s += v;
  double sp = 0;
  for (double v : p.value()) sp += v;
  CHECK(4 * sp == Catch::Approx(s).margin(1e-12));
}

TEST_CASE("no_grad suppresses graph recording") {
  Var a = rand_param({2}, 25);
  NoGradGuard g;
  Var b = mul(a, a);
  CHECK_FALSE(b.requires_grad());
}
