#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "objgan/attention.hpp"
#include "objgan/core/gradcheck.hpp"

using namespace objgan;
using namespace objgan::ag;

namespace {

Var randn(Shape s, std::uint64_t seed, bool param = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(numel_of(s));
  for (auto& x : v) x = d(rng);
  return param ? parameter(std::move(s), std::move(v)) : constant(std::move(s), std::move(v));
}

}  // namespace

TEST_CASE("grid attention: uniform scores give word mean") {
  Var h = constant({2, 1}, {0, 0});
  Var e = constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = attn::grid_attention(h, e, {false, false, false});
  for (int i = 0; i < 3; ++i) CHECK(r.beta.at(i) == Catch::Approx(1.0 / 3));
  CHECK(r.context.at(0) == Catch::Approx(2.0));
  CHECK(r.context.at(1) == Catch::Approx(5.0));
}

TEST_CASE("grid attention: hand case") {
  Var h = constant({2, 1}, {1, 0});
  Var e = constant({2, 2}, {2, 0, 0, 2});
  auto r = attn::grid_attention(h, e, {false, false});
  const double b0 = std::exp(2.0) / (std::exp(2.0) + 1.0);
  CHECK(r.beta.at(0) == Catch::Approx(b0).epsilon(1e-12));
  CHECK(r.beta.at(1) == Catch::Approx(1 - b0).epsilon(1e-12));
  CHECK(b0 == Catch::Approx(0.8808).margin(1e-4));
}

TEST_CASE("grid attention: word permutation permutes beta columns") {
  Var h = randn({3, 4}, 1), e = randn({3, 3}, 2);
  auto r = attn::grid_attention(h, e, {false, false, false});
  Var ep = index_select(transpose(e), {2, 0, 1});
  auto rp = attn::grid_attention(h, transpose(ep), {false, false, false});
  const int perm[3] = {2, 0, 1};
  for (int q = 0; q < 4; ++q)
    for (int k = 0; k < 3; ++k) CHECK(rp.beta.at(q * 3 + k) == Catch::Approx(r.beta.at(q * 3 + perm[k])));
}

TEST_CASE("grid attention: padding") {
  Var h = randn({3, 4}, 3), e = randn({3, 3}, 4);
  auto r = attn::grid_attention(h, e, {false, true, false});
  for (int q = 0; q < 4; ++q) CHECK(r.beta.at(q * 3 + 1) == 0.0);
  CHECK_THROWS(attn::grid_attention(h, e, {true, true, true}));
}

TEST_CASE("object attention") {
  // label equals word 1's embedding; others orthogonal
  Var keys = constant({3, 3}, {0, 5, 0, 5, 0, 0, 0, 0, 5});
  Var q = constant({1, 3}, {5, 0, 0});
  Var vals = randn({2, 3}, 5);
  auto r = attn::object_attention(q, keys, vals, {false, false, false});
  CHECK(r.beta.at(1) > r.beta.at(0));
  CHECK(r.beta.at(1) > r.beta.at(2));
  // hand two-word case
  Var k2 = constant({2, 2}, {1, 0, 0, 2});
  Var q2 = constant({1, 2}, {1, 1});
  auto r2 = attn::object_attention(q2, k2, randn({2, 2}, 6), {false, false});
  const double b0 = std::exp(1.0) / (std::exp(1.0) + std::exp(2.0));
  CHECK(r2.beta.at(0) == Catch::Approx(b0).epsilon(1e-12));
  auto empty = attn::object_attention(zeros({0, 2}), k2, randn({4, 2}, 7), {false, false});
  CHECK(empty.context.shape() == Shape{0, 4});
}

TEST_CASE("distribute contexts: hand overlap case") {
  Var ctx = constant({2, 2}, {1, 3, 2, 2});
  std::vector<double> m(2 * 4 * 4, 0.0);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) m[y * 4 + x] = 1;
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 4; ++x) m[16 + y * 4 + x] = 1;
  Var masks = constant({2, 4, 4}, m);
  Var out = attn::distribute_contexts(ctx, masks, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const bool a = m[y * 4 + x] > 0, b = m[16 + y * 4 + x] > 0;
      const double c0 = a && b ? 2 : a ? 1 : b ? 2 : 0;
      const double c1 = a && b ? 3 : a ? 3 : b ? 2 : 0;
      CHECK(out.at(y * 4 + x) == c0);
      CHECK(out.at(16 + y * 4 + x) == c1);
    }
  CHECK(attn::distribute_contexts(zeros({0, 2}), zeros({0, 4, 4}), 2).value() == std::vector<double>(32, 0.0));
  Var one = attn::distribute_labels(constant({1, 2}, {0.5, -1}), full({1, 4, 4}, 1.0), 2);
  for (int p = 0; p < 16; ++p) {
    CHECK(one.at(p) == 0.5);
    CHECK(one.at(16 + p) == -1);
  }
}

TEST_CASE("distribute contexts: random oracle, ordering, support, gradient") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  const int T = 3, C = 4, H = 5, W = 5;
  std::vector<double> m(T * H * W, 0.0);
  for (int t = 0; t < T; ++t)
    for (int p = 0; p < H * W; ++p)
      if (u(rng) < 0.4) m[t * H * W + p] = u(rng);
  Var masks = constant({T, H, W}, m);
  Var ctx = randn({T, C}, 9, true);
  Var out = attn::distribute_contexts(ctx, masks, C);
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < H * W; ++p) {
      double best = m[p] * ctx.at(c);
      for (int t = 1; t < T; ++t) best = std::max(best, m[t * H * W + p] * ctx.at(t * C + c));
      bool covered = false;
      for (int t = 0; t < T; ++t) covered |= m[t * H * W + p] > 0;
      CHECK(out.at(c * H * W + p) == best);
      if (!covered) CHECK(out.at(c * H * W + p) == 0.0);
    }
  Var rctx = index_select(ctx, {2, 0, 1});
  std::vector<double> rm(m.begin() + 2 * H * W, m.end());
  rm.insert(rm.end(), m.begin(), m.begin() + 2 * H * W);
  CHECK(attn::distribute_contexts(rctx, constant({T, H, W}, rm), C).value() == out.value());
  Var w = randn({C, H, W}, 10);
  CHECK(check_gradients([&] { return sum(mul(attn::distribute_contexts(ctx, masks, C), w)); }, {ctx}).ok());
}

TEST_CASE("distribute ties route gradient to the lowest index") {
  Var ctx = parameter({2, 1}, {1.0, 1.0});
  Var masks = constant({2, 1, 1}, {1.0, 1.0});
  sum(attn::distribute_contexts(ctx, masks, 1)).backward();
  CHECK(ctx.grad() == std::vector<double>{1.0, 0.0});
}

TEST_CASE("attention gradients") {
  Var h = randn({3, 4}, 11, true), e = randn({3, 5}, 12, true);
  Var w = randn({3, 4}, 13);
  std::vector<bool> pad{false, false, true, false, false};
  CHECK(check_gradients([&] { return sum(mul(attn::grid_attention(h, e, pad).context, w)); }, {h, e}).ok());
  Var q = randn({2, 6}, 14, true), k = randn({5, 6}, 15, true), v = randn({3, 5}, 16, true);
  Var w2 = randn({2, 3}, 17);
  CHECK(check_gradients([&] { return sum(mul(attn::object_attention(q, k, v, pad).context, w2)); }, {q, k, v}).ok());
}

TEST_CASE("class channel map") {
  Var masks = constant({2, 2, 2}, {1, 0, 0, 0, 0, 0.5, 0, 0});
  Var m = attn::class_channel_map({2, 0}, masks, 3);
  CHECK(m.shape() == Shape{3, 2, 2});
  CHECK(m.at(4 * 2 + 0) == 1.0);
  CHECK(m.at(0 * 4 + 1) == 0.5);
  CHECK(m.at(4 * 1 + 0) == 0.0);
}
