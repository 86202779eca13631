#include <catch_amalgamated.hpp>

#include <cmath>

#include "objgan/core/gradcheck.hpp"
#include "objgan/shape_generator.hpp"

using namespace objgan;
using namespace objgan::ag;

namespace {

shape::ShapeGenConfig tiny_cfg() {
  shape::ShapeGenConfig c;
  c.num_classes = 3;
  c.size = 16;
  c.base = 4;
  c.noise_dim = 2;
  return c;
}

BoxSequence two_boxes() { return {{0, {0.1, 0.1, 0.4, 0.3}}, {2, {0.5, 0.4, 0.45, 0.5}}}; }

Var noise_for(int T, int nz, std::uint64_t seed) {
  nn::Rng rng(seed);
  return constant({T, nz}, nn::normal_values(rng, T * nz, 1.0));
}

}  // namespace

TEST_CASE("box maps: full image box is all ones") {
  auto m = shape::render_box_maps({{1, {0, 0, 1, 1}}}, 8, 3);
  for (double v : m.occupancy.value()) REQUIRE(v == 1.0);
  for (int i = 0; i < 64; ++i) {
    REQUIRE(m.labels.at(i) == 0.0);
    REQUIRE(m.labels.at(64 + i) == 1.0);
    REQUIRE(m.labels.at(128 + i) == 0.0);
  }
}

TEST_CASE("box maps: quarter box on 8x8 matches point-in-box oracle") {
  const Box b{0.25, 0.25, 0.5, 0.5};
  auto m = shape::render_box_maps({{0, b}}, 8, 1);
  int ones = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double px = (x + 0.5) / 8, py = (y + 0.5) / 8;
      const bool inside = px >= b.x && px < b.x + b.w && py >= b.y && py < b.y + b.h;
      REQUIRE(m.occupancy.at(y * 8 + x) == (inside ? 1.0 : 0.0));
      ones += inside;
    }
  REQUIRE(ones == 16);
}

TEST_CASE("box maps: disjoint boxes have disjoint supports") {
  auto m = shape::render_box_maps({{0, {0, 0, 0.4, 0.4}}, {1, {0.5, 0.5, 0.5, 0.5}}}, 16, 2);
  for (int i = 0; i < 256; ++i) REQUIRE(m.occupancy.at(i) * m.occupancy.at(256 + i) == 0.0);
}

TEST_CASE("box maps: box between pixel centres is rejected") {
  REQUIRE_THROWS_AS(shape::render_box_maps({{0, {0.0, 0.0, 0.05, 0.5}}}, 8, 1), std::invalid_argument);
}

TEST_CASE("mask pyramid: each level is the area average of the previous") {
  nn::Rng rng(3);
  auto u = nn::uniform_values(rng, 2 * 16 * 16, 1.0);
  for (auto& v : u) v = std::abs(v);
  auto pyr = shape::mask_pyramid(constant({2, 16, 16}, u), 3);
  REQUIRE(pyr.size() == 3);
  REQUIRE(pyr[1].shape() == Shape{2, 8, 8});
  REQUIRE(pyr[2].shape() == Shape{2, 4, 4});
  for (std::size_t l = 1; l < 3; ++l) {
    double s0 = 0, s1 = 0;
    for (double v : pyr[l - 1].value()) s0 += v;
    for (double v : pyr[l].value()) s1 += v;
    REQUIRE(std::abs(s0 - 4 * s1) <= 1e-9);
  }
}

TEST_CASE("shape generator: support containment is exact and values lie in [0,1]") {
  nn::Rng rng(1);
  const auto cfg = tiny_cfg();
  shape::ShapeGenerator g(cfg, rng);
  const auto boxes = two_boxes();
  auto masks = g.generate(boxes, noise_for(2, cfg.noise_dim, 5));
  auto occ = shape::render_box_maps(boxes, cfg.size, cfg.num_classes).occupancy;
  REQUIRE(masks.shape() == Shape{2, 16, 16});
  for (std::size_t i = 0; i < masks.numel(); ++i) {
    REQUIRE(masks.at(i) >= 0.0);
    REQUIRE(masks.at(i) <= 1.0);
    if (occ.at(i) == 0.0) REQUIRE(masks.at(i) == 0.0);
  }
}

TEST_CASE("shape generator: deterministic for fixed seeds") {
  const auto cfg = tiny_cfg();
  nn::Rng r1(9), r2(9);
  shape::ShapeGenerator a(cfg, r1), b(cfg, r2);
  auto ma = a.generate(two_boxes(), noise_for(2, cfg.noise_dim, 4));
  auto mb = b.generate(two_boxes(), noise_for(2, cfg.noise_dim, 4));
  REQUIRE(ma.value() == mb.value());
}

TEST_CASE("shape generator: output depends on both sequence directions") {
  const auto cfg = tiny_cfg();
  nn::Rng rng(2);
  shape::ShapeGenerator g(cfg, rng);
  auto boxes = two_boxes();
  boxes.push_back({1, {0.2, 0.6, 0.3, 0.3}});
  Var nz = noise_for(3, cfg.noise_dim, 8);
  auto fwd = g.generate(boxes, nz);

  // Reverse the sequence (and noise rows); compare per object.
  BoxSequence rev(boxes.rbegin(), boxes.rend());
  Var nzr = index_select(nz, {2, 1, 0});
  auto bwd = g.generate(rev, nzr);
  const std::size_t hw = 16 * 16;
  bool differs = false;
  for (int t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < hw; ++i)
      if (fwd.at(t * hw + i) != bwd.at((2 - t) * hw + i)) differs = true;
  REQUIRE(differs);

  // The first object's mask changes when a later object changes, and the last
  // object's mask changes when an earlier object changes.
  auto later = boxes;
  later[2].box = {0.6, 0.05, 0.3, 0.3};
  auto earlier = boxes;
  earlier[0].box = {0.05, 0.6, 0.3, 0.3};
  auto m_later = g.generate(later, nz);
  auto m_earlier = g.generate(earlier, nz);
  bool first_changed = false, last_changed = false;
  for (std::size_t i = 0; i < hw; ++i) {
    if (m_later.at(i) != fwd.at(i)) first_changed = true;
    if (m_earlier.at(2 * hw + i) != fwd.at(2 * hw + i)) last_changed = true;
  }
  REQUIRE(first_changed);
  REQUIRE(last_changed);
}

TEST_CASE("shape generator: LSTM cell variant keeps the contract") {
  auto cfg = tiny_cfg();
  cfg.cell = shape::CellType::Lstm;
  nn::Rng rng(4);
  shape::ShapeGenerator g(cfg, rng);
  auto m = g.generate(two_boxes(), noise_for(2, cfg.noise_dim, 1));
  REQUIRE(m.shape() == Shape{2, 16, 16});
  for (double v : m.value()) REQUIRE((v >= 0.0 && v <= 1.0));
}

TEST_CASE("shape generator: noise shape is checked") {
  const auto cfg = tiny_cfg();
  nn::Rng rng(4);
  shape::ShapeGenerator g(cfg, rng);
  REQUIRE_THROWS_AS(g.generate(two_boxes(), noise_for(1, cfg.noise_dim, 1)), ShapeError);
}

TEST_CASE("shape generator: mean mask gradient w.r.t. conv kernels matches finite differences") {
  const auto cfg = tiny_cfg();
  nn::Rng rng(6);
  shape::ShapeGenerator g(cfg, rng);
  const auto maps = shape::render_box_maps(two_boxes(), cfg.size, cfg.num_classes);
  const Var nz = noise_for(2, cfg.noise_dim, 2);
  auto f = [&] { return mean(g.generate(maps, nz)); };
  // Earlier encoder kernels sit before several leaky-ReLU kinks that central
  // differences can straddle; probe the last encoder conv and a decoder conv.
  REQUIRE(check_gradients(f, {g.enc2.weight}, 1e-6, 40).ok());
  REQUIRE(check_gradients(f, {g.up2.weight}, 1e-6, 40).ok());
}

TEST_CASE("bce gan losses: perfect critic gives zero discriminator loss") {
  auto [g, d] = shape::bce_gan_losses(std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, 0.0});
  REQUIRE(d == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(std::isinf(g));
  auto l = shape::bce_gan_losses(constant({2}, {40, 40}), constant({2}, {-40, -40}));
  REQUIRE(l.d_loss.item() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("bce gan losses: chance level is 2 log 2 per object") {
  auto l = shape::bce_gan_losses(constant({3}, {0, 0, 0}), constant({3}, {0, 0, 0}));
  REQUIRE(l.d_loss.item() == Catch::Approx(2 * std::log(2.0)).epsilon(1e-12));
  REQUIRE(l.g_loss.item() == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  auto [g, d] = shape::bce_gan_losses(std::vector<double>{0.5}, std::vector<double>{0.5});
  REQUIRE(d == Catch::Approx(2 * std::log(2.0)).epsilon(1e-12));
  REQUIRE(g == Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bce gan losses: logits form matches direct -log on hand probabilities") {
  const std::vector<double> pr{0.9, 0.6, 0.3}, pf{0.2, 0.5, 0.7};
  std::vector<double> lr, lf;
  for (double p : pr) lr.push_back(std::log(p / (1 - p)));
  for (double p : pf) lf.push_back(std::log(p / (1 - p)));
  auto l = shape::bce_gan_losses(constant({3}, lr), constant({3}, lf));
  double d = 0, g = 0;
  for (int i = 0; i < 3; ++i) {
    d += -std::log(pr[i]) - std::log(1 - pf[i]);
    g += -std::log(pf[i]);
  }
  REQUIRE(l.d_loss.item() == Catch::Approx(d / 3).epsilon(1e-12));
  REQUIRE(l.g_loss.item() == Catch::Approx(g / 3).epsilon(1e-12));
}

TEST_CASE("shape adversarial losses run on a per-object critic") {
  const auto cfg = tiny_cfg();
  nn::Rng rng(7);
  shape::ShapeGenerator g(cfg, rng);
  shape::ShapeCritic c(cfg, rng);
  const auto maps = shape::render_box_maps(two_boxes(), cfg.size, cfg.num_classes);
  auto fake = g.generate(maps, noise_for(2, cfg.noise_dim, 3));
  auto real = maps.occupancy;
  real = reshape(real, {2, 16, 16});
  REQUIRE(c.logits(fake, maps).shape() == Shape{2});
  auto l = shape::shape_adversarial_losses(real, fake, maps, c);
  REQUIRE(std::isfinite(l.d_loss.item()));
  REQUIRE(l.g_loss.item() > 0);
  REQUIRE_THROWS_AS(shape::shape_adversarial_losses(narrow(real, 0, 0, 1), fake, maps, c), ShapeError);
}

TEST_CASE("perceptual loss: zero on identical inputs and non-negative") {
  shape::PerceptualExtractor ext(11, 4);
  nn::Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    Var a = constant({2, 8, 8}, nn::uniform_values(rng, 128, 1.0));
    Var b = constant({2, 8, 8}, nn::uniform_values(rng, 128, 1.0));
    REQUIRE(shape::perceptual_loss(a, a, ext).item() == 0.0);
    REQUIRE(shape::perceptual_loss(a, b, ext).item() >= 0.0);
  }
}

TEST_CASE("perceptual loss matches a direct forward evaluation") {
  shape::PerceptualExtractor ext(5, 2);
  const int S = 4;
  std::vector<double> a(S * S), b(S * S);
  for (int i = 0; i < S * S; ++i) {
    a[i] = (i % 3) * 0.4;
    b[i] = ((i * 7) % 5) * 0.2;
  }
  auto direct = [&](const std::vector<double>& m) {
    const int C = 2, S2 = S / 2;
    const auto& w1 = ext.c1.weight.value();
    const auto& b1 = ext.c1.bias.value();
    const auto& w2 = ext.c2.weight.value();
    const auto& b2 = ext.c2.bias.value();
    std::vector<double> h1(C * S * S), h2(C * S2 * S2);
    for (int o = 0; o < C; ++o)
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          double s = b1[o];
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = y + ky - 1, xx = x + kx - 1;
              if (yy >= 0 && yy < S && xx >= 0 && xx < S) s += w1[o * 9 + ky * 3 + kx] * m[yy * S + xx];
            }
          h1[(o * S + y) * S + x] = std::max(0.0, s);
        }
    for (int o = 0; o < C; ++o)
      for (int y = 0; y < S2; ++y)
        for (int x = 0; x < S2; ++x) {
          double s = b2[o];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int yy = 2 * y + ky - 1, xx = 2 * x + kx - 1;
                if (yy >= 0 && yy < S && xx >= 0 && xx < S)
                  s += w2[((o * C + c) * 3 + ky) * 3 + kx] * h1[(c * S + yy) * S + xx];
              }
          h2[(o * S2 + y) * S2 + x] = std::max(0.0, s);
        }
    return h2;
  };
  auto fa = direct(a), fb = direct(b);
  double want = 0;
  for (std::size_t i = 0; i < fa.size(); ++i) want += (fa[i] - fb[i]) * (fa[i] - fb[i]);
  want /= static_cast<double>(fa.size());
  const double got = shape::perceptual_loss(constant({1, S, S}, a), constant({1, S, S}, b), ext).item();
  REQUIRE(got == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("shape training lowers the perceptual loss on a single example") {
  const auto cfg = tiny_cfg();
  nn::Rng rng(12);
  shape::ShapeGenerator g(cfg, rng);
  shape::ShapeCritic c(cfg, rng);
  const auto boxes = two_boxes();
  const auto maps = shape::render_box_maps(boxes, cfg.size, cfg.num_classes);
  // Target: left half of each box.
  std::vector<double> tgt(maps.occupancy.value());
  for (int t = 0; t < 2; ++t)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if ((x + 0.5) / 16 > boxes[t].box.cx()) tgt[(t * 16 + y) * 16 + x] = 0;
  std::vector<shape::ShapeExample> data{{boxes, constant({2, 16, 16}, tgt)}};
  shape::ShapeTrainConfig tc;
  tc.steps = 150;
  tc.lr = 2e-3;
  tc.perceptual_weight = 10;
  std::vector<double> perc;
  shape::train_shape_generator(g, c, data, tc, rng, [&](int, const shape::ShapeStepLog& l) { perc.push_back(l.perceptual); });
  REQUIRE(perc.size() == 150);
  REQUIRE(perc.back() < 0.5 * perc.front());
  REQUIRE_THROWS_AS(shape::train_shape_generator(g, c, {}, tc, rng), std::invalid_argument);
}
