#include <random>

#include "objgan/attention.hpp"
#include "objgan/box_generator.hpp"
#include "objgan/cli.hpp"
#include "objgan/core/gradcheck.hpp"
#include "objgan/damsm.hpp"

namespace objgan::cli {

using namespace objgan::ag;

namespace {

struct Draw {
  nn::Rng rng;
  explicit Draw(std::uint64_t seed) : rng(seed) {}
  std::vector<double> normal(std::size_t n, double sd = 1.0) { return nn::normal_values(rng, n, sd); }
  std::vector<double> uniform(std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
  }
  Var param(Shape s, double sd = 1.0) { return parameter(s, normal(numel_of(s), sd)); }
  Var fixed(Shape s, double sd = 1.0) { return constant(s, normal(numel_of(s), sd)); }
};

SuiteCheck record(const std::string& name, const GradCheckResult& r) { return {name, r.rel_err, r.checked, r.ok(1e-4)}; }

}  // namespace

std::vector<SuiteCheck> gradient_suite(std::uint64_t seed) {
  Draw d(seed);
  std::vector<SuiteCheck> out;

  {
    Var feat = d.param({3, 9, 11});
    Var w = d.fixed({3, 4, 4});
    const RoiBox box{0.13, 0.21, 0.52, 0.61};
    out.push_back(record("roi_align", check_gradients([&] { return sum(mul(roi_align(feat, box, 4), w)); }, {feat})));
  }
  {
    // Strictly positive masks and continuous contexts keep the max away from ties.
    const int T = 3, C = 4, H = 5, W = 6;
    Var ctx = d.param({T, C});
    Var masks = constant({T, H, W}, d.uniform(static_cast<std::size_t>(T) * H * W, 0.1, 1.0));
    Var w = d.fixed({C, H, W});
    out.push_back(record("distribute_contexts",
                         check_gradients([&] { return sum(mul(attn::distribute_contexts(ctx, masks, C), w)); }, {ctx})));
  }
  {
    const int L = 5, K = 3;
    box::BoxStepParams p;
    p.label_logits = d.param({L + 1});
    for (box::Gmm* g : {&p.xy, &p.wh}) {
      g->logits = d.param({K});
      g->mu = parameter({K, 2}, d.uniform(2 * K, 0.2, 0.8));
      g->log_sigma = parameter({K, 2}, d.uniform(2 * K, -2.0, -1.0));
      g->rho_raw = d.param({K}, 0.5);
    }
    const Box b{0.3, 0.25, 0.35, 0.4};
    out.push_back(record("gmm_nll", check_gradients([&] { return box::gmm_nll(p, 2, b, L); },
                                                    {p.label_logits, p.xy.logits, p.xy.mu, p.xy.log_sigma, p.xy.rho_raw,
                                                     p.wh.logits, p.wh.mu, p.wh.log_sigma, p.wh.rho_raw})));
  }
  const std::vector<bool> pad{false, false, false, true, false, true};
  {
    Var h = d.param({4, 7}), e = d.param({4, 6});
    Var w = d.fixed({4, 7});
    out.push_back(record("grid_attention",
                         check_gradients([&] { return sum(mul(attn::grid_attention(h, e, pad).context, w)); }, {h, e})));
  }
  {
    Var q = d.param({3, 5}), k = d.param({6, 5}), v = d.param({4, 6});
    Var w = d.fixed({3, 4});
    out.push_back(record("object_attention", check_gradients(
                                                 [&] { return sum(mul(attn::object_attention(q, k, v, pad).context, w)); },
                                                 {q, k, v})));
  }
  {
    Var c = d.param({5, 6}), e = d.param({5, 6});
    out.push_back(record("relevance", check_gradients([&] { return damsm::relevance(c, e, 5.0, pad); }, {c, e})));
  }
  {
    gen::GenConfig cfg;
    cfg.s0 = 8;
    cfg.ng = 4;
    cfg.residuals = {1, 1, 1};
    cfg.noise_dim = 3;
    cfg.label_dim = 3;
    cfg.num_classes = 3;
    cfg.cond_dim = 4;
    cfg.word_dim = 4;
    nn::Rng init(seed + 1);
    gen::ImageGenerator G(cfg, init);
    text::TextEncoding te;
    te.words = d.param({cfg.word_dim, 4}, 0.5);
    te.sentence = d.param({cfg.word_dim}, 0.5);
    te.label_space = d.param({4, cfg.label_dim}, 0.5);
    te.pad_mask = {false, false, false, false};
    const int S = 4 * cfg.s0;
    std::vector<double> m(2 * S * S, 0.0);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        if (x < S / 2 + 4) m[y * S + x] = 1.0;
        if (y >= S / 3) m[S * S + y * S + x] = 0.5;
      }
    gen::GenInput in;
    in.text = &te;
    in.labels = {0, 2};
    in.label_emb = d.param({2, cfg.label_dim}, 0.5);
    in.masks = gen::mask_set(constant({2, S, S}, m), cfg);
    in.z = d.param({cfg.noise_dim});
    Var w = d.fixed({1, 3, S, S});
    out.push_back(record("generator_end_to_end", check_gradients(
                                                     [&] { return sum(mul(G.forward({in}, false).images[2], w)); },
                                                     {in.z, in.label_emb, te.sentence}, 1e-6, 60)));
  }
  return out;
}

}  // namespace objgan::cli
