#include "objgan/box_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace objgan::box {

using namespace objgan::ag;

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

GmmValues gmm_values(const Gmm& g) {
  const int k = g.components();
  GmmValues v;
  double mx = *std::max_element(g.logits.value().begin(), g.logits.value().end());
  double z = 0;
  for (int i = 0; i < k; ++i) z += std::exp(g.logits.at(i) - mx);
  for (int i = 0; i < k; ++i) {
    v.pi.push_back(std::exp(g.logits.at(i) - mx) / z);
    v.mu.push_back({g.mu.at(2 * i), g.mu.at(2 * i + 1)});
    v.sigma.push_back({g.floor + std::exp(g.log_sigma.at(2 * i)), g.floor + std::exp(g.log_sigma.at(2 * i + 1))});
    v.rho.push_back(std::tanh(g.rho_raw.at(i)));
  }
  return v;
}

double mixture_density(const GmmValues& g, double x, double y) {
  double p = 0;
  for (std::size_t k = 0; k < g.pi.size(); ++k) {
    const double s1 = g.sigma[k][0], s2 = g.sigma[k][1], r = g.rho[k];
    const double dx = (x - g.mu[k][0]) / s1, dy = (y - g.mu[k][1]) / s2;
    const double q = (dx * dx + dy * dy - 2 * r * dx * dy) / (1 - r * r);
    p += g.pi[k] * std::exp(-0.5 * q) / (2 * M_PI * s1 * s2 * std::sqrt(1 - r * r));
  }
  return p;
}

Var gmm_head_nll(const Gmm& g, double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y)) throw std::domain_error("gmm_nll: non-finite target");
  const int k = g.components();
  Var logpi = log_softmax_axis(g.logits, 0);
  Var sigma = add_scalar(exp(g.log_sigma), g.floor);  // [K,2]
  Var s1 = reshape(narrow(sigma, 1, 0, 1), {k});
  Var s2 = reshape(narrow(sigma, 1, 1, 1), {k});
  Var rho = tanh(g.rho_raw);
  Var dx = div(add_scalar(neg(reshape(narrow(g.mu, 1, 0, 1), {k})), x), s1);
  Var dy = div(add_scalar(neg(reshape(narrow(g.mu, 1, 1, 1), {k})), y), s2);
  Var one_m_r2 = add_scalar(neg(square(rho)), 1.0);
  Var q = div(sub(add(square(dx), square(dy)), scale(mul(rho, mul(dx, dy)), 2.0)), one_m_r2);
  Var lognorm = add_scalar(neg(add(add(log(s1), log(s2)), scale(log(one_m_r2), 0.5))), -kLog2Pi);
  Var comp = add(logpi, sub(lognorm, scale(q, 0.5)));
  return neg(logsumexp_axis(comp, 0));
}

Var gmm_nll(const BoxStepParams& step, int label, const Box& box, int eos) {
  const int n = step.label_logits.dim(0);
  if (label < 0 || label >= n) throw std::out_of_range("gmm_nll: label");
  std::vector<double> oh(n, 0.0);
  oh[label] = 1.0;
  Var nll = neg(sum(mul(log_softmax_axis(step.label_logits, 0), constant({n}, std::move(oh)))));
  if (label == eos) return nll;
  return add(nll, add(gmm_head_nll(step.xy, box.x, box.y), gmm_head_nll(step.wh, box.w, box.h)));
}

BoxGenerator::BoxGenerator(const BoxGenConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int D = cfg.enc_dim, L1 = cfg.num_labels + 1, K = cfg.components;
  attn_h = nn::Linear(D, cfg.attn_dim, rng, false);
  attn_e = nn::Linear(D, cfg.attn_dim, rng, true);
  attn_v = nn::Linear(cfg.attn_dim, 1, rng, false);
  cell = nn::LstmCell(L1 + 4 + D, D, rng);
  head_label = nn::Linear(cfg.label_uses_context ? 2 * D : D, L1, rng);
  head_xy = nn::Linear(D + L1, 6 * K, rng);
  head_wh = nn::Linear(D + L1 + 2, 6 * K, rng);
}

DecoderState BoxGenerator::initial_state(const text::TextEncoding& enc) const {
  if (enc.sentence.dim(0) != cfg_.enc_dim) throw ShapeError("box decoder: encoder width mismatch");
  return {reshape(enc.sentence, {1, cfg_.enc_dim}), zeros({1, cfg_.enc_dim})};
}

std::pair<Var, Var> BoxGenerator::attend(const Var& h, const Var& enc_outputs, const std::vector<bool>& pad_mask) const {
  if (enc_outputs.dim(0) == 0) throw std::invalid_argument("decoder_step: empty encoder outputs");
  Var pre = add(attn_e.forward(enc_outputs), attn_h.forward(h));  // [Ts, A]
  if (cfg_.score == ScoreActivation::Tanh) pre = tanh(pre);
  Var scores = reshape(attn_v.forward(pre), {enc_outputs.dim(0)});
  Var alpha = masked_softmax(scores, 0, pad_mask);
  Var z = matmul(reshape(alpha, {1, enc_outputs.dim(0)}), enc_outputs);
  return {alpha, z};
}

DecoderStep BoxGenerator::decoder_step(const Var& prev_box, const DecoderState& s, const Var& enc_outputs,
                                       const std::vector<bool>& pad_mask) const {
  auto [alpha, z] = attend(s.h, enc_outputs, pad_mask);
  auto [h, c] = cell.forward(concat({prev_box, z}, 1), s.h, s.c);
  return {{h, c}, z, alpha};
}

Var BoxGenerator::label_logits(const Var& h, const Var& z) const {
  Var in = cfg_.label_uses_context ? concat({h, z}, 1) : h;
  return reshape(head_label.forward(in), {cfg_.num_labels + 1});
}

Gmm BoxGenerator::split(const Var& raw) const {
  const int K = cfg_.components;
  Var r = reshape(raw, {6 * K});
  Gmm g;
  g.logits = narrow(r, 0, 0, K);
  g.mu = reshape(narrow(r, 0, K, 2 * K), {K, 2});
  g.log_sigma = reshape(narrow(r, 0, 3 * K, 2 * K), {K, 2});
  g.rho_raw = narrow(r, 0, 5 * K, K);
  g.floor = cfg_.sigma_floor;
  return g;
}

namespace {

Var one_hot_row(int label, int n) {
  std::vector<double> v(n, 0.0);
  if (label >= 0) v.at(label) = 1.0;
  return constant({1, n}, std::move(v));
}

}  // namespace

Gmm BoxGenerator::xy_head(const Var& h, int label) const {
  return split(head_xy.forward(concat({h, one_hot_row(label, cfg_.num_labels + 1)}, 1)));
}

Gmm BoxGenerator::wh_head(const Var& h, int label, double x, double y) const {
  return split(
      head_wh.forward(concat({h, one_hot_row(label, cfg_.num_labels + 1), constant({1, 2}, {x, y})}, 1)));
}

Var BoxGenerator::box_input(int label, const Box& b) const {
  const int n = cfg_.num_labels + 1;
  std::vector<double> v(n + 4, 0.0);
  if (label >= 0) {
    v.at(label) = 1.0;
    v[n] = b.x;
    v[n + 1] = b.y;
    v[n + 2] = b.w;
    v[n + 3] = b.h;
  }
  return constant({1, n + 4}, std::move(v));
}

Var BoxGenerator::sequence_nll(const text::TextEncoding& enc, const BoxSequence& target) const {
  Var H = transpose(enc.words);
  DecoderState s = initial_state(enc);
  Var prev = box_input(-1, {});
  std::vector<Var> terms;
  const int T = static_cast<int>(target.size());
  if (T > cfg_.max_objects) throw std::invalid_argument("sequence longer than max_objects");
  for (int t = 0; t <= T; ++t) {
    auto st = decoder_step(prev, s, H, enc.pad_mask);
    s = st.state;
    const Var z = st.context;
    const bool end = t == T;
    const int label = end ? cfg_.eos() : target[t].label;
    const Box b = end ? Box{} : target[t].box;
    BoxStepParams p;
    p.label_logits = label_logits(s.h, z);
    if (!end) {
      p.xy = xy_head(s.h, label);
      p.wh = wh_head(s.h, label, b.x, b.y);
    }
    terms.push_back(reshape(gmm_nll(p, label, b, cfg_.eos()), {1}));
    if (!end) prev = box_input(label, b);
  }
  return mean(concat(terms, 0));
}

Box clamp_box(Box b, double min_size) {
  b.w = std::clamp(b.w, min_size, 1.0);
  b.h = std::clamp(b.h, min_size, 1.0);
  b.x = std::clamp(b.x, 0.0, 1.0 - b.w);
  b.y = std::clamp(b.y, 0.0, 1.0 - b.h);
  return b;
}

namespace {

std::array<double, 2> draw(const GmmValues& g, SampleMode mode, Rng& rng) {
  std::size_t k = 0;
  if (mode == SampleMode::Greedy) {
    k = static_cast<std::size_t>(std::max_element(g.pi.begin(), g.pi.end()) - g.pi.begin());
    return g.mu[k];
  }
  std::discrete_distribution<std::size_t> pick(g.pi.begin(), g.pi.end());
  k = pick(rng);
  std::normal_distribution<double> n;
  const double a = n(rng), b = n(rng);
  const double r = g.rho[k];
  return {g.mu[k][0] + g.sigma[k][0] * a, g.mu[k][1] + g.sigma[k][1] * (r * a + std::sqrt(1 - r * r) * b)};
}

}  // namespace

BoxSequence BoxGenerator::sample(const text::TextEncoding& enc, SampleMode mode, std::uint64_t seed) const {
  NoGradGuard ng;
  Rng rng(seed);
  Var H = transpose(enc.words);
  DecoderState s = initial_state(enc);
  Var prev = box_input(-1, {});
  BoxSequence out;
  for (int t = 0; t < cfg_.max_objects; ++t) {
    auto st = decoder_step(prev, s, H, enc.pad_mask);
    s = st.state;
    Var logits = label_logits(s.h, st.context);
    int label;
    if (mode == SampleMode::Greedy) {
      label = static_cast<int>(std::max_element(logits.value().begin(), logits.value().end()) - logits.value().begin());
    } else {
      Var p = softmax_axis(logits, 0);
      std::discrete_distribution<int> pick(p.value().begin(), p.value().end());
      label = pick(rng);
    }
    if (label == cfg_.eos()) break;
    const auto xy = draw(gmm_values(xy_head(s.h, label)), mode, rng);
    const auto wh = draw(gmm_values(wh_head(s.h, label, xy[0], xy[1])), mode, rng);
    const Box b = clamp_box({xy[0], xy[1], wh[0], wh[1]});
    out.push_back({label, b});
    prev = box_input(label, b);
  }
  return out;
}

void BoxGenerator::collect(nn::StateDict& sd, const std::string& prefix) const {
  attn_h.collect(sd, prefix + ".attn_h");
  attn_e.collect(sd, prefix + ".attn_e");
  attn_v.collect(sd, prefix + ".attn_v");
  cell.collect(sd, prefix + ".lstm");
  head_label.collect(sd, prefix + ".head_label");
  head_xy.collect(sd, prefix + ".head_xy");
  head_wh.collect(sd, prefix + ".head_wh");
}

void train_box_generator(BoxGenerator& gen, text::TextEncoder& encoder, const std::vector<BoxExample>& data,
                         const BoxTrainConfig& tc, Rng& rng, const std::function<void(int, double)>& log) {
  if (data.empty()) throw std::invalid_argument("train_box_generator: empty dataset");
  nn::StateDict sd;
  gen.collect(sd, "box");
  if (tc.finetune_encoder) encoder.collect(sd, "text");
  std::vector<text::TextEncoding> cached;
  if (!tc.finetune_encoder) {
    NoGradGuard ng;
    for (const auto& ex : data) cached.push_back(encoder.encode(ex.tokens));
  }
  nn::Adam opt(tc.lr, 0.9, 0.999);
  const int m = std::min<int>(tc.batch, static_cast<int>(data.size()));
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int step = 0; step < tc.steps; ++step) {
    for (int i = 0; i < m; ++i) std::swap(order[i], order[i + rng() % (order.size() - i)]);
    std::vector<Var> losses;
    for (int i = 0; i < m; ++i) {
      const auto& ex = data[order[i]];
      const auto enc = tc.finetune_encoder ? encoder.encode(ex.tokens) : cached[order[i]];
      losses.push_back(reshape(gen.sequence_nll(enc, ex.boxes), {1}));
    }
    Var loss = mean(concat(losses, 0));
    if (!std::isfinite(loss.item())) throw std::runtime_error("train_box_generator: non-finite loss at step " + std::to_string(step));
    if (log) log(step, loss.item());
    sd.params.zero_grad();
    loss.backward();
    opt.step(sd.params);
  }
}

}  // namespace objgan::box
