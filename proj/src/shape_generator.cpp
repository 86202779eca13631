#include "objgan/shape_generator.hpp"

#include <cmath>
#include <stdexcept>

namespace objgan::shape {

using namespace objgan::ag;

BoxMaps render_box_maps(const BoxSequence& boxes, int size, int num_classes) {
  const int T = static_cast<int>(boxes.size());
  const std::size_t hw = static_cast<std::size_t>(size) * size;
  std::vector<double> occ(T * hw, 0.0), lab(T * num_classes * hw, 0.0);
  for (int t = 0; t < T; ++t) {
    const auto& b = boxes[t].box;
    const int l = boxes[t].label;
    if (l < 0 || l >= num_classes) throw std::out_of_range("render_box_maps: label");
    int count = 0;
    for (int y = 0; y < size; ++y) {
      const double yc = (y + 0.5) / size;
      if (yc < b.y || yc >= b.y + b.h) continue;
      for (int x = 0; x < size; ++x) {
        const double xc = (x + 0.5) / size;
        if (xc < b.x || xc >= b.x + b.w) continue;
        occ[t * hw + y * size + x] = 1.0;
        lab[(static_cast<std::size_t>(t) * num_classes + l) * hw + y * size + x] = 1.0;
        ++count;
      }
    }
    if (count == 0) throw std::invalid_argument("render_box_maps: box " + std::to_string(t) + " covers no pixel centre");
  }
  return {constant({T, 1, size, size}, std::move(occ)), constant({T, num_classes, size, size}, std::move(lab))};
}

std::vector<Var> mask_pyramid(const Var& masks, int levels) {
  const int T = masks.dim(0), S = masks.dim(1);
  std::vector<Var> out{masks};
  Var cur = reshape(masks, {T, 1, S, S});
  for (int l = 1; l < levels; ++l) {
    cur = avg_pool2d(cur, 2);
    out.push_back(reshape(cur, {T, cur.dim(2), cur.dim(3)}));
  }
  return out;
}

ConvRecurrentCell::ConvRecurrentCell(CellType type, int in, int hidden, Rng& rng) : type_(type), hidden_(hidden) {
  if (type == CellType::Gru) {
    gates_ = nn::Conv2d(in + hidden, 2 * hidden, 3, 1, 1, rng);
    cand_ = nn::Conv2d(in + hidden, hidden, 3, 1, 1, rng);
  } else {
    gates_ = nn::Conv2d(in + hidden, 4 * hidden, 3, 1, 1, rng);
  }
}

std::pair<Var, Var> ConvRecurrentCell::forward(const Var& x, const Var& h, const Var& c) const {
  const int H = hidden_;
  Var g = gates_.forward(concat({x, h}, 1));
  if (type_ == CellType::Gru) {
    Var z = sigmoid(narrow(g, 1, 0, H));
    Var r = sigmoid(narrow(g, 1, H, H));
    Var n = tanh(cand_.forward(concat({x, mul(r, h)}, 1)));
    return {add(mul(add_scalar(neg(z), 1.0), h), mul(z, n)), c};
  }
  Var i = sigmoid(narrow(g, 1, 0, H));
  Var f = sigmoid(narrow(g, 1, H, H));
  Var gg = tanh(narrow(g, 1, 2 * H, H));
  Var o = sigmoid(narrow(g, 1, 3 * H, H));
  Var c2 = add(mul(f, c), mul(i, gg));
  return {mul(o, tanh(c2)), c2};
}

void ConvRecurrentCell::collect(nn::StateDict& sd, const std::string& prefix) const {
  gates_.collect(sd, prefix + ".gates");
  if (type_ == CellType::Gru) cand_.collect(sd, prefix + ".cand");
}

ShapeGenerator::ShapeGenerator(const ShapeGenConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.size % 4) throw std::invalid_argument("shape generator size must be divisible by 4");
  const int b = cfg.base, in = 1 + cfg.num_classes + cfg.noise_dim;
  enc0 = nn::Conv2d(in, b, 3, 1, 1, rng);
  enc1 = nn::Conv2d(b, 2 * b, 4, 2, 1, rng);
  enc2 = nn::Conv2d(2 * b, 2 * b, 4, 2, 1, rng);
  fwd = ConvRecurrentCell(cfg.cell, 2 * b, 2 * b, rng);
  bwd = ConvRecurrentCell(cfg.cell, 2 * b, 2 * b, rng);
  up1 = nn::Conv2d(4 * b, 4 * b, 3, 1, 1, rng);
  up2 = nn::Conv2d(2 * b, 2 * b, 3, 1, 1, rng);
  out = nn::Conv2d(b, 1, 3, 1, 1, rng);
}

Var ShapeGenerator::generate(const BoxSequence& boxes, const Var& noise) const {
  return generate(render_box_maps(boxes, cfg_.size, cfg_.num_classes), noise);
}

Var ShapeGenerator::generate(const BoxMaps& maps, const Var& noise) const {
  const int T = maps.occupancy.dim(0), S = cfg_.size;
  if (T == 0) return zeros({0, S, S});
  if (noise.dim(0) != T || noise.dim(1) != cfg_.noise_dim) throw ShapeError("generate_shapes: noise must be [T,nz]");
  Var nz = repeat_spatial(noise, S, S);
  Var x = concat({maps.occupancy, maps.labels, nz}, 1);
  auto block = [](const Var& v) { return leaky_relu(normalize_channels(v, true)); };
  x = block(enc0.forward(x));
  x = block(enc1.forward(x));
  x = block(enc2.forward(x));  // [T,2b,S/4,S/4]
  const int hid = fwd.hidden(), r = S / 4;
  Var zero = zeros({1, hid, r, r});
  std::vector<Var> hf(T), hb(T);
  Var h = zero, c = zero;
  for (int t = 0; t < T; ++t) {
    std::tie(h, c) = fwd.forward(narrow(x, 0, t, 1), h, c);
    hf[t] = h;
  }
  h = zero;
  c = zero;
  for (int t = T - 1; t >= 0; --t) {
    std::tie(h, c) = bwd.forward(narrow(x, 0, t, 1), h, c);
    hb[t] = h;
  }
  std::vector<Var> rows;
  for (int t = 0; t < T; ++t) rows.push_back(concat({hf[t], hb[t]}, 1));
  Var y = concat(rows, 0);  // [T,4b,r,r]
  auto up = [](const nn::Conv2d& conv, const Var& v) {
    return glu(normalize_channels(conv.forward(upsample_nearest(v, 2)), true), 1);
  };
  y = up(up1, y);  // 2b
  y = up(up2, y);  // b
  Var m = mul(sigmoid(out.forward(y)), maps.occupancy);
  return reshape(m, {T, S, S});
}

void ShapeGenerator::collect(nn::StateDict& sd, const std::string& prefix) const {
  enc0.collect(sd, prefix + ".enc0");
  enc1.collect(sd, prefix + ".enc1");
  enc2.collect(sd, prefix + ".enc2");
  fwd.collect(sd, prefix + ".fwd");
  bwd.collect(sd, prefix + ".bwd");
  up1.collect(sd, prefix + ".up1");
  up2.collect(sd, prefix + ".up2");
  out.collect(sd, prefix + ".out");
}

ShapeCritic::ShapeCritic(const ShapeGenConfig& cfg, Rng& rng) {
  const int b = cfg.base;
  c1 = nn::Conv2d(2 + cfg.num_classes, b, 4, 2, 1, rng);
  c2 = nn::Conv2d(b, 2 * b, 4, 2, 1, rng);
  c3 = nn::Conv2d(2 * b, 4 * b, 4, 2, 1, rng);
  fc = nn::Linear(4 * b, 1, rng);
}

Var ShapeCritic::logits(const Var& masks, const BoxMaps& maps) const {
  const int T = masks.dim(0), S = masks.dim(1);
  Var x = concat({reshape(masks, {T, 1, S, S}), maps.occupancy, maps.labels}, 1);
  x = leaky_relu(c1.forward(x));
  x = leaky_relu(normalize_channels(c2.forward(x), true));
  x = leaky_relu(normalize_channels(c3.forward(x), true));
  return reshape(fc.forward(global_avg_pool(x)), {T});
}

void ShapeCritic::collect(nn::StateDict& sd, const std::string& prefix) const {
  c1.collect(sd, prefix + ".c1");
  c2.collect(sd, prefix + ".c2");
  c3.collect(sd, prefix + ".c3");
  fc.collect(sd, prefix + ".fc");
}

GanLosses bce_gan_losses(const Var& real_logits, const Var& fake_logits) {
  // -log s(x) = softplus(-x); -log(1 - s(x)) = softplus(x)
  Var d = add(mean(softplus(neg(real_logits))), mean(softplus(fake_logits)));
  Var g = mean(softplus(neg(fake_logits)));
  return {g, d};
}

std::pair<double, double> bce_gan_losses(const std::vector<double>& p_real, const std::vector<double>& p_fake) {
  if (p_real.size() != p_fake.size() || p_real.empty()) throw std::invalid_argument("bce_gan_losses: sizes");
  double d = 0, g = 0;
  for (std::size_t i = 0; i < p_real.size(); ++i) {
    d += -std::log(p_real[i]) - std::log(1 - p_fake[i]);
    g += -std::log(p_fake[i]);
  }
  const double n = static_cast<double>(p_real.size());
  return {g / n, d / n};
}

GanLosses shape_adversarial_losses(const Var& real, const Var& fake, const BoxMaps& maps, const ShapeCritic& critic) {
  if (real.shape() != fake.shape()) throw ShapeError("shape_adversarial_losses: real/fake mismatch");
  return bce_gan_losses(critic.logits(real, maps), critic.logits(fake, maps));
}

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed, int channels) {
  Rng rng(seed);
  c1 = nn::Conv2d(1, channels, 3, 1, 1, rng);
  c2 = nn::Conv2d(channels, channels, 3, 2, 1, rng);
}

Var PerceptualExtractor::features(const Var& masks) const {
  const int T = masks.dim(0), S = masks.dim(1);
  return relu(c2.forward(relu(c1.forward(reshape(masks, {T, 1, S, S})))));
}

Var perceptual_loss(const Var& real, const Var& fake, const PerceptualExtractor& ext) {
  if (real.shape() != fake.shape()) throw ShapeError("perceptual_loss: shape mismatch");
  return mean(square(sub(ext.features(real), ext.features(fake))));
}

void train_shape_generator(ShapeGenerator& gen, ShapeCritic& critic, const std::vector<ShapeExample>& data,
                           const ShapeTrainConfig& tc, Rng& rng,
                           const std::function<void(int, const ShapeStepLog&)>& log) {
  if (data.empty()) throw std::invalid_argument("train_shape_generator: empty dataset");
  nn::StateDict gsd, dsd;
  gen.collect(gsd, "shape");
  critic.collect(dsd, "critic");
  nn::Adam gopt(tc.lr, 0.5, 0.999), dopt(tc.lr, 0.5, 0.999);
  const PerceptualExtractor ext;
  const auto& cfg = gen.config();
  for (int step = 0; step < tc.steps; ++step) {
    const auto& ex = data[rng() % data.size()];
    const int T = static_cast<int>(ex.boxes.size());
    const BoxMaps maps = render_box_maps(ex.boxes, cfg.size, cfg.num_classes);
    Var noise = constant({T, cfg.noise_dim}, nn::normal_values(rng, static_cast<std::size_t>(T) * cfg.noise_dim, 1.0));
    Var fake = gen.generate(maps, noise);

    auto dl = shape_adversarial_losses(ex.masks, detach(fake), maps, critic);
    dsd.params.zero_grad();
    dl.d_loss.backward();
    dopt.step(dsd.params);

    auto gl = bce_gan_losses(critic.logits(ex.masks, maps), critic.logits(fake, maps));
    Var perc = perceptual_loss(ex.masks, fake, ext);
    Var g = add(gl.g_loss, scale(perc, tc.perceptual_weight));
    for (double v : {dl.d_loss.item(), g.item()})
      if (!std::isfinite(v)) throw std::runtime_error("train_shape_generator: non-finite loss at step " + std::to_string(step));
    if (log) log(step, {gl.g_loss.item(), dl.d_loss.item(), perc.item()});
    gsd.params.zero_grad();
    g.backward();
    gopt.step(gsd.params);
  }
}

}  // namespace objgan::shape
