#include "objgan/image_generator.hpp"

#include <stdexcept>

#include "objgan/attention.hpp"

namespace objgan::gen {

using namespace objgan::ag;

void GenConfig::validate() const {
  if (s0 < 8 || s0 % 8) throw std::invalid_argument("GenConfig: s0 must be a positive multiple of 8");
  if (ng < 2 || ng % 2) throw std::invalid_argument("GenConfig: ng must be even and >= 2");
  for (int m : residuals)
    if (m < 1) throw std::invalid_argument("GenConfig: residual counts must be >= 1");
  if (noise_dim < 1 || label_dim < 1 || num_classes < 1 || cond_dim < 1 || word_dim < 1)
    throw std::invalid_argument("GenConfig: dimensions must be positive");
}

std::array<StageGeometry, 3> stage_geometry(const GenConfig& cfg) {
  std::array<StageGeometry, 3> g;
  for (int k = 0; k < 3; ++k) {
    const int s = cfg.stage_size(k);
    g[k] = {s / 2, cfg.concat_channels(), s, cfg.ng, s};
  }
  return g;
}

std::array<int, 4> mask_sizes(const GenConfig& cfg) { return {cfg.s0 / 2, cfg.s0, 2 * cfg.s0, 4 * cfg.s0}; }

std::array<Var, 4> mask_set(const Var& full, const GenConfig& cfg) {
  const int T = full.dim(0), S = full.dim(1);
  std::array<Var, 4> out;
  const auto sizes = mask_sizes(cfg);
  for (int i = 0; i < 4; ++i) {
    const int s = sizes[i];
    if (S % s) throw ShapeError("mask_set: mask side " + std::to_string(S) + " not divisible by " + std::to_string(s));
    if (s == S || T == 0) {
      out[i] = T == 0 ? zeros({0, s, s}) : full;
      continue;
    }
    Var p = avg_pool2d(reshape(full, {T, 1, S, S}), S / s);
    out[i] = reshape(p, {T, s, s});
  }
  return out;
}

UpBlock::UpBlock(int in, int out, Rng& rng) : conv(in, 2 * out, 3, 1, 1, rng), bn(2 * out) {}

Var UpBlock::forward(const Var& x, bool train) const {
  return glu(bn.forward(conv.forward(upsample_nearest(x, 2)), train), 1);
}

void UpBlock::collect(nn::StateDict& sd, const std::string& prefix) const {
  conv.collect(sd, prefix + ".conv");
  bn.collect(sd, prefix + ".bn");
}

DownBlock::DownBlock(int in, int out, Rng& rng) : conv(in, out, 3, 2, 1, rng), bn(out) {}

Var DownBlock::forward(const Var& x, bool train) const { return leaky_relu(bn.forward(conv.forward(x), train)); }

void DownBlock::collect(nn::StateDict& sd, const std::string& prefix) const {
  conv.collect(sd, prefix + ".conv");
  bn.collect(sd, prefix + ".bn");
}

ResBlock::ResBlock(int channels, Rng& rng) : c1(channels, 2 * channels, 3, 1, 0, rng), c2(channels, channels, 3, 1, 0, rng) {}

Var ResBlock::forward(const Var& x) const {
  Var y = glu(normalize_channels(c1.forward(reflection_pad2d(x, 1)), true), 1);
  y = normalize_channels(c2.forward(reflection_pad2d(y, 1)), true);
  return add(x, y);
}

void ResBlock::collect(nn::StateDict& sd, const std::string& prefix) const {
  c1.collect(sd, prefix + ".c1");
  c2.collect(sd, prefix + ".c2");
}

ShapeEncoder::ShapeEncoder(int in, int out, Rng& rng, bool spectral) : conv(in, out, 3, 1, 0, rng, true, spectral) {}

Var ShapeEncoder::forward(const Var& maps, bool train) const {
  if (maps.rank() != 4 || maps.dim(1) != conv.in_channels())
    throw ShapeError("ShapeEncoder: expected [N," + std::to_string(conv.in_channels()) + ",H,W] input");
  return leaky_relu(normalize_channels(conv.forward(reflection_pad2d(maps, 1), train), true));
}

void ShapeEncoder::collect(nn::StateDict& sd, const std::string& prefix) const { conv.collect(sd, prefix + ".conv"); }

ImageGenerator::ImageGenerator(const GenConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int ng = cfg.ng, cc = cfg.concat_channels();
  const int r = cfg.s0 / 8;
  ca = text::ConditionAugment(cfg.word_dim, cfg.cond_dim, rng);
  fc = nn::Linear(cfg.noise_dim + cfg.cond_dim, 2 * 4 * ng * r * r, rng);
  fc_bn = nn::BatchNorm(2 * 4 * ng * r * r);
  up_a = UpBlock(4 * ng, 2 * ng, rng);
  up_b = UpBlock(2 * ng, ng, rng);
  obj_value = nn::Linear(cfg.word_dim, ng, rng, false);
  for (auto& p : word_proj) p = nn::Linear(cfg.word_dim, ng, rng, false);
  for (int k = 0; k < 3; ++k) {
    shape_enc[k] = ShapeEncoder(cfg.num_classes, ng / 2, rng);
    shape_down[k] = DownBlock(ng / 2, ng, rng);
    for (int i = 0; i < cfg.residuals[k]; ++i) res[k].emplace_back(cc, rng);
    up_out[k] = UpBlock(cc, ng, rng);
    to_img[k] = nn::Conv2d(ng, 3, 3, 1, 1, rng);
  }
}

Var ImageGenerator::encode_shapes(int k, const Var& class_maps, bool train) const {
  const int s = cfg_.stage_size(k);
  if (class_maps.rank() != 4 || class_maps.dim(2) != s || class_maps.dim(3) != s)
    throw ShapeError("encode_shapes: stage " + std::to_string(k) + " expects " + std::to_string(s) + "x" +
                     std::to_string(s) + " maps");
  return shape_down[k].forward(shape_enc[k].forward(class_maps), train);
}

namespace {

Var project_words(const nn::Linear& proj, const Var& words) { return transpose(proj.forward(transpose(words))); }

Var narrow_sample(const Var& x, int n) {
  return reshape(narrow(x, 0, n, 1), {x.dim(1), x.dim(2), x.dim(3)});
}

Var stack_batch(const std::vector<Var>& xs) {
  std::vector<Var> rows;
  rows.reserve(xs.size());
  for (const auto& x : xs) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    rows.push_back(reshape(x, s));
  }
  return concat(rows, 0);
}

}  // namespace

GenOutput ImageGenerator::forward(const std::vector<GenInput>& batch, bool train) const {
  const int N = static_cast<int>(batch.size());
  if (N == 0) throw std::invalid_argument("ImageGenerator::forward: empty batch");
  const auto& cfg = cfg_;
  const auto sizes = mask_sizes(cfg);
  for (const auto& in : batch) {
    if (!in.text) throw std::invalid_argument("ImageGenerator::forward: missing text encoding");
    if (in.text->words.dim(0) != cfg.word_dim) throw ShapeError("ImageGenerator::forward: word dim mismatch");
    if (in.z.numel() != static_cast<std::size_t>(cfg.noise_dim)) throw ShapeError("ImageGenerator::forward: noise dim");
    const int T = static_cast<int>(in.labels.size());
    if (in.label_emb.dim(0) != T || in.label_emb.dim(1) != cfg.label_dim)
      throw ShapeError("ImageGenerator::forward: label embeddings must be [T,N_l]");
    for (int i = 0; i < 4; ++i)
      if (in.masks[i].shape() != Shape{T, sizes[i], sizes[i]})
        throw ShapeError("ImageGenerator::forward: mask level " + std::to_string(i) + " has wrong shape");
  }

  GenOutput out;
  out.records.resize(N);

  // Object-driven attention is independent of image features: once per sample.
  std::vector<Var> obj_ctx(N);
  for (int n = 0; n < N; ++n) {
    const auto& in = batch[n];
    Var values = project_words(obj_value, in.text->words);
    auto att = attn::object_attention(in.label_emb, in.text->label_space, values, in.text->pad_mask);
    obj_ctx[n] = att.context;
    out.records[n].obj_beta = att.beta;
    out.records[n].obj_context = att.context;
  }

  auto context_maps = [&](int k, int mask_level, std::vector<Var>& cobj, std::vector<Var>& clab) {
    for (int n = 0; n < N; ++n) {
      const auto& m = batch[n].masks[mask_level];
      cobj.push_back(attn::distribute_contexts(obj_ctx[n], m, cfg.ng));
      clab.push_back(attn::distribute_labels(batch[n].label_emb, m, cfg.label_dim));
      out.records[n].stages[k].c_obj = cobj.back();
      out.records[n].stages[k].c_lab = clab.back();
    }
  };
  auto class_maps = [&](int mask_level) {
    std::vector<Var> maps;
    for (const auto& in : batch) maps.push_back(attn::class_channel_map(in.labels, in.masks[mask_level], cfg.num_classes));
    return stack_batch(maps);
  };

  // Stage 0.
  std::vector<Var> sent, zs;
  for (const auto& in : batch) {
    sent.push_back(in.text->sentence);
    zs.push_back(reshape(in.z, {cfg.noise_dim}));
  }
  out.cond = ca.forward(stack_batch(sent));
  const int r = cfg.s0 / 8;
  Var x = fc_bn.forward(fc.forward(concat({stack_batch(zs), out.cond}, 1)), train);
  x = reshape(glu(x, 1), {N, 4 * cfg.ng, r, r});
  Var c = up_b.forward(up_a.forward(x, train), train);
  Var u = encode_shapes(0, class_maps(1), train);
  std::vector<Var> cobj, clab;
  context_maps(0, 0, cobj, clab);
  Var h = concat({c, u, stack_batch(cobj), stack_batch(clab)}, 1);
  for (const auto& rb : res[0]) h = rb.forward(h);
  h = up_out[0].forward(h, train);
  out.hidden[0] = h;
  out.images[0] = tanh(to_img[0].forward(h));

  // Refiners.
  for (int k = 1; k < 3; ++k) {
    Var uk = encode_shapes(k, class_maps(k + 1), train);
    if (uk.shape() != h.shape())
      throw ShapeError("refine stage " + std::to_string(k) + ": shape encoding does not match hidden map");
    h = add(h, uk);
    std::vector<Var> cpat;
    cobj.clear();
    clab.clear();
    for (int n = 0; n < N; ++n) {
      const auto& in = batch[n];
      Var words = project_words(word_proj[k - 1], in.text->words);
      auto att = attn::grid_attention_map(narrow_sample(h, n), words, in.text->pad_mask);
      cpat.push_back(att.context);
      out.records[n].stages[k].grid_beta = att.beta;
    }
    context_maps(k, k, cobj, clab);
    h = concat({stack_batch(cpat), h, stack_batch(cobj), stack_batch(clab)}, 1);
    for (const auto& rb : res[k]) h = rb.forward(h);
    h = up_out[k].forward(h, train);
    out.hidden[k] = h;
    out.images[k] = tanh(to_img[k].forward(h));
  }
  return out;
}

void ImageGenerator::collect(nn::StateDict& sd, const std::string& prefix) const {
  ca.collect(sd, prefix + ".ca");
  fc.collect(sd, prefix + ".fc");
  fc_bn.collect(sd, prefix + ".fc_bn");
  up_a.collect(sd, prefix + ".up_a");
  up_b.collect(sd, prefix + ".up_b");
  obj_value.collect(sd, prefix + ".obj_value");
  for (int i = 0; i < 2; ++i) word_proj[i].collect(sd, prefix + ".word_proj" + std::to_string(i + 1));
  for (int k = 0; k < 3; ++k) {
    const std::string p = prefix + ".g" + std::to_string(k);
    shape_enc[k].collect(sd, p + ".shape_enc");
    shape_down[k].collect(sd, p + ".shape_down");
    for (std::size_t i = 0; i < res[k].size(); ++i) res[k][i].collect(sd, p + ".res" + std::to_string(i));
    up_out[k].collect(sd, p + ".up");
    to_img[k].collect(sd, p + ".to_img");
  }
}

}  // namespace objgan::gen
