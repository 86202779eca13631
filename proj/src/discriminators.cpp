#include "objgan/discriminators.hpp"

#include <algorithm>
#include <stdexcept>

namespace objgan::disc {

using namespace objgan::ag;

int DiscConfig::patch_downs() const {
  int n = 0;
  for (int s = s0; s > 4; s /= 2) ++n;
  return n;
}

int DiscConfig::grid_size(int k) const {
  const int h = (s0 << k) >> patch_downs();
  return (h - 4) / 2 + 1;
}

void DiscConfig::validate() const {
  if (s0 < 8 || (s0 & (s0 - 1))) throw std::invalid_argument("DiscConfig: s0 must be a power of two >= 8");
  if (nd < 1) throw std::invalid_argument("DiscConfig: nd must be positive");
  if (roi_bins < 2) throw std::invalid_argument("DiscConfig: roi_bins must be >= 2");
}

DownBlock::DownBlock(int in, int out, bool bn_, bool spectral, Rng& rng)
    : conv(in, out, 4, 2, 1, rng, true, spectral), use_bn(bn_) {
  if (use_bn) bn = nn::BatchNorm(out);
}

Var DownBlock::forward(const Var& x, bool train) const {
  Var y = conv.forward(x, train);
  if (use_bn) y = bn.forward(y, train);
  return leaky_relu(y);
}

void DownBlock::collect(nn::StateDict& sd, const std::string& prefix) const {
  conv.collect(sd, prefix + ".conv");
  if (use_bn) bn.collect(sd, prefix + ".bn");
}

Var projection_term(const Var& h, const Var& c) {
  const int N = h.dim(0), C = h.dim(1);
  if (c.shape() != Shape{N, C}) throw ShapeError("projection_term: conditioning must be [N,C]");
  Shape cs{N, C};
  for (int i = 2; i < h.rank(); ++i) cs.push_back(1);
  return mean_axis(mul(h, broadcast_to(reshape(c, cs), h.shape())), 1);
}

CondHead::CondHead(int channels, int cond_dim, bool sn, Rng& rng) : spectral(sn) {
  if (spectral) {
    proj_conv = nn::Conv2d(channels, channels, 4, 2, 0, rng, true, true);
    proj_un = nn::Conv2d(channels, 1, 1, 1, 0, rng, true, true);
    proj_fc = nn::Linear(cond_dim, channels, rng, true, true);
  } else {
    joint = nn::Conv2d(channels + cond_dim, channels, 3, 1, 1, rng);
    joint_bn = nn::BatchNorm(channels);
    out_un = nn::Conv2d(channels, 1, 4, 2, 0, rng);
    out_con = nn::Conv2d(channels, 1, 4, 2, 0, rng);
  }
}

namespace {

Var flatten_logits(const Var& y) { return reshape(y, {y.dim(0), y.dim(2) * y.dim(3)}); }

}  // namespace

Var CondHead::unconditional(const Var& h, bool train) const {
  if (spectral) return flatten_logits(proj_un.forward(proj_conv.forward(h, train), train));
  return flatten_logits(out_un.forward(h, train));
}

Logits CondHead::forward(const Var& h, const Var& cond, bool train) const {
  if (spectral) {
    Var hp = proj_conv.forward(h, train);
    Var un = flatten_logits(proj_un.forward(hp, train));
    Var pt = projection_term(hp, proj_fc.forward(cond, train));
    return {un, add(un, reshape(pt, un.shape()))};
  }
  Var un = flatten_logits(out_un.forward(h, train));
  Var joined = concat({h, repeat_spatial(cond, h.dim(2), h.dim(3))}, 1);
  Var hc = leaky_relu(joint_bn.forward(joint.forward(joined, train), train));
  return {un, flatten_logits(out_con.forward(hc, train))};
}

void CondHead::collect(nn::StateDict& sd, const std::string& prefix) const {
  if (spectral) {
    proj_conv.collect(sd, prefix + ".proj_conv");
    proj_un.collect(sd, prefix + ".proj_un");
    proj_fc.collect(sd, prefix + ".proj_fc");
  } else {
    joint.collect(sd, prefix + ".joint");
    joint_bn.collect(sd, prefix + ".joint_bn");
    out_un.collect(sd, prefix + ".out_un");
    out_con.collect(sd, prefix + ".out_con");
  }
}

namespace {

std::vector<DownBlock> make_downs(int in, int nd, int count, bool spectral, Rng& rng) {
  std::vector<DownBlock> d;
  int c = in;
  for (int i = 0; i < count; ++i) {
    const int out = nd << i;
    d.emplace_back(c, out, i > 0, spectral, rng);
    c = out;
  }
  return d;
}

Var run_downs(const std::vector<DownBlock>& downs, Var x, bool train) {
  for (const auto& d : downs) x = d.forward(x, train);
  return x;
}

void check_image(const Var& x, int size, const char* who) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != size || x.dim(3) != size)
    throw ShapeError(std::string(who) + ": expected [N,3," + std::to_string(size) + "," + std::to_string(size) + "] images");
}

}  // namespace

PatchDiscriminator::PatchDiscriminator(const DiscConfig& cfg, int stage_, Rng& rng)
    : stage(stage_), size(cfg.s0 << stage_) {
  cfg.validate();
  const int n = cfg.patch_downs();
  downs = make_downs(3, cfg.nd, n, cfg.spectral, rng);
  head = CondHead(cfg.nd << (n - 1), cfg.cond_dim, cfg.spectral, rng);
}

Logits PatchDiscriminator::forward(const Var& x, const Var& cond, bool train) const {
  check_image(x, size, "PatchDiscriminator");
  return head.forward(run_downs(downs, x, train), cond, train);
}

void PatchDiscriminator::collect(nn::StateDict& sd, const std::string& prefix) const {
  for (std::size_t i = 0; i < downs.size(); ++i) downs[i].collect(sd, prefix + ".down" + std::to_string(i));
  head.collect(sd, prefix + ".head");
}

ShapeDiscriminator::ShapeDiscriminator(const DiscConfig& cfg, int stage_, Rng& rng)
    : stage(stage_), size(cfg.s0 << stage_) {
  cfg.validate();
  const int se = std::max(1, cfg.nd / 8);
  shape_conv = nn::Conv2d(cfg.num_classes, se, 3, 1, 0, rng, true, cfg.spectral);
  const int n = cfg.patch_downs();
  downs = make_downs(3 + se, cfg.nd, n, cfg.spectral, rng);
  head = CondHead(cfg.nd << (n - 1), 1, cfg.spectral, rng);
}

namespace {

Var encode_shape_maps(const nn::Conv2d& conv, const Var& maps, bool train) {
  if (maps.rank() != 4 || maps.dim(1) != conv.in_channels())
    throw ShapeError("shape encoder: expected " + std::to_string(conv.in_channels()) + " class channels");
  return leaky_relu(normalize_channels(conv.forward(reflection_pad2d(maps, 1), train), true));
}

}  // namespace

Var ShapeDiscriminator::forward(const Var& x, const Var& class_maps, bool train) const {
  check_image(x, size, "ShapeDiscriminator");
  if (class_maps.rank() != 4 || class_maps.dim(0) != x.dim(0) || class_maps.dim(2) != size || class_maps.dim(3) != size)
    throw ShapeError("ShapeDiscriminator: class maps must match the image batch and size");
  Var h = concat({x, encode_shape_maps(shape_conv, class_maps, train)}, 1);
  return head.unconditional(run_downs(downs, h, train), train);
}

void ShapeDiscriminator::collect(nn::StateDict& sd, const std::string& prefix) const {
  shape_conv.collect(sd, prefix + ".shape_enc");
  for (std::size_t i = 0; i < downs.size(); ++i) downs[i].collect(sd, prefix + ".down" + std::to_string(i));
  head.collect(sd, prefix + ".head");
}

Routing route_objects(const BoxSequence& boxes, int image_size) {
  Routing r;
  const double S = image_size;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i].box;
    (std::max(b.w, b.h) * S > S / 3.0 ? r.large : r.small).push_back(static_cast<int>(i));
  }
  return r;
}

int ObjectInputs::count() const {
  int n = 0;
  for (const auto& b : boxes) n += static_cast<int>(b.size());
  return n;
}

ObjectTower::ObjectTower(const DiscConfig& cfg, int n_downs, Rng& rng) : interpolate(cfg.interpolate_objects) {
  const int se = std::max(1, cfg.nd / 8);
  shape_conv = nn::Conv2d(cfg.num_classes, se, 3, 1, 0, rng, true, cfg.spectral);
  downs = make_downs(3 + se, cfg.nd, n_downs, cfg.spectral, rng);
  const int c = cfg.nd << (n_downs - 1);
  roi_enc = nn::Conv2d(c, 4 * cfg.nd, 4, 1, 1, rng, true, cfg.spectral);
  head = CondHead(4 * cfg.nd, cfg.ng + cfg.label_dim, cfg.spectral, rng);
}

Var ObjectTower::features(const Var& x, const Var& class_maps, bool train) const {
  Var xi = interpolate ? upsample_nearest(x, 2) : x;
  Var mi = interpolate ? upsample_nearest(class_maps, 2) : class_maps;
  return run_downs(downs, concat({xi, encode_shape_maps(shape_conv, mi, train)}, 1), train);
}

void ObjectTower::collect(nn::StateDict& sd, const std::string& prefix) const {
  shape_conv.collect(sd, prefix + ".shape_enc");
  for (std::size_t i = 0; i < downs.size(); ++i) downs[i].collect(sd, prefix + ".down" + std::to_string(i));
  roi_enc.collect(sd, prefix + ".roi_enc");
  head.collect(sd, prefix + ".head");
}

ObjectDiscriminator::ObjectDiscriminator(const DiscConfig& cfg, Rng& rng)
    : image_size(cfg.s0 * 4), roi_bins(cfg.roi_bins) {
  cfg.validate();
  const int extra = cfg.interpolate_objects ? 1 : 0;
  small = ObjectTower(cfg, 2 + extra, rng);
  large = ObjectTower(cfg, 3 + extra, rng);
}

Logits ObjectDiscriminator::forward(const Var& x, const Var& class_maps, const ObjectInputs& objects,
                                    bool train) const {
  check_image(x, image_size, "ObjectDiscriminator");
  const int N = x.dim(0);
  if (static_cast<int>(objects.boxes.size()) != N || objects.c_obj.size() != objects.boxes.size() ||
      objects.label_emb.size() != objects.boxes.size())
    throw ShapeError("ObjectDiscriminator: object inputs must have one entry per sample");
  const int total = objects.count();
  if (total == 0) return {zeros({0}), zeros({0})};

  // Global object index -> (tower, position within that tower's outputs).
  std::vector<int> order_small, order_large;
  std::vector<RoiBox> rois_small, rois_large;
  std::vector<int> sample_small, sample_large;
  std::vector<Var> cond_small, cond_large;
  int g = 0;
  for (int n = 0; n < N; ++n) {
    const auto& bs = objects.boxes[n];
    const int T = static_cast<int>(bs.size());
    if (objects.c_obj[n].dim(0) != T || objects.label_emb[n].dim(0) != T)
      throw ShapeError("ObjectDiscriminator: context / label rows must match the object count");
    Var cond = concat({objects.c_obj[n], objects.label_emb[n]}, 1);
    const auto route = route_objects(bs, image_size);
    std::vector<bool> is_large(T, false);
    for (int i : route.large) is_large[i] = true;
    for (int t = 0; t < T; ++t, ++g) {
      const auto& b = bs[t].box;
      const RoiBox roi{b.x, b.y, b.w, b.h};
      Var row = narrow(cond, 0, t, 1);
      if (is_large[t]) {
        order_large.push_back(g);
        rois_large.push_back(roi);
        sample_large.push_back(n);
        cond_large.push_back(row);
      } else {
        order_small.push_back(g);
        rois_small.push_back(roi);
        sample_small.push_back(n);
        cond_small.push_back(row);
      }
    }
  }

  auto run_tower = [&](const ObjectTower& tower, const std::vector<RoiBox>& rois, const std::vector<int>& samples,
                       const std::vector<Var>& conds) -> Logits {
    Var feat = tower.features(x, class_maps, train);
    const int C = feat.dim(1), H = feat.dim(2), W = feat.dim(3);
    std::vector<Var> pooled;
    for (std::size_t i = 0; i < rois.size(); ++i) {
      Var f = reshape(narrow(feat, 0, samples[i], 1), {C, H, W});
      pooled.push_back(reshape(roi_align(f, rois[i], roi_bins), {1, C, roi_bins, roi_bins}));
    }
    Var h = leaky_relu(tower.roi_enc.forward(concat(pooled, 0), train));
    Logits l = tower.head.forward(h, concat(conds, 0), train);
    return {reshape(l.un, {l.un.dim(0)}), reshape(l.con, {l.con.dim(0)})};
  };

  std::vector<Var> un_parts, con_parts;
  std::vector<int> order;
  if (!rois_small.empty()) {
    auto l = run_tower(small, rois_small, sample_small, cond_small);
    un_parts.push_back(l.un);
    con_parts.push_back(l.con);
    order.insert(order.end(), order_small.begin(), order_small.end());
  }
  if (!rois_large.empty()) {
    auto l = run_tower(large, rois_large, sample_large, cond_large);
    un_parts.push_back(l.un);
    con_parts.push_back(l.con);
    order.insert(order.end(), order_large.begin(), order_large.end());
  }
  // Scatter back to input order.
  std::vector<int> inverse(total);
  for (int i = 0; i < total; ++i) inverse[order[i]] = i;
  return {index_select(concat(un_parts, 0), inverse), index_select(concat(con_parts, 0), inverse)};
}

void ObjectDiscriminator::collect(nn::StateDict& sd, const std::string& prefix) const {
  small.collect(sd, prefix + ".small");
  large.collect(sd, prefix + ".large");
}

}  // namespace objgan::disc
