#pragma once

// Patch-wise (unconditional + text-conditional), patch-wise shape, and
// object-wise ROI discriminators, each in a plain and a spectral-normalised
// projection variant. All heads return logits; probabilities are their
// sigmoids.

#include <string>
#include <vector>

#include "objgan/nn/layers.hpp"
#include "objgan/types.hpp"

namespace objgan::disc {

using ag::Var;
using nn::Rng;

struct DiscConfig {
  int nd = 16;           // N_d
  int s0 = 16;           // generator base stage side
  int ng = 16;           // width of object context vectors
  int label_dim = 50;    // N_l
  int num_classes = 36;  // N_c
  int cond_dim = 256;    // N_e
  bool spectral = false;            // projection variant with spectral norm
  bool interpolate_objects = false; // x2 nearest upsampling before the object towers
  int roi_bins = 5;

  // Downsampling blocks of every patch and shape discriminator: log2(S0/4).
  int patch_downs() const;
  // Output grid side at stage k: 1, 3, 7.
  int grid_size(int k) const;
  void validate() const;
};

// Stride-2 4x4 conv, optional BN, leaky ReLU.
class DownBlock {
 public:
  DownBlock() = default;
  DownBlock(int in, int out, bool bn, bool spectral, Rng& rng);
  Var forward(const Var& x, bool train) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  nn::Conv2d conv;
  nn::BatchNorm bn;
  bool use_bn = false;
};

struct Logits {
  Var un;   // unconditional
  Var con;  // conditional (undefined for the shape discriminator)
};

// Conditional and unconditional heads over a feature map h [N,C,g,g].
// Plain: un = outlogits(h), con = outlogits(conv3x3-BN-LReLU([h, repeat(cond)])).
// Projection: h' = conv4x4 s2(h); un = conv1x1(h'); con = un + mean_c(h' * fc(cond)).
class CondHead {
 public:
  CondHead() = default;
  CondHead(int channels, int cond_dim, bool spectral, Rng& rng);
  Logits forward(const Var& h, const Var& cond, bool train) const;
  Var unconditional(const Var& h, bool train) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  bool spectral = false;
  nn::Conv2d joint, out_un, out_con;  // plain
  nn::BatchNorm joint_bn;
  nn::Conv2d proj_conv, proj_un;      // projection
  nn::Linear proj_fc;
};

class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(const DiscConfig& cfg, int stage, Rng& rng);
  // x [N,3,S,S], cond [N,N_e] -> logits [N, g*g] each.
  Logits forward(const Var& x, const Var& cond, bool train) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  std::vector<DownBlock> downs;
  CondHead head;
  int stage = 0, size = 0;
};

class ShapeDiscriminator {
 public:
  ShapeDiscriminator() = default;
  ShapeDiscriminator(const DiscConfig& cfg, int stage, Rng& rng);
  // x [N,3,S,S], class maps [N,N_c,S,S] -> logits [N, g*g].
  Var forward(const Var& x, const Var& class_maps, bool train) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  nn::Conv2d shape_conv;
  std::vector<DownBlock> downs;
  CondHead head;
  int stage = 0, size = 0;
};

// Objects with max(w,h) * S > S/3 are large; others small. Indices into boxes.
struct Routing {
  std::vector<int> small, large;
};
Routing route_objects(const BoxSequence& boxes, int image_size);

struct ObjectInputs {
  std::vector<BoxSequence> boxes;  // per sample
  std::vector<Var> c_obj;          // per sample [T, N_g]
  std::vector<Var> label_emb;      // per sample [T, N_l]
  int count() const;
};

class ObjectTower {
 public:
  ObjectTower() = default;
  ObjectTower(const DiscConfig& cfg, int downs, Rng& rng);
  Var features(const Var& x, const Var& class_maps, bool train) const;  // [N,C,h,w]
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  nn::Conv2d shape_conv;
  std::vector<DownBlock> downs;
  nn::Conv2d roi_enc;
  CondHead head;
  bool interpolate = false;
};

class ObjectDiscriminator {
 public:
  ObjectDiscriminator() = default;
  ObjectDiscriminator(const DiscConfig& cfg, Rng& rng);
  // Final-stage image and class maps; logits [total objects] in sample-major
  // input order. Zero objects give empty logits.
  Logits forward(const Var& x, const Var& class_maps, const ObjectInputs& objects, bool train) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  ObjectTower small, large;
  int image_size = 0;
  int roi_bins = 5;
};

// Mean-channel inner product of two [N,C,...] / [N,C] tensors, used by the
// projection heads: out[n,...] = mean_c a[n,c,...] * b[n,c].
Var projection_term(const Var& h, const Var& c);

}  // namespace objgan::disc
