#pragma once

// Three-stage attentive image generator: a base stage at S0 and two refiners
// at 2*S0 and 4*S0. Each stage concatenates its hidden path with shape
// encodings, object-driven context maps and label maps.

#include <array>
#include <string>
#include <vector>

#include "objgan/nn/layers.hpp"
#include "objgan/text.hpp"

namespace objgan::gen {

using ag::Var;
using nn::Rng;

struct GenConfig {
  int s0 = 16;               // base stage image side
  int ng = 16;               // generator base channels
  std::array<int, 3> residuals{3, 2, 2};
  int noise_dim = 100;
  int label_dim = 50;        // N_l
  int num_classes = 36;      // N_c
  int cond_dim = 256;        // N_e
  int word_dim = 64;         // D
  int stage_size(int k) const { return s0 << k; }
  int concat_channels() const { return 3 * ng + label_dim; }
  void validate() const;
};

// Spatial and channel bookkeeping per stage.
struct StageGeometry {
  int concat_size;      // resolution of the concat / residual stack
  int concat_channels;
  int hidden_size;      // h_k side
  int hidden_channels;
  int shape_input_size; // M^k side fed to the shape encoder
};
std::array<StageGeometry, 3> stage_geometry(const GenConfig& cfg);

// Mask side lengths used by one forward pass: {S0/2, S0, 2*S0, 4*S0}.
std::array<int, 4> mask_sizes(const GenConfig& cfg);

struct GenInput {
  const text::TextEncoding* text = nullptr;
  std::vector<int> labels;
  Var label_emb;             // [T, N_l]
  std::array<Var, 4> masks;  // [T,s,s] at mask_sizes()
  Var z;                     // [noise_dim]
};

// Area-average a full-resolution [T,S,S] mask stack to every size in mask_sizes().
std::array<Var, 4> mask_set(const Var& full, const GenConfig& cfg);

struct StageRecord {
  Var grid_beta;  // [H*W, Ts]; undefined at stage 0
  Var c_obj;      // [N_g, s, s] map entering the concat
  Var c_lab;      // [N_l, s, s]
};

struct SampleRecord {
  Var obj_beta;     // [T, Ts]
  Var obj_context;  // [T, N_g]
  std::array<StageRecord, 3> stages;
};

struct GenOutput {
  std::array<Var, 3> images;  // [N,3,S_k,S_k] in [-1,1]
  std::array<Var, 3> hidden;  // h_k
  Var cond;                   // [N, N_e] conditioning vector
  std::vector<SampleRecord> records;
};

class UpBlock {
 public:
  UpBlock() = default;
  UpBlock(int in, int out, Rng& rng);
  Var forward(const Var& x, bool train) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  nn::Conv2d conv;
  nn::BatchNorm bn;
};

class DownBlock {
 public:
  DownBlock() = default;
  DownBlock(int in, int out, Rng& rng);
  Var forward(const Var& x, bool train) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  nn::Conv2d conv;
  nn::BatchNorm bn;
};

class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int channels, Rng& rng);
  Var forward(const Var& x) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  nn::Conv2d c1, c2;
};

// Reflection pad, 3x3 conv, instance norm, leaky ReLU.
class ShapeEncoder {
 public:
  ShapeEncoder() = default;
  ShapeEncoder(int in, int out, Rng& rng, bool spectral = false);
  Var forward(const Var& maps, bool train = false) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  nn::Conv2d conv;
};

class ImageGenerator {
 public:
  ImageGenerator() = default;
  ImageGenerator(const GenConfig& cfg, Rng& rng);

  GenOutput forward(const std::vector<GenInput>& batch, bool train) const;

  // Stage-k shape path: class maps [N,N_c,s,s] at the stage's shape input
  // size -> u_k [N,N_g,s/2,s/2].
  Var encode_shapes(int k, const Var& class_maps, bool train) const;

  void collect(nn::StateDict& sd, const std::string& prefix) const;
  const GenConfig& config() const { return cfg_; }

  text::ConditionAugment ca;
  nn::Linear fc;
  nn::BatchNorm fc_bn;
  UpBlock up_a, up_b;
  nn::Linear obj_value;                 // D -> N_g values for object attention
  std::array<nn::Linear, 2> word_proj;  // D -> N_g for grid attention at stages 1, 2
  std::array<ShapeEncoder, 3> shape_enc;
  std::array<DownBlock, 3> shape_down;
  std::array<std::vector<ResBlock>, 3> res;
  std::array<UpBlock, 3> up_out;
  std::array<nn::Conv2d, 3> to_img;

 private:
  GenConfig cfg_;
};

}  // namespace objgan::gen
