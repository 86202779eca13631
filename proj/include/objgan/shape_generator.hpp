#pragma once

// Per-object soft masks from boxes: a convolutional encoder, a bidirectional
// convolutional recurrence across the object sequence, and an upsampling
// decoder whose output is multiplied by the box occupancy map.

#include <functional>
#include <string>
#include <vector>

#include "objgan/nn/layers.hpp"
#include "objgan/types.hpp"

namespace objgan::shape {

using ag::Var;
using nn::Rng;

enum class CellType { Gru, Lstm };

struct ShapeGenConfig {
  int num_classes = 36;
  int size = 64;  // mask side
  int base = 16;
  int noise_dim = 8;
  CellType cell = CellType::Gru;
};

struct BoxMaps {
  Var occupancy;  // [T,1,S,S]; 1 where the pixel centre lies inside the box
  Var labels;     // [T,N_c,S,S]; one-hot class channel inside the box
};

BoxMaps render_box_maps(const BoxSequence& boxes, int size, int num_classes);

// Area-average pyramid of [T,S,S] masks: {S, S/2, S/4, ...}, `levels` entries.
std::vector<Var> mask_pyramid(const Var& masks, int levels);

class ConvRecurrentCell {
 public:
  ConvRecurrentCell() = default;
  ConvRecurrentCell(CellType type, int in, int hidden, Rng& rng);
  // x [1,in,h,w]; state {h, c} (c unused for GRU). Returns the new state.
  std::pair<Var, Var> forward(const Var& x, const Var& h, const Var& c) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  int hidden() const { return hidden_; }

 private:
  CellType type_ = CellType::Gru;
  int hidden_ = 0;
  nn::Conv2d gates_, cand_;
};

class ShapeGenerator {
 public:
  ShapeGenerator() = default;
  ShapeGenerator(const ShapeGenConfig& cfg, Rng& rng);
  // noise [T, noise_dim] -> masks [T,S,S], exactly zero outside each box.
  Var generate(const BoxSequence& boxes, const Var& noise) const;
  Var generate(const BoxMaps& maps, const Var& noise) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  const ShapeGenConfig& config() const { return cfg_; }

  nn::Conv2d enc0, enc1, enc2;
  ConvRecurrentCell fwd, bwd;
  nn::Conv2d up1, up2, out;

 private:
  ShapeGenConfig cfg_;
};

// Per-object critic over (mask, occupancy, class map); returns logits [T].
class ShapeCritic {
 public:
  ShapeCritic() = default;
  ShapeCritic(const ShapeGenConfig& cfg, Rng& rng);
  Var logits(const Var& masks, const BoxMaps& maps) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  nn::Conv2d c1, c2, c3;
  nn::Linear fc;
};

struct GanLosses {
  Var g_loss, d_loss;
};

// Cross-entropy GAN losses averaged over objects from critic logits:
// d = mean(-log s(real)) + mean(-log(1 - s(fake))), g = mean(-log s(fake)).
GanLosses bce_gan_losses(const Var& real_logits, const Var& fake_logits);
// Same from probabilities (reference form).
std::pair<double, double> bce_gan_losses(const std::vector<double>& p_real, const std::vector<double>& p_fake);

GanLosses shape_adversarial_losses(const Var& real, const Var& fake, const BoxMaps& maps, const ShapeCritic& critic);

// Fixed random two-layer conv feature extractor.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = 1234, int channels = 8);
  Var features(const Var& masks) const;  // [T,S,S] -> [T,C,S/2,S/2]
  nn::Conv2d c1, c2;
};

Var perceptual_loss(const Var& real, const Var& fake, const PerceptualExtractor& ext);

struct ShapeExample {
  BoxSequence boxes;
  Var masks;  // [T,S,S]
};

struct ShapeTrainConfig {
  int steps = 200;
  double lr = 2e-4;
  double perceptual_weight = 1.0;
};

struct ShapeStepLog {
  double g_loss, d_loss, perceptual;
};

void train_shape_generator(ShapeGenerator& gen, ShapeCritic& critic, const std::vector<ShapeExample>& data,
                           const ShapeTrainConfig& tc, Rng& rng,
                           const std::function<void(int, const ShapeStepLog&)>& log = {});

}  // namespace objgan::shape
