#pragma once

// Loss assembly for the image GAN, the alternating optimisation step, binary
// checkpoints and the key=value training log.

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "objgan/damsm.hpp"
#include "objgan/discriminators.hpp"
#include "objgan/image_generator.hpp"
#include "objgan/text.hpp"
#include "objgan/toyscenes.hpp"

namespace objgan::train {

using ag::Var;
using nn::Rng;

struct LossWeights {
  double obj = 0.1;
  double txt = 0.1;
  double pix = 1.0;
  double damsm = 100.0;
};

// Discriminator probabilities for one image at one stage. Object lists may be
// empty; patch lists must be non-empty and of equal length.
struct VerdictProbs {
  std::vector<double> obj_un, obj_con;
  std::vector<double> pat_un, pat_con, pix;
};

// -(w.obj/T) sum_t [log p_un + log p_con] - (1/N) sum_j [log p_un + w.txt log p_con + w.pix log p_pix].
// Throws if any probability lies outside (0, 1).
double generator_gan_loss(const VerdictProbs& v, const LossWeights& w);

// Same from logits; -log sigmoid(l) = softplus(-l). Object logits may be empty
// or undefined. Patch logits are averaged over all of their entries.
struct VerdictLogits {
  Var obj_un, obj_con;
  Var pat_un, pat_con, pix;
};
Var generator_gan_loss(const VerdictLogits& v, const LossWeights& w);

double total_generator_loss(double gan, double damsm, const LossWeights& w);
Var total_generator_loss(const Var& gan, const Var& damsm, const LossWeights& w);

// Per head: mean(-log p_real) + mean(-log(1 - p_fake)), summed over heads.
double discriminator_loss(const std::vector<std::vector<double>>& real, const std::vector<std::vector<double>>& fake);
// One head from logits. With `wrong` defined (mismatched-condition real
// samples) the negative term is the average of the fake and wrong terms.
Var discriminator_head_loss(const Var& real_logits, const Var& fake_logits, const Var& wrong_logits = Var());

// ---------------------------------------------------------------------------

struct ImageExample {
  const Image* image = nullptr;           // full resolution
  std::vector<std::vector<int>> captions;  // token ids
  std::vector<int> labels;
  BoxSequence boxes;
  Var masks;                               // [T,S,S] at full resolution
};

// Examples referencing `ds.samples[i]` for each index; `ds` must outlive them.
std::vector<ImageExample> image_examples(const toy::Dataset& ds, const std::vector<int>& indices,
                                         const text::Vocabulary& vocab);

// Frozen models shared with earlier stages.
struct FrozenModels {
  const text::TextEncoder* text = nullptr;
  const text::LabelEmbeddings* labels = nullptr;
  const damsm::ImageEncoder* damsm_image = nullptr;  // optional; needed when weights.damsm > 0
  damsm::DamsmConfig damsm_cfg;
};

struct ImageTrainConfig {
  int batch = 2;
  double lr = 2e-4;
  double beta1 = 0.5, beta2 = 0.999;
  LossWeights weights;
  bool mismatch = true;         // mismatched-condition negatives for conditional heads
  bool check_partition = true;  // hash-check that each update touches only its own side
};

struct StepLog {
  int step = 0;
  double g_total = 0, g_gan = 0, damsm = 0;
  double d_patch = 0, d_shape = 0, d_object = 0;
};

struct ObjectProbe {
  double matched = 0, mismatched = 0;  // mean conditional object probability
  int objects = 0;
};

class ImageGanTrainer {
 public:
  ImageGanTrainer(const gen::GenConfig& gcfg, const disc::DiscConfig& dcfg, const ImageTrainConfig& tc,
                  const FrozenModels& frozen, std::vector<ImageExample> data, std::uint64_t seed);

  StepLog step();
  // Generator losses (D fixed, no updates) averaged over `batches` batches
  // drawn from a dedicated RNG; the same seed gives the same batches.
  StepLog evaluate(int batches, std::uint64_t seed) const;
  int steps_done() const { return step_; }

  // Mean conditional object probability for true labels vs randomly replaced
  // labels, on generated (fake=true) or training images; `batches` batches
  // drawn from a dedicated RNG.
  ObjectProbe probe_objects(int batches, bool fake, std::uint64_t seed) const;

  gen::GenOutput generate(const std::vector<int>& indices, Rng& rng, bool train) const;

  nn::StateDict generator_state() const;
  nn::StateDict discriminator_state() const;
  // Parameters, buffers and optimiser moments of both sides plus the RNG state.
  struct Snapshot {
    nn::TensorList tensors;
    std::string rng_state;
    std::int64_t step = 0;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& s);

  gen::ImageGenerator G;
  std::array<disc::PatchDiscriminator, 3> patch;
  std::array<disc::ShapeDiscriminator, 3> shape;
  disc::ObjectDiscriminator object;

 private:
  struct Prepared {
    std::array<Var, 3> real;          // [1,3,S_k,S_k]
    std::array<Var, 4> masks;         // generator mask set
    std::array<Var, 3> class_maps;    // [1,N_c,S_k,S_k] for the discriminators
    std::vector<text::TextEncoding> captions;
    Var label_emb;
  };
  struct Batch {
    std::vector<int> idx, caps;
    std::vector<gen::GenInput> inputs;
    std::vector<Var> wrong_labels;  // embeddings of randomly replaced labels
    std::array<Var, 3> real, maps;
  };
  Batch draw_batch(Rng& rng) const;
  disc::ObjectInputs object_inputs(const Batch& batch, const gen::GenOutput& out, bool detach_context,
                                   bool wrong) const;
  Var generator_loss(const Batch& batch, const gen::GenOutput& out, StepLog& log) const;
  gen::GenInput input_for(int idx, int caption, Var z) const;
  int random_other_label(int label, Rng& rng) const;

  gen::GenConfig gcfg_;
  disc::DiscConfig dcfg_;
  ImageTrainConfig tc_;
  FrozenModels frozen_;
  std::vector<ImageExample> data_;
  std::vector<Prepared> prep_;
  Rng rng_;
  int step_ = 0;
  nn::StateDict gsd_;
  std::vector<nn::StateDict> dsd_;  // patch0-2, shape0-2, object
  nn::Adam gopt_;
  std::vector<nn::Adam> dopt_;
};

// ---------------------------------------------------------------------------

struct Checkpoint {
  std::string config;     // key=value snapshot
  std::string rng_state;  // textual engine state
  nn::TensorList tensors; // named values
};

enum class DType : std::uint8_t { F64 = 0, F32 = 1 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck, DType dtype = DType::F64);
Checkpoint load_checkpoint(const std::string& path);

// Append-only `key=value` records, one per line.
class TrainLog {
 public:
  explicit TrainLog(const std::string& path);
  void record(const std::vector<std::pair<std::string, double>>& fields);

 private:
  std::ofstream out_;
};
std::string format_record(const std::vector<std::pair<std::string, double>>& fields);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace objgan::train
