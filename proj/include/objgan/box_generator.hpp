#pragma once

// Attentive sequence-to-sequence layout decoder with a categorical label head
// and two bivariate Gaussian mixture heads over box coordinates.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "objgan/nn/layers.hpp"
#include "objgan/text.hpp"
#include "objgan/types.hpp"

namespace objgan::box {

using ag::Var;
using nn::Rng;

enum class ScoreActivation { Tanh, Linear };

struct BoxGenConfig {
  int num_labels = 36;  // L; the label head has L + 1 outputs, EOS last
  int enc_dim = 64;     // D of the text encoder; also the decoder hidden size
  int attn_dim = 64;
  int components = 4;   // K
  int max_objects = 8;  // T_max
  double sigma_floor = 1e-3;
  ScoreActivation score = ScoreActivation::Tanh;
  bool label_uses_context = true;  // label head reads [h_t, z_t] instead of h_t
  int eos() const { return num_labels; }
};

// Raw head outputs: pi = softmax(logits), sigma = floor + exp(log_sigma), rho = tanh(rho_raw).
struct Gmm {
  Var logits;     // [K]
  Var mu;         // [K,2]
  Var log_sigma;  // [K,2]
  Var rho_raw;    // [K]
  double floor = 1e-3;
  int components() const { return logits.dim(0); }
};

// Plain-number view of a mixture for sampling and reference evaluation.
struct GmmValues {
  std::vector<double> pi, rho;
  std::vector<std::array<double, 2>> mu, sigma;
};
GmmValues gmm_values(const Gmm& g);
double mixture_density(const GmmValues& g, double x, double y);

// -log sum_k pi_k N((x,y); mu_k, Sigma_k)
Var gmm_head_nll(const Gmm& g, double x, double y);

struct BoxStepParams {
  Var label_logits;  // [L+1]
  Gmm xy, wh;
};

// -log p(l) - log p(x,y|l) - log p(w,h|x,y,l); only the label term for EOS.
Var gmm_nll(const BoxStepParams& step, int label, const Box& box, int eos);

struct DecoderState {
  Var h, c;  // [1,D]
};

struct DecoderStep {
  DecoderState state;
  Var context;  // z_t [1,D]
  Var alpha;    // [Ts]
};

enum class SampleMode { Greedy, Stochastic };

class BoxGenerator {
 public:
  BoxGenerator() = default;
  BoxGenerator(const BoxGenConfig& cfg, Rng& rng);

  DecoderState initial_state(const text::TextEncoding& enc) const;
  // Context from the previous hidden state, then one LSTM step on [B_{t-1}, z_t].
  DecoderStep decoder_step(const Var& prev_box, const DecoderState& s, const Var& enc_outputs,
                           const std::vector<bool>& pad_mask) const;
  // Attention weights and context for a hidden state over H^Enc [Ts,D].
  std::pair<Var, Var> attend(const Var& h, const Var& enc_outputs, const std::vector<bool>& pad_mask) const;

  Var label_logits(const Var& h, const Var& z) const;
  Gmm xy_head(const Var& h, int label) const;
  Gmm wh_head(const Var& h, int label, double x, double y) const;

  // B_{t-1} input row [1, L+1+4]; label < 0 gives the all-zero start token.
  Var box_input(int label, const Box& b) const;

  // Teacher-forced mean NLL over the T objects plus the EOS step.
  Var sequence_nll(const text::TextEncoding& enc, const BoxSequence& target) const;

  BoxSequence sample(const text::TextEncoding& enc, SampleMode mode, std::uint64_t seed) const;

  void collect(nn::StateDict& sd, const std::string& prefix) const;
  const BoxGenConfig& config() const { return cfg_; }

  nn::Linear attn_h, attn_e, attn_v;  // W_alpha split over [h_{t-1}, h_i], then W_v
  nn::LstmCell cell;
  nn::Linear head_label, head_xy, head_wh;

 private:
  Gmm split(const Var& raw) const;
  BoxGenConfig cfg_;
};

// Clamp a box into the unit square with positive extent.
Box clamp_box(Box b, double min_size = 1e-3);

struct BoxExample {
  std::vector<int> tokens;
  BoxSequence boxes;
};

struct BoxTrainConfig {
  int steps = 300;
  int batch = 16;
  double lr = 1e-3;
  bool finetune_encoder = false;
};

// Adam(lr, 0.9, 0.999). `log` receives (step, mean batch NLL) before each update.
void train_box_generator(BoxGenerator& gen, text::TextEncoder& encoder, const std::vector<BoxExample>& data,
                         const BoxTrainConfig& tc, Rng& rng, const std::function<void(int, double)>& log = {});

}  // namespace objgan::box
