#pragma once

// Image-text matching: region encoder, word-region attention, relevance,
// matching loss, retrieval precision and a Frechet feature distance.

#include <functional>
#include <string>
#include <vector>

#include "objgan/nn/layers.hpp"
#include "objgan/text.hpp"
#include "objgan/types.hpp"

namespace objgan::damsm {

using ag::Var;
using nn::Rng;

struct DamsmConfig {
  double gamma1 = 5.0;
  double gamma2 = 5.0;
  double gamma3 = 10.0;
  int base_channels = 16;
  int dim = 256;  // shared embedding width D
  int image_size = 64;
};

struct RegionFeatures {
  Var f;     // [N, Cl, S/8, S/8]
  Var fbar;  // [N, Cg]
  Var v;     // [N, D, R] with v = W f
  Var vbar;  // [N, D]   with vbar = Wbar fbar
  int regions() const { return v.dim(2); }
  Var local(int n) const;   // [D, R]
  Var global(int n) const;  // [D]
};

// Three stride-2 conv blocks give the local grid (stride 8); a fourth block
// followed by global averaging gives the global feature.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const DamsmConfig& cfg, Rng& rng);
  RegionFeatures encode(const Var& images) const;  // images [N,3,S,S] in [-1,1]
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  int local_channels() const { return 4 * cfg_.base_channels; }
  int global_channels() const { return 8 * cfg_.base_channels; }

  nn::Conv2d c1, c2, c3, c4;
  nn::Linear proj_local, proj_global;  // W, Wbar (no bias)

 private:
  DamsmConfig cfg_;
};

// s-bar = softmax over words of e^T v; PAD rows are zero. e [D,Ts], v [D,R] -> [Ts,R].
Var similarity_normalized(const Var& e, const Var& v, const std::vector<bool>& pad_mask);
// c_i = sum_j alpha_ij v_j, alpha = softmax over regions of gamma1 * s-bar. -> [D,Ts]
Var word_context(const Var& sbar, const Var& v, double gamma1);
// (1/gamma2) log sum_i exp(gamma2 cos(c_i, e_i)) over non-PAD words.
Var relevance(const Var& c, const Var& e, double gamma2, const std::vector<bool>& pad_mask);
// Word-level relevance R(Q,U) for one image/caption pair.
Var word_relevance(const Var& v, const text::TextEncoding& enc, const DamsmConfig& cfg);

// Negative log posteriors summed over the batch. rel[q][d] scores image q
// against caption d; l1 normalises over captions, l2 over images.
struct MatchingLoss {
  Var l1, l2;
};
MatchingLoss matching_loss(const Var& rel, double gamma3);

struct DamsmLoss {
  Var total, w1, w2, s1, s2;
};
DamsmLoss damsm_loss(const RegionFeatures& feats, const std::vector<text::TextEncoding>& caps, const DamsmConfig& cfg);

// Each row holds scores for one query with the true caption first. A query
// counts only if the truth scores strictly above every distractor.
double r_precision_from_scores(const std::vector<std::vector<double>>& scores);

struct RetrievalQuery {
  Var image_global;                     // vbar [D]
  std::vector<std::string> candidates;  // true caption first, then distractors
};
// Scores are cos(vbar, e-bar). Duplicate candidates within a query throw.
double r_precision(const std::vector<RetrievalQuery>& queries, const text::Vocabulary& vocab,
                   const text::TextEncoder& encoder);

// `n` distinct captions from `pool` that differ from `truth`, chosen by rng.
std::vector<std::string> pick_distractors(const std::string& truth, const std::vector<std::string>& pool, int n,
                                          Rng& rng);

// ||muA - muB||^2 + Tr(SA + SB - 2 (SA SB)^{1/2}); rows are samples.
double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

struct TrainExample {
  const Image* image;
  std::vector<int> tokens;
};

struct DamsmTrainConfig {
  int steps = 500;
  int batch = 16;
  double lr = 2e-3;
  bool dropout = true;
};

// Adam on encoder + image encoder; `log` receives (step, loss) before each update.
void train_damsm(const std::vector<std::vector<TrainExample>>& scenes, text::TextEncoder& text_enc,
                 ImageEncoder& img_enc, const DamsmConfig& cfg, const DamsmTrainConfig& tc, Rng& rng,
                 const std::function<void(int, const DamsmLoss&)>& log = {});

// Pack images into a [N,3,S,S] constant.
Var stack_images(const std::vector<const Image*>& images);

}  // namespace objgan::damsm
