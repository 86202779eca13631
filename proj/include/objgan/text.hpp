#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "objgan/nn/layers.hpp"

namespace objgan::text {

using ag::Var;
using nn::Rng;

// Lower-cases and splits on whitespace and punctuation; punctuation is dropped.
std::vector<std::string> tokenize(const std::string& s);

class Vocabulary {
 public:
  static constexpr int PAD = 0, UNK = 1, EOS = 2;

  Vocabulary();
  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // UNK when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  std::vector<int> encode(const std::string& caption) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

 private:
  explicit Vocabulary(std::vector<std::string> tokens);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Ids for every corpus token by descending frequency, ties lexicographic.
Vocabulary build_vocab(const std::vector<std::string>& corpus);

struct TextConfig {
  int vocab_size = 0;
  int embed_dim = 300;
  int hidden = 128;  // per direction; D = 2 * hidden
  int label_dim = 50;
  int max_len = 32;
  double dropout = 0.5;
  int dim() const { return 2 * hidden; }
};

struct TextEncoding {
  Var words;                   // e: [D, Ts]; PAD columns are zero
  Var sentence;                // e-bar: [D]
  Var label_space;             // word embeddings in label space: [Ts, N_l]
  std::vector<bool> pad_mask;  // true at PAD positions
  int length() const { return static_cast<int>(pad_mask.size()); }
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextConfig& cfg, Rng& rng);
  // With `dropout_rng` set, inverted dropout is applied to the input embeddings.
  TextEncoding encode(const std::vector<int>& ids, Rng* dropout_rng = nullptr) const;
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  const TextConfig& config() const { return cfg_; }

  Var embedding;    // [V, E]
  Var label_words;  // [V, N_l]
  nn::LstmCell fwd, bwd;

 private:
  TextConfig cfg_;
};

class LabelEmbeddings {
 public:
  LabelEmbeddings() = default;
  LabelEmbeddings(int num_labels, int dim, Rng& rng);
  // Row t of the result is table row labels[t]; empty input gives [0, N_l].
  Var embed(const std::vector<int>& labels) const;
  // Initialise each row to the mean label-space vector of the class name's words.
  void init_from_words(const Vocabulary& vocab, const std::vector<std::string>& class_names, const Var& label_words);
  void collect(nn::StateDict& sd, const std::string& prefix) const;
  int num_labels() const { return table.dim(0); }
  int dim() const { return table.dim(1); }
  Var table;  // [L, N_l]
};

// FC + ReLU from the sentence vector to the conditioning vector.
class ConditionAugment {
 public:
  ConditionAugment() = default;
  ConditionAugment(int in, int out, Rng& rng) : fc(in, out, rng) {}
  Var forward(const Var& sentence) const { return ag::relu(fc.forward(sentence)); }  // [N,D] -> [N,N_e]
  void collect(nn::StateDict& sd, const std::string& prefix) const { fc.collect(sd, prefix + ".fc"); }
  nn::Linear fc;
};

}  // namespace objgan::text
