#include "objgan/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace objgan::text {

using namespace objgan::ag;

std::vector<std::string> tokenize(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : s) {
    if (std::isspace(ch) || std::ispunct(ch)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>", "<eos>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) { return Vocabulary(std::move(tokens)); }

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? UNK : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id));
  return tokens_[id];
}

std::vector<int> Vocabulary::encode(const std::string& caption) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(caption)) ids.push_back(id(t));
  return ids;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& t : tokens_) f << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<std::string> toks;
  for (std::string line; std::getline(f, line);) toks.push_back(line);
  if (toks.size() < 3 || toks[0] != "<pad>") throw std::runtime_error("malformed vocabulary " + path);
  return from_tokens(std::move(toks));
}

Vocabulary build_vocab(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, int> counts;
  for (const auto& c : corpus)
    for (const auto& t : tokenize(c)) ++counts[t];
  std::vector<std::pair<std::string, int>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> toks{"<pad>", "<unk>", "<eos>"};
  for (auto& [t, n] : items)
    if (t != toks[0] && t != toks[1] && t != toks[2]) toks.push_back(t);
  return Vocabulary::from_tokens(std::move(toks));
}

TextEncoder::TextEncoder(const TextConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.vocab_size <= 0) throw std::invalid_argument("TextEncoder: vocab_size must be positive");
  embedding = parameter({cfg.vocab_size, cfg.embed_dim},
                        nn::normal_values(rng, static_cast<std::size_t>(cfg.vocab_size) * cfg.embed_dim, 1.0));
  label_words = parameter({cfg.vocab_size, cfg.label_dim},
                          nn::normal_values(rng, static_cast<std::size_t>(cfg.vocab_size) * cfg.label_dim, 1.0));
  fwd = nn::LstmCell(cfg.embed_dim, cfg.hidden, rng);
  bwd = nn::LstmCell(cfg.embed_dim, cfg.hidden, rng);
}

TextEncoding TextEncoder::encode(const std::vector<int>& ids, Rng* dropout_rng) const {
  if (ids.empty()) throw std::invalid_argument("encode: empty token list");
  if (static_cast<int>(ids.size()) > cfg_.max_len)
    throw std::invalid_argument("encode: " + std::to_string(ids.size()) + " tokens exceeds max_len");
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("encode: token id " + std::to_string(id));

  const int T = static_cast<int>(ids.size());
  const int H = cfg_.hidden;
  TextEncoding out;
  out.pad_mask.resize(T);
  for (int i = 0; i < T; ++i) out.pad_mask[i] = ids[i] == Vocabulary::PAD;

  Var x = index_select(embedding, ids);  // [T, E]
  if (dropout_rng && cfg_.dropout > 0) {
    std::bernoulli_distribution keep(1.0 - cfg_.dropout);
    std::vector<double> m(x.numel());
    for (auto& v : m) v = keep(*dropout_rng) ? 1.0 / (1.0 - cfg_.dropout) : 0.0;
    x = mul(x, constant(x.shape(), std::move(m)));
  }

  Var zero = zeros({1, H});
  std::vector<Var> hf(T, zero), hb(T, zero);
  Var h = zero, c = zero;
  for (int i = 0; i < T; ++i) {
    if (out.pad_mask[i]) continue;
    std::tie(h, c) = fwd.forward(narrow(x, 0, i, 1), h, c);
    hf[i] = h;
  }
  Var h_last_f = h;
  h = zero;
  c = zero;
  for (int i = T - 1; i >= 0; --i) {
    if (out.pad_mask[i]) continue;
    std::tie(h, c) = bwd.forward(narrow(x, 0, i, 1), h, c);
    hb[i] = h;
  }
  Var h_last_b = h;

  std::vector<Var> rows;
  for (int i = 0; i < T; ++i) rows.push_back(concat({hf[i], hb[i]}, 1));
  out.words = transpose(concat(rows, 0));
  out.sentence = reshape(concat({h_last_f, h_last_b}, 1), {2 * H});
  out.label_space = index_select(label_words, ids);
  return out;
}

void TextEncoder::collect(nn::StateDict& sd, const std::string& prefix) const {
  sd.params.add(prefix + ".embedding", embedding);
  sd.params.add(prefix + ".label_words", label_words);
  fwd.collect(sd, prefix + ".fwd");
  bwd.collect(sd, prefix + ".bwd");
}

LabelEmbeddings::LabelEmbeddings(int num_labels, int dim, Rng& rng) {
  table = parameter({num_labels, dim}, nn::normal_values(rng, static_cast<std::size_t>(num_labels) * dim, 1.0));
}

Var LabelEmbeddings::embed(const std::vector<int>& labels) const {
  for (int l : labels)
    if (l < 0 || l >= num_labels()) throw std::out_of_range("label id " + std::to_string(l));
  if (labels.empty()) return zeros({0, dim()});
  return index_select(table, labels);
}

void LabelEmbeddings::init_from_words(const Vocabulary& vocab, const std::vector<std::string>& class_names,
                                      const Var& label_words) {
  if (static_cast<int>(class_names.size()) != num_labels()) throw std::invalid_argument("class name count");
  if (label_words.dim(1) != dim()) throw std::invalid_argument("label-space width mismatch");
  auto& t = table.mutable_value();
  const int n = dim();
  for (int l = 0; l < num_labels(); ++l) {
    const auto ids = vocab.encode(class_names[l]);
    if (ids.empty()) continue;
    for (int k = 0; k < n; ++k) {
      double s = 0;
      for (int id : ids) s += label_words.at(static_cast<std::size_t>(id) * n + k);
      t[static_cast<std::size_t>(l) * n + k] = s / static_cast<double>(ids.size());
    }
  }
}

void LabelEmbeddings::collect(nn::StateDict& sd, const std::string& prefix) const {
  sd.params.add(prefix + ".table", table);
}

}  // namespace objgan::text
