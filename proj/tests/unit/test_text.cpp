#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "objgan/core/gradcheck.hpp"
#include "objgan/text.hpp"

using namespace objgan;
using namespace objgan::ag;

TEST_CASE("vocabulary for a single caption") {
  auto v = text::build_vocab({"a red circle"});
  CHECK(v.size() == 6);
  CHECK(v.id("<pad>") == 0);
  CHECK(v.id("<unk>") == 1);
  CHECK(v.id("<eos>") == 2);
  for (const char* t : {"a", "red", "circle"}) CHECK(v.token(v.id(t)) == t);
  CHECK(v.id("zebra") == text::Vocabulary::UNK);
  auto v2 = text::build_vocab({"a red circle"});
  CHECK(v.tokens() == v2.tokens());
  CHECK_THROWS(text::build_vocab({}));
}

TEST_CASE("vocabulary ordering matches reference sort") {
  std::vector<std::string> corpus = {"b a c", "c a d", "e f b", "F, g! a", "d e"};
  auto v = text::build_vocab(corpus);
  std::map<std::string, int> counts;
  for (const auto& c : corpus)
    for (const auto& t : text::tokenize(c)) counts[t]++;
  std::vector<std::pair<int, std::string>> ref;
  for (auto& [t, n] : counts) ref.push_back({-n, t});
  std::sort(ref.begin(), ref.end());
  REQUIRE(v.size() == static_cast<int>(ref.size()) + 3);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(v.token(static_cast<int>(i) + 3) == ref[i].second);
}

TEST_CASE("tokenizer drops punctuation and lowercases") {
  CHECK(text::tokenize("A Red, circle.") == std::vector<std::string>{"a", "red", "circle"});
}

TEST_CASE("vocabulary file round trip") {
  auto v = text::build_vocab({"x y y z"});
  const auto path = (std::filesystem::temp_directory_path() / "objgan_vocab_test.txt").string();
  v.save(path);
  auto w = text::Vocabulary::load(path);
  CHECK(w.tokens() == v.tokens());
  std::filesystem::remove(path);
}

namespace {

text::TextConfig small_cfg(int vocab = 8, int hidden = 3) {
  text::TextConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 4;
  c.hidden = hidden;
  c.label_dim = 5;
  c.max_len = 6;
  return c;
}

double sig(double x) { return 1 / (1 + std::exp(-x)); }

// Independent scalar LSTM recurrence over the given inputs.
std::vector<std::vector<double>> reference_lstm(const nn::LstmCell& cell, const std::vector<std::vector<double>>& xs) {
  const int H = cell.hidden();
  const int E = static_cast<int>(xs[0].size());
  std::vector<double> h(H, 0), c(H, 0);
  std::vector<std::vector<double>> hs;
  for (const auto& x : xs) {
    std::vector<double> g(4 * H);
    for (int j = 0; j < 4 * H; ++j) {
      double a = cell.b.at(j);
      for (int k = 0; k < E; ++k) a += x[k] * cell.w_ih.at(k * 4 * H + j);
      for (int k = 0; k < H; ++k) a += h[k] * cell.w_hh.at(k * 4 * H + j);
      g[j] = a;
    }
    for (int j = 0; j < H; ++j) {
      const double i = sig(g[j]), f = sig(g[H + j]), gg = std::tanh(g[2 * H + j]), o = sig(g[3 * H + j]);
      c[j] = f * c[j] + i * gg;
      h[j] = o * std::tanh(c[j]);
    }
    hs.push_back(h);
  }
  return hs;
}

}  // namespace

TEST_CASE("paper-scale encoder width") {
  text::TextConfig c;
  c.vocab_size = 10;
  nn::Rng rng(1);
  text::TextEncoder enc(c, rng);
  auto out = enc.encode({3, 4});
  CHECK(c.hidden == 128);
  CHECK(out.words.shape() == Shape{256, 2});
  CHECK(out.sentence.shape() == Shape{256});
}

TEST_CASE("single-token encoding") {
  nn::Rng rng(2);
  text::TextEncoder enc(small_cfg(), rng);
  auto out = enc.encode({5});
  REQUIRE(out.words.shape() == Shape{6, 1});
  for (int k = 0; k < 6; ++k) CHECK(out.words.at(k) == out.sentence.at(k));
}

TEST_CASE("two-token encoding matches reference recurrence") {
  nn::Rng rng(3);
  text::TextEncoder enc(small_cfg(8, 2), rng);
  const std::vector<int> ids{3, 6};
  auto out = enc.encode(ids);
  std::vector<std::vector<double>> xs;
  for (int id : ids) xs.push_back(std::vector<double>(enc.embedding.data() + id * 4, enc.embedding.data() + id * 4 + 4));
  auto hf = reference_lstm(enc.fwd, xs);
  auto hb = reference_lstm(enc.bwd, {xs[1], xs[0]});
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) {
      CHECK(out.words.at(k * 2 + i) == Catch::Approx(hf[i][k]).epsilon(1e-12));
      CHECK(out.words.at((k + 2) * 2 + i) == Catch::Approx(hb[1 - i][k]).epsilon(1e-12));
    }
  for (int k = 0; k < 2; ++k) {
    CHECK(out.sentence.at(k) == Catch::Approx(hf[1][k]).epsilon(1e-12));
    CHECK(out.sentence.at(k + 2) == Catch::Approx(hb[1][k]).epsilon(1e-12));
  }
}

TEST_CASE("encoder errors") {
  nn::Rng rng(4);
  text::TextEncoder enc(small_cfg(), rng);
  CHECK_THROWS(enc.encode({}));
  CHECK_THROWS(enc.encode({8}));
  CHECK_THROWS(enc.encode({-1}));
  CHECK_THROWS(enc.encode({3, 3, 3, 3, 3, 3, 3}));
}

TEST_CASE("sentence vector ignores trailing padding") {
  nn::Rng rng(5);
  text::TextEncoder enc(small_cfg(), rng);
  auto a = enc.encode({3, 4, 5});
  auto b = enc.encode({3, 4, 5, 0, 0});
  CHECK(a.sentence.value() == b.sentence.value());
  for (int k = 0; k < 6; ++k) {
    CHECK(b.words.at(k * 5 + 3) == 0.0);
    CHECK(b.words.at(k * 5 + 4) == 0.0);
  }
  CHECK(b.pad_mask == std::vector<bool>{false, false, false, true, true});
}

TEST_CASE("encoding is deterministic") {
  nn::Rng rng(6);
  text::TextEncoder enc(small_cfg(), rng);
  CHECK(enc.encode({3, 7}).words.value() == enc.encode({3, 7}).words.value());
}

TEST_CASE("word vectors differentiate w.r.t. the embedding table") {
  nn::Rng rng(7);
  text::TextEncoder enc(small_cfg(), rng);
  Var w = constant({6, 3}, nn::normal_values(rng, 18, 1.0));
  auto r = check_gradients([&] { return sum(mul(enc.encode({3, 5, 4}).words, w)); }, {enc.embedding});
  CHECK(r.ok());
}

TEST_CASE("label embedding lookup") {
  nn::Rng rng(8);
  text::LabelEmbeddings le(4, 50, rng);
  auto two = le.embed({0, 0});
  for (int k = 0; k < 50; ++k) CHECK(two.at(k) == two.at(50 + k));
  CHECK(le.embed({}).shape() == Shape{0, 50});
  auto e = le.embed({3, 1, 2});
  const std::vector<int> ls{3, 1, 2};
  for (int t = 0; t < 3; ++t)
    for (int k = 0; k < 50; ++k) CHECK(e.at(t * 50 + k) == le.table.at(ls[t] * 50 + k));
  CHECK_THROWS(le.embed({4}));
}

TEST_CASE("label embeddings initialised from class-name words") {
  nn::Rng rng(9);
  auto vocab = text::build_vocab({"red circle", "blue circle"});
  text::TextConfig c = small_cfg(vocab.size());
  text::TextEncoder enc(c, rng);
  text::LabelEmbeddings le(2, c.label_dim, rng);
  le.init_from_words(vocab, {"red circle", "blue circle"}, enc.label_words);
  const int r = vocab.id("red"), ci = vocab.id("circle");
  for (int k = 0; k < c.label_dim; ++k)
    CHECK(le.table.at(k) ==
          Catch::Approx(0.5 * (enc.label_words.at(r * c.label_dim + k) + enc.label_words.at(ci * c.label_dim + k))));
}

TEST_CASE("condition augmentation") {
  nn::Rng rng(10);
  text::ConditionAugment ca(2, 2, rng);
  ca.fc.weight.mutable_value() = {0, 0, 0, 0};
  ca.fc.bias.mutable_value() = {0, 0};
  auto z = ca.forward(constant({1, 2}, {0.3, -2}));
  CHECK(z.value() == std::vector<double>{0, 0});
  // y = relu(x W + b) with W = [[1,-2],[3,1]], b = (0.5, 0)
  ca.fc.weight.mutable_value() = {1, -2, 3, 1};
  ca.fc.bias.mutable_value() = {0.5, 0};
  auto y = ca.forward(constant({1, 2}, {1, 2}));
  CHECK(y.at(0) == Catch::Approx(7.5));
  CHECK(y.at(1) == 0.0);
  text::ConditionAugment full(6, 256, rng);
  auto out = full.forward(constant({1, 6}, nn::normal_values(rng, 6, 1.0)));
  CHECK(out.shape() == Shape{1, 256});
  for (double v : out.value()) CHECK(v >= 0);
}
