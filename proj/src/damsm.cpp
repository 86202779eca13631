#include "objgan/damsm.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace objgan::damsm {

using namespace objgan::ag;

Var RegionFeatures::local(int n) const {
  return reshape(narrow(v, 0, n, 1), {v.dim(1), v.dim(2)});
}

Var RegionFeatures::global(int n) const { return reshape(narrow(vbar, 0, n, 1), {vbar.dim(1)}); }

ImageEncoder::ImageEncoder(const DamsmConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int b = cfg.base_channels;
  c1 = nn::Conv2d(3, b, 3, 2, 1, rng);
  c2 = nn::Conv2d(b, 2 * b, 3, 2, 1, rng);
  c3 = nn::Conv2d(2 * b, 4 * b, 3, 2, 1, rng);
  c4 = nn::Conv2d(4 * b, 8 * b, 3, 2, 1, rng);
  proj_local = nn::Linear(4 * b, cfg.dim, rng, false);
  proj_global = nn::Linear(8 * b, cfg.dim, rng, false);
}

RegionFeatures ImageEncoder::encode(const Var& images) const {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw ShapeError("encode_image_regions: expected [N,3,S,S], got " + shape_str(images.shape()));
  const int s = images.dim(2);
  if (images.dim(3) != s || s % 16 != 0) throw ShapeError("encode_image_regions: side must be square, divisible by 16");
  const int n = images.dim(0);
  RegionFeatures r;
  Var h = leaky_relu(c1.forward(images));
  h = leaky_relu(c2.forward(h));
  r.f = leaky_relu(c3.forward(h));
  Var g = leaky_relu(c4.forward(r.f));
  r.fbar = global_avg_pool(g);
  const int cl = r.f.dim(1), R = r.f.dim(2) * r.f.dim(3);
  Var flat = reshape(permute(reshape(r.f, {n, cl, R}), {0, 2, 1}), {n * R, cl});
  r.v = permute(reshape(proj_local.forward(flat), {n, R, cfg_.dim}), {0, 2, 1});
  r.vbar = proj_global.forward(r.fbar);
  return r;
}

void ImageEncoder::collect(nn::StateDict& sd, const std::string& prefix) const {
  c1.collect(sd, prefix + ".c1");
  c2.collect(sd, prefix + ".c2");
  c3.collect(sd, prefix + ".c3");
  c4.collect(sd, prefix + ".c4");
  proj_local.collect(sd, prefix + ".W");
  proj_global.collect(sd, prefix + ".Wbar");
}

Var similarity_normalized(const Var& e, const Var& v, const std::vector<bool>& pad_mask) {
  if (e.dim(0) != v.dim(0)) throw ShapeError("similarity_normalized: D mismatch");
  return masked_softmax(matmul(transpose(e), v), 0, pad_mask);
}

Var word_context(const Var& sbar, const Var& v, double gamma1) {
  if (sbar.dim(1) != v.dim(1)) throw ShapeError("word_context: region count mismatch");
  Var alpha = softmax_axis(scale(sbar, gamma1), 1);  // [Ts, R]
  return matmul(v, transpose(alpha));
}

Var relevance(const Var& c, const Var& e, double gamma2, const std::vector<bool>& pad_mask) {
  if (c.shape() != e.shape()) throw ShapeError("relevance: shape mismatch");
  const int D = c.dim(0), T = c.dim(1);
  std::vector<int> keep;
  for (int i = 0; i < T; ++i) {
    if (i < static_cast<int>(pad_mask.size()) && pad_mask[i]) continue;
    double nc = 0, ne = 0;
    for (int k = 0; k < D; ++k) {
      nc += c.at(static_cast<std::size_t>(k) * T + i) * c.at(static_cast<std::size_t>(k) * T + i);
      ne += e.at(static_cast<std::size_t>(k) * T + i) * e.at(static_cast<std::size_t>(k) * T + i);
    }
    if (nc == 0 || ne == 0) throw std::domain_error("relevance: zero-norm column " + std::to_string(i));
    keep.push_back(i);
  }
  if (keep.empty()) throw std::invalid_argument("relevance: every word is padding");
  Var ck = index_select(transpose(c), keep), ek = index_select(transpose(e), keep);
  Var cosv = div(sum_axis(mul(ck, ek), 1), sqrt(mul(sum_axis(square(ck), 1), sum_axis(square(ek), 1))));
  return scale(logsumexp_axis(scale(cosv, gamma2), 0), 1.0 / gamma2);
}

Var word_relevance(const Var& v, const text::TextEncoding& enc, const DamsmConfig& cfg) {
  Var sbar = similarity_normalized(enc.words, v, enc.pad_mask);
  Var c = word_context(sbar, v, cfg.gamma1);
  return relevance(c, enc.words, cfg.gamma2, enc.pad_mask);
}

MatchingLoss matching_loss(const Var& rel, double gamma3) {
  if (rel.rank() != 2 || rel.dim(0) != rel.dim(1)) throw ShapeError("matching_loss: square matrix expected");
  const int m = rel.dim(0);
  if (m == 0) throw std::invalid_argument("matching_loss: empty batch");
  std::vector<double> eye(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i) eye[static_cast<std::size_t>(i) * m + i] = 1.0;
  Var id = constant({m, m}, std::move(eye));
  Var z = scale(rel, gamma3);
  return {neg(sum(mul(log_softmax_axis(z, 1), id))), neg(sum(mul(log_softmax_axis(z, 0), id)))};
}

namespace {

Var row_normalize(const Var& x) { return div(x, sqrt(sum_axis(square(x), 1, true))); }

}  // namespace

DamsmLoss damsm_loss(const RegionFeatures& feats, const std::vector<text::TextEncoding>& caps, const DamsmConfig& cfg) {
  const int m = static_cast<int>(caps.size());
  if (m == 0) throw std::invalid_argument("damsm_loss: empty batch");
  if (feats.v.dim(0) != m) throw ShapeError("damsm_loss: image/caption count mismatch");
  std::vector<Var> entries;
  for (int i = 0; i < m; ++i) {
    Var v = feats.local(i);
    for (int j = 0; j < m; ++j) entries.push_back(reshape(word_relevance(v, caps[j], cfg), {1}));
  }
  Var rw = reshape(concat(entries, 0), {m, m});
  std::vector<Var> sents;
  for (const auto& c : caps) sents.push_back(reshape(c.sentence, {1, c.sentence.dim(0)}));
  Var rs = matmul(row_normalize(feats.vbar), transpose(row_normalize(concat(sents, 0))));
  auto w = matching_loss(rw, cfg.gamma3);
  auto s = matching_loss(rs, cfg.gamma3);
  DamsmLoss out;
  out.w1 = w.l1;
  out.w2 = w.l2;
  out.s1 = s.l1;
  out.s2 = s.l2;
  out.total = add(add(w.l1, w.l2), add(s.l1, s.l2));
  return out;
}

double r_precision_from_scores(const std::vector<std::vector<double>>& scores) {
  if (scores.empty()) throw std::invalid_argument("r_precision: no queries");
  int hits = 0;
  for (const auto& row : scores) {
    if (row.empty()) throw std::invalid_argument("r_precision: empty candidate list");
    bool top = true;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] >= row[0]) top = false;
    hits += top;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double r_precision(const std::vector<RetrievalQuery>& queries, const text::Vocabulary& vocab,
                   const text::TextEncoder& encoder) {
  NoGradGuard ng;
  std::vector<std::vector<double>> scores;
  for (const auto& q : queries) {
    std::set<std::string> seen(q.candidates.begin(), q.candidates.end());
    if (seen.size() != q.candidates.size()) throw std::invalid_argument("r_precision: duplicate candidate captions");
    std::vector<double> row;
    for (const auto& cap : q.candidates) {
      auto enc = encoder.encode(vocab.encode(cap));
      row.push_back(cosine(q.image_global, enc.sentence).item());
    }
    scores.push_back(std::move(row));
  }
  return r_precision_from_scores(scores);
}

std::vector<std::string> pick_distractors(const std::string& truth, const std::vector<std::string>& pool, int n,
                                          Rng& rng) {
  std::vector<std::string> uniq;
  std::set<std::string> seen{truth};
  for (const auto& p : pool)
    if (seen.insert(p).second) uniq.push_back(p);
  if (static_cast<int>(uniq.size()) < n) throw std::invalid_argument("pick_distractors: pool too small");
  for (int i = 0; i < n; ++i) std::swap(uniq[i], uniq[i + rng() % (uniq.size() - i)]);
  uniq.resize(n);
  return uniq;
}

namespace {

void moments(const std::vector<std::vector<double>>& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const int n = static_cast<int>(x.size());
  const int d = static_cast<int>(x[0].size());
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(x[i].size()) != d) throw std::invalid_argument("frechet_distance: ragged features");
    for (int k = 0; k < d; ++k) m(i, k) = x[i][k];
  }
  mu = m.colwise().mean();
  Eigen::MatrixXd c = m.rowwise() - mu.transpose();
  cov = (c.transpose() * c) / static_cast<double>(n - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("frechet_distance: need at least 2 samples per set");
  if (a[0].size() != b[0].size()) throw std::invalid_argument("frechet_distance: feature width mismatch");
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd ca, cb;
  moments(a, ma, ca);
  moments(b, mb, cb);
  // Tr (Sa Sb)^{1/2} = Tr (Sa^{1/2} Sb Sa^{1/2})^{1/2}
  const Eigen::MatrixXd ra = psd_sqrt(ca);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ra * cb * ra);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2 * tr_sqrt;
  return std::max(d, 0.0);
}

Var stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty");
  const int s = images[0]->height;
  std::vector<double> data;
  data.reserve(images.size() * 3 * s * s);
  for (const auto* im : images) {
    if (im->height != s || im->width != s || im->channels != 3) throw ShapeError("stack_images: size mismatch");
    data.insert(data.end(), im->data.begin(), im->data.end());
  }
  return constant({static_cast<int>(images.size()), 3, s, s}, std::move(data));
}

void train_damsm(const std::vector<std::vector<TrainExample>>& scenes, text::TextEncoder& text_enc,
                 ImageEncoder& img_enc, const DamsmConfig& cfg, const DamsmTrainConfig& tc, Rng& rng,
                 const std::function<void(int, const DamsmLoss&)>& log) {
  if (scenes.empty()) throw std::invalid_argument("train_damsm: empty dataset");
  nn::StateDict sd;
  text_enc.collect(sd, "text");
  img_enc.collect(sd, "image");
  nn::Adam opt(tc.lr, 0.5, 0.999);
  const int m = std::min<int>(tc.batch, static_cast<int>(scenes.size()));
  std::vector<int> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  for (int step = 0; step < tc.steps; ++step) {
    for (int i = 0; i < m; ++i) std::swap(order[i], order[i + rng() % (order.size() - i)]);
    std::vector<const Image*> imgs;
    std::vector<text::TextEncoding> caps;
    for (int i = 0; i < m; ++i) {
      const auto& ex = scenes[order[i]];
      const auto& pick = ex[rng() % ex.size()];
      imgs.push_back(pick.image);
      caps.push_back(text_enc.encode(pick.tokens, tc.dropout ? &rng : nullptr));
    }
    auto loss = damsm_loss(img_enc.encode(stack_images(imgs)), caps, cfg);
    if (!std::isfinite(loss.total.item())) throw std::runtime_error("train_damsm: non-finite loss at step " + std::to_string(step));
    if (log) log(step, loss);
    sd.params.zero_grad();
    loss.total.backward();
    opt.step(sd.params);
  }
}

}  // namespace objgan::damsm
