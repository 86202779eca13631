#include "objgan/nn/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace objgan::nn {

using namespace objgan::ag;

std::vector<double> normal_values(Rng& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<double> uniform_values(Rng& rng, std::size_t n, double bound) {
  std::uniform_real_distribution<double> d(-bound, bound);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

const Var* TensorList::find(const std::string& name) const {
  for (const auto& it : items_)
    if (it.name == name) return &it.var;
  return nullptr;
}

void TensorList::zero_grad() {
  for (auto& it : items_) it.var.zero_grad();
}

std::size_t TensorList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& it : items_) n += it.var.numel();
  return n;
}

std::uint64_t hash_tensors(const TensorList& list) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& it : list.items()) {
    mix(it.name.data(), it.name.size());
    mix(it.var.data(), it.var.numel() * sizeof(double));
  }
  return h;
}

void copy_values(const TensorList& src, TensorList& dst) {
  for (auto& it : dst.items()) {
    const Var* s = src.find(it.name);
    if (!s) throw std::runtime_error("missing tensor '" + it.name + "'");
    if (s->shape() != it.var.shape())
      throw std::runtime_error("shape mismatch for '" + it.name + "': " + shape_str(s->shape()) + " vs " +
                               shape_str(it.var.shape()));
    it.var.mutable_value() = s->value();
  }
}

Linear::Linear(int in, int out, Rng& rng, bool with_bias, bool sn_) : spectral(sn_), in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = parameter({in, out}, uniform_values(rng, static_cast<std::size_t>(in) * out, bound));
  if (with_bias) bias = parameter({out}, uniform_values(rng, out, bound));
  if (spectral) sn = SpectralNorm(in, rng);
}

Var Linear::forward(const Var& x, bool train) const {
  Var w = spectral ? sn.normalized(weight, 1, train && grad_enabled()) : weight;
  Var y = matmul(x, w);
  return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(StateDict& sd, const std::string& prefix) const {
  sd.params.add(prefix + ".weight", weight);
  if (bias.defined()) sd.params.add(prefix + ".bias", bias);
  if (spectral) sd.buffers.add(prefix + ".sn_u", sn.u);
}

Var spectral_normalize(const Var& weight, int iters) {
  // Subspace iteration on W^T W with a block of up to four vectors, started
  // from the leading rows of W, then Rayleigh-Ritz for the top pair (u, v).
  const int rows = weight.dim(0);
  const int cols = static_cast<int>(weight.numel() / rows);
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> w(weight.data(), rows, cols);
  if (w.squaredNorm() == 0.0) return weight;
  const int b = std::min({4, rows, cols});
  auto orthonormal = [&](const Eigen::MatrixXd& m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(cols, b));
  };
  Eigen::MatrixXd V = orthonormal(w.topRows(b).transpose());
  for (int it = 0; it < std::max(iters, 1); ++it) V = orthonormal(w.transpose() * (w * V));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w * V, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd u = svd.matrixU().col(0);
  const Eigen::VectorXd v = V * svd.matrixV().col(0);
  std::vector<double> outer(weight.numel());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) outer[static_cast<std::size_t>(r) * cols + c] = u(r) * v(c);
  Var sigma = sum(mul(weight, constant(weight.shape(), std::move(outer))));
  return div(weight, sigma);
}

double spectral_sigma(const Var& weight, int iters) {
  NoGradGuard ng;
  Var n = spectral_normalize(weight, iters);
  for (std::size_t i = 0; i < weight.numel(); ++i)
    if (n.at(i) != 0.0) return weight.at(i) / n.at(i);
  return 0.0;
}

SpectralNorm::SpectralNorm(int rows, Rng& rng) {
  auto v = normal_values(rng, rows, 1.0);
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  u = constant({rows}, std::move(v));
}

Var SpectralNorm::normalized(const Var& weight, int iters, bool update) const {
  const int rows = weight.dim(0);
  const int cols = static_cast<int>(weight.numel() / rows);
  const double* w = weight.data();
  double wnorm = 0;
  for (std::size_t i = 0; i < weight.numel(); ++i) wnorm += w[i] * w[i];
  if (wnorm == 0.0) return weight;

  std::vector<double> uu = u.value(), vv(cols);
  auto normalize = [](std::vector<double>& x) {
    double n = 0;
    for (double a : x) n += a * a;
    n = std::sqrt(n);
    if (n > 0)
      for (double& a : x) a /= n;
  };
  for (int it = 0; it < std::max(iters, 1); ++it) {
    std::fill(vv.begin(), vv.end(), 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) vv[c] += w[r * cols + c] * uu[r];
    normalize(vv);
    std::fill(uu.begin(), uu.end(), 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) uu[r] += w[r * cols + c] * vv[c];
    normalize(uu);
  }
  if (update) const_cast<Var&>(u).mutable_value() = uu;
  // sigma = u^T W v with u, v held constant.
  std::vector<double> outer(weight.numel());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) outer[r * cols + c] = uu[r] * vv[c];
  Var sigma = sum(mul(weight, constant(weight.shape(), std::move(outer))));
  return div(weight, sigma);
}

Conv2d::Conv2d(int in, int out, int k, int stride_, int pad_, Rng& rng, bool with_bias, bool sn_)
    : spectral(sn_), stride(stride_), pad(pad_), in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  weight = parameter({out, in, k, k}, uniform_values(rng, static_cast<std::size_t>(out) * in * k * k, bound));
  if (with_bias) bias = parameter({out}, uniform_values(rng, out, bound));
  if (spectral) sn = SpectralNorm(out, rng);
}

Var Conv2d::forward(const Var& x, bool train) const {
  Var w = spectral ? sn.normalized(weight, 1, train && grad_enabled()) : weight;
  return conv2d(x, w, bias, stride, pad);
}

void Conv2d::collect(StateDict& sd, const std::string& prefix) const {
  sd.params.add(prefix + ".weight", weight);
  if (bias.defined()) sd.params.add(prefix + ".bias", bias);
  if (spectral) sd.buffers.add(prefix + ".sn_u", sn.u);
}

BatchNorm::BatchNorm(int channels) {
  gamma = parameter({channels}, std::vector<double>(channels, 1.0));
  beta = parameter({channels}, std::vector<double>(channels, 0.0));
  running_mean = constant({channels}, std::vector<double>(channels, 0.0));
  running_var = constant({channels}, std::vector<double>(channels, 1.0));
}

Var BatchNorm::forward(const Var& x, bool train) const {
  const int c = x.dim(1);
  Shape bshape = x.rank() == 4 ? Shape{1, c, 1, 1} : Shape{1, c};
  Var xhat;
  if (train) {
    ChannelStats st;
    xhat = normalize_channels(x, false, 1e-5, &st);
    if (grad_enabled()) {
      const double count = static_cast<double>(x.numel() / c);
      auto& rm = const_cast<Var&>(running_mean).mutable_value();
      auto& rv = const_cast<Var&>(running_var).mutable_value();
      for (int i = 0; i < c; ++i) {
        const double unbiased = count > 1 ? st.var[i] * count / (count - 1) : st.var[i];
        rm[i] = (1 - momentum) * rm[i] + momentum * st.mean[i];
        rv[i] = (1 - momentum) * rv[i] + momentum * unbiased;
      }
    }
  } else {
    std::vector<double> inv(c);
    for (int i = 0; i < c; ++i) inv[i] = 1.0 / std::sqrt(running_var.value()[i] + 1e-5);
    xhat = mul(sub(x, reshape(running_mean, bshape)), constant(bshape, std::move(inv)));
  }
  return add(mul(xhat, reshape(gamma, bshape)), reshape(beta, bshape));
}

void BatchNorm::collect(StateDict& sd, const std::string& prefix) const {
  sd.params.add(prefix + ".gamma", gamma);
  sd.params.add(prefix + ".beta", beta);
  sd.buffers.add(prefix + ".running_mean", running_mean);
  sd.buffers.add(prefix + ".running_var", running_var);
}

LstmCell::LstmCell(int in, int hidden, Rng& rng) : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih = parameter({in, 4 * hidden}, uniform_values(rng, static_cast<std::size_t>(in) * 4 * hidden, bound));
  w_hh = parameter({hidden, 4 * hidden}, uniform_values(rng, static_cast<std::size_t>(hidden) * 4 * hidden, bound));
  b = parameter({4 * hidden}, uniform_values(rng, 4 * static_cast<std::size_t>(hidden), bound));
}

std::pair<Var, Var> LstmCell::forward(const Var& x, const Var& h, const Var& c) const {
  Var gates = add(add(matmul(x, w_ih), matmul(h, w_hh)), b);
  const int hs = hidden_;
  Var i = sigmoid(narrow(gates, 1, 0, hs));
  Var f = sigmoid(narrow(gates, 1, hs, hs));
  Var g = ag::tanh(narrow(gates, 1, 2 * hs, hs));
  Var o = sigmoid(narrow(gates, 1, 3 * hs, hs));
  Var c2 = add(mul(f, c), mul(i, g));
  Var h2 = mul(o, ag::tanh(c2));
  return {h2, c2};
}

void LstmCell::collect(StateDict& sd, const std::string& prefix) const {
  sd.params.add(prefix + ".w_ih", w_ih);
  sd.params.add(prefix + ".w_hh", w_hh);
  sd.params.add(prefix + ".b", b);
}

void Adam::step(TensorList& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
  }
  ++steps;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var& p = params.items()[k].var;
    if (!p.has_grad()) continue;
    const auto& g = p.node()->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    double* w = p.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
}

void Adam::export_state(TensorList& out, const std::string& prefix, const TensorList& params) const {
  out.add(prefix + ".steps", scalar(static_cast<double>(steps)));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params.items()[k];
    const bool have = k < m_.size() && !m_[k].empty();
    out.add(prefix + ".m." + p.name, constant(p.var.shape(), have ? m_[k] : std::vector<double>(p.var.numel(), 0.0)));
    out.add(prefix + ".v." + p.name, constant(p.var.shape(), have ? v_[k] : std::vector<double>(p.var.numel(), 0.0)));
  }
}

void Adam::import_state(const TensorList& in, const std::string& prefix, const TensorList& params) {
  const Var* s = in.find(prefix + ".steps");
  if (!s) throw std::runtime_error("optimizer state '" + prefix + "' missing");
  steps = static_cast<std::int64_t>(s->item());
  m_.assign(params.size(), {});
  v_.assign(params.size(), {});
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params.items()[k];
    const Var* m = in.find(prefix + ".m." + p.name);
    const Var* v = in.find(prefix + ".v." + p.name);
    if (!m || !v) throw std::runtime_error("optimizer moments missing for '" + p.name + "'");
    m_[k] = m->value();
    v_[k] = v->value();
  }
}

}  // namespace objgan::nn
