#pragma once

// Parameterised building blocks shared by every network in the pipeline.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "objgan/core/conv.hpp"
#include "objgan/core/ops.hpp"

namespace objgan::nn {

using ag::Var;

using Rng = std::mt19937_64;

std::vector<double> normal_values(Rng& rng, std::size_t n, double stddev);
std::vector<double> uniform_values(Rng& rng, std::size_t n, double bound);

struct NamedVar {
  std::string name;
  Var var;
};

// Flat, ordered registry of named tensors. Order is registration order, which
// keeps checkpoints and parameter hashes stable.
class TensorList {
 public:
  void add(std::string name, const Var& v) { items_.push_back({std::move(name), v}); }
  void append(const TensorList& other) { items_.insert(items_.end(), other.items_.begin(), other.items_.end()); }
  const std::vector<NamedVar>& items() const { return items_; }
  std::vector<NamedVar>& items() { return items_; }
  std::size_t size() const { return items_.size(); }
  const Var* find(const std::string& name) const;
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<NamedVar> items_;
};

// Parameters (trained) and buffers (running statistics, power-iteration
// vectors) of a network.
struct StateDict {
  TensorList params;
  TensorList buffers;
};

// FNV-1a over the raw bytes of every tensor; used for determinism checks.
std::uint64_t hash_tensors(const TensorList& list);

// Copy values from `src` into same-named tensors of `dst`; throws on a
// missing name or shape mismatch.
void copy_values(const TensorList& src, TensorList& dst);

// Spectral normalisation state for one weight: the persistent left singular
// vector estimate. `normalized` returns W / sigma where sigma = u^T W v is
// computed after `iters` power iterations; u is refreshed when `update` is set.
class SpectralNorm {
 public:
  SpectralNorm() = default;
  SpectralNorm(int rows, Rng& rng);
  Var normalized(const Var& weight, int iters, bool update) const;
  Var u;  // [rows]
};

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true, bool spectral = false);
  Var forward(const Var& x, bool train = false) const;  // [N,in] -> [N,out]
  void collect(StateDict& sd, const std::string& prefix) const;
  int in() const { return in_; }
  int out() const { return out_; }
  Var weight;  // [in,out]
  Var bias;    // [out] or undefined
  SpectralNorm sn;
  bool spectral = false;

 private:
  int in_ = 0, out_ = 0;
};

// Largest singular value of `weight` viewed as [dim0, rest], estimated by
// `iters` steps of block power iteration (block of up to 4) from a fixed
// start, followed by Rayleigh-Ritz.
double spectral_sigma(const Var& weight, int iters);
// weight / sigma with the same estimate; a zero weight is returned unchanged.
// Stateless; layers use the persistent single-vector SpectralNorm instead.
Var spectral_normalize(const Var& weight, int iters);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int k, int stride, int pad, Rng& rng, bool bias = true, bool spectral = false);
  Var forward(const Var& x, bool train = false) const;
  void collect(StateDict& sd, const std::string& prefix) const;
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Var weight;  // [O,C,k,k]
  Var bias;
  SpectralNorm sn;
  bool spectral = false;
  int stride = 1, pad = 0;

 private:
  int in_ = 0, out_ = 0;
};

// Affine batch normalisation with running statistics (momentum 0.1).
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels);
  Var forward(const Var& x, bool train) const;
  void collect(StateDict& sd, const std::string& prefix) const;
  Var gamma, beta, running_mean, running_var;
  double momentum = 0.1;
};

class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(int in, int hidden, Rng& rng);
  // x [N,in], h [N,H], c [N,H] -> {h', c'}
  std::pair<Var, Var> forward(const Var& x, const Var& h, const Var& c) const;
  void collect(StateDict& sd, const std::string& prefix) const;
  int hidden() const { return hidden_; }
  Var w_ih, w_hh, b;

 private:
  int hidden_ = 0;
};

class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps = 1e-8) : lr(lr), beta1(beta1), beta2(beta2), eps(eps) {}
  void step(TensorList& params);
  // Optimiser moments exported as named tensors for checkpointing.
  void export_state(TensorList& out, const std::string& prefix, const TensorList& params) const;
  void import_state(const TensorList& in, const std::string& prefix, const TensorList& params);
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t steps = 0;

 private:
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace objgan::nn
