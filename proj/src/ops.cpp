#include "objgan/core/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace objgan::ag {

using detail::make_result;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
  return axis;
}

// Split a shape into [outer, n, inner] around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[i]);
  r.n = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;  // strides into a/b per output dim (0 when broadcast)
  bool same = false;
  bool b_scalar = false;
  bool a_scalar = false;
};

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> st(r, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t din = in.size() - 1 - k;
    const std::size_t dout = r - 1 - k;
    st[dout] = (in[din] == 1 && out[dout] != 1) ? 0 : stride;
    stride *= static_cast<std::size_t>(in[din]);
  }
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  for (std::size_t k = 0; k < r; ++k) {
    const int da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const int db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    p.out[r - 1 - k] = std::max(da, db);
  }
  p.a_scalar = numel_of(a) == 1;
  p.b_scalar = numel_of(b) == 1;
  p.sa = aligned_strides(a, p.out);
  p.sb = aligned_strides(b, p.out);
  return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& body) {
  const std::size_t n = numel_of(p.out);
  if (p.same) {
    for (std::size_t o = 0; o < n; ++o) body(o, o, o);
    return;
  }
  if (p.b_scalar && numel_of(p.out) == n && !p.a_scalar) {
    bool a_full = true;
    for (std::size_t d = 0; d < p.out.size(); ++d)
      if (p.sa[d] == 0 && p.out[d] != 1) a_full = false;
    if (a_full) {
      for (std::size_t o = 0; o < n; ++o) body(o, o, 0);
      return;
    }
  }
  const std::size_t r = p.out.size();
  std::vector<int> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    body(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * static_cast<std::size_t>(p.out[d]);
      ib -= p.sb[d] * static_cast<std::size_t>(p.out[d]);
      idx[d] = 0;
    }
  }
}

// fwd(a, b) -> y ; bwd(a, b, y, g) -> {ga, gb}
template <class Fwd, class Bwd>
Var binary(const Var& a, const Var& b, Fwd fwd, Bwd bwd) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<double> out(numel_of(plan.out));
  const double* pa = a.data();
  const double* pb = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(pa[ia], pb[ib]); });
  Shape oshape = plan.out;
  return make_result(std::move(oshape), std::move(out), {a, b}, [a, b, plan, bwd](Node& self) {
    const double* pa = a.data();
    const double* pb = b.data();
    const double* g = self.grad.data();
    const double* y = self.value.data();
    double* ga = a.requires_grad() ? a.node()->grad_buffer() : nullptr;
    double* gb = b.requires_grad() ? b.node()->grad_buffer() : nullptr;
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      auto [da, db] = bwd(pa[ia], pb[ib], y[o], g[o]);
      if (ga) ga[ia] += da;
      if (gb) gb[ib] += db;
    });
  });
}

// fwd(x) -> y ; dydx(x, y) -> derivative
template <class Fwd, class D>
Var unary(const Var& x, Fwd fwd, D dydx) {
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(px[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, dydx](Node& self) {
    double* gx = x.node()->grad_buffer();
    const double* px = x.data();
    const double* y = self.value.data();
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += g[i] * dydx(px[i], y[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(a, b, [](double x, double y) { return x + y; },
                [](double, double, double, double g) { return std::pair{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  return binary(a, b, [](double x, double y) { return x - y; },
                [](double, double, double, double g) { return std::pair{g, -g}; });
}

Var mul(const Var& a, const Var& b) {
  return binary(a, b, [](double x, double y) { return x * y; },
                [](double x, double y, double, double g) { return std::pair{g * y, g * x}; });
}

Var div(const Var& a, const Var& b) {
  return binary(a, b, [](double x, double y) { return x / y; },
                [](double x, double y, double, double g) { return std::pair{g / y, -g * x / (y * y)}; });
}

Var neg(const Var& x) {
  return unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(const Var& x, double a) {
  return unary(x, [a](double v) { return a * v; }, [a](double, double) { return a; });
}

Var add_scalar(const Var& x, double a) {
  return unary(x, [a](double v) { return v + a; }, [](double, double) { return 1.0; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt(const Var& x) {
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var softplus(const Var& x) {
  return unary(
      x, [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Var log_sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return v < 0 ? v - std::log1p(std::exp(v)) : -std::log1p(std::exp(-v)); },
      [](double v, double) { return v < 0 ? 1.0 / (1.0 + std::exp(v)) : std::exp(-v) / (1.0 + std::exp(-v)); });
}

Var sum(const Var& x) {
  double s = 0;
  for (double v : x.value()) s += v;
  return make_result({1}, {s}, {x}, [x](Node& self) {
    double* gx = x.node()->grad_buffer();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
}

Var mean(const Var& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {
Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
  Shape r = s;
  if (keepdim)
    r[axis] = 1;
  else
    r.erase(r.begin() + axis);
  if (r.empty()) r = {1};
  return r;
}
}  // namespace

Var sum_axis(const Var& x, int axis, bool keepdim) {
  axis = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), axis);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double* px = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += px[(o * sp.n + k) * sp.inner + i];
  return make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out), {x}, [x, sp](Node& self) {
    double* gx = x.node()->grad_buffer();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Var mean_axis(const Var& x, int axis, bool keepdim) {
  const int a = norm_axis(axis, x.rank());
  return scale(sum_axis(x, a, keepdim), 1.0 / x.dim(a));
}

Var logsumexp_axis(const Var& x, int axis, bool keepdim) {
  axis = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), axis);
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<double> soft(x.numel());
  const double* px = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) m = std::max(m, px[(o * sp.n + k) * sp.inner + i]);
      double s = 0;
      for (std::size_t k = 0; k < sp.n; ++k) s += std::exp(px[(o * sp.n + k) * sp.inner + i] - m);
      const double lse = m + std::log(s);
      out[o * sp.inner + i] = lse;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const std::size_t j = (o * sp.n + k) * sp.inner + i;
        soft[j] = std::exp(px[j] - lse);
      }
    }
  return make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
                     [x, sp, soft = std::move(soft)](Node& self) {
                       double* gx = x.node()->grad_buffer();
                       const double* g = self.grad.data();
                       for (std::size_t o = 0; o < sp.outer; ++o)
                         for (std::size_t k = 0; k < sp.n; ++k)
                           for (std::size_t i = 0; i < sp.inner; ++i) {
                             const std::size_t j = (o * sp.n + k) * sp.inner + i;
                             gx[j] += g[o * sp.inner + i] * soft[j];
                           }
                     });
}

namespace {
Var softmax_impl(const Var& x, int axis, const std::vector<bool>* masked) {
  axis = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), axis);
  if (masked) {
    if (masked->size() != sp.n) throw ShapeError("masked_softmax: mask length mismatch");
    if (std::all_of(masked->begin(), masked->end(), [](bool b) { return b; }))
      throw std::invalid_argument("masked_softmax: every position is masked");
  }
  std::vector<double> out(x.numel(), 0.0);
  const double* px = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k)
        if (!masked || !(*masked)[k]) m = std::max(m, px[(o * sp.n + k) * sp.inner + i]);
      double s = 0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        if (masked && (*masked)[k]) continue;
        const std::size_t j = (o * sp.n + k) * sp.inner + i;
        out[j] = std::exp(px[j] - m);
        s += out[j];
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[(o * sp.n + k) * sp.inner + i] /= s;
    }
  return make_result(x.shape(), std::move(out), {x}, [x, sp](Node& self) {
    double* gx = x.node()->grad_buffer();
    const double* g = self.grad.data();
    const double* y = self.value.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double dot = 0;
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t j = (o * sp.n + k) * sp.inner + i;
          dot += g[j] * y[j];
        }
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t j = (o * sp.n + k) * sp.inner + i;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
  });
}
}  // namespace

Var softmax_axis(const Var& x, int axis) { return softmax_impl(x, axis, nullptr); }

Var masked_softmax(const Var& x, int axis, const std::vector<bool>& masked) {
  return softmax_impl(x, axis, &masked);
}

Var log_softmax_axis(const Var& x, int axis) {
  const int a = norm_axis(axis, x.rank());
  return sub(x, logsumexp_axis(x, a, true));
}

Var reshape(const Var& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_result(std::move(shape), x.value(), {x}, [x](Node& self) {
    double* gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Var transpose(const Var& x) {
  if (x.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

Var permute(const Var& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r), src_stride(r);
  std::size_t st = 1;
  for (int d = r - 1; d >= 0; --d) {
    in_strides[d] = st;
    st *= static_cast<std::size_t>(x.dim(d));
  }
  for (int d = 0; d < r; ++d) {
    out_shape[d] = x.dim(perm[d]);
    src_stride[d] = in_strides[perm[d]];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<int> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t o = 0; o < n; ++o) {
    src[o] = off;
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      off += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      off -= src_stride[d] * static_cast<std::size_t>(out_shape[d]);
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  const double* px = x.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = px[src[o]];
  return make_result(std::move(out_shape), std::move(out), {x}, [x, src = std::move(src)](Node& self) {
    double* gx = x.node()->grad_buffer();
    for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += self.grad[o];
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of nothing");
  const int r = xs[0].rank();
  axis = norm_axis(axis, r);
  Shape out_shape = xs[0].shape();
  int total = 0;
  for (const auto& v : xs) {
    if (v.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != axis && v.dim(d) != out_shape[d])
        throw ShapeError("concat: shape mismatch " + shape_str(v.shape()) + " vs " + shape_str(out_shape));
    total += v.dim(axis);
  }
  out_shape[axis] = total;
  const auto sp = split_at(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& v : xs) {
    offsets.push_back(off);
    const std::size_t nk = static_cast<std::size_t>(v.dim(axis));
    const double* pv = v.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy(pv + o * nk * sp.inner, pv + (o + 1) * nk * sp.inner, out.data() + (o * sp.n + off) * sp.inner);
    off += nk;
  }
  return make_result(std::move(out_shape), std::move(out), xs, [xs, sp, offsets](Node& self) {
    const double* g = self.grad.data();
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const Var& v = xs[k];
      if (!v.requires_grad()) continue;
      double* gv = v.node()->grad_buffer();
      const std::size_t chunk = v.numel() / sp.outer;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* src = g + (o * sp.n + offsets[k]) * sp.inner;
        double* dst = gv + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

Var narrow(const Var& x, int axis, int start, int length) {
  axis = norm_axis(axis, x.rank());
  if (start < 0 || length < 0 || start + length > x.dim(axis))
    throw ShapeError("narrow out of range on " + shape_str(x.shape()));
  const auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t chunk = static_cast<std::size_t>(length) * sp.inner;
  std::vector<double> out(sp.outer * chunk);
  const double* px = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy(px + (o * sp.n + start) * sp.inner, px + (o * sp.n + start) * sp.inner + chunk, out.data() + o * chunk);
  return make_result(std::move(out_shape), std::move(out), {x}, [x, sp, start, chunk](Node& self) {
    double* gx = x.node()->grad_buffer();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = gx + (o * sp.n + start) * sp.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[o * chunk + i];
    }
  });
}

Var index_select(const Var& x, const std::vector<int>& indices) {
  if (x.rank() < 1) throw ShapeError("index_select on scalar");
  const int rows = x.dim(0);
  const std::size_t row = x.numel() / static_cast<std::size_t>(std::max(rows, 1));
  for (int i : indices)
    if (i < 0 || i >= rows) throw std::out_of_range("index_select: index " + std::to_string(i) + " out of range");
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<int>(indices.size());
  std::vector<double> out(indices.size() * row);
  for (std::size_t k = 0; k < indices.size(); ++k)
    std::copy(x.data() + indices[k] * row, x.data() + (indices[k] + 1) * row, out.data() + k * row);
  return make_result(std::move(out_shape), std::move(out), {x}, [x, indices, row](Node& self) {
    double* gx = x.node()->grad_buffer();
    for (std::size_t k = 0; k < indices.size(); ++k)
      for (std::size_t i = 0; i < row; ++i) gx[indices[k] * row + i] += self.grad[k * row + i];
  });
}

Var broadcast_to(const Var& x, const Shape& shape) {
  auto plan = plan_broadcast(x.shape(), shape);
  if (plan.out != shape) throw ShapeError("broadcast_to: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(numel_of(shape));
  const double* px = x.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) { out[o] = px[ia]; });
  return make_result(shape, std::move(out), {x}, [x, plan](Node& self) {
    double* gx = x.node()->grad_buffer();
    const double* g = self.grad.data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) { gx[ia] += g[o]; });
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MapMat(out.data(), m, n).noalias() = CMapMat(a.data(), m, k) * CMapMat(b.data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    CMapMat g(self.grad.data(), m, n);
    if (a.requires_grad()) MapMat(a.node()->grad_buffer(), m, k).noalias() += g * CMapMat(b.data(), k, n).transpose();
    if (b.requires_grad()) MapMat(b.node()->grad_buffer(), k, n).noalias() += CMapMat(a.data(), m, k).transpose() * g;
  });
}

Var cosine(const Var& a, const Var& b) {
  if (a.numel() != b.numel()) throw ShapeError("cosine: length mismatch");
  Var fa = reshape(a, {static_cast<int>(a.numel())});
  Var fb = reshape(b, {static_cast<int>(b.numel())});
  Var dot = sum(mul(fa, fb));
  Var na = sqrt(sum(square(fa)));
  Var nb = sqrt(sum(square(fb)));
  return div(dot, mul(na, nb));
}

}  // namespace objgan::ag
