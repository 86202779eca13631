#include "objgan/core/conv.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "objgan/core/ops.hpp"

namespace objgan::ag {

using detail::make_result;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
  int n, c, h, w, o, kh, kw, stride, pad, oh, ow;
  int ckk() const { return c * kh * kw; }
  int ohw() const { return oh * ow; }
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        double* row = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * g.ohw();
        const double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = plane + iy * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvGeom& g, double* dx) {
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * g.ohw();
        double* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = plane + iy * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.oh <= 0 || g.ow <= 0 || g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw)
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  if (b.defined() && (b.numel() != static_cast<std::size_t>(g.o))) throw ShapeError("conv2d: bias size");

  std::vector<double> out(static_cast<std::size_t>(g.n) * g.o * g.ohw());
  std::vector<double> cols(static_cast<std::size_t>(g.ckk()) * g.ohw());
  CMapMat W(w.data(), g.o, g.ckk());
  const std::size_t in_sz = static_cast<std::size_t>(g.c) * g.h * g.w;
  const std::size_t out_sz = static_cast<std::size_t>(g.o) * g.ohw();
  for (int n = 0; n < g.n; ++n) {
    im2col(x.data() + n * in_sz, g, cols.data());
    MapMat Y(out.data() + n * out_sz, g.o, g.ohw());
    Y.noalias() = W * CMapMat(cols.data(), g.ckk(), g.ohw());
    if (b.defined())
      for (int o = 0; o < g.o; ++o) Y.row(o).array() += b.data()[o];
  }
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_result({g.n, g.o, g.oh, g.ow}, std::move(out), parents, [x, w, b, g, in_sz, out_sz](Node& self) {
    std::vector<double> cols(static_cast<std::size_t>(g.ckk()) * g.ohw());
    CMapMat W(w.data(), g.o, g.ckk());
    for (int n = 0; n < g.n; ++n) {
      CMapMat G(self.grad.data() + n * out_sz, g.o, g.ohw());
      if (w.requires_grad()) {
        im2col(x.data() + n * in_sz, g, cols.data());
        MapMat(w.node()->grad_buffer(), g.o, g.ckk()).noalias() +=
            G * CMapMat(cols.data(), g.ckk(), g.ohw()).transpose();
      }
      if (b.defined() && b.requires_grad()) {
        double* gb = b.node()->grad_buffer();
        for (int o = 0; o < g.o; ++o) gb[o] += G.row(o).sum();
      }
      if (x.requires_grad()) {
        MapMat C(cols.data(), g.ckk(), g.ohw());
        C.noalias() = W.transpose() * G;
        col2im(cols.data(), g, x.node()->grad_buffer() + n * in_sz);
      }
    }
  });
}

Var reflection_pad2d(const Var& x, int pad) {
  if (x.rank() != 4) throw ShapeError("reflection_pad2d expects NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (pad >= h || pad >= w) throw ShapeError("reflection pad larger than input");
  const int oh = h + 2 * pad, ow = w + 2 * pad;
  auto reflect = [](int i, int size) {
    if (i < 0) return -i;
    if (i >= size) return 2 * size - 2 - i;
    return i;
  };
  std::vector<std::size_t> src(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int xx = 0; xx < ow; ++xx)
      src[y * ow + xx] = static_cast<std::size_t>(reflect(y - pad, h)) * w + reflect(xx - pad, w);
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t k = 0; k < src.size(); ++k) out[p * src.size() + k] = x.data()[p * h * w + src[k]];
  return make_result({n, c, oh, ow}, std::move(out), {x}, [x, src, planes, h, w](Node& self) {
    double* gx = x.node()->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t k = 0; k < src.size(); ++k) gx[p * h * w + src[k]] += self.grad[p * src.size() + k];
  });
}

Var upsample_nearest(const Var& x, int f) {
  if (x.rank() != 4) throw ShapeError("upsample_nearest expects NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h * f, ow = w * f;
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = x.data()[(p * h + y / f) * w + xx / f];
  return make_result({n, c, oh, ow}, std::move(out), {x}, [x, planes, h, w, f, oh, ow](Node& self) {
    double* gx = x.node()->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) gx[(p * h + y / f) * w + xx / f] += self.grad[(p * oh + y) * ow + xx];
  });
}

Var avg_pool2d(const Var& x, int k) {
  if (x.rank() != 4) throw ShapeError("avg_pool2d expects NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % k || w % k) throw ShapeError("avg_pool2d: size not divisible by " + std::to_string(k));
  const int oh = h / k, ow = w / k;
  const double inv = 1.0 / (k * k);
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  std::vector<double> out(planes * oh * ow, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out[(p * oh + y / k) * ow + xx / k] += inv * x.data()[(p * h + y) * w + xx];
  return make_result({n, c, oh, ow}, std::move(out), {x}, [x, planes, h, w, k, oh, ow, inv](Node& self) {
    double* gx = x.node()->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) gx[(p * h + y) * w + xx] += inv * self.grad[(p * oh + y / k) * ow + xx / k];
  });
}

Var global_avg_pool(const Var& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW");
  return mean_axis(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), 2);
}

Var glu(const Var& x, int axis) {
  const int a = axis < 0 ? axis + x.rank() : axis;
  if (x.dim(a) % 2) throw ShapeError("glu: odd channel count");
  const int half = x.dim(a) / 2;
  return mul(narrow(x, a, 0, half), sigmoid(narrow(x, a, half, half)));
}

Var normalize_channels(const Var& x, bool per_sample, double eps, ChannelStats* stats) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("normalize_channels expects [N,C] or [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.rank() == 4 ? static_cast<std::size_t>(x.dim(2)) * x.dim(3) : 1;
  if (per_sample && inner < 2) throw ShapeError("instance norm needs spatial extent");
  const std::size_t groups = per_sample ? static_cast<std::size_t>(n) * c : static_cast<std::size_t>(c);
  const std::size_t count = per_sample ? inner : static_cast<std::size_t>(n) * inner;
  auto index = [=](std::size_t gidx, std::size_t k) -> std::size_t {
    if (per_sample) return gidx * inner + k;
    const std::size_t s = k / inner, i = k % inner;
    return (s * c + gidx) * inner + i;
  };
  std::vector<double> out(x.numel()), inv_std(groups);
  const double* px = x.data();
  if (stats) {
    stats->mean.assign(groups, 0.0);
    stats->var.assign(groups, 0.0);
  }
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double m = 0;
    for (std::size_t k = 0; k < count; ++k) m += px[index(gi, k)];
    m /= static_cast<double>(count);
    double v = 0;
    for (std::size_t k = 0; k < count; ++k) {
      const double d = px[index(gi, k)] - m;
      v += d * d;
    }
    v /= static_cast<double>(count);
    inv_std[gi] = 1.0 / std::sqrt(v + eps);
    for (std::size_t k = 0; k < count; ++k) out[index(gi, k)] = (px[index(gi, k)] - m) * inv_std[gi];
    if (stats) {
      stats->mean[gi] = m;
      stats->var[gi] = v;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [x, groups, count, index, inv_std](Node& self) {
    double* gx = x.node()->grad_buffer();
    const double* g = self.grad.data();
    const double* y = self.value.data();
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double mg = 0, mgy = 0;
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t j = index(gi, k);
        mg += g[j];
        mgy += g[j] * y[j];
      }
      mg /= static_cast<double>(count);
      mgy /= static_cast<double>(count);
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t j = index(gi, k);
        gx[j] += inv_std[gi] * (g[j] - mg - y[j] * mgy);
      }
    }
  });
}

Var repeat_spatial(const Var& v, int h, int w) {
  if (v.rank() != 2) throw ShapeError("repeat_spatial expects [N,C]");
  return broadcast_to(reshape(v, {v.dim(0), v.dim(1), 1, 1}), {v.dim(0), v.dim(1), h, w});
}

namespace {

struct Tap {
  int idx[4];
  double wt[4];
};

// Bilinear taps at continuous index-space coordinate (y, x); border handling
// follows the usual ROI-align convention (zero beyond one pixel outside).
Tap bilinear_tap(double y, double x, int h, int w) {
  Tap t{{0, 0, 0, 0}, {0, 0, 0, 0}};
  if (y < -1.0 || y > h || x < -1.0 || x > w) return t;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  int y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx[0] = y0 * w + x0;
  t.idx[1] = y0 * w + x1;
  t.idx[2] = y1 * w + x0;
  t.idx[3] = y1 * w + x1;
  t.wt[0] = hy * hx;
  t.wt[1] = hy * lx;
  t.wt[2] = ly * hx;
  t.wt[3] = ly * lx;
  return t;
}

}  // namespace

Var roi_align(const Var& feat, const RoiBox& box, int bins, int sampling) {
  if (feat.rank() != 3) throw ShapeError("roi_align expects [C,H,W]");
  if (bins < 1 || sampling < 1) throw std::invalid_argument("roi_align: bins and sampling must be >= 1");
  if (!(box.w > 0) || !(box.h > 0)) throw std::invalid_argument("roi_align: degenerate box");
  const int c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  const double x0 = box.x * w, y0 = box.y * h;
  const double bw = box.w * w / bins, bh = box.h * h / bins;
  const double norm = 1.0 / (sampling * sampling);
  // Per output cell, the taps of all its samples (shared across channels).
  std::vector<std::vector<Tap>> cell_taps(static_cast<std::size_t>(bins) * bins);
  for (int by = 0; by < bins; ++by)
    for (int bx = 0; bx < bins; ++bx) {
      auto& taps = cell_taps[by * bins + bx];
      for (int sy = 0; sy < sampling; ++sy)
        for (int sx = 0; sx < sampling; ++sx) {
          const double yy = y0 + (by + (sy + 0.5) / sampling) * bh - 0.5;
          const double xx = x0 + (bx + (sx + 0.5) / sampling) * bw - 0.5;
          taps.push_back(bilinear_tap(yy, xx, h, w));
        }
    }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t cells = cell_taps.size();
  std::vector<double> out(static_cast<std::size_t>(c) * cells, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double* f = feat.data() + ch * plane;
    for (std::size_t k = 0; k < cells; ++k) {
      double acc = 0;
      for (const Tap& t : cell_taps[k])
        for (int q = 0; q < 4; ++q) acc += t.wt[q] * f[t.idx[q]];
      out[ch * cells + k] = acc * norm;
    }
  }
  return make_result({c, bins, bins}, std::move(out), {feat}, [feat, cell_taps, plane, cells, c, norm](Node& self) {
    double* gf = feat.node()->grad_buffer();
    for (int ch = 0; ch < c; ++ch) {
      double* g = gf + ch * plane;
      for (std::size_t k = 0; k < cells; ++k) {
        const double go = self.grad[ch * cells + k] * norm;
        for (const Tap& t : cell_taps[k])
          for (int q = 0; q < 4; ++q) g[t.idx[q]] += t.wt[q] * go;
      }
    }
  });
}

Var distribute_max(const Var& ctx, const Var& masks, int channels, int height, int width) {
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  const int t_count = ctx.defined() ? ctx.dim(0) : 0;
  if (t_count == 0) return zeros({channels, height, width});
  if (ctx.rank() != 2 || ctx.dim(1) != channels) throw ShapeError("distribute_max: ctx must be [T,C]");
  if (masks.rank() != 3 || masks.dim(0) != t_count || masks.dim(1) != height || masks.dim(2) != width)
    throw ShapeError("distribute_max: masks must be [T,H,W], got " + shape_str(masks.shape()));
  std::vector<double> out(static_cast<std::size_t>(channels) * hw);
  std::vector<int> arg(out.size());
  const double* pc = ctx.data();
  const double* pm = masks.data();
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < hw; ++p) {
      int best = 0;
      double bv = pm[p] * pc[c];
      for (int t = 1; t < t_count; ++t) {
        const double v = pm[t * hw + p] * pc[t * channels + c];
        if (v > bv) {
          bv = v;
          best = t;
        }
      }
      out[c * hw + p] = bv;
      arg[c * hw + p] = best;
    }
  return make_result({channels, height, width}, std::move(out), {ctx, masks},
                     [ctx, masks, arg = std::move(arg), channels, hw](Node& self) {
                       double* gc = ctx.requires_grad() ? ctx.node()->grad_buffer() : nullptr;
                       double* gm = masks.requires_grad() ? masks.node()->grad_buffer() : nullptr;
                       const double* pc = ctx.data();
                       const double* pm = masks.data();
                       for (int c = 0; c < channels; ++c)
                         for (std::size_t p = 0; p < hw; ++p) {
                           const int t = arg[c * hw + p];
                           const double g = self.grad[c * hw + p];
                           if (gc) gc[t * channels + c] += g * pm[t * hw + p];
                           if (gm) gm[t * hw + p] += g * pc[t * channels + c];
                         }
                     });
}

}  // namespace objgan::ag
