#pragma once

// Spatial ops on NCHW tensors.

#include <array>
#include <vector>

#include "objgan/core/tensor.hpp"

namespace objgan::ag {

// x: [N,C,H,W], w: [O,C,kh,kw], b: [O] or undefined. Zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 0);
Var reflection_pad2d(const Var& x, int pad);
Var upsample_nearest(const Var& x, int factor);
// Non-overlapping k x k average pooling (area averaging).
Var avg_pool2d(const Var& x, int k);
// Mean over H and W: [N,C,H,W] -> [N,C].
Var global_avg_pool(const Var& x);
// Gated linear unit over `axis`: first half * sigmoid(second half).
Var glu(const Var& x, int axis = 1);

// Zero-mean unit-variance normalisation (biased variance).
//  per_sample == true  : instance norm, statistics per (n, c) over spatial dims
//  per_sample == false : batch norm, statistics per c over (n, spatial)
// Works for rank-2 [N,C] and rank-4 [N,C,H,W] inputs. When `stats` is given it
// receives {mean, biased var} per channel (batch-norm mode only).
struct ChannelStats {
  std::vector<double> mean, var;
};
Var normalize_channels(const Var& x, bool per_sample, double eps = 1e-5, ChannelStats* stats = nullptr);

// Broadcast a per-sample vector [N,C] over an H x W grid.
Var repeat_spatial(const Var& v, int h, int w);

struct RoiBox {
  double x = 0, y = 0, w = 0, h = 0;  // normalised image coordinates, top-left origin
};

// ROI-align on a single feature map [C,H,W]: each of bins x bins output cells
// averages sampling x sampling bilinear samples placed on a regular sub-grid.
// Output [C,bins,bins].
Var roi_align(const Var& feat, const RoiBox& box, int bins, int sampling = 2);

// Max-distribute per-object vectors over their masks:
//   out[c, p] = max_t masks[t, p] * ctx[t, c]
// ctx: [T,C], masks: [T,H,W] -> [C,H,W]. With T == 0 the result is zero.
// Gradients route to the lowest object index on ties.
Var distribute_max(const Var& ctx, const Var& masks, int channels, int height, int width);

}  // namespace objgan::ag
