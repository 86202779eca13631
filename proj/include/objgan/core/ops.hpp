#pragma once

// Differentiable tensor operations. Binary elementwise ops broadcast with
// numpy rules (shapes aligned on the right).

#include <vector>

#include "objgan/core/tensor.hpp"

namespace objgan::ag {

// Elementwise binary (broadcasting).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

// Elementwise unary.
Var neg(const Var& x);
Var scale(const Var& x, double a);
Var add_scalar(const Var& x, double a);
Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.2);
Var square(const Var& x);
Var sqrt(const Var& x);
Var softplus(const Var& x);
// log(sigmoid(x)), stable for large |x|.
Var log_sigmoid(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }

// Reductions.
Var sum(const Var& x);
Var mean(const Var& x);
Var sum_axis(const Var& x, int axis, bool keepdim = false);
Var mean_axis(const Var& x, int axis, bool keepdim = false);
Var logsumexp_axis(const Var& x, int axis, bool keepdim = false);
Var softmax_axis(const Var& x, int axis);
Var log_softmax_axis(const Var& x, int axis);
// Softmax along `axis` where positions with masked[k] == true get exactly zero
// weight and are excluded from the normaliser. Throws if every position is
// masked.
Var masked_softmax(const Var& x, int axis, const std::vector<bool>& masked);

// Shape manipulation.
Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);  // rank-2 only
Var permute(const Var& x, const std::vector<int>& perm);
Var concat(const std::vector<Var>& xs, int axis);
Var narrow(const Var& x, int axis, int start, int length);
// Rows of a rank-2 tensor (or slices along axis 0 in general).
Var index_select(const Var& x, const std::vector<int>& indices);
Var broadcast_to(const Var& x, const Shape& shape);

// Linear algebra.
Var matmul(const Var& a, const Var& b);  // [m,k] x [k,n]

// Cosine similarity of two equal-length vectors (any shape, flattened).
Var cosine(const Var& a, const Var& b);

}  // namespace objgan::ag
