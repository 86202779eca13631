#include "objgan/attention.hpp"

#include <stdexcept>

#include "objgan/toyscenes.hpp"

namespace objgan::attn {

using namespace objgan::ag;

Attended grid_attention(const Var& h, const Var& e, const std::vector<bool>& pad_mask) {
  if (h.rank() != 2 || e.rank() != 2 || h.dim(0) != e.dim(0))
    throw ShapeError("grid_attention: " + shape_str(h.shape()) + " vs " + shape_str(e.shape()));
  Var s = matmul(transpose(h), e);  // [Q, Ts]
  Var beta = masked_softmax(s, 1, pad_mask);
  return {matmul(e, transpose(beta)), beta};
}

Attended grid_attention_map(const Var& h, const Var& e, const std::vector<bool>& pad_mask) {
  if (h.rank() != 3) throw ShapeError("grid_attention_map expects [C,H,W]");
  const int c = h.dim(0), hh = h.dim(1), ww = h.dim(2);
  auto r = grid_attention(reshape(h, {c, hh * ww}), e, pad_mask);
  r.context = reshape(r.context, {c, hh, ww});
  return r;
}

Attended object_attention(const Var& label_queries, const Var& word_keys, const Var& values,
                          const std::vector<bool>& pad_mask) {
  if (label_queries.dim(1) != word_keys.dim(1)) throw ShapeError("object_attention: embedding widths differ");
  if (values.dim(1) != word_keys.dim(0)) throw ShapeError("object_attention: value/key count mismatch");
  const int T = label_queries.dim(0), Ts = word_keys.dim(0), C = values.dim(0);
  if (T == 0) return {zeros({0, C}), zeros({0, Ts})};
  Var s = matmul(label_queries, transpose(word_keys));  // [T, Ts]
  Var beta = masked_softmax(s, 1, pad_mask);
  return {matmul(beta, transpose(values)), beta};
}

Var distribute_contexts(const Var& ctx, const Var& masks, int channels) {
  if (masks.rank() != 3) throw ShapeError("masks must be [T,H,W]");
  return distribute_max(ctx, masks, channels, masks.dim(1), masks.dim(2));
}

Var distribute_labels(const Var& label_emb, const Var& masks, int channels) {
  return distribute_contexts(label_emb, masks, channels);
}

Var stack_masks(const std::vector<Mask>& masks, int size) {
  std::vector<double> data;
  data.reserve(masks.size() * size * size);
  for (const auto& m : masks) {
    if (m.height % size || m.width != m.height) throw std::invalid_argument("stack_masks: incompatible size");
    const Mask d = m.height == size ? m : toy::downsample(m, m.height / size);
    data.insert(data.end(), d.data.begin(), d.data.end());
  }
  return constant({static_cast<int>(masks.size()), size, size}, std::move(data));
}

Var class_channel_map(const std::vector<int>& labels, const Var& masks, int num_classes) {
  const int T = static_cast<int>(labels.size());
  std::vector<double> onehot(static_cast<std::size_t>(T) * num_classes, 0.0);
  for (int t = 0; t < T; ++t) {
    if (labels[t] < 0 || labels[t] >= num_classes) throw std::out_of_range("class_channel_map: label");
    onehot[static_cast<std::size_t>(t) * num_classes + labels[t]] = 1.0;
  }
  return distribute_max(constant({T, num_classes}, std::move(onehot)), masks, num_classes, masks.dim(1), masks.dim(2));
}

}  // namespace objgan::attn
