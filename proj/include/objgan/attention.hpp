#pragma once

#include <vector>

#include "objgan/core/conv.hpp"
#include "objgan/core/ops.hpp"
#include "objgan/types.hpp"

namespace objgan::attn {

using ag::Var;

struct Attended {
  Var context;  // one context vector per query
  Var beta;     // [queries, Ts], rows sum to 1, PAD columns 0
};

// Queries are the columns of h [C,Q] (flattened patches), words the columns of
// e [C,Ts]. Returns context [C,Q] and beta [Q,Ts].
Attended grid_attention(const Var& h, const Var& e, const std::vector<bool>& pad_mask);

// Feature-map form: h [C,H,W] -> context [C,H,W], beta [H*W, Ts].
Attended grid_attention_map(const Var& h, const Var& e, const std::vector<bool>& pad_mask);

// Label queries [T,N_l] against word keys [Ts,N_l]; contexts are beta-weighted
// sums of the value columns [C,Ts]. Returns context [T,C] and beta [T,Ts].
Attended object_attention(const Var& label_queries, const Var& word_keys, const Var& values,
                          const std::vector<bool>& pad_mask);

// out[c,p] = max_t M_t(p) * ctx[t,c]; ctx [T,C], masks [T,H,W] -> [C,H,W].
Var distribute_contexts(const Var& ctx, const Var& masks, int channels);
Var distribute_labels(const Var& label_emb, const Var& masks, int channels);

// Stack masks into [T,size,size], area-averaging from their native resolution.
Var stack_masks(const std::vector<Mask>& masks, int size);

// One-hot class-channel map [N_c,H,W]: channel l holds max of the masks of
// objects labelled l.
Var class_channel_map(const std::vector<int>& labels, const Var& masks, int num_classes);

}  // namespace objgan::attn
