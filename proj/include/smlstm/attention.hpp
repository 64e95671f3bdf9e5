#pragma once

#include <vector>

#include "smlstm/config.hpp"
#include "smlstm/encoders.hpp"
#include "smlstm/graph.hpp"

namespace smlstm {

/// Per-timestep saliency distributions over image cells and words.
struct SaliencyMap {
    Tensor image;     // [I], sums to 1
    Tensor sentence;  // [J], sums to 1, exact zeros at masked positions
};

using SaliencyTrace = std::vector<SaliencyMap>;

struct SaliencyNodes {
    Value image;
    Value sentence;
};

/// Three-way context-modulated attention logits for one modality:
///   logit_k = w_out . ( sig(ctx W_ctx + b_ctx) + sig(cand_k W_cand + b_cand)
///                     + sig(h_prev W_hid + b_hid) ) + b_out
/// NoContext drops the context branch. ContextOnly replaces the candidate
/// branch by its (mask-weighted) mean over k, so all logits coincide and
/// the saliency degenerates to uniform. Mean is rejected: it bypasses
/// attention entirely.
///
/// `mask` weights the ContextOnly candidate mean; pass an empty vector for
/// the image side (all candidates count).
Value build_instance_logits(Graph& g, const std::string& side, Value context,
                            Value candidates, Value h_prev, AttentionVariant variant,
                            const std::vector<bool>& mask = {});

/// Masked stable softmax of the logits.
Value build_saliency(Graph& g, Value logits, const std::vector<bool>& mask);

/// Both saliency maps for one timestep. Image side uses context m and
/// candidates a_i; sentence side uses context n, candidates w_j and the
/// padding mask.
SaliencyNodes build_step_saliency(Graph& g, const ImageNodes& img, const SentenceNodes& snt,
                                  Value h_prev, AttentionVariant variant);

}  // namespace smlstm
