#pragma once

#include <vector>

#include "smlstm/attention.hpp"
#include "smlstm/config.hpp"
#include "smlstm/encoders.hpp"
#include "smlstm/graph.hpp"

namespace smlstm {

/// Saliency-weighted sum of candidate rows.
Value build_attended_summary(Graph& g, Value saliency, Value candidates);

/// Local similarity of the attended pair:
///   s_t = sig(img_summary W_img + snt_summary W_snt + b)
Value build_local_similarity(Graph& g, Value image_summary, Value sentence_summary);

/// One step of the similarity-aggregation LSTM (cell "agg").
LstmState build_aggregate_step(Graph& g, Value local_sim, const LstmState& prev);

/// Matching score s = w_hs . sig(h_T W_hh + b_h) + b_s.
Value build_matching_score(Graph& g, Value h_final);

struct PairNodes {
    Value score;                      // scalar
    std::vector<SaliencyNodes> saliency;  // length T
    std::vector<Value> local_sims;        // length T
};

/// Full T-step unroll for one image-sentence pair: saliency (or masked
/// uniform pooling for the mean variant) -> attended summaries -> local
/// similarity -> aggregation step; then the score head.
PairNodes build_pair_forward(Graph& g, const ImageNodes& img, const SentenceNodes& snt,
                             const ModelConfig& cfg);

/// Per-pair forward result with plain tensors, for evaluation and export.
struct PairForwardResult {
    double score = 0.0;
    SaliencyTrace trace;
    std::vector<Tensor> local_similarities;
};

/// Evaluates one pair on a throwaway graph from already-encoded inputs.
PairForwardResult forward_pair(const FeatureGrid& img, const EncodedSentence& snt,
                               const ParamStore& params, const ModelConfig& cfg);

}  // namespace smlstm
