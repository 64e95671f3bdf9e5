#include "smlstm/aggregator.hpp"

#include "smlstm/errors.hpp"

namespace smlstm {

Value build_attended_summary(Graph& g, Value saliency, Value candidates) {
    const Tensor& w = g.value(saliency);
    const Tensor& c = g.value(candidates);
    if (w.rank() != 1 || c.rank() != 2 || w.dim(0) != c.rows()) {
        throw DimensionError("attended_summary: saliency " + w.shape_str() +
                             " does not match candidates " + c.shape_str());
    }
    return g.matmul(saliency, candidates);
}

Value build_local_similarity(Graph& g, Value image_summary, Value sentence_summary) {
    Value pre = g.add(g.add(g.matmul(image_summary, g.param("sim.W_img")),
                            g.matmul(sentence_summary, g.param("sim.W_snt"))),
                      g.param("sim.b"));
    return g.sigmoid(pre);
}

LstmState build_aggregate_step(Graph& g, Value local_sim, const LstmState& prev) {
    return lstm_step(g, "agg", local_sim, prev);
}

Value build_matching_score(Graph& g, Value h_final) {
    Value hidden = g.sigmoid(g.affine(h_final, g.param("score.W_hh"), g.param("score.b_h")));
    return g.add(g.matmul(hidden, g.param("score.w_hs")), g.param("score.b_s"));
}

namespace {

Tensor uniform_image_map(std::size_t cells) {
    return Tensor::full({cells}, 1.0 / static_cast<double>(cells));
}

Tensor uniform_sentence_map(const std::vector<bool>& mask) {
    std::size_t valid = 0;
    for (bool b : mask)
        if (b) ++valid;
    Tensor t = Tensor::zeros({mask.size()});
    for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j]) t[j] = 1.0 / static_cast<double>(valid);
    return t;
}

LstmState initial_state(Graph& g, const ImageNodes& img, const SentenceNodes& snt,
                        const ModelConfig& cfg) {
    if (cfg.variant == AttentionVariant::ContextOnly) {
        // This variant drops the attention scheme, so the global contexts
        // enter through the initial aggregation state instead.
        Value h0 = g.sigmoid(g.affine(g.concat(img.context, snt.context), g.param("init.W"),
                                      g.param("init.b")));
        return {h0, g.input(Tensor::zeros({cfg.hidden_dim}))};
    }
    return lstm_zero_state(g, cfg.hidden_dim);
}

}  // namespace

PairNodes build_pair_forward(Graph& g, const ImageNodes& img, const SentenceNodes& snt,
                             const ModelConfig& cfg) {
    if (cfg.timesteps == 0) throw ContractError("forward_pair: timesteps must be >= 1");
    const std::size_t cells = g.value(img.candidates).rows();

    PairNodes out;
    LstmState state = initial_state(g, img, snt, cfg);
    for (std::size_t t = 0; t < cfg.timesteps; ++t) {
        SaliencyNodes sal;
        if (cfg.variant == AttentionVariant::Mean) {
            // Fixed uniform pooling, no attention parameters involved.
            sal.image = g.input(uniform_image_map(cells));
            sal.sentence = g.input(uniform_sentence_map(snt.mask));
        } else {
            sal = build_step_saliency(g, img, snt, state.h, cfg.variant);
        }
        Value img_summary = build_attended_summary(g, sal.image, img.candidates);
        Value snt_summary = build_attended_summary(g, sal.sentence, snt.candidates);
        Value local = build_local_similarity(g, img_summary, snt_summary);
        state = build_aggregate_step(g, local, state);
        out.saliency.push_back(sal);
        out.local_sims.push_back(local);
    }
    out.score = build_matching_score(g, state.h);
    return out;
}

PairForwardResult forward_pair(const FeatureGrid& img, const EncodedSentence& snt,
                               const ParamStore& params, const ModelConfig& cfg) {
    Graph g(&params);
    ImageNodes img_nodes = build_image_input(g, img);
    SentenceNodes snt_nodes{g.input(snt.candidates), g.input(snt.context), snt.mask};
    PairNodes nodes = build_pair_forward(g, img_nodes, snt_nodes, cfg);
    PairForwardResult out;
    out.score = g.value(nodes.score)[0];
    for (std::size_t t = 0; t < cfg.timesteps; ++t) {
        out.trace.push_back({g.value(nodes.saliency[t].image), g.value(nodes.saliency[t].sentence)});
        out.local_similarities.push_back(g.value(nodes.local_sims[t]));
    }
    return out;
}

}  // namespace smlstm
