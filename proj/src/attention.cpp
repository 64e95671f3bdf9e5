#include "smlstm/attention.hpp"

#include "smlstm/errors.hpp"

namespace smlstm {

namespace {

/// Constant weight vector for a (masked) mean over candidate rows.
Tensor mean_weights(std::size_t count, const std::vector<bool>& mask) {
    Tensor w = Tensor::zeros({count});
    if (mask.empty()) {
        for (std::size_t i = 0; i < count; ++i) w[i] = 1.0 / static_cast<double>(count);
        return w;
    }
    std::size_t valid = 0;
    for (bool b : mask)
        if (b) ++valid;
    if (valid == 0) throw DegenerateInputError("attention: all candidates masked out");
    for (std::size_t i = 0; i < count; ++i)
        if (mask[i]) w[i] = 1.0 / static_cast<double>(valid);
    return w;
}

}  // namespace

Value build_instance_logits(Graph& g, const std::string& side, Value context,
                            Value candidates, Value h_prev, AttentionVariant variant,
                            const std::vector<bool>& mask) {
    if (variant == AttentionVariant::Mean)
        throw ContractError("instance_logits: the mean variant bypasses attention");
    const std::string p = "att." + side;
    const std::size_t count = g.value(candidates).rows();

    Value hid_branch = g.sigmoid(g.affine(h_prev, g.param(p + ".W_hid"), g.param(p + ".b_hid")));
    Value shared = hid_branch;
    if (variant != AttentionVariant::NoContext) {
        Value ctx_branch =
            g.sigmoid(g.affine(context, g.param(p + ".W_ctx"), g.param(p + ".b_ctx")));
        shared = g.add(ctx_branch, shared);
    }

    Value w_out = g.param(p + ".w_out");
    Value b_out = g.param(p + ".b_out");
    Value shared_logit = g.add(g.matmul(shared, w_out), b_out);

    if (variant == AttentionVariant::ContextOnly) {
        Value mean_cand = g.matmul(g.input(mean_weights(count, mask)), candidates);
        Value cand_branch =
            g.sigmoid(g.affine(mean_cand, g.param(p + ".W_cand"), g.param(p + ".b_cand")));
        return g.broadcast(g.add(g.matmul(cand_branch, w_out), shared_logit), count);
    }

    Value cand_branch =
        g.sigmoid(g.affine(candidates, g.param(p + ".W_cand"), g.param(p + ".b_cand")));
    return g.add(g.matmul(cand_branch, w_out), g.broadcast(shared_logit, count));
}

Value build_saliency(Graph& g, Value logits, const std::vector<bool>& mask) {
    return g.softmax_masked(logits, mask);
}

SaliencyNodes build_step_saliency(Graph& g, const ImageNodes& img, const SentenceNodes& snt,
                                  Value h_prev, AttentionVariant variant) {
    if (variant == AttentionVariant::Mean)
        throw ContractError("step_saliency: the mean variant bypasses attention");
    const std::size_t cells = g.value(img.candidates).rows();
    Value img_logits =
        build_instance_logits(g, "img", img.context, img.candidates, h_prev, variant);
    Value snt_logits = build_instance_logits(g, "snt", snt.context, snt.candidates, h_prev,
                                             variant, snt.mask);
    SaliencyNodes out;
    out.image = build_saliency(g, img_logits, std::vector<bool>(cells, true));
    out.sentence = build_saliency(g, snt_logits, snt.mask);
    return out;
}

}  // namespace smlstm
