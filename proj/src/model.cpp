#include "smlstm/model.hpp"

#include "smlstm/errors.hpp"

namespace smlstm {

namespace {

// Glorot-style uniform bounds for matrices keep pre-activations at unit scale
// even at small widths; vectors (biases and readout weights) start at zero.
void add(ParamStore& store, std::mt19937_64& rng, const std::string& name,
         std::vector<std::size_t> shape) {
    if (shape.size() == 2) {
        const double bound =
            std::sqrt(6.0 / (static_cast<double>(shape[0]) + static_cast<double>(shape[1])));
        store.emplace(name, Tensor::uniform(std::move(shape), rng, -bound, bound));
    } else {
        store.emplace(name, Tensor::zeros(std::move(shape)));
    }
}

void add_attention_params(ParamStore& store, std::mt19937_64& rng, const std::string& prefix,
                          std::size_t ctx_dim, std::size_t cand_dim, const ModelConfig& cfg) {
    const std::size_t a = cfg.attention_dim;
    add(store, rng, prefix + ".W_ctx", {ctx_dim, a});
    add(store, rng, prefix + ".b_ctx", {a});
    add(store, rng, prefix + ".W_cand", {cand_dim, a});
    add(store, rng, prefix + ".b_cand", {a});
    add(store, rng, prefix + ".W_hid", {cfg.hidden_dim, a});
    add(store, rng, prefix + ".b_hid", {a});
    add(store, rng, prefix + ".w_out", {a});
    add(store, rng, prefix + ".b_out", {1});
}
}  // namespace

void add_lstm_params(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                     std::size_t hid_dim, std::mt19937_64& rng) {
    for (const char* gate : {"i", "f", "c", "o"}) {
        add(store, rng, prefix + ".W_" + gate, {in_dim, hid_dim});
        add(store, rng, prefix + ".U_" + gate, {hid_dim, hid_dim});
        add(store, rng, prefix + ".b_" + gate, {hid_dim});
    }
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.vocab_size < 2) throw ConfigError("init_params: vocab_size must be >= 2");
    std::mt19937_64 rng(seed);
    ParamStore store;
    add(store, rng, "emb.table", {cfg.vocab_size, cfg.embed_dim});
    add_lstm_params(store, "enc.fw", cfg.embed_dim, cfg.blstm_hidden, rng);
    add_lstm_params(store, "enc.bw", cfg.embed_dim, cfg.blstm_hidden, rng);
    add_lstm_params(store, "enc.ctx", cfg.embed_dim, cfg.sentence_ctx_dim, rng);
    add_attention_params(store, rng, "att.img", cfg.image_ctx_dim, cfg.image_feat_dim, cfg);
    add_attention_params(store, rng, "att.snt", cfg.sentence_ctx_dim, cfg.word_feat_dim(), cfg);
    add(store, rng, "sim.W_img", {cfg.image_feat_dim, cfg.sim_dim});
    add(store, rng, "sim.W_snt", {cfg.word_feat_dim(), cfg.sim_dim});
    add(store, rng, "sim.b", {cfg.sim_dim});
    add_lstm_params(store, "agg", cfg.sim_dim, cfg.hidden_dim, rng);
    add(store, rng, "score.W_hh", {cfg.hidden_dim, cfg.hidden_dim});
    add(store, rng, "score.b_h", {cfg.hidden_dim});
    add(store, rng, "score.w_hs", {cfg.hidden_dim});
    add(store, rng, "score.b_s", {1});
    if (cfg.variant == AttentionVariant::ContextOnly) {
        add(store, rng, "init.W", {cfg.image_ctx_dim + cfg.sentence_ctx_dim, cfg.hidden_dim});
        add(store, rng, "init.b", {cfg.hidden_dim});
    }
    return store;
}

LstmState lstm_step(Graph& g, const std::string& prefix, Value x, const LstmState& prev) {
    auto gate = [&](const char* name) {
        return g.add(g.add(g.matmul(x, g.param(prefix + ".W_" + name)),
                           g.matmul(prev.h, g.param(prefix + ".U_" + name))),
                     g.param(prefix + ".b_" + name));
    };
    Value in_gate = g.sigmoid(gate("i"));
    Value forget_gate = g.sigmoid(gate("f"));
    Value out_gate = g.sigmoid(gate("o"));
    Value candidate = g.tanh(gate("c"));
    Value c = g.add(g.mul(forget_gate, prev.c), g.mul(in_gate, candidate));
    Value h = g.mul(out_gate, g.tanh(c));
    return {h, c};
}

LstmState lstm_zero_state(Graph& g, std::size_t hid_dim) {
    Value z = g.input(Tensor::zeros({hid_dim}));
    return {z, z};
}

void check_param_shapes(const ParamStore& params, const ModelConfig& cfg) {
    ParamStore expected = init_params(cfg, 0);
    if (params.size() != expected.size()) {
        throw ConfigError("parameter store has " + std::to_string(params.size()) +
                          " blocks, configuration expects " + std::to_string(expected.size()));
    }
    for (const auto& [name, tensor] : expected) {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("missing parameter block '" + name + "'");
        if (!(it->second.shape() == tensor.shape())) {
            throw ConfigError("parameter '" + name + "' has shape " + it->second.shape_str() +
                              ", configuration expects " + tensor.shape_str());
        }
    }
}

}  // namespace smlstm
