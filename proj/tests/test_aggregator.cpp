#include <cmath>
#include <random>

#include <doctest.h>

#include "smlstm/aggregator.hpp"
#include "smlstm/errors.hpp"
#include "smlstm/model.hpp"

using namespace smlstm;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.grid_rows = 2;
    cfg.grid_cols = 2;
    cfg.image_feat_dim = 5;
    cfg.image_ctx_dim = 6;
    cfg.sentence_len = 4;
    cfg.blstm_hidden = 3;
    cfg.sentence_ctx_dim = 4;
    cfg.hidden_dim = 4;
    cfg.attention_dim = 4;
    cfg.sim_dim = 4;
    cfg.embed_dim = 3;
    cfg.vocab_size = 6;
    cfg.timesteps = 2;
    return cfg;
}

struct PairFixture {
    ModelConfig cfg;
    ParamStore params;
    FeatureGrid grid;
    EncodedSentence snt;

    explicit PairFixture(std::uint64_t seed, AttentionVariant variant = AttentionVariant::Full) {
        cfg = tiny_config();
        cfg.variant = variant;
        // Fully random parameters: the freshly initialized store zeroes biases
        // and readout vectors, which would blind the saliency to its inputs.
        params = init_params(cfg, seed);
        std::mt19937_64 rng(seed + 1000);
        for (auto& [name, t] : params) t = Tensor::uniform(t.shape(), rng, -0.5, 0.5);
        grid.candidates = Tensor::uniform({cfg.image_candidates(), cfg.image_feat_dim}, rng, -1, 1);
        grid.context = Tensor::uniform({cfg.image_ctx_dim}, rng, -1, 1);
        grid.grid_rows = cfg.grid_rows;
        grid.grid_cols = cfg.grid_cols;
        snt.candidates = Tensor::uniform({cfg.sentence_len, cfg.word_feat_dim()}, rng, -1, 1);
        snt.context = Tensor::uniform({cfg.sentence_ctx_dim}, rng, -1, 1);
        snt.mask = {true, true, true, false};
        for (std::size_t k = 0; k < cfg.word_feat_dim(); ++k) snt.candidates.at(3, k) = 0.0;
    }
};

}  // namespace

TEST_CASE("attended summary selects a single row under a one-hot map") {
    Graph g;
    Value cands = g.input(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
    Value onehot = g.input(Tensor({3}, {0, 1, 0}));
    Tensor out = g.value(build_attended_summary(g, onehot, cands));
    CHECK(out[0] == 3.0);
    CHECK(out[1] == 4.0);
}

TEST_CASE("attended summary under a uniform map is the row mean") {
    Graph g;
    Value cands = g.input(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
    Value uniform = g.input(Tensor::full({3}, 1.0 / 3.0));
    Tensor out = g.value(build_attended_summary(g, uniform, cands));
    CHECK(out[0] == doctest::Approx(3.0));
    CHECK(out[1] == doctest::Approx(4.0));
}

TEST_CASE("attended summary stays inside the candidates' convex hull") {
    std::mt19937_64 rng(5);
    Graph g;
    Tensor c = Tensor::uniform({4, 3}, rng, -2, 2);
    Tensor w({4}, {0.1, 0.2, 0.3, 0.4});
    Tensor out = g.value(build_attended_summary(g, g.input(w), g.input(c)));
    for (std::size_t j = 0; j < 3; ++j) {
        double lo = c.at(0, j), hi = c.at(0, j);
        for (std::size_t i = 1; i < 4; ++i) {
            lo = std::min(lo, c.at(i, j));
            hi = std::max(hi, c.at(i, j));
        }
        CHECK(out[j] >= lo - 1e-12);
        CHECK(out[j] <= hi + 1e-12);
    }
}

TEST_CASE("attended summary rejects mismatched shapes") {
    Graph g;
    Value cands = g.input(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
    Value wrong = g.input(Tensor({4}, {1, 0, 0, 0}));
    CHECK_THROWS_AS(build_attended_summary(g, wrong, cands), DimensionError);
}

TEST_CASE("local similarity matches a plain evaluation and stays in (0,1)") {
    PairFixture f(21);
    Graph g(&f.params);
    std::mt19937_64 rng(3);
    Tensor a = Tensor::uniform({f.cfg.image_feat_dim}, rng, -1, 1);
    Tensor b = Tensor::uniform({f.cfg.word_feat_dim()}, rng, -1, 1);
    Tensor out = g.value(build_local_similarity(g, g.input(a), g.input(b)));
    REQUIRE(out.size() == f.cfg.sim_dim);
    const Tensor& Wi = f.params.at("sim.W_img");
    const Tensor& Ws = f.params.at("sim.W_snt");
    const Tensor& bias = f.params.at("sim.b");
    for (std::size_t j = 0; j < f.cfg.sim_dim; ++j) {
        double acc = bias[j];
        for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * Wi.at(k, j);
        for (std::size_t k = 0; k < b.size(); ++k) acc += b[k] * Ws.at(k, j);
        CHECK(out[j] == doctest::Approx(sigmoid_clamped(acc)).epsilon(1e-12));
        CHECK(out[j] > 0.0);
        CHECK(out[j] < 1.0);
    }
}

TEST_CASE("aggregation LSTM with saturated forget gate holds its cell state") {
    ModelConfig cfg = tiny_config();
    ParamStore params = init_params(cfg, 30);
    // Force f ~ 1 and i ~ 0: the cell state must pass through unchanged.
    for (const char* gate : {"i", "f"}) {
        const double fill = gate[0] == 'f' ? 100.0 : -100.0;
        for (const char* kind : {"W_", "U_"}) {
            Tensor& t = params.at(std::string("agg.") + kind + gate);
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
        }
        Tensor& b = params.at(std::string("agg.b_") + gate);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = fill;
    }
    Graph g(&params);
    Tensor c0({cfg.hidden_dim}, {0.3, -0.7, 1.1, 0.0});
    LstmState prev{g.input(Tensor::zeros({cfg.hidden_dim})), g.input(c0)};
    std::mt19937_64 rng(8);
    LstmState next = build_aggregate_step(g, g.input(Tensor::uniform({cfg.sim_dim}, rng, -1, 1)), prev);
    Tensor c1 = g.value(next.c);
    for (std::size_t j = 0; j < cfg.hidden_dim; ++j)
        CHECK(c1[j] == doctest::Approx(c0[j]).epsilon(1e-12));
}

TEST_CASE("matching score matches a plain evaluation") {
    PairFixture f(31);
    Graph g(&f.params);
    std::mt19937_64 rng(4);
    Tensor h = Tensor::uniform({f.cfg.hidden_dim}, rng, -1, 1);
    const double s = g.value(build_matching_score(g, g.input(h)))[0];

    const Tensor& W = f.params.at("score.W_hh");
    const Tensor& bh = f.params.at("score.b_h");
    const Tensor& w = f.params.at("score.w_hs");
    double acc = f.params.at("score.b_s")[0];
    for (std::size_t j = 0; j < f.cfg.hidden_dim; ++j) {
        double z = bh[j];
        for (std::size_t k = 0; k < f.cfg.hidden_dim; ++k) z += h[k] * W.at(k, j);
        acc += sigmoid_clamped(z) * w[j];
    }
    CHECK(s == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("pair forward: trace shape, normalization and zero-step rejection") {
    PairFixture f(40);
    PairForwardResult r = forward_pair(f.grid, f.snt, f.params, f.cfg);
    REQUIRE(r.trace.size() == f.cfg.timesteps);
    REQUIRE(r.local_similarities.size() == f.cfg.timesteps);
    for (const SaliencyMap& m : r.trace) {
        double ps = 0.0, qs = 0.0;
        for (std::size_t i = 0; i < m.image.size(); ++i) ps += m.image[i];
        for (std::size_t j = 0; j < m.sentence.size(); ++j) qs += m.sentence[j];
        CHECK(ps == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(qs == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m.sentence[3] == 0.0);
    }
    ModelConfig bad = f.cfg;
    bad.timesteps = 0;
    CHECK_THROWS_AS(forward_pair(f.grid, f.snt, f.params, bad), ContractError);
}

TEST_CASE("a two-step unroll equals two manual steps") {
    PairFixture f(41);
    f.cfg.timesteps = 2;
    PairForwardResult whole = forward_pair(f.grid, f.snt, f.params, f.cfg);

    // Manual unroll on one graph, reusing the library building blocks.
    Graph g(&f.params);
    ImageNodes img = build_image_input(g, f.grid);
    SentenceNodes snt{g.input(f.snt.candidates), g.input(f.snt.context), f.snt.mask};
    LstmState state = lstm_zero_state(g, f.cfg.hidden_dim);
    for (std::size_t t = 0; t < 2; ++t) {
        SaliencyNodes sal = build_step_saliency(g, img, snt, state.h, f.cfg.variant);
        Value is = build_attended_summary(g, sal.image, img.candidates);
        Value ss = build_attended_summary(g, sal.sentence, snt.candidates);
        state = build_aggregate_step(g, build_local_similarity(g, is, ss), state);
    }
    const double manual = g.value(build_matching_score(g, state.h))[0];
    CHECK(whole.score == doctest::Approx(manual).epsilon(1e-14));
}

TEST_CASE("the score is invariant to reordering candidate cells") {
    // Saliency is computed from the candidates themselves, so permuting the
    // rows permutes the weights identically and the weighted sum is
    // unchanged. This holds for uniform pooling and for attention alike.
    for (AttentionVariant variant : {AttentionVariant::Mean, AttentionVariant::Full}) {
        PairFixture f(42, variant);
        double before = forward_pair(f.grid, f.snt, f.params, f.cfg).score;
        FeatureGrid permuted = f.grid;
        for (std::size_t k = 0; k < f.cfg.image_feat_dim; ++k) {
            std::swap(permuted.candidates.at(0, k), permuted.candidates.at(3, k));
            std::swap(permuted.candidates.at(1, k), permuted.candidates.at(2, k));
        }
        double after = forward_pair(permuted, f.snt, f.params, f.cfg).score;
        CAPTURE(to_string(variant));
        CHECK(before == doctest::Approx(after).epsilon(1e-12));
    }
}

TEST_CASE("only the full variant reweights an outlier cell") {
    // Boost one cell far away from the rest: uniform pooling moves linearly
    // with it, attention changes that cell's weight as well.
    PairFixture mean(42, AttentionVariant::Mean);
    PairFixture full(42, AttentionVariant::Full);
    auto weight_of_cell0 = [](const PairFixture& f) {
        return forward_pair(f.grid, f.snt, f.params, f.cfg).trace[0].image[0];
    };
    const double w_before = weight_of_cell0(full);
    for (std::size_t k = 0; k < full.cfg.image_feat_dim; ++k) {
        full.grid.candidates.at(0, k) += 5.0;
        mean.grid.candidates.at(0, k) += 5.0;
    }
    CHECK(weight_of_cell0(full) != w_before);
    CHECK(weight_of_cell0(mean) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("mean variant ignores attention parameters entirely") {
    PairFixture f(43, AttentionVariant::Mean);
    double base = forward_pair(f.grid, f.snt, f.params, f.cfg).score;
    for (auto& [name, t] : f.params)
        if (name.rfind("att.", 0) == 0)
            for (std::size_t i = 0; i < t.size(); ++i) t[i] += 3.0;
    CHECK(forward_pair(f.grid, f.snt, f.params, f.cfg).score == base);
}

TEST_CASE("context-only variant seeds the initial state from both contexts") {
    PairFixture f(44, AttentionVariant::ContextOnly);
    REQUIRE(f.params.count("init.W") == 1);
    double base = forward_pair(f.grid, f.snt, f.params, f.cfg).score;
    FeatureGrid moved = f.grid;
    for (std::size_t i = 0; i < moved.context.size(); ++i) moved.context[i] += 1.0;
    CHECK(forward_pair(moved, f.snt, f.params, f.cfg).score != base);
}

TEST_CASE("the first T steps of a T+1 unroll are unchanged") {
    PairFixture f(45);
    f.cfg.timesteps = 2;
    PairForwardResult two = forward_pair(f.grid, f.snt, f.params, f.cfg);
    f.cfg.timesteps = 3;
    PairForwardResult three = forward_pair(f.grid, f.snt, f.params, f.cfg);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < two.local_similarities[t].size(); ++i)
            CHECK(two.local_similarities[t][i] == three.local_similarities[t][i]);
}

TEST_CASE("end-to-end pair gradients agree with finite differences") {
    for (AttentionVariant variant : {AttentionVariant::Full, AttentionVariant::Mean,
                                     AttentionVariant::NoContext, AttentionVariant::ContextOnly}) {
        PairFixture f(50, variant);
        auto build = [&](Graph& g) {
            ImageNodes img = build_image_input(g, f.grid);
            SentenceNodes snt{g.input(f.snt.candidates), g.input(f.snt.context), f.snt.mask};
            return build_pair_forward(g, img, snt, f.cfg).score;
        };
        Graph g(&f.params);
        GradientStore analytic = g.backward(build(g));
        GradientStore fd = Graph::finite_difference_gradient(
            [&](const ParamStore& p) {
                Graph h(&p);
                return h.value(build(h))[0];
            },
            f.params);
        double worst = 0.0;
        for (const auto& [name, grad] : fd) {
            // Only blocks reachable from the pair score get analytic entries;
            // encoder blocks see constant inputs here and must read zero.
            const Tensor& a =
                analytic.count(name) ? analytic.at(name) : Tensor::zeros(grad.shape());
            for (std::size_t i = 0; i < grad.size(); ++i) {
                const double denom = std::max(std::fabs(a[i]), std::fabs(grad[i]));
                if (denom < 1e-7) continue;
                worst = std::max(worst, std::fabs(a[i] - grad[i]) / denom);
            }
        }
        CAPTURE(to_string(variant));
        // Bound set by central-difference truncation error at this scale.
        CHECK(worst < 1e-4);
    }
}
