#include <cmath>
#include <random>

#include <doctest.h>

#include "smlstm/errors.hpp"
#include "smlstm/objective.hpp"

using namespace smlstm;

namespace {

SaliencyTrace uniform_trace(std::size_t steps, std::size_t cells, std::size_t words) {
    SaliencyTrace trace;
    for (std::size_t t = 0; t < steps; ++t)
        trace.push_back({Tensor::full({cells}, 1.0 / static_cast<double>(cells)),
                         Tensor::full({words}, 1.0 / static_cast<double>(words))});
    return trace;
}

}  // namespace

TEST_CASE("negative sampling: exhaustive, partial and degenerate cases") {
    auto all = sample_negatives(4, 3, 1);
    REQUIRE(all.size() == 4);
    CHECK(all[2] == std::vector<std::size_t>{0, 1, 3});

    auto partial = sample_negatives(10, 4, 7);
    for (std::size_t i = 0; i < 10; ++i) {
        REQUIRE(partial[i].size() == 4);
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(partial[i][j] != i);
            if (j > 0) CHECK(partial[i][j] > partial[i][j - 1]);  // sorted, no repeats
        }
    }
    CHECK(sample_negatives(10, 4, 7) == partial);  // deterministic in the seed

    CHECK_THROWS_AS(sample_negatives(1, 0, 0), ContractError);
    CHECK_THROWS_AS(sample_negatives(3, 3, 0), ContractError);
}

TEST_CASE("hinge is zero when every margin is satisfied") {
    Tensor s({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(structured_hinge(s, 0.2, 2, 0) == 0.0);
}

TEST_CASE("hinge on an all-equal matrix pays the margin everywhere") {
    // N=2, one negative each: 2 anchors x 2 directions x m.
    Tensor s = Tensor::full({2, 2}, 0.7);
    CHECK(structured_hinge(s, 0.2, 1, 0) == doctest::Approx(0.8));
}

TEST_CASE("hinge matches a brute-force enumeration on a 3x3 matrix") {
    Tensor s({3, 3}, {1, 0.9, 0, 0.2, 1, 0.5, 0, 0, 1});
    const double m = 0.2;
    double expected = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 3; ++k) {
            if (i == k) continue;
            expected += std::max(0.0, m - s.at(i, i) + s.at(i, k));
            expected += std::max(0.0, m - s.at(i, i) + s.at(k, i));
        }
    CHECK(structured_hinge(s, m, 2, 7) == doctest::Approx(expected));
    // Only s_01 = 0.9 violates: once against anchor 0 and once against
    // anchor 1, each by 0.1.
    CHECK(expected == doctest::Approx(0.2));
}

TEST_CASE("hinge is invariant to shifting all scores") {
    std::mt19937_64 rng(3);
    Tensor s = Tensor::uniform({4, 4}, rng, -1, 1);
    const double base = structured_hinge(s, 0.2, 3, 5);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += 13.5;
    CHECK(structured_hinge(s, 0.2, 3, 5) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("sampled hinge never exceeds the exhaustive hinge") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor s = Tensor::uniform({6, 6}, rng, -1, 1);
        const double full = structured_hinge(s, 0.2, 5, 0);
        for (std::uint64_t seed = 0; seed < 5; ++seed)
            CHECK(structured_hinge(s, 0.2, 2, seed) <= full + 1e-12);
    }
}

TEST_CASE("graph hinge equals the plain hinge and has the kink convention") {
    std::mt19937_64 rng(11);
    Tensor s = Tensor::uniform({3, 3}, rng, -1, 1);
    Graph g;
    std::vector<std::vector<Value>> nodes(3, std::vector<Value>(3));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 3; ++k) nodes[i][k] = g.input(Tensor::scalar(s.at(i, k)));
    Value loss = build_structured_hinge(g, nodes, 0.2, 2, 4);
    CHECK(g.value(loss)[0] == doctest::Approx(structured_hinge(s, 0.2, 2, 4)).epsilon(1e-12));

    // Exactly-zero hinge argument: subgradient convention gives gradient 0.
    // All values are exactly representable so the argument is exactly 0.
    std::vector<std::vector<Value>> exact(2, std::vector<Value>(2));
    ParamStore p;
    p["s01"] = Tensor::scalar(0.5);
    Graph g3(&p);
    exact[0][0] = g3.input(Tensor::scalar(0.75));
    exact[0][1] = g3.param("s01");  // 0.25 - 0.75 + 0.5 = 0 at the kink
    exact[1][0] = g3.input(Tensor::scalar(0.0));
    exact[1][1] = g3.input(Tensor::scalar(0.875));
    GradientStore grads = g3.backward(build_structured_hinge(g3, exact, 0.25, 1, 0));
    CHECK(grads["s01"][0] == 0.0);
}

TEST_CASE("penalty: published example, zero lambda and perfect spreading") {
    CHECK(doubly_stochastic_penalty({uniform_trace(1, 4, 2)}, 0.0) == 0.0);
    // T=1 uniform, I=4, J=2: image 4*(1-1/4)=3, sentence 2*(1-1/2)=1.
    CHECK(doubly_stochastic_penalty({uniform_trace(1, 4, 2)}, 100.0) == doctest::Approx(400.0));

    // Permutation trace: one-hot per step on both sides, every candidate
    // visited exactly once, so the penalty vanishes.
    SaliencyTrace perm;
    for (std::size_t t = 0; t < 3; ++t) {
        Tensor img = Tensor::zeros({3});
        Tensor snt = Tensor::zeros({3});
        img[t] = 1.0;
        snt[2 - t] = 1.0;
        perm.push_back({img, snt});
    }
    CHECK(doubly_stochastic_penalty({perm}, 100.0) == doctest::Approx(0.0));
}

TEST_CASE("signed penalty is constant in the saliency; squared is not") {
    // Both traces are normalized per step, so the signed form gives the
    // same value regardless of where the mass sits.
    SaliencyTrace peaked;
    for (std::size_t t = 0; t < 2; ++t) {
        Tensor img = Tensor::zeros({4});
        img[0] = 1.0;
        peaked.push_back({img, Tensor::full({2}, 0.5)});
    }
    SaliencyTrace spread = uniform_trace(2, 4, 2);
    const double a = doubly_stochastic_penalty({peaked}, 100.0, RegularizerForm::Signed);
    const double b = doubly_stochastic_penalty({spread}, 100.0, RegularizerForm::Signed);
    CHECK(a == doctest::Approx(b));

    const double sa = doubly_stochastic_penalty({peaked}, 100.0, RegularizerForm::Squared);
    const double sb = doubly_stochastic_penalty({spread}, 100.0, RegularizerForm::Squared);
    CHECK(sa > sb);  // concentrated attention pays more under the squared form
}

TEST_CASE("graph penalty matches the plain penalty for both forms") {
    std::mt19937_64 rng(13);
    // Random normalized maps over 2 timesteps.
    auto random_map = [&](std::size_t n) {
        Tensor t = Tensor::uniform({n}, rng, 0.05, 1.0);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += t[i];
        for (std::size_t i = 0; i < n; ++i) t[i] /= s;
        return t;
    };
    SaliencyTrace trace;
    for (int t = 0; t < 2; ++t) trace.push_back({random_map(4), random_map(3)});

    for (RegularizerForm form : {RegularizerForm::Signed, RegularizerForm::Squared}) {
        Graph g;
        std::vector<SaliencyNodes> nodes;
        for (const SaliencyMap& m : trace)
            nodes.push_back({g.input(m.image), g.input(m.sentence)});
        const double graph_val = g.value(build_doubly_stochastic_penalty(g, {nodes}, 100.0, form))[0];
        const double plain_val = doubly_stochastic_penalty({trace}, 100.0, form);
        CHECK(graph_val == doctest::Approx(plain_val).epsilon(1e-12));
    }
}

TEST_CASE("total loss composes hinge and penalty exactly") {
    std::mt19937_64 rng(17);
    Tensor s = Tensor::uniform({3, 3}, rng, -1, 1);
    std::vector<SaliencyTrace> traces{uniform_trace(2, 4, 3), uniform_trace(2, 4, 3),
                                      uniform_trace(2, 4, 3)};
    RunConfig cfg;
    cfg.margin = 0.2;
    cfg.lambda = 100.0;
    cfg.negatives_per_positive = 100;  // clamps to n-1 = 2
    LossBreakdown loss = total_loss(s, traces, cfg, 3);
    CHECK(loss.hinge == doctest::Approx(structured_hinge(s, 0.2, 2, 3)));
    CHECK(loss.regularizer == doctest::Approx(doubly_stochastic_penalty(traces, 100.0)));
    CHECK(loss.total == loss.hinge + loss.regularizer);

    cfg.lambda = 0.0;
    LossBreakdown plain = total_loss(s, traces, cfg, 3);
    CHECK(plain.regularizer == 0.0);
    CHECK(plain.total == plain.hinge);
}
