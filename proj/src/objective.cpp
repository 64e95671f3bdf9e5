#include "smlstm/objective.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "smlstm/errors.hpp"

namespace smlstm {

std::vector<std::vector<std::size_t>> sample_negatives(std::size_t n, std::size_t negatives,
                                                       std::uint64_t seed) {
    if (n < 2) throw ContractError("sample_negatives: need at least 2 items, got " +
                                   std::to_string(n));
    if (negatives > n - 1)
        throw ContractError("sample_negatives: " + std::to_string(negatives) +
                            " negatives requested but only " + std::to_string(n - 1) +
                            " mismatched items exist");
    std::vector<std::vector<std::size_t>> out(n);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> pool;
        pool.reserve(n - 1);
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) pool.push_back(k);
        if (negatives == n - 1) {
            out[i] = std::move(pool);
            continue;
        }
        // Partial Fisher-Yates; deterministic in the seed.
        for (std::size_t j = 0; j < negatives; ++j) {
            std::uniform_int_distribution<std::size_t> dist(j, pool.size() - 1);
            std::swap(pool[j], pool[dist(rng)]);
        }
        pool.resize(negatives);
        std::sort(pool.begin(), pool.end());
        out[i] = std::move(pool);
    }
    return out;
}

double structured_hinge(const Tensor& scores, double margin, std::size_t negatives,
                        std::uint64_t seed) {
    if (scores.rank() != 2 || scores.rows() != scores.cols())
        throw DimensionError("structured_hinge: expected square score matrix, got " +
                             scores.shape_str());
    const std::size_t n = scores.rows();
    auto negs = sample_negatives(n, negatives, seed);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double matched = scores.at(i, i);
        for (std::size_t k : negs[i]) {
            loss += std::max(0.0, margin - matched + scores.at(i, k));
            loss += std::max(0.0, margin - matched + scores.at(k, i));
        }
    }
    return loss;
}

Value build_structured_hinge(Graph& g, const std::vector<std::vector<Value>>& scores,
                             double margin, std::size_t negatives, std::uint64_t seed) {
    const std::size_t n = scores.size();
    auto negs = sample_negatives(n, negatives, seed);
    Value margin_c = g.input(Tensor::scalar(margin));
    std::vector<Value> terms;
    terms.reserve(2 * n * negatives);
    for (std::size_t i = 0; i < n; ++i) {
        if (scores[i].size() != n)
            throw DimensionError("structured_hinge: score matrix row " + std::to_string(i) +
                                 " is not square");
        for (std::size_t k : negs[i]) {
            terms.push_back(g.relu(g.add(g.sub(scores[i][k], scores[i][i]), margin_c)));
            terms.push_back(g.relu(g.add(g.sub(scores[k][i], scores[i][i]), margin_c)));
        }
    }
    return g.add_n(terms);
}

double doubly_stochastic_penalty(const std::vector<SaliencyTrace>& traces, double lambda,
                                 RegularizerForm form) {
    if (lambda < 0.0) throw ContractError("doubly_stochastic_penalty: lambda must be >= 0");
    if (lambda == 0.0) return 0.0;
    double acc = 0.0;
    for (const SaliencyTrace& trace : traces) {
        if (trace.empty()) continue;
        auto side = [&](auto pick) {
            const Tensor& first = pick(trace[0]);
            for (std::size_t idx = 0; idx < first.size(); ++idx) {
                double s = 0.0;
                for (const SaliencyMap& map : trace) s += pick(map)[idx];
                const double gap = 1.0 - s;
                acc += form == RegularizerForm::Squared ? gap * gap : gap;
            }
        };
        side([](const SaliencyMap& m) -> const Tensor& { return m.image; });
        side([](const SaliencyMap& m) -> const Tensor& { return m.sentence; });
    }
    return lambda * acc;
}

Value build_doubly_stochastic_penalty(Graph& g,
                                      const std::vector<std::vector<SaliencyNodes>>& traces,
                                      double lambda, RegularizerForm form) {
    std::vector<Value> terms;
    for (const auto& trace : traces) {
        if (trace.empty()) throw ContractError("doubly_stochastic_penalty: empty trace");
        auto side = [&](auto pick) {
            std::vector<Value> maps;
            maps.reserve(trace.size());
            for (const SaliencyNodes& s : trace) maps.push_back(pick(s));
            Value summed = g.add_n(maps);
            Value gap = g.sub(g.input(Tensor::full(g.value(summed).shape(), 1.0)), summed);
            if (form == RegularizerForm::Squared) gap = g.mul(gap, gap);
            terms.push_back(g.sum(gap));
        };
        side([](const SaliencyNodes& s) { return s.image; });
        side([](const SaliencyNodes& s) { return s.sentence; });
    }
    return g.scale(g.add_n(terms), lambda);
}

LossBreakdown total_loss(const Tensor& scores, const std::vector<SaliencyTrace>& traces,
                         const RunConfig& cfg, std::uint64_t sampling_seed) {
    const std::size_t n = scores.rank() == 2 ? scores.rows() : 0;
    const std::size_t negatives =
        std::min(cfg.negatives_per_positive, n >= 2 ? n - 1 : std::size_t{0});
    LossBreakdown out;
    out.margin = cfg.margin;
    out.lambda = cfg.lambda;
    out.hinge = structured_hinge(scores, cfg.margin, negatives, sampling_seed);
    out.regularizer = doubly_stochastic_penalty(traces, cfg.lambda, cfg.regularizer);
    out.total = out.hinge + out.regularizer;
    return out;
}

}  // namespace smlstm
