#pragma once

#include <cstdint>
#include <vector>

#include "smlstm/attention.hpp"
#include "smlstm/config.hpp"
#include "smlstm/graph.hpp"
#include "smlstm/tensor.hpp"

namespace smlstm {

struct LossBreakdown {
    double hinge = 0.0;
    double regularizer = 0.0;
    double total = 0.0;
    double margin = 0.0;
    double lambda = 0.0;
};

/// For each anchor i, the mismatched indices k != i to use as negatives:
/// all of them when negatives >= n-1, otherwise a uniform sample without
/// replacement, deterministic in the seed. Shared by the plain and the
/// graph-building hinge so both see identical terms.
std::vector<std::vector<std::size_t>> sample_negatives(std::size_t n, std::size_t negatives,
                                                       std::uint64_t seed);

/// Bidirectional margin hinge over an N x N score matrix with matched
/// pairs on the diagonal:
///   sum_i sum_k  max{0, m - s_ii + s_ik} + max{0, m - s_ii + s_ki}
/// Throws ContractError when N < 2 (no negatives exist).
double structured_hinge(const Tensor& scores, double margin, std::size_t negatives,
                        std::uint64_t seed);

/// Graph version over per-pair score nodes; scores[i][k] must be scalar.
Value build_structured_hinge(Graph& g, const std::vector<std::vector<Value>>& scores,
                             double margin, std::size_t negatives, std::uint64_t seed);

/// Attention-spread penalty over the batch. Signed is the published form
/// lambda * ( sum_i (1 - sum_t p_ti) + sum_j (1 - sum_t q_tj) ); because
/// each saliency map sums to 1 this is the constant lambda*(I-T + J-T)
/// per pair and carries no gradient. Squared uses (1 - sum_t .)^2 and
/// genuinely pushes every candidate's summed saliency toward 1.
double doubly_stochastic_penalty(const std::vector<SaliencyTrace>& traces, double lambda,
                                 RegularizerForm form = RegularizerForm::Signed);

Value build_doubly_stochastic_penalty(Graph& g,
                                      const std::vector<std::vector<SaliencyNodes>>& traces,
                                      double lambda, RegularizerForm form);

/// Hinge plus penalty on plain values (the differentiable path lives in
/// the graph builders above).
LossBreakdown total_loss(const Tensor& scores, const std::vector<SaliencyTrace>& traces,
                         const RunConfig& cfg, std::uint64_t sampling_seed);

}  // namespace smlstm
