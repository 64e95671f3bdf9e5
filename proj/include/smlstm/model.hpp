#pragma once

#include <cstdint>
#include <string>

#include "smlstm/config.hpp"
#include "smlstm/graph.hpp"

namespace smlstm {

/// All trainable tensors for the given configuration, uniform in
/// [-0.08, 0.08]. Creation order is fixed, so a given seed always yields
/// the same store.
///
/// Parameter blocks:
///   emb.table                       word embeddings [V x embed_dim]
///   enc.fw.* / enc.bw.*             candidate BLSTM cells (per direction)
///   enc.ctx.*                       sentence-context LSTM cell
///   att.img.* / att.snt.*           three-way attention MLPs
///   sim.*                           two-way local-similarity MLP
///   agg.*                           aggregation LSTM cell
///   score.*                         matching-score head
///   init.*                          context-seeded h_0 (ctx variant only)
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Registers LSTM cell parameters under `prefix`: per gate g in {i,f,c,o},
/// W_g [in x hid], U_g [hid x hid], b_g [hid].
void add_lstm_params(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                     std::size_t hid_dim, std::mt19937_64& rng);

struct LstmState {
    Value h;
    Value c;
};

/// One step of the standard gated recurrence used by both the sentence
/// encoders and the similarity aggregator:
///   i = sig(x W_i + h U_i + b_i), f = sig(...), o = sig(...)
///   c' = f . c + i . tanh(x W_c + h U_c + b_c),  h' = o . tanh(c')
LstmState lstm_step(Graph& g, const std::string& prefix, Value x, const LstmState& prev);

/// Zero-initialized state of the cell registered under `prefix`.
LstmState lstm_zero_state(Graph& g, std::size_t hid_dim);

/// Verifies a parameter store matches the shapes init_params would create
/// for cfg; throws ConfigError naming the first offending block.
void check_param_shapes(const ParamStore& params, const ModelConfig& cfg);

}  // namespace smlstm
