#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace smlstm {

enum class AttentionVariant { Full, NoContext, ContextOnly, Mean };

AttentionVariant variant_from_string(const std::string& s);
std::string to_string(AttentionVariant v);

/// Doubly-stochastic regularizer form. "Signed" is the penalty exactly as
/// written (1 - sum_t saliency), which sums to a constant across candidates
/// because every saliency map is a probability distribution; "Squared"
/// penalizes (1 - sum_t saliency)^2 and actually spreads attention.
enum class RegularizerForm { Signed, Squared };

RegularizerForm regularizer_from_string(const std::string& s);
std::string to_string(RegularizerForm f);

enum class OptimizerKind { Adam, Momentum };

OptimizerKind optimizer_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

/// Model dimensions and variant. Defaults are the full reference scale
/// (196 grid cells, 512/4096 image dims, 1024 sentence dims); the tiny
/// profiles used by tests override everything.
struct ModelConfig {
    std::size_t grid_rows = 14;
    std::size_t grid_cols = 14;
    std::size_t image_feat_dim = 512;    // per-cell feature width (F)
    std::size_t image_ctx_dim = 4096;    // global image context width (D)
    std::size_t sentence_len = 50;       // fixed token count J, zero-padded
    std::size_t blstm_hidden = 512;      // per-direction; word width G = 2x this
    std::size_t sentence_ctx_dim = 1024; // context LSTM hidden width (E)
    std::size_t hidden_dim = 1024;       // aggregation LSTM width (H)
    std::size_t attention_dim = 1024;    // three-way MLP width (A)
    std::size_t sim_dim = 1024;          // local-similarity width (S)
    std::size_t embed_dim = 128;         // word embedding width
    std::size_t vocab_size = 0;          // set when a vocabulary is loaded
    std::size_t timesteps = 3;           // T
    AttentionVariant variant = AttentionVariant::Full;

    std::size_t image_candidates() const { return grid_rows * grid_cols; }  // I
    std::size_t word_feat_dim() const { return 2 * blstm_hidden; }          // G

    void validate() const;
};

/// Everything a run needs: model, objective, optimizer, data paths.
struct RunConfig {
    ModelConfig model;

    double margin = 0.2;
    double lambda = 100.0;
    RegularizerForm regularizer = RegularizerForm::Signed;
    std::size_t negatives_per_positive = 100;

    OptimizerKind optimizer = OptimizerKind::Adam;
    double learning_rate = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double momentum = 0.9;
    double grad_clip = 5.0;
    std::size_t lr_decay_steps = 0;  // cosine-decay the lr to 0 over this many steps; 0 = constant

    std::size_t batch_size = 32;
    std::size_t max_epochs = 15;
    std::size_t max_steps = 0;  // 0 = no cap
    std::size_t val_every = 1;  // epochs between validation passes
    std::uint64_t seed = 1;

    std::string train_manifest;
    std::string val_manifest;
    std::string vocab_path;
    std::string out_dir = ".";

    void validate() const;
};

/// Flat key=value config file with [section] headers; '#' starts a comment.
/// Unknown keys are rejected. CLI `--set section.key=value` overrides win.
RunConfig parse_run_config(const std::string& text,
                           const std::map<std::string, std::string>& overrides = {});
RunConfig load_run_config(const std::string& path,
                          const std::map<std::string, std::string>& overrides = {});
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace smlstm
