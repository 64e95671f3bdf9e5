#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smlstm/config.hpp"
#include "smlstm/dataset.hpp"
#include "smlstm/graph.hpp"
#include "smlstm/objective.hpp"

namespace smlstm {

/// Adaptive-moment (or plain momentum) accumulators, shapes mirroring the
/// parameters.
struct OptimizerState {
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;  // unused for momentum
    std::uint64_t step = 0;
};

/// Versioned training snapshot. save -> load -> save is byte-identical.
struct Checkpoint {
    std::uint32_t version = 1;
    ParamStore params;
    OptimizerState opt;
    std::string config_text;  // serialized RunConfig
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
    std::string rng_state;  // mt19937_64 stream state
};

/// Binary checkpoint file: magic "SMCK", u32 version, then length-prefixed
/// named tensor blocks (float64 little-endian) and metadata strings.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct Batch {
    std::vector<std::size_t> indices;                 // into the dataset
    std::vector<const FeatureGrid*> images;
    std::vector<const TokenizedSentence*> sentences;  // one per image, aligned
};

/// Aligned positives at the diagonal; rejects duplicate indices, which
/// would create false negatives. sentence_choice selects among a record's
/// sentences.
Batch assemble_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                     std::size_t sentence_choice = 0);

struct StepResult {
    LossBreakdown loss;
    double grad_norm = 0.0;  // pre-clip global norm
};

/// One optimization step: encode the batch, score all pairs, take the
/// structured loss, backpropagate and update in place. Deterministic given
/// (params, batch, step_seed). Throws DivergenceError on non-finite loss.
StepResult train_step(const Batch& batch, ParamStore& params, OptimizerState& opt,
                      const RunConfig& cfg, std::uint64_t step_seed);

struct FitCallbacks {
    /// Called after every step with (epoch, step, result).
    std::function<void(std::uint64_t, std::uint64_t, const StepResult&)> on_step;
    /// Called after each validation pass with (epoch, step, sum).
    std::function<void(std::uint64_t, std::uint64_t, double)> on_validation;
};

/// Epochs of seeded shuffled batches; when a validation set is given the
/// best-by-Sum parameters are retained in the returned checkpoint.
Checkpoint fit(const Dataset& train, const Dataset* val, const RunConfig& cfg,
               const FitCallbacks& callbacks = {});

/// Resume training from a checkpoint; continues the original trajectory
/// bit-exactly.
Checkpoint fit_resume(const Dataset& train, const Dataset* val, const RunConfig& cfg,
                      const Checkpoint& from, const FitCallbacks& callbacks = {});

struct GradCheckBlock {
    std::string name;
    double max_rel_error = 0.0;
    double max_analytic = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_error = 0.0;
    bool passed = false;
    double tolerance = 0.0;
};

/// Compares backward() with central finite differences over every
/// parameter block of the full loss on a small synthetic batch.
/// `corrupt_block`, when non-empty, perturbs that block's analytic
/// gradient so the failure path can be exercised.
GradCheckReport gradient_check(const RunConfig& cfg, double tolerance,
                               const std::string& corrupt_block = "");

}  // namespace smlstm
