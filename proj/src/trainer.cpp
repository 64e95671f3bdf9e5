#include "smlstm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "smlstm/errors.hpp"
#include "smlstm/eval.hpp"
#include "smlstm/model.hpp"

namespace smlstm {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(path + ": truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
    const std::uint64_t lo = read_u32(in, path);
    const std::uint64_t hi = read_u32(in, path);
    return lo | (hi << 32);
}

void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in, const std::string& path) {
    const std::uint32_t len = read_u32(in, path);
    std::string s(len, '\0');
    if (len && !in.read(s.data(), len)) throw FormatError(path + ": truncated checkpoint");
    return s;
}

void write_tensor_map(std::ostream& out, const std::map<std::string, Tensor>& tensors) {
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_str(out, name);
        write_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::uint64_t bits;
            double v = t[i];
            std::memcpy(&bits, &v, 8);
            write_u64(out, bits);
        }
    }
}

std::map<std::string, Tensor> read_tensor_map(std::istream& in, const std::string& path) {
    std::map<std::string, Tensor> tensors;
    const std::uint32_t count = read_u32(in, path);
    for (std::uint32_t b = 0; b < count; ++b) {
        std::string name = read_str(in, path);
        const std::uint32_t rank = read_u32(in, path);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = read_u32(in, path);
        Tensor t = Tensor::zeros(shape);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const std::uint64_t bits = read_u64(in, path);
            double v;
            std::memcpy(&v, &bits, 8);
            t[i] = v;
        }
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    out.write("SMCK", 4);
    write_u32(out, ckpt.version);
    write_str(out, ckpt.config_text);
    write_u64(out, ckpt.epoch);
    write_u64(out, ckpt.step);
    write_str(out, ckpt.rng_state);
    write_tensor_map(out, ckpt.params);
    write_u64(out, ckpt.opt.step);
    write_tensor_map(out, ckpt.opt.first_moment);
    write_tensor_map(out, ckpt.opt.second_moment);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
    const std::string p = path.string();
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "SMCK", 4) != 0)
        throw FormatError(p + ": bad checkpoint magic");
    Checkpoint ckpt;
    ckpt.version = read_u32(in, p);
    if (ckpt.version != 1)
        throw FormatError(p + ": unsupported checkpoint version " + std::to_string(ckpt.version));
    ckpt.config_text = read_str(in, p);
    ckpt.epoch = read_u64(in, p);
    ckpt.step = read_u64(in, p);
    ckpt.rng_state = read_str(in, p);
    ckpt.params = read_tensor_map(in, p);
    ckpt.opt.step = read_u64(in, p);
    ckpt.opt.first_moment = read_tensor_map(in, p);
    ckpt.opt.second_moment = read_tensor_map(in, p);
    return ckpt;
}

Batch assemble_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                     std::size_t sentence_choice) {
    std::set<std::size_t> seen;
    Batch batch;
    for (std::size_t idx : indices) {
        if (idx >= ds.size())
            throw ContractError("assemble_batch: index " + std::to_string(idx) + " out of range");
        if (!seen.insert(idx).second)
            throw ContractError("assemble_batch: duplicate index " + std::to_string(idx) +
                                " would create a false negative");
        batch.indices.push_back(idx);
        batch.images.push_back(&ds.grids[idx]);
        const auto& sents = ds.sentences[idx];
        batch.sentences.push_back(&sents[sentence_choice % sents.size()]);
    }
    return batch;
}

namespace {

struct BatchLossNodes {
    Value total;
    Value hinge;
    bool has_reg = false;
    Value reg;
    std::vector<std::vector<Value>> scores;
};

BatchLossNodes build_batch_loss(Graph& g, const std::vector<const FeatureGrid*>& images,
                                const std::vector<const TokenizedSentence*>& sentences,
                                const RunConfig& cfg, std::uint64_t sampling_seed) {
    const std::size_t n = images.size();
    if (n != sentences.size()) throw ContractError("batch images and sentences disagree");
    std::vector<ImageNodes> img_nodes;
    std::vector<SentenceNodes> snt_nodes;
    for (std::size_t i = 0; i < n; ++i) img_nodes.push_back(build_image_input(g, *images[i]));
    for (std::size_t k = 0; k < n; ++k)
        snt_nodes.push_back(build_sentence_encoder(g, *sentences[k], cfg.model));

    BatchLossNodes out;
    out.scores.assign(n, std::vector<Value>(n));
    std::vector<std::vector<SaliencyNodes>> matched_traces;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            PairNodes pair = build_pair_forward(g, img_nodes[i], snt_nodes[k], cfg.model);
            out.scores[i][k] = pair.score;
            if (i == k) matched_traces.push_back(std::move(pair.saliency));
        }
    }
    const std::size_t negatives = std::min(cfg.negatives_per_positive, n - 1);
    out.hinge = build_structured_hinge(g, out.scores, cfg.margin, negatives, sampling_seed);
    out.total = out.hinge;
    if (cfg.lambda > 0.0) {
        out.reg = build_doubly_stochastic_penalty(g, matched_traces, cfg.lambda, cfg.regularizer);
        out.has_reg = true;
        out.total = g.add(out.hinge, out.reg);
    }
    return out;
}

void ensure_opt_state(OptimizerState& opt, const ParamStore& params, OptimizerKind kind) {
    if (!opt.first_moment.empty()) return;
    for (const auto& [name, t] : params) {
        opt.first_moment.emplace(name, Tensor::zeros(t.shape()));
        if (kind == OptimizerKind::Adam)
            opt.second_moment.emplace(name, Tensor::zeros(t.shape()));
    }
}

void apply_update(ParamStore& params, OptimizerState& opt, GradientStore& grads,
                  const RunConfig& cfg, double grad_norm) {
    double scale = 1.0;
    if (cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip) scale = cfg.grad_clip / grad_norm;
    opt.step += 1;
    const double t = static_cast<double>(opt.step);
    double lr = cfg.learning_rate;
    if (cfg.lr_decay_steps > 0) {
        // Cosine decay toward zero; depends only on the optimizer step count,
        // so resumed runs follow the same schedule.
        const double frac =
            std::min(1.0, (t - 1.0) / static_cast<double>(cfg.lr_decay_steps));
        lr *= 0.5 * (1.0 + std::cos(frac * std::acos(-1.0)));
    }
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // parameter unused in this graph
        Tensor& g = git->second;
        if (scale != 1.0)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale;
        Tensor& m = opt.first_moment.at(name);
        if (cfg.optimizer == OptimizerKind::Adam) {
            Tensor& v = opt.second_moment.at(name);
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
                v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            }
        } else {
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg.momentum * m[i] + g[i];
                p[i] -= lr * m[i];
            }
        }
        if (!p.all_finite())
            throw DivergenceError("non-finite update for parameter block '" + name + "'");
    }
}

}  // namespace

StepResult train_step(const Batch& batch, ParamStore& params, OptimizerState& opt,
                      const RunConfig& cfg, std::uint64_t step_seed) {
    Graph g(&params);
    BatchLossNodes loss = build_batch_loss(g, batch.images, batch.sentences, cfg, step_seed);

    StepResult result;
    result.loss.margin = cfg.margin;
    result.loss.lambda = cfg.lambda;
    result.loss.hinge = g.value(loss.hinge)[0];
    result.loss.regularizer = loss.has_reg ? g.value(loss.reg)[0] : 0.0;
    result.loss.total = g.value(loss.total)[0];
    if (!std::isfinite(result.loss.total)) {
        for (std::size_t i = 0; i < loss.scores.size(); ++i)
            for (std::size_t k = 0; k < loss.scores.size(); ++k)
                if (!std::isfinite(g.value(loss.scores[i][k])[0]))
                    throw DivergenceError("non-finite score for batch pair (" +
                                          std::to_string(i) + ", " + std::to_string(k) + ")");
        throw DivergenceError("non-finite training loss");
    }

    GradientStore grads = g.backward(loss.total);
    double sq = 0.0;
    for (const auto& [name, t] : grads)
        for (std::size_t i = 0; i < t.size(); ++i) sq += t[i] * t[i];
    result.grad_norm = std::sqrt(sq);
    ensure_opt_state(opt, params, cfg.optimizer);
    if (cfg.learning_rate > 0.0) apply_update(params, opt, grads, cfg, result.grad_norm);
    return result;
}

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 rng;
    if (!s.empty()) {
        std::istringstream is(s);
        is >> rng;
    }
    return rng;
}

double validation_sum(const Dataset& val, const ParamStore& params, const ModelConfig& cfg) {
    EvalSet set = prepare_eval(val, params, cfg);
    Tensor scores = score_all(set.images, set.sentences, params, cfg);
    return compute_metrics(scores, set.truth).sum;
}

Checkpoint run_fit(const Dataset& train, const Dataset* val, const RunConfig& cfg,
                   ParamStore params, OptimizerState opt, std::mt19937_64 rng,
                   std::uint64_t start_epoch, std::uint64_t start_step,
                   const FitCallbacks& callbacks) {
    if (train.size() == 0) throw DataError("fit: training dataset is empty");
    std::uint64_t step = start_step;
    double best_sum = -1.0;
    ParamStore best_params;
    std::uint64_t epoch = start_epoch;
    bool stop = false;
    for (; epoch < cfg.max_epochs && !stop; ++epoch) {
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t j = order.size(); j-- > 1;) {
            std::uniform_int_distribution<std::size_t> dist(0, j);
            std::swap(order[j], order[dist(rng)]);
        }
        for (std::size_t start = 0; start + 1 < order.size() + 1; start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < 2) break;  // a lone positive has no negatives
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            // Negatives are resampled per step from the loop RNG.
            const std::uint64_t step_seed = rng();
            Batch batch = assemble_batch(train, idx, static_cast<std::size_t>(epoch));
            StepResult result = train_step(batch, params, opt, cfg, step_seed);
            ++step;
            if (callbacks.on_step) callbacks.on_step(epoch, step, result);
            if (cfg.max_steps > 0 && step >= start_step + cfg.max_steps) {
                stop = true;
                break;
            }
        }
        if (val && cfg.val_every > 0 && ((epoch + 1) % cfg.val_every == 0 || stop)) {
            const double sum = validation_sum(*val, params, cfg.model);
            if (callbacks.on_validation) callbacks.on_validation(epoch, step, sum);
            if (sum > best_sum) {
                best_sum = sum;
                best_params = params;
            }
        }
    }
    Checkpoint ckpt;
    ckpt.params = (val && best_sum >= 0.0) ? best_params : params;
    ckpt.opt = std::move(opt);
    ckpt.config_text = serialize_run_config(cfg);
    ckpt.epoch = epoch;
    ckpt.step = step;
    ckpt.rng_state = rng_to_string(rng);
    return ckpt;
}

}  // namespace

Checkpoint fit(const Dataset& train, const Dataset* val, const RunConfig& cfg,
               const FitCallbacks& callbacks) {
    RunConfig checked = cfg;
    checked.validate();
    ParamStore params = init_params(cfg.model, cfg.seed);
    std::mt19937_64 rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
    return run_fit(train, val, cfg, std::move(params), OptimizerState{}, std::move(rng), 0, 0,
                   callbacks);
}

Checkpoint fit_resume(const Dataset& train, const Dataset* val, const RunConfig& cfg,
                      const Checkpoint& from, const FitCallbacks& callbacks) {
    check_param_shapes(from.params, cfg.model);
    return run_fit(train, val, cfg, from.params, from.opt, rng_from_string(from.rng_state),
                   from.epoch, from.step, callbacks);
}

GradCheckReport gradient_check(const RunConfig& cfg, double tolerance,
                               const std::string& corrupt_block) {
    // Small in-memory batch: random feature grids and random token ids.
    ModelConfig model = cfg.model;
    if (model.vocab_size < 2) model.vocab_size = 12;
    std::mt19937_64 rng(cfg.seed + 17);
    const std::size_t batch = std::min<std::size_t>(3, std::max<std::size_t>(2, cfg.batch_size));
    std::vector<FeatureGrid> grids(batch);
    std::vector<TokenizedSentence> sentences(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        grids[b].grid_rows = model.grid_rows;
        grids[b].grid_cols = model.grid_cols;
        grids[b].candidates =
            Tensor::uniform({model.image_candidates(), model.image_feat_dim}, rng, -1.0, 1.0);
        grids[b].context = Tensor::uniform({model.image_ctx_dim}, rng, -1.0, 1.0);
        std::uniform_int_distribution<std::size_t> len_dist(1, model.sentence_len);
        std::uniform_int_distribution<std::size_t> id_dist(1, model.vocab_size - 1);
        const std::size_t len = len_dist(rng);
        sentences[b].ids.assign(model.sentence_len, Vocabulary::kPadId);
        sentences[b].mask.assign(model.sentence_len, false);
        for (std::size_t j = 0; j < len; ++j) {
            sentences[b].ids[j] = id_dist(rng);
            sentences[b].mask[j] = true;
        }
    }
    std::vector<const FeatureGrid*> grid_ptrs;
    std::vector<const TokenizedSentence*> sent_ptrs;
    for (std::size_t b = 0; b < batch; ++b) {
        grid_ptrs.push_back(&grids[b]);
        sent_ptrs.push_back(&sentences[b]);
    }

    RunConfig run = cfg;
    run.model = model;
    const std::uint64_t sampling_seed = cfg.seed + 23;
    ParamStore params = init_params(model, cfg.seed);

    Graph g(&params);
    BatchLossNodes loss = build_batch_loss(g, grid_ptrs, sent_ptrs, run, sampling_seed);
    GradientStore analytic = g.backward(loss.total);

    bool any_nonzero = false;
    for (const auto& [name, t] : analytic)
        for (std::size_t i = 0; i < t.size(); ++i)
            if (t[i] != 0.0) any_nonzero = true;
    if (!any_nonzero)
        throw GradCheckError("gradient_check: all analytic gradients are zero; "
                             "the comparison would be vacuous");

    if (!corrupt_block.empty()) {
        auto it = analytic.find(corrupt_block);
        if (it == analytic.end())
            throw ContractError("gradient_check: unknown block '" + corrupt_block + "'");
        for (std::size_t i = 0; i < it->second.size(); ++i)
            it->second[i] = 1.5 * it->second[i] + 0.1;
    }

    auto loss_fn = [&](const ParamStore& p) {
        Graph fg(&p);
        BatchLossNodes l = build_batch_loss(fg, grid_ptrs, sent_ptrs, run, sampling_seed);
        return fg.value(l.total)[0];
    };
    GradientStore numeric = Graph::finite_difference_gradient(loss_fn, params, 1e-5);

    GradCheckReport report;
    report.tolerance = tolerance;
    for (const auto& [name, fd] : numeric) {
        GradCheckBlock block;
        block.name = name;
        auto it = analytic.find(name);
        for (std::size_t i = 0; i < fd.size(); ++i) {
            const double a = it != analytic.end() ? it->second[i] : 0.0;
            const double f = fd[i];
            block.max_analytic = std::max(block.max_analytic, std::abs(a));
            const double denom = std::max(std::abs(a), std::abs(f));
            if (denom < 1e-5) continue;  // both effectively zero
            block.max_rel_error = std::max(block.max_rel_error, std::abs(a - f) / denom);
        }
        report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
        report.blocks.push_back(std::move(block));
    }
    report.passed = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace smlstm
