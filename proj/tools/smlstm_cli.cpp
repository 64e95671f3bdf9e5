// Command-line front end: synthetic data generation, training, evaluation
// (with ensembling, T-sweeps and saliency export) and gradient checking.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smlstm/dataset.hpp"
#include "smlstm/errors.hpp"
#include "smlstm/eval.hpp"
#include "smlstm/model.hpp"
#include "smlstm/trainer.hpp"

namespace fs = std::filesystem;
using namespace smlstm;
using nlohmann::json;

namespace {

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& sets) {
    std::map<std::string, std::string> overrides;
    for (const std::string& s : sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + s + "'");
        overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return overrides;
}

Vocabulary load_vocab_for(const RunConfig& cfg, const std::string& override_path) {
    const std::string path = override_path.empty() ? cfg.vocab_path : override_path;
    if (path.empty()) throw ConfigError("no vocabulary path given (data.vocab or --vocab)");
    return Vocabulary::load(path);
}

int run_gen_synthetic(const SyntheticOptions& opt, const std::string& out_dir) {
    generate_synthetic(out_dir, opt);
    std::cout << "wrote " << (opt.train_pairs + opt.val_pairs + opt.test_pairs)
              << " pairs to " << out_dir << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::vector<std::string>& sets) {
    RunConfig cfg = load_run_config(config_path, parse_overrides(sets));
    if (cfg.train_manifest.empty()) throw ConfigError("data.train_manifest is required");
    Vocabulary vocab = load_vocab_for(cfg, "");
    cfg.model.vocab_size = vocab.size();

    Dataset train = load_dataset(cfg.train_manifest, vocab, cfg.model, "train");
    if (train.size() == 0) train = load_dataset(cfg.train_manifest, vocab, cfg.model);
    Dataset val;
    bool has_val = false;
    if (!cfg.val_manifest.empty()) {
        val = load_dataset(cfg.val_manifest, vocab, cfg.model, "val");
        if (val.size() == 0) val = load_dataset(cfg.val_manifest, vocab, cfg.model, "test");
        if (val.size() == 0) val = load_dataset(cfg.val_manifest, vocab, cfg.model);
        has_val = val.size() > 0;
    }

    fs::create_directories(cfg.out_dir);
    std::ofstream log(fs::path(cfg.out_dir) / "log.jsonl");
    const auto start = std::chrono::steady_clock::now();
    FitCallbacks callbacks;
    callbacks.on_step = [&](std::uint64_t epoch, std::uint64_t step, const StepResult& r) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        json j{{"epoch", epoch},         {"step", step},
               {"hinge", r.loss.hinge},  {"regularizer", r.loss.regularizer},
               {"total", r.loss.total},  {"wall_time", wall}};
        log << j.dump() << "\n";
    };
    callbacks.on_validation = [&](std::uint64_t epoch, std::uint64_t step, double sum) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        json j{{"epoch", epoch}, {"step", step}, {"val_sum", sum}, {"wall_time", wall}};
        log << j.dump() << "\n";
    };

    Checkpoint ckpt = fit(train, has_val ? &val : nullptr, cfg, callbacks);
    save_checkpoint(fs::path(cfg.out_dir) / "checkpoint.smck", ckpt);

    if (has_val) {
        EvalSet set = prepare_eval(val, ckpt.params, cfg.model);
        Tensor scores = score_all(set.images, set.sentences, ckpt.params, cfg.model);
        const std::string report = metrics_to_json(compute_metrics(scores, set.truth));
        std::ofstream out(fs::path(cfg.out_dir) / "val_metrics.json");
        out << report << "\n";
        std::cout << report << "\n";
    }
    std::cout << "checkpoint: " << (fs::path(cfg.out_dir) / "checkpoint.smck").string() << "\n";
    return 0;
}

std::vector<std::size_t> parse_sweep(const std::string& spec) {
    // "T=1..5" or "T=1,2,3"
    if (spec.rfind("T=", 0) != 0) throw ConfigError("--sweep expects T=<a>..<b> or T=a,b,c");
    const std::string body = spec.substr(2);
    std::vector<std::size_t> out;
    if (const std::size_t dots = body.find(".."); dots != std::string::npos) {
        const std::size_t a = std::stoul(body.substr(0, dots));
        const std::size_t b = std::stoul(body.substr(dots + 2));
        if (a == 0 || b < a) throw ConfigError("--sweep: bad range '" + spec + "'");
        for (std::size_t t = a; t <= b; ++t) out.push_back(t);
        return out;
    }
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t comma = body.find(',', pos);
        if (comma == std::string::npos) comma = body.size();
        out.push_back(std::stoul(body.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    if (out.empty()) throw ConfigError("--sweep: no timesteps in '" + spec + "'");
    return out;
}

json eval_once(const std::vector<Checkpoint>& ckpts, const Dataset& ds, const ModelConfig& base,
               std::size_t timesteps) {
    ModelConfig cfg = base;
    if (timesteps > 0) cfg.timesteps = timesteps;
    std::vector<Tensor> matrices;
    GroundTruth truth;
    for (const Checkpoint& ckpt : ckpts) {
        EvalSet set = prepare_eval(ds, ckpt.params, cfg);
        matrices.push_back(score_all(set.images, set.sentences, ckpt.params, cfg));
        truth = set.truth;
    }
    MetricsReport report = compute_metrics(ensemble(matrices), truth);
    json j = json::parse(metrics_to_json(report));
    j["timesteps"] = cfg.timesteps;
    return j;
}

int run_eval(const std::string& ckpt_path, const std::string& ensemble_list,
             const std::string& manifest, const std::string& vocab_path,
             const std::string& split, const std::string& sweep,
             const std::string& dump_saliency, const std::string& out_path,
             const std::vector<std::string>& sets) {
    std::vector<Checkpoint> ckpts;
    if (!ensemble_list.empty()) {
        std::size_t pos = 0;
        while (pos < ensemble_list.size()) {
            std::size_t comma = ensemble_list.find(',', pos);
            if (comma == std::string::npos) comma = ensemble_list.size();
            ckpts.push_back(load_checkpoint(ensemble_list.substr(pos, comma - pos)));
            pos = comma + 1;
        }
    } else {
        ckpts.push_back(load_checkpoint(ckpt_path));
    }
    if (ckpts.empty()) throw ConfigError("no checkpoint given");

    RunConfig cfg = parse_run_config(ckpts[0].config_text, parse_overrides(sets));
    Vocabulary vocab = load_vocab_for(cfg, vocab_path);
    cfg.model.vocab_size = vocab.size();
    for (const Checkpoint& c : ckpts) check_param_shapes(c.params, cfg.model);

    const std::string manifest_path = manifest.empty() ? cfg.val_manifest : manifest;
    if (manifest_path.empty()) throw ConfigError("no manifest given (--manifest)");
    Dataset ds = load_dataset(manifest_path, vocab, cfg.model, split);
    if (ds.size() == 0) throw DataError("no records with split '" + split + "' in " + manifest_path);

    json output;
    if (!sweep.empty()) {
        output = json::array();
        for (std::size_t t : parse_sweep(sweep)) output.push_back(eval_once(ckpts, ds, cfg.model, t));
    } else {
        output = eval_once(ckpts, ds, cfg.model, 0);
    }

    if (!dump_saliency.empty()) {
        const Checkpoint& ckpt = ckpts[0];
        EvalSet set = prepare_eval(ds, ckpt.params, cfg.model);
        std::vector<SaliencyTrace> traces;
        for (std::size_t r = 0; r < ds.size(); ++r) {
            const std::size_t s = set.truth.image_to_sentences[r][0];
            PairForwardResult result =
                forward_pair(ds.grids[r], set.sentences[s], ckpt.params, cfg.model);
            std::vector<std::string> words = clean_tokens(ds.records[r].sentences[0]);
            export_saliency(result.trace, ds.grids[r].grid_rows, ds.grids[r].grid_cols, words,
                            dump_saliency, ds.records[r].id);
            traces.push_back(std::move(result.trace));
        }
        std::vector<Tensor> means = mean_image_saliency(traces);
        for (std::size_t t = 0; t < means.size(); ++t) {
            write_saliency_pgm(means[t], ds.grids[0].grid_rows, ds.grids[0].grid_cols, 112,
                               fs::path(dump_saliency) / ("mean_t" + std::to_string(t + 1) + ".pgm"));
        }
    }

    const std::string text = output.dump(2);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << text << "\n";
    }
    std::cout << text << "\n";
    return 0;
}

int run_gradcheck(const std::string& config_path, double tolerance,
                  const std::string& corrupt, const std::vector<std::string>& sets) {
    RunConfig cfg = load_run_config(config_path, parse_overrides(sets));
    GradCheckReport report = gradient_check(cfg, tolerance, corrupt);
    for (const auto& block : report.blocks) {
        std::cout << (block.max_rel_error <= tolerance ? "ok   " : "FAIL ") << block.name
                  << "  max_rel_error=" << block.max_rel_error << "\n";
    }
    std::cout << (report.passed ? "PASS" : "FAIL") << " max_rel_error=" << report.max_rel_error
              << " tolerance=" << tolerance << "\n";
    if (!report.passed) {
        std::string blocks;
        for (const auto& b : report.blocks)
            if (b.max_rel_error > tolerance) blocks += (blocks.empty() ? "" : ", ") + b.name;
        throw GradCheckError("gradient check failed for: " + blocks);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sm-LSTM image-sentence matching"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-synthetic", "generate a planted-structure dataset");
    SyntheticOptions opt;
    std::string gen_out = "synthetic";
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--train-pairs", opt.train_pairs);
    gen->add_option("--val-pairs", opt.val_pairs);
    gen->add_option("--test-pairs", opt.test_pairs);
    gen->add_option("--grid-rows", opt.grid_rows);
    gen->add_option("--grid-cols", opt.grid_cols);
    gen->add_option("--feat-dim", opt.image_feat_dim);
    gen->add_option("--ctx-dim", opt.image_ctx_dim);
    gen->add_option("--planted", opt.planted_instances, "latent instances per pair");
    gen->add_option("--concepts", opt.concepts);
    gen->add_option("--fillers", opt.filler_words);
    gen->add_option("--noise", opt.noise);
    gen->add_flag("--eval-sets-from-train", opt.eval_sets_from_train,
                  "eval pairs reuse training concept sets with fresh noise and wording");
    gen->add_option("--seed", opt.seed);

    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string train_config;
    std::vector<std::string> train_sets;
    train->add_option("--config", train_config)->required();
    train->add_option("--set", train_sets, "override config keys, section.key=value");

    auto* eval = app.add_subcommand("eval", "evaluate checkpoints on a manifest");
    std::string ckpt_path, ensemble_list, manifest, vocab_path, split = "test", sweep,
                dump_saliency, out_path;
    std::vector<std::string> eval_sets;
    eval->add_option("--checkpoint", ckpt_path);
    eval->add_option("--ensemble", ensemble_list, "comma-separated checkpoints, scores summed");
    eval->add_option("--manifest", manifest);
    eval->add_option("--vocab", vocab_path);
    eval->add_option("--split", split);
    eval->add_option("--sweep", sweep, "evaluate at several unroll lengths, e.g. T=1..5");
    eval->add_option("--dump-saliency", dump_saliency, "directory for saliency exports");
    eval->add_option("--out", out_path, "write the JSON report here as well");
    eval->add_option("--set", eval_sets);

    auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
    std::string gc_config, gc_corrupt;
    double gc_tolerance = 1e-4;
    std::vector<std::string> gc_sets;
    gradcheck->add_option("--config", gc_config)->required();
    gradcheck->add_option("--tolerance", gc_tolerance);
    gradcheck->add_option("--corrupt", gc_corrupt, "debug: corrupt one block's gradient");
    gradcheck->add_option("--set", gc_sets);

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return run_gen_synthetic(opt, gen_out);
        if (train->parsed()) return run_train(train_config, train_sets);
        if (eval->parsed())
            return run_eval(ckpt_path, ensemble_list, manifest, vocab_path, split, sweep,
                            dump_saliency, out_path, eval_sets);
        if (gradcheck->parsed()) return run_gradcheck(gc_config, gc_tolerance, gc_corrupt, gc_sets);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ContractError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
}
