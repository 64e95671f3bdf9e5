#include "smlstm/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "smlstm/errors.hpp"

namespace smlstm {

using nlohmann::json;

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
    std::vector<ManifestRecord> records;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ManifestRecord rec;
        try {
            rec.id = j.at("id").get<std::string>();
            rec.features = j.at("features").get<std::string>();
            rec.sentences = j.at("sentences").get<std::vector<std::string>>();
            rec.split = j.at("split").get<std::string>();
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (rec.sentences.empty())
            throw DataError(path.string() + ":" + std::to_string(lineno) +
                            ": record '" + rec.id + "' has no sentences");
        if (!seen_ids.insert(rec.id).second)
            throw DataError(path.string() + ":" + std::to_string(lineno) +
                            ": duplicate record id '" + rec.id + "'");
        records.push_back(std::move(rec));
    }
    return records;
}

void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
    for (const auto& rec : records) {
        json j{{"id", rec.id},
               {"features", rec.features},
               {"sentences", rec.sentences},
               {"split", rec.split}};
        out << j.dump() << "\n";
    }
}

Dataset load_dataset(const std::filesystem::path& manifest_path, const Vocabulary& vocab,
                     const ModelConfig& cfg, const std::string& split_filter) {
    Dataset ds;
    const std::filesystem::path base = manifest_path.parent_path();
    for (auto& rec : load_manifest(manifest_path)) {
        if (!split_filter.empty() && rec.split != split_filter) continue;
        std::filesystem::path feat = rec.features;
        if (feat.is_relative()) feat = base / feat;
        if (!std::filesystem::exists(feat))
            throw DataError("record '" + rec.id + "': missing feature file '" + feat.string() + "'");
        FeatureGrid grid = load_feature_grid(feat);
        if (grid.candidates.rows() != cfg.image_candidates() ||
            grid.candidates.cols() != cfg.image_feat_dim ||
            grid.context.size() != cfg.image_ctx_dim) {
            throw DataError("record '" + rec.id + "': feature grid " +
                            grid.candidates.shape_str() + "/" + grid.context.shape_str() +
                            " does not match the model configuration");
        }
        std::vector<TokenizedSentence> toks;
        for (const std::string& s : rec.sentences)
            toks.push_back(tokenize(s, vocab, cfg.sentence_len));
        ds.grids.push_back(std::move(grid));
        ds.sentences.push_back(std::move(toks));
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

namespace {

std::string concept_word(std::size_t c) { return "concept" + std::to_string(c); }
std::string filler_word(std::size_t f) { return "filler" + std::to_string(f); }

}  // namespace

void generate_synthetic(const std::filesystem::path& out_dir, const SyntheticOptions& opt) {
    const std::size_t total = opt.train_pairs + opt.val_pairs + opt.test_pairs;
    if (total < 2) throw ContractError("gen-synthetic: need at least 2 pairs");
    const std::size_t cells = opt.grid_rows * opt.grid_cols;
    if (opt.planted_instances > cells)
        throw ContractError("gen-synthetic: more planted instances than grid cells");
    if (opt.planted_instances > opt.concepts)
        throw ContractError("gen-synthetic: more planted instances than concepts");

    // Every pair gets a distinct concept set: a repeated set within the
    // training split makes the ranking objective contradictory, and within an
    // evaluation split it makes the retrieval ground truth ambiguous. That
    // requires enough distinct sets to go around.
    double combos = 1.0;
    for (std::size_t j = 0; j < opt.planted_instances; ++j)
        combos *= static_cast<double>(opt.concepts - j) / static_cast<double>(j + 1);
    const std::size_t fresh_needed =
        opt.eval_sets_from_train ? opt.train_pairs : total;
    if (static_cast<double>(fresh_needed) > combos)
        throw ContractError("gen-synthetic: not enough distinct concept sets; raise --concepts");
    if (opt.eval_sets_from_train &&
        std::max(opt.val_pairs, opt.test_pairs) > opt.train_pairs)
        throw ContractError(
            "gen-synthetic: an eval split reusing training concept sets cannot "
            "be larger than the training split");

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "features", ec);
    if (ec) throw DataError("cannot create output directory '" + out_dir.string() + "'");

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    // Shared latent dictionary and a fixed projection to context space.
    std::vector<Tensor> latents;
    for (std::size_t c = 0; c < opt.concepts; ++c)
        latents.push_back(Tensor::uniform({opt.image_feat_dim}, rng, -1.0, 1.0));
    Tensor projection = Tensor::uniform({opt.image_feat_dim, opt.image_ctx_dim}, rng, -0.5, 0.5);

    std::vector<std::string> vocab_tokens;
    for (std::size_t c = 0; c < opt.concepts; ++c) vocab_tokens.push_back(concept_word(c));
    for (std::size_t f = 0; f < opt.filler_words; ++f) vocab_tokens.push_back(filler_word(f));
    Vocabulary vocab = Vocabulary::from_tokens(vocab_tokens);
    vocab.save(out_dir / "vocab.txt");

    std::vector<ManifestRecord> records;
    std::set<std::vector<std::size_t>> used_sets;      // all fresh draws so far
    std::vector<std::vector<std::size_t>> train_sets;  // in training order
    std::set<std::vector<std::size_t>> used_val_sets;
    std::set<std::vector<std::size_t>> used_test_sets;
    for (std::size_t p = 0; p < total; ++p) {
        const bool is_train = p < opt.train_pairs;
        const bool is_val = !is_train && p < opt.train_pairs + opt.val_pairs;

        std::vector<std::size_t> chosen;
        if (!is_train && opt.eval_sets_from_train) {
            // Draw a training concept set not yet used in this eval split.
            auto& used = is_val ? used_val_sets : used_test_sets;
            for (;;) {
                std::uniform_int_distribution<std::size_t> dist(0, train_sets.size() - 1);
                chosen = train_sets[dist(rng)];
                std::vector<std::size_t> key = chosen;
                std::sort(key.begin(), key.end());
                if (used.insert(std::move(key)).second) break;
            }
        } else {
            // A fresh concept set, distinct from every set drawn so far.
            for (;;) {
                std::vector<std::size_t> all(opt.concepts);
                for (std::size_t c = 0; c < opt.concepts; ++c) all[c] = c;
                for (std::size_t j = 0; j < opt.planted_instances; ++j) {
                    std::uniform_int_distribution<std::size_t> dist(j, all.size() - 1);
                    std::swap(all[j], all[dist(rng)]);
                }
                chosen.assign(all.begin(), all.begin() + opt.planted_instances);
                std::vector<std::size_t> key = chosen;
                std::sort(key.begin(), key.end());
                if (used_sets.insert(std::move(key)).second) break;
            }
            if (is_train) train_sets.push_back(chosen);
        }

        // Distinct grid cells hosting the planted latents.
        std::vector<std::size_t> cell_ids(cells);
        for (std::size_t i = 0; i < cells; ++i) cell_ids[i] = i;
        for (std::size_t j = 0; j < opt.planted_instances; ++j) {
            std::uniform_int_distribution<std::size_t> dist(j, cell_ids.size() - 1);
            std::swap(cell_ids[j], cell_ids[dist(rng)]);
        }

        FeatureGrid grid;
        grid.grid_rows = opt.grid_rows;
        grid.grid_cols = opt.grid_cols;
        grid.candidates = Tensor::zeros({cells, opt.image_feat_dim});
        for (std::size_t i = 0; i < cells; ++i)
            for (std::size_t d = 0; d < opt.image_feat_dim; ++d)
                grid.candidates.at(i, d) = opt.noise * gauss(rng);
        for (std::size_t j = 0; j < opt.planted_instances; ++j)
            for (std::size_t d = 0; d < opt.image_feat_dim; ++d)
                grid.candidates.at(cell_ids[j], d) += latents[chosen[j]][d];

        Tensor latent_sum = Tensor::zeros({opt.image_feat_dim});
        for (std::size_t j = 0; j < opt.planted_instances; ++j)
            for (std::size_t d = 0; d < opt.image_feat_dim; ++d)
                latent_sum[d] += latents[chosen[j]][d];
        grid.context = Tensor::zeros({opt.image_ctx_dim});
        for (std::size_t d = 0; d < opt.image_feat_dim; ++d)
            for (std::size_t e = 0; e < opt.image_ctx_dim; ++e)
                grid.context[e] += latent_sum[d] * projection.at(d, e);
        for (std::size_t e = 0; e < opt.image_ctx_dim; ++e)
            grid.context[e] += opt.noise * gauss(rng);

        // Sentence: the concept words in canonical (sorted) order, then a few
        // fillers — a fixed toy syntax, like captions share one grammar.
        std::vector<std::size_t> spoken = chosen;
        std::sort(spoken.begin(), spoken.end());
        std::vector<std::string> words;
        for (std::size_t j = 0; j < opt.planted_instances; ++j)
            words.push_back(concept_word(spoken[j]));
        std::size_t n_fillers = 0;
        if (opt.max_fillers_per_sentence > 0 && opt.filler_words > 0) {
            std::uniform_int_distribution<std::size_t> dist(1, opt.max_fillers_per_sentence);
            n_fillers = dist(rng);
        }
        for (std::size_t f = 0; f < n_fillers; ++f) {
            std::uniform_int_distribution<std::size_t> dist(0, opt.filler_words - 1);
            words.push_back(filler_word(dist(rng)));
        }
        std::string sentence;
        for (std::size_t j = 0; j < words.size(); ++j) {
            if (j) sentence += " ";
            sentence += words[j];
        }

        char id_buf[16];
        std::snprintf(id_buf, sizeof(id_buf), "pair%04zu", p);
        ManifestRecord rec;
        rec.id = id_buf;
        rec.features = "features/" + rec.id + ".smfg";
        rec.sentences = {sentence};
        rec.split = p < opt.train_pairs                   ? "train"
                    : p < opt.train_pairs + opt.val_pairs ? "val"
                                                          : "test";
        save_feature_grid(out_dir / rec.features, grid);
        records.push_back(std::move(rec));
    }
    save_manifest(out_dir / "manifest.jsonl", records);
}

}  // namespace smlstm
