#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "smlstm/config.hpp"
#include "smlstm/encoders.hpp"

namespace smlstm {

/// One manifest line: an image (as a feature-grid file) and its sentences.
struct ManifestRecord {
    std::string id;
    std::string features;  // path, resolved relative to the manifest
    std::vector<std::string> sentences;
    std::string split;  // train | val | test
};

/// JSON-lines manifest: one object per line with keys id, features,
/// sentences, split.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestRecord>& records);

/// In-memory dataset: feature grids plus tokenized sentences, aligned by
/// record. Dimensions are validated against the model configuration at
/// load time.
struct Dataset {
    std::vector<ManifestRecord> records;
    std::vector<FeatureGrid> grids;
    std::vector<std::vector<TokenizedSentence>> sentences;

    std::size_t size() const { return records.size(); }
};

Dataset load_dataset(const std::filesystem::path& manifest_path, const Vocabulary& vocab,
                     const ModelConfig& cfg, const std::string& split_filter = "");

struct SyntheticOptions {
    std::size_t train_pairs = 64;
    std::size_t val_pairs = 0;
    std::size_t test_pairs = 16;
    std::size_t grid_rows = 4;
    std::size_t grid_cols = 4;
    std::size_t image_feat_dim = 16;
    std::size_t image_ctx_dim = 16;
    std::size_t planted_instances = 3;  // latent instances per pair
    std::size_t concepts = 12;          // size of the shared latent dictionary
    std::size_t filler_words = 8;       // non-concept vocabulary
    std::size_t max_fillers_per_sentence = 3;
    double noise = 0.1;
    // Reuse training concept sets for val/test pairs (fresh noise, cells,
    // fillers and word order), instead of drawing unseen compositions.
    bool eval_sets_from_train = false;
    std::uint64_t seed = 7;
};

/// Generates paired data with planted cross-modal structure: each pair
/// draws `planted_instances` latent vectors from a shared dictionary;
/// those vectors are written (plus noise) into distinct image grid cells,
/// and the corresponding concept words appear in the sentence among random
/// fillers. The image context is a projection of the summed latents.
/// Writes features/<id>.smfg, vocab.txt and manifest.jsonl into out_dir.
void generate_synthetic(const std::filesystem::path& out_dir, const SyntheticOptions& opt);

}  // namespace smlstm
