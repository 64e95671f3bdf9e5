#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "smlstm/aggregator.hpp"
#include "smlstm/config.hpp"
#include "smlstm/dataset.hpp"
#include "smlstm/encoders.hpp"

namespace smlstm {

/// Which retrieval direction a metric is computed over.
enum class QueryDirection {
    Annotation,  // image query -> ranked sentences
    Retrieval,   // sentence query -> ranked images
};

struct GroundTruth {
    std::vector<std::vector<std::size_t>> image_to_sentences;
    std::vector<std::size_t> sentence_to_image;

    static GroundTruth from_counts(const std::vector<std::size_t>& sentences_per_image);
    void validate(std::size_t n_images, std::size_t n_sentences) const;
};

struct DirectionMetrics {
    double r1 = 0.0;
    double r5 = 0.0;
    double r10 = 0.0;
    double med_r = 0.0;
};

struct MetricsReport {
    DirectionMetrics annotation;
    DirectionMetrics retrieval;
    double sum = 0.0;  // the six recall values added together
};

/// scores[i][k] = forward_pair(image i, sentence k); deterministic.
Tensor score_all(const std::vector<const FeatureGrid*>& images,
                 const std::vector<EncodedSentence>& sentences, const ParamStore& params,
                 const ModelConfig& cfg);

/// Fraction (x100) of queries whose top-k candidates, ties broken by
/// ascending index, contain at least one ground-truth item.
double recall_at_k(const Tensor& scores, const GroundTruth& truth, std::size_t k,
                   QueryDirection direction);

/// Median (mean-of-two for even counts) over queries of the 1-based rank
/// of the best-ranked ground-truth item.
double median_rank(const Tensor& scores, const GroundTruth& truth, QueryDirection direction);

/// Elementwise sum of equally shaped score matrices.
Tensor ensemble(const std::vector<Tensor>& matrices);

MetricsReport compute_metrics(const Tensor& scores, const GroundTruth& truth);
std::string metrics_to_json(const MetricsReport& report);

/// Encoded sentences, image pointers and ground truth for one dataset,
/// ready for score_all. Sentences are flattened across records.
struct EvalSet {
    std::vector<const FeatureGrid*> images;
    std::vector<EncodedSentence> sentences;
    std::vector<std::pair<std::size_t, std::size_t>> sentence_origin;  // (record, index)
    GroundTruth truth;
};

EvalSet prepare_eval(const Dataset& ds, const ParamStore& params, const ModelConfig& cfg);

/// Per timestep: the image saliency as a grid_rows x grid_cols matrix in
/// both text ("<pair>_t<step>.txt") and binary-PGM form
/// ("<pair>_t<step>.pgm", nearest-neighbor upsampled to upsample x
/// upsample), plus the top-2 words per step in "<pair>_words.txt".
void export_saliency(const SaliencyTrace& trace, std::size_t grid_rows, std::size_t grid_cols,
                     const std::vector<std::string>& words, const std::filesystem::path& out_dir,
                     const std::string& pair_id, std::size_t upsample = 112);

/// Mean image saliency per timestep across traces (all traces must share
/// T and grid size).
std::vector<Tensor> mean_image_saliency(const std::vector<SaliencyTrace>& traces);

/// Nearest-neighbor upsampled binary PGM (P5) of one saliency map, scaled
/// so the map maximum is white.
void write_saliency_pgm(const Tensor& map, std::size_t grid_rows, std::size_t grid_cols,
                        std::size_t upsample, const std::filesystem::path& path);

}  // namespace smlstm
