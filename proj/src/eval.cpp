#include "smlstm/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "smlstm/errors.hpp"

namespace smlstm {

GroundTruth GroundTruth::from_counts(const std::vector<std::size_t>& sentences_per_image) {
    GroundTruth t;
    std::size_t next = 0;
    for (std::size_t i = 0; i < sentences_per_image.size(); ++i) {
        if (sentences_per_image[i] == 0)
            throw ContractError("ground truth: image " + std::to_string(i) + " has no sentences");
        std::vector<std::size_t> ids;
        for (std::size_t s = 0; s < sentences_per_image[i]; ++s) {
            ids.push_back(next);
            t.sentence_to_image.push_back(i);
            ++next;
        }
        t.image_to_sentences.push_back(std::move(ids));
    }
    return t;
}

void GroundTruth::validate(std::size_t n_images, std::size_t n_sentences) const {
    if (image_to_sentences.size() != n_images || sentence_to_image.size() != n_sentences)
        throw ContractError("ground truth does not cover the score matrix");
    for (std::size_t i = 0; i < image_to_sentences.size(); ++i)
        for (std::size_t s : image_to_sentences[i])
            if (s >= n_sentences || sentence_to_image[s] != i)
                throw ContractError("ground truth maps are inconsistent");
}

Tensor score_all(const std::vector<const FeatureGrid*>& images,
                 const std::vector<EncodedSentence>& sentences, const ParamStore& params,
                 const ModelConfig& cfg) {
    Tensor scores = Tensor::zeros({images.size(), sentences.size()});
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t k = 0; k < sentences.size(); ++k)
            scores.at(i, k) = forward_pair(*images[i], sentences[k], params, cfg).score;
    return scores;
}

namespace {

/// Candidate indices sorted by descending score, ties by ascending index.
std::vector<std::size_t> ranking(const Tensor& scores, std::size_t query,
                                 QueryDirection direction) {
    const bool by_row = direction == QueryDirection::Annotation;
    const std::size_t count = by_row ? scores.cols() : scores.rows();
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = by_row ? scores.at(query, a) : scores.at(a, query);
        const double sb = by_row ? scores.at(query, b) : scores.at(b, query);
        return sa > sb;
    });
    return order;
}

std::size_t query_count(const Tensor& scores, QueryDirection direction) {
    return direction == QueryDirection::Annotation ? scores.rows() : scores.cols();
}

bool is_hit(const GroundTruth& truth, QueryDirection direction, std::size_t query,
            std::size_t candidate) {
    if (direction == QueryDirection::Annotation) {
        const auto& ids = truth.image_to_sentences[query];
        return std::find(ids.begin(), ids.end(), candidate) != ids.end();
    }
    return truth.sentence_to_image[query] == candidate;
}

}  // namespace

double recall_at_k(const Tensor& scores, const GroundTruth& truth, std::size_t k,
                   QueryDirection direction) {
    if (k < 1) throw ContractError("recall_at_k: k must be >= 1");
    truth.validate(scores.rows(), scores.cols());
    const std::size_t candidates =
        direction == QueryDirection::Annotation ? scores.cols() : scores.rows();
    if (k > candidates)
        throw ContractError("recall_at_k: k=" + std::to_string(k) + " exceeds " +
                            std::to_string(candidates) + " candidates");
    const std::size_t queries = query_count(scores, direction);
    std::size_t hits = 0;
    for (std::size_t q = 0; q < queries; ++q) {
        auto order = ranking(scores, q, direction);
        for (std::size_t r = 0; r < k; ++r) {
            if (is_hit(truth, direction, q, order[r])) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(queries);
}

double median_rank(const Tensor& scores, const GroundTruth& truth, QueryDirection direction) {
    truth.validate(scores.rows(), scores.cols());
    const std::size_t queries = query_count(scores, direction);
    std::vector<double> first_ranks;
    for (std::size_t q = 0; q < queries; ++q) {
        auto order = ranking(scores, q, direction);
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (is_hit(truth, direction, q, order[r])) {
                first_ranks.push_back(static_cast<double>(r + 1));
                break;
            }
        }
    }
    std::sort(first_ranks.begin(), first_ranks.end());
    const std::size_t n = first_ranks.size();
    if (n == 0) throw ContractError("median_rank: no queries");
    if (n % 2 == 1) return first_ranks[n / 2];
    return 0.5 * (first_ranks[n / 2 - 1] + first_ranks[n / 2]);
}

Tensor ensemble(const std::vector<Tensor>& matrices) {
    if (matrices.empty()) throw ContractError("ensemble: no matrices");
    Tensor out = matrices[0];
    for (std::size_t m = 1; m < matrices.size(); ++m) {
        require_same_shape(out, matrices[m], "ensemble");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += matrices[m][i];
    }
    return out;
}

namespace {
DirectionMetrics direction_metrics(const Tensor& scores, const GroundTruth& truth,
                                   QueryDirection dir) {
    const std::size_t candidates =
        dir == QueryDirection::Annotation ? scores.cols() : scores.rows();
    DirectionMetrics m;
    m.r1 = recall_at_k(scores, truth, std::min<std::size_t>(1, candidates), dir);
    m.r5 = recall_at_k(scores, truth, std::min<std::size_t>(5, candidates), dir);
    m.r10 = recall_at_k(scores, truth, std::min<std::size_t>(10, candidates), dir);
    m.med_r = median_rank(scores, truth, dir);
    return m;
}
}  // namespace

MetricsReport compute_metrics(const Tensor& scores, const GroundTruth& truth) {
    MetricsReport r;
    r.annotation = direction_metrics(scores, truth, QueryDirection::Annotation);
    r.retrieval = direction_metrics(scores, truth, QueryDirection::Retrieval);
    r.sum = r.annotation.r1 + r.annotation.r5 + r.annotation.r10 + r.retrieval.r1 +
            r.retrieval.r5 + r.retrieval.r10;
    return r;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::json j{
        {"annotation",
         {{"R@1", report.annotation.r1},
          {"R@5", report.annotation.r5},
          {"R@10", report.annotation.r10},
          {"Med r", report.annotation.med_r}}},
        {"retrieval",
         {{"R@1", report.retrieval.r1},
          {"R@5", report.retrieval.r5},
          {"R@10", report.retrieval.r10},
          {"Med r", report.retrieval.med_r}}},
        {"Sum", report.sum}};
    return j.dump(2);
}

EvalSet prepare_eval(const Dataset& ds, const ParamStore& params, const ModelConfig& cfg) {
    EvalSet set;
    std::vector<std::size_t> counts;
    for (std::size_t r = 0; r < ds.size(); ++r) {
        set.images.push_back(&ds.grids[r]);
        counts.push_back(ds.sentences[r].size());
        for (std::size_t s = 0; s < ds.sentences[r].size(); ++s) {
            set.sentences.push_back(encode_sentence(ds.sentences[r][s], params, cfg));
            set.sentence_origin.emplace_back(r, s);
        }
    }
    set.truth = GroundTruth::from_counts(counts);
    return set;
}

void write_saliency_pgm(const Tensor& map, std::size_t grid_rows, std::size_t grid_cols,
                        std::size_t upsample, const std::filesystem::path& path) {
    if (map.size() != grid_rows * grid_cols)
        throw DimensionError("saliency map size does not match grid geometry");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    const std::size_t w = std::max<std::size_t>(upsample, grid_cols);
    const std::size_t h = std::max<std::size_t>(upsample, grid_rows);
    double peak = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i) peak = std::max(peak, map[i]);
    if (peak <= 0.0) peak = 1.0;
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(w);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t gy = y * grid_rows / h;
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t gx = x * grid_cols / w;
            const double v = map[gy * grid_cols + gx] / peak;
            row[x] = static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(w));
    }
}

void export_saliency(const SaliencyTrace& trace, std::size_t grid_rows, std::size_t grid_cols,
                     const std::vector<std::string>& words, const std::filesystem::path& out_dir,
                     const std::string& pair_id, std::size_t upsample) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    std::ofstream words_out(out_dir / (pair_id + "_words.txt"));
    if (!words_out)
        throw DataError("cannot write '" + (out_dir / (pair_id + "_words.txt")).string() + "'");
    for (std::size_t t = 0; t < trace.size(); ++t) {
        const std::string stem = pair_id + "_t" + std::to_string(t + 1);
        write_saliency_pgm(trace[t].image, grid_rows, grid_cols, upsample,
                           out_dir / (stem + ".pgm"));
        std::ofstream txt(out_dir / (stem + ".txt"));
        if (!txt) throw DataError("cannot write '" + (out_dir / (stem + ".txt")).string() + "'");
        char buf[32];
        for (std::size_t r = 0; r < grid_rows; ++r) {
            for (std::size_t c = 0; c < grid_cols; ++c) {
                std::snprintf(buf, sizeof(buf), "%.6f", trace[t].image[r * grid_cols + c]);
                txt << buf << (c + 1 == grid_cols ? "\n" : " ");
            }
        }
        // Top-2 words by sentence saliency, ties by lower index.
        const Tensor& q = trace[t].sentence;
        std::vector<std::size_t> order(q.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });
        words_out << "t" << (t + 1) << ":";
        for (std::size_t r = 0; r < std::min<std::size_t>(2, order.size()); ++r) {
            const std::size_t j = order[r];
            words_out << " " << (j < words.size() ? words[j] : "<pad>");
        }
        words_out << "\n";
    }
}

std::vector<Tensor> mean_image_saliency(const std::vector<SaliencyTrace>& traces) {
    if (traces.empty()) throw ContractError("mean_image_saliency: no traces");
    const std::size_t steps = traces[0].size();
    std::vector<Tensor> means;
    for (std::size_t t = 0; t < steps; ++t)
        means.push_back(Tensor::zeros(traces[0][t].image.shape()));
    for (const SaliencyTrace& trace : traces) {
        if (trace.size() != steps)
            throw ContractError("mean_image_saliency: traces disagree on step count");
        for (std::size_t t = 0; t < steps; ++t) {
            require_same_shape(means[t], trace[t].image, "mean_image_saliency");
            for (std::size_t i = 0; i < means[t].size(); ++i) means[t][i] += trace[t].image[i];
        }
    }
    for (Tensor& m : means)
        for (std::size_t i = 0; i < m.size(); ++i) m[i] /= static_cast<double>(traces.size());
    return means;
}

}  // namespace smlstm
