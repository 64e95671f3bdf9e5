#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <doctest.h>

#include "smlstm/errors.hpp"
#include "smlstm/eval.hpp"

using namespace smlstm;
namespace fs = std::filesystem;

namespace {

/// Brute-force recall: fraction of queries whose true item ranks in the
/// top k, ranking by descending score with ties broken by lower index.
double oracle_recall(const Tensor& scores, const GroundTruth& truth, std::size_t k,
                     QueryDirection dir) {
    const bool rows = dir == QueryDirection::Annotation;
    const std::size_t queries = rows ? scores.rows() : scores.cols();
    const std::size_t candidates = rows ? scores.cols() : scores.rows();
    std::size_t hits = 0;
    for (std::size_t q = 0; q < queries; ++q) {
        std::vector<std::size_t> order(candidates);
        for (std::size_t c = 0; c < candidates; ++c) order[c] = c;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double sa = rows ? scores.at(q, a) : scores.at(a, q);
            const double sb = rows ? scores.at(q, b) : scores.at(b, q);
            return sa > sb;
        });
        for (std::size_t r = 0; r < k; ++r) {
            const bool hit = rows ? std::find(truth.image_to_sentences[q].begin(),
                                              truth.image_to_sentences[q].end(),
                                              order[r]) != truth.image_to_sentences[q].end()
                                  : truth.sentence_to_image[q] == order[r];
            if (hit) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(queries);
}

GroundTruth diagonal_truth(std::size_t n) {
    return GroundTruth::from_counts(std::vector<std::size_t>(n, 1));
}

}  // namespace

TEST_CASE("recall and median rank on a hand-built matrix") {
    // 3 images x 3 sentences, diagonal is ground truth.
    Tensor s({3, 3}, {0.9, 0.1, 0.0,   // image 0 ranks its sentence first
                      0.8, 0.2, 0.3,   // image 1's true sentence ranks 3rd
                      0.0, 0.5, 0.5}); // tie at 0.5: index 1 ranks before 2
    GroundTruth truth = diagonal_truth(3);
    CHECK(recall_at_k(s, truth, 1, QueryDirection::Annotation) == doctest::Approx(100.0 / 3));
    CHECK(recall_at_k(s, truth, 2, QueryDirection::Annotation) == doctest::Approx(200.0 / 3));
    CHECK(recall_at_k(s, truth, 3, QueryDirection::Annotation) == doctest::Approx(100.0));
    // Ranks of the true sentence per image: 1, 3, 2 -> median 2.
    CHECK(median_rank(s, truth, QueryDirection::Annotation) == doctest::Approx(2.0));

    // Sentence->image: columns. Column 0: scores (0.9, 0.8, 0.0), true image 0 -> rank 1.
    // Column 1: (0.1, 0.2, 0.5), true image 1 -> rank 2. Column 2: (0.0, 0.3, 0.5) -> rank 1.
    CHECK(recall_at_k(s, truth, 1, QueryDirection::Retrieval) == doctest::Approx(200.0 / 3));
    CHECK(median_rank(s, truth, QueryDirection::Retrieval) == doctest::Approx(1.0));
}

TEST_CASE("median rank averages the two middle ranks for even query counts") {
    Tensor s({2, 2}, {1.0, 0.0, 1.0, 0.5});  // ranks: image0 -> 1, image1 -> 2
    CHECK(median_rank(s, diagonal_truth(2), QueryDirection::Annotation) == doctest::Approx(1.5));
}

TEST_CASE("metrics agree with brute-force oracles on random matrices") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<std::size_t> size_dist(2, 8);
        const std::size_t n = size_dist(rng);
        Tensor s = Tensor::uniform({n, n}, rng, -1, 1);
        GroundTruth truth = diagonal_truth(n);
        for (QueryDirection dir : {QueryDirection::Annotation, QueryDirection::Retrieval})
            for (std::size_t k = 1; k <= n; ++k)
                CHECK(recall_at_k(s, truth, k, dir) ==
                      doctest::Approx(oracle_recall(s, truth, k, dir)));
    }
}

TEST_CASE("recall is monotone in k and respects its bounds") {
    std::mt19937_64 rng(37);
    Tensor s = Tensor::uniform({6, 6}, rng, -1, 1);
    GroundTruth truth = diagonal_truth(6);
    double prev = 0.0;
    for (std::size_t k = 1; k <= 6; ++k) {
        const double r = recall_at_k(s, truth, k, QueryDirection::Annotation);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK(prev == doctest::Approx(100.0));
    CHECK_THROWS_AS(recall_at_k(s, truth, 0, QueryDirection::Annotation), ContractError);
    CHECK_THROWS_AS(recall_at_k(s, truth, 7, QueryDirection::Annotation), ContractError);
}

TEST_CASE("metrics are invariant under increasing score transforms") {
    std::mt19937_64 rng(41);
    Tensor s = Tensor::uniform({5, 5}, rng, -1, 1);
    Tensor warped = s;
    for (std::size_t i = 0; i < warped.size(); ++i) warped[i] = std::exp(2.0 * warped[i]) + 3.0;
    GroundTruth truth = diagonal_truth(5);
    for (QueryDirection dir : {QueryDirection::Annotation, QueryDirection::Retrieval}) {
        for (std::size_t k = 1; k <= 5; ++k)
            CHECK(recall_at_k(s, truth, k, dir) == recall_at_k(warped, truth, k, dir));
        CHECK(median_rank(s, truth, dir) == median_rank(warped, truth, dir));
    }
}

TEST_CASE("multiple sentences per image count as alternative ground truths") {
    // 2 images, 2 sentences each; sentences 0,1 belong to image 0.
    Tensor s({2, 4}, {0.1, 0.9, 0.0, 0.2,
                      0.3, 0.0, 0.8, 0.1});
    GroundTruth truth = GroundTruth::from_counts({2, 2});
    CHECK(recall_at_k(s, truth, 1, QueryDirection::Annotation) == doctest::Approx(100.0));
    CHECK(truth.sentence_to_image[1] == 0);
    CHECK(truth.sentence_to_image[2] == 1);
}

TEST_CASE("ensemble sums score matrices elementwise") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {10, 20, 30, 40});
    Tensor c = ensemble({a, b});
    CHECK(c.at(1, 0) == 33.0);
    CHECK_THROWS_AS(ensemble({a, Tensor::zeros({3, 2})}), DimensionError);
    CHECK_THROWS_AS(ensemble({}), ContractError);

    // An ensemble of identical matrices ranks identically to each member.
    GroundTruth truth = diagonal_truth(2);
    CHECK(recall_at_k(ensemble({a, a}), truth, 1, QueryDirection::Annotation) ==
          recall_at_k(a, truth, 1, QueryDirection::Annotation));
}

TEST_CASE("the aggregate report adds the six recalls") {
    std::mt19937_64 rng(43);
    Tensor s = Tensor::uniform({6, 6}, rng, -1, 1);
    GroundTruth truth = diagonal_truth(6);
    MetricsReport r = compute_metrics(s, truth);
    CHECK(r.sum == doctest::Approx(r.annotation.r1 + r.annotation.r5 + r.annotation.r10 +
                                   r.retrieval.r1 + r.retrieval.r5 + r.retrieval.r10));
    const std::string json = metrics_to_json(r);
    CHECK(json.find("\"R@1\"") != std::string::npos);
    CHECK(json.find("\"Med r\"") != std::string::npos);
    CHECK(json.find("\"Sum\"") != std::string::npos);
}

TEST_CASE("saliency PGM export: header, size and peak scaling") {
    fs::path dir = fs::temp_directory_path() / "smlstm_eval_test";
    fs::create_directories(dir);
    fs::path path = dir / "map.pgm";
    Tensor map({4}, {0.1, 0.2, 0.3, 0.4});
    write_saliency_pgm(map, 2, 2, 4, path);

    std::ifstream in(path, std::ios::binary);
    std::string magic;
    std::size_t w, h, maxval;
    in >> magic >> w >> h >> maxval;
    CHECK(magic == "P5");
    CHECK(w == 4);
    CHECK(h == 4);
    CHECK(maxval == 255);
    in.get();
    std::vector<unsigned char> pixels(w * h);
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    REQUIRE(in.gcount() == static_cast<std::streamsize>(w * h));
    // Peak cell (bottom-right quadrant) is white; top-left is 0.1/0.4 of it.
    CHECK(pixels[w * h - 1] == 255);
    CHECK(pixels[0] == static_cast<unsigned char>(0.25 * 255.0 + 0.5));
    CHECK_THROWS_AS(write_saliency_pgm(map, 3, 2, 4, path), DimensionError);
}

TEST_CASE("saliency export writes per-step files plus top words") {
    fs::path dir = fs::temp_directory_path() / "smlstm_eval_export";
    fs::remove_all(dir);
    SaliencyTrace trace;
    trace.push_back({Tensor({4}, {0.7, 0.1, 0.1, 0.1}), Tensor({3}, {0.2, 0.5, 0.3})});
    trace.push_back({Tensor({4}, {0.1, 0.1, 0.1, 0.7}), Tensor({3}, {0.6, 0.2, 0.2})});
    export_saliency(trace, 2, 2, {"red", "green", "blue"}, dir, "pairX", 8);

    CHECK(fs::exists(dir / "pairX_t1.pgm"));
    CHECK(fs::exists(dir / "pairX_t2.pgm"));
    CHECK(fs::exists(dir / "pairX_t1.txt"));
    std::ifstream words(dir / "pairX_words.txt");
    std::string line1, line2;
    std::getline(words, line1);
    std::getline(words, line2);
    CHECK(line1 == "t1: green blue");
    CHECK(line2 == "t2: red green");

    std::ifstream txt(dir / "pairX_t1.txt");
    double a, b, c, d;
    txt >> a >> b >> c >> d;
    CHECK(a == doctest::Approx(0.7));
    CHECK(d == doctest::Approx(0.1));
}

TEST_CASE("mean saliency averages traces per timestep") {
    SaliencyTrace t1{{Tensor({2}, {1.0, 0.0}), Tensor({1}, {1.0})}};
    SaliencyTrace t2{{Tensor({2}, {0.0, 1.0}), Tensor({1}, {1.0})}};
    std::vector<Tensor> means = mean_image_saliency({t1, t2});
    REQUIRE(means.size() == 1);
    CHECK(means[0][0] == doctest::Approx(0.5));
    CHECK(means[0][1] == doctest::Approx(0.5));
    SaliencyTrace longer{{Tensor({2}, {1.0, 0.0}), Tensor({1}, {1.0})},
                         {Tensor({2}, {1.0, 0.0}), Tensor({1}, {1.0})}};
    CHECK_THROWS_AS(mean_image_saliency({t1, longer}), ContractError);
}
