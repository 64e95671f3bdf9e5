#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "smlstm/config.hpp"
#include "smlstm/graph.hpp"
#include "smlstm/model.hpp"
#include "smlstm/tensor.hpp"

namespace smlstm {

/// Token -> id mapping. Id 0 is padding, 1 is unknown; real tokens start
/// at 2 and are dense.
class Vocabulary {
public:
    static constexpr std::size_t kPadId = 0;
    static constexpr std::size_t kUnkId = 1;

    static Vocabulary from_tokens(std::vector<std::string> tokens);
    /// One token per line; line number = id - 2.
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t lookup(const std::string& token) const;  // kUnkId when absent
    std::size_t size() const { return tokens_.size() + 2; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token_for(std::size_t id) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
};

struct TokenizedSentence {
    std::vector<std::size_t> ids;  // length = configured sentence_len
    std::vector<bool> mask;        // true prefix at real-token positions
    std::size_t length() const;    // count of real tokens
};

/// Lowercase, strip ASCII punctuation, split on whitespace.
std::vector<std::string> clean_tokens(const std::string& raw);

/// Tokens mapped to ids, truncated at max_len and zero-padded with mask.
/// Throws DegenerateInputError if nothing survives cleaning.
TokenizedSentence tokenize(const std::string& raw, const Vocabulary& vocab,
                           std::size_t max_len);

/// Image instance candidates {a_i} plus global context m.
struct FeatureGrid {
    Tensor candidates;  // [I x F]
    Tensor context;     // [D]
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
};

/// Binary feature-grid file: magic "SMFG", u32 version=1, u32 I, u32 F,
/// u32 D, u32 grid_rows, u32 grid_cols, I*F float32 candidates row-major,
/// D float32 context. Little-endian throughout.
FeatureGrid load_feature_grid(const std::filesystem::path& path);
void save_feature_grid(const std::filesystem::path& path, const FeatureGrid& grid);

/// Word candidates {w_j} plus sentence context n. Rows at masked-out
/// positions are all-zero.
struct EncodedSentence {
    Tensor candidates;  // [J x G]
    Tensor context;     // [E]
    std::vector<bool> mask;
};

/// Graph handles for one encoded sentence; used when gradients must flow
/// back into the encoder parameters.
struct SentenceNodes {
    Value candidates;  // [J x G]
    Value context;     // [E]
    std::vector<bool> mask;
};

/// Graph handles for one image; candidates and context are constants
/// (the upstream feature extractor is fixed).
struct ImageNodes {
    Value candidates;  // [I x F]
    Value context;     // [D]
};

/// Candidate BLSTM over the masked prefix (both directions see real tokens
/// only) plus the separate sentence-context LSTM; context is its hidden
/// state at the last real token.
SentenceNodes build_sentence_encoder(Graph& g, const TokenizedSentence& tokens,
                                     const ModelConfig& cfg);

ImageNodes build_image_input(Graph& g, const FeatureGrid& grid);

/// Convenience wrapper evaluating the encoder on a throwaway graph.
EncodedSentence encode_sentence(const TokenizedSentence& tokens, const ParamStore& params,
                                const ModelConfig& cfg);

}  // namespace smlstm
