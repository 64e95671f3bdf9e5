#include "smlstm/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "smlstm/errors.hpp"

namespace smlstm {

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (v.tokens_[i].empty()) throw DataError("vocabulary: empty token at index " + std::to_string(i));
        if (!v.ids_.emplace(v.tokens_[i], i + 2).second)
            throw DataError("vocabulary: duplicate token '" + v.tokens_[i] + "'");
    }
    return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file '" + path.string() + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file '" + path.string() + "'");
    for (const auto& t : tokens_) out << t << "\n";
}

std::size_t Vocabulary::lookup(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_for(std::size_t id) const {
    static const std::string pad = "<pad>";
    static const std::string unk = "<unk>";
    if (id == kPadId) return pad;
    if (id == kUnkId) return unk;
    if (id - 2 >= tokens_.size()) throw DataError("vocabulary: id out of range");
    return tokens_[id - 2];
}

std::size_t TokenizedSentence::length() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

std::vector<std::string> clean_tokens(const std::string& raw) {
    std::string cleaned;
    cleaned.reserve(raw.size());
    for (unsigned char ch : raw) {
        if (std::ispunct(ch)) continue;
        cleaned.push_back(static_cast<char>(std::tolower(ch)));
    }
    std::istringstream in(cleaned);
    std::vector<std::string> tokens;
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

TokenizedSentence tokenize(const std::string& raw, const Vocabulary& vocab,
                           std::size_t max_len) {
    std::vector<std::string> tokens = clean_tokens(raw);
    if (tokens.empty())
        throw DegenerateInputError("sentence is empty after cleaning: '" + raw + "'");
    if (tokens.size() > max_len) tokens.resize(max_len);
    TokenizedSentence out;
    out.ids.assign(max_len, Vocabulary::kPadId);
    out.mask.assign(max_len, false);
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        out.ids[j] = vocab.lookup(tokens[j]);
        out.mask[j] = true;
    }
    return out;
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& out, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        float f = static_cast<float>(t[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
}

void read_f32(std::istream& in, Tensor& t, const std::string& path, std::size_t& offset) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t bits = read_u32(in, path, offset);
        offset += 4;
        float f;
        std::memcpy(&f, &bits, 4);
        t[i] = static_cast<double>(f);
    }
}

}  // namespace

void save_feature_grid(const std::filesystem::path& path, const FeatureGrid& grid) {
    if (grid.candidates.rank() != 2 || grid.context.rank() != 1)
        throw DimensionError("save_feature_grid: candidates must be 2-D and context 1-D");
    if (grid.grid_rows * grid.grid_cols != grid.candidates.rows())
        throw DimensionError("save_feature_grid: grid geometry does not match candidate count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write feature grid '" + path.string() + "'");
    out.write("SMFG", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<std::uint32_t>(grid.candidates.rows()));
    write_u32(out, static_cast<std::uint32_t>(grid.candidates.cols()));
    write_u32(out, static_cast<std::uint32_t>(grid.context.size()));
    write_u32(out, static_cast<std::uint32_t>(grid.grid_rows));
    write_u32(out, static_cast<std::uint32_t>(grid.grid_cols));
    write_f32(out, grid.candidates);
    write_f32(out, grid.context);
}

FeatureGrid load_feature_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open feature grid '" + path.string() + "'");
    const std::string p = path.string();
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "SMFG", 4) != 0)
        throw FormatError(p + ": bad magic at byte offset 0");
    std::size_t offset = 4;
    const std::uint32_t version = read_u32(in, p, offset);
    offset += 4;
    if (version != 1)
        throw FormatError(p + ": unsupported version " + std::to_string(version) +
                          " at byte offset 4");
    const std::uint32_t cand_count = read_u32(in, p, offset); offset += 4;
    const std::uint32_t feat_dim = read_u32(in, p, offset); offset += 4;
    const std::uint32_t ctx_dim = read_u32(in, p, offset); offset += 4;
    const std::uint32_t rows = read_u32(in, p, offset); offset += 4;
    const std::uint32_t cols = read_u32(in, p, offset); offset += 4;
    if (cand_count == 0 || feat_dim == 0 || ctx_dim == 0 ||
        static_cast<std::uint64_t>(rows) * cols != cand_count) {
        throw FormatError(p + ": inconsistent header dimensions at byte offset 8");
    }
    FeatureGrid grid;
    grid.candidates = Tensor::zeros({cand_count, feat_dim});
    grid.context = Tensor::zeros({ctx_dim});
    grid.grid_rows = rows;
    grid.grid_cols = cols;
    read_f32(in, grid.candidates, p, offset);
    read_f32(in, grid.context, p, offset);
    return grid;
}

SentenceNodes build_sentence_encoder(Graph& g, const TokenizedSentence& tokens,
                                     const ModelConfig& cfg) {
    const std::size_t len = tokens.length();
    if (len == 0) throw DegenerateInputError("encode_sentence: empty token mask");
    if (tokens.ids.size() != cfg.sentence_len)
        throw DimensionError("encode_sentence: sentence has " + std::to_string(tokens.ids.size()) +
                             " slots, configuration expects " + std::to_string(cfg.sentence_len));

    Value table = g.param("emb.table");
    std::vector<Value> embedded(len);
    for (std::size_t j = 0; j < len; ++j) embedded[j] = g.row(table, tokens.ids[j]);

    // Both BLSTM directions run over the real-token prefix only; padded
    // positions contribute all-zero candidate rows.
    std::vector<Value> fw(len), bw(len);
    LstmState state = lstm_zero_state(g, cfg.blstm_hidden);
    for (std::size_t j = 0; j < len; ++j) {
        state = lstm_step(g, "enc.fw", embedded[j], state);
        fw[j] = state.h;
    }
    state = lstm_zero_state(g, cfg.blstm_hidden);
    for (std::size_t j = len; j-- > 0;) {
        state = lstm_step(g, "enc.bw", embedded[j], state);
        bw[j] = state.h;
    }

    std::vector<Value> rows(cfg.sentence_len);
    Value zero_row = g.input(Tensor::zeros({cfg.word_feat_dim()}));
    for (std::size_t j = 0; j < cfg.sentence_len; ++j)
        rows[j] = j < len ? g.concat(fw[j], bw[j]) : zero_row;

    LstmState ctx = lstm_zero_state(g, cfg.sentence_ctx_dim);
    for (std::size_t j = 0; j < len; ++j) ctx = lstm_step(g, "enc.ctx", embedded[j], ctx);

    SentenceNodes out;
    out.candidates = g.stack(rows);
    out.context = ctx.h;
    out.mask = tokens.mask;
    return out;
}

ImageNodes build_image_input(Graph& g, const FeatureGrid& grid) {
    return {g.input(grid.candidates), g.input(grid.context)};
}

EncodedSentence encode_sentence(const TokenizedSentence& tokens, const ParamStore& params,
                                const ModelConfig& cfg) {
    Graph g(&params);
    SentenceNodes nodes = build_sentence_encoder(g, tokens, cfg);
    EncodedSentence out;
    out.candidates = g.value(nodes.candidates);
    out.context = g.value(nodes.context);
    out.mask = nodes.mask;
    return out;
}

}  // namespace smlstm
