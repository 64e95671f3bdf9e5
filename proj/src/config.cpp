#include "smlstm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "smlstm/errors.hpp"

namespace smlstm {

AttentionVariant variant_from_string(const std::string& s) {
    if (s == "full") return AttentionVariant::Full;
    if (s == "att" || s == "no-context") return AttentionVariant::NoContext;
    if (s == "ctx" || s == "context-only") return AttentionVariant::ContextOnly;
    if (s == "mean") return AttentionVariant::Mean;
    throw ConfigError("unknown attention variant '" + s + "' (full|att|ctx|mean)");
}

std::string to_string(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::Full: return "full";
        case AttentionVariant::NoContext: return "att";
        case AttentionVariant::ContextOnly: return "ctx";
        case AttentionVariant::Mean: return "mean";
    }
    return "full";
}

RegularizerForm regularizer_from_string(const std::string& s) {
    if (s == "signed") return RegularizerForm::Signed;
    if (s == "squared") return RegularizerForm::Squared;
    throw ConfigError("unknown regularizer form '" + s + "' (signed|squared)");
}

std::string to_string(RegularizerForm f) {
    return f == RegularizerForm::Signed ? "signed" : "squared";
}

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "momentum") return OptimizerKind::Momentum;
    throw ConfigError("unknown optimizer '" + s + "' (adam|momentum)");
}

std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::Adam ? "adam" : "momentum";
}

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
    };
    positive(grid_rows, "grid_rows");
    positive(grid_cols, "grid_cols");
    positive(image_feat_dim, "image_feat_dim");
    positive(image_ctx_dim, "image_ctx_dim");
    positive(sentence_len, "sentence_len");
    positive(blstm_hidden, "blstm_hidden");
    positive(sentence_ctx_dim, "sentence_ctx_dim");
    positive(hidden_dim, "hidden_dim");
    positive(attention_dim, "attention_dim");
    positive(sim_dim, "sim_dim");
    positive(embed_dim, "embed_dim");
    positive(timesteps, "timesteps");
}

void RunConfig::validate() const {
    model.validate();
    if (!(margin > 0.0)) throw ConfigError("train.margin must be > 0");
    if (lambda < 0.0) throw ConfigError("train.lambda must be >= 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
    if (negatives_per_positive == 0)
        throw ConfigError("train.negatives must be positive");
}

namespace {

std::size_t parse_size(const std::string& v, const std::string& key) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("bad integer for " + key + ": '" + v + "'");
    return out;
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + v + "'");
    }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"model.grid_rows", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.grid_rows = parse_size(v, k); }},
        {"model.grid_cols", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.grid_cols = parse_size(v, k); }},
        {"model.image_feat_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.image_feat_dim = parse_size(v, k); }},
        {"model.image_ctx_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.image_ctx_dim = parse_size(v, k); }},
        {"model.sentence_len", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.sentence_len = parse_size(v, k); }},
        {"model.blstm_hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.blstm_hidden = parse_size(v, k); }},
        {"model.sentence_ctx_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.sentence_ctx_dim = parse_size(v, k); }},
        {"model.hidden_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.hidden_dim = parse_size(v, k); }},
        {"model.attention_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.attention_dim = parse_size(v, k); }},
        {"model.sim_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.sim_dim = parse_size(v, k); }},
        {"model.embed_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.embed_dim = parse_size(v, k); }},
        {"model.timesteps", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.timesteps = parse_size(v, k); }},
        {"model.variant", [](RunConfig& c, const std::string&, const std::string& v) { c.model.variant = variant_from_string(v); }},
        {"train.margin", [](RunConfig& c, const std::string& k, const std::string& v) { c.margin = parse_double(v, k); }},
        {"train.lambda", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda = parse_double(v, k); }},
        {"train.regularizer", [](RunConfig& c, const std::string&, const std::string& v) { c.regularizer = regularizer_from_string(v); }},
        {"train.negatives", [](RunConfig& c, const std::string& k, const std::string& v) { c.negatives_per_positive = parse_size(v, k); }},
        {"train.optimizer", [](RunConfig& c, const std::string&, const std::string& v) { c.optimizer = optimizer_from_string(v); }},
        {"train.learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.learning_rate = parse_double(v, k); }},
        {"train.adam_beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_beta1 = parse_double(v, k); }},
        {"train.adam_beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_beta2 = parse_double(v, k); }},
        {"train.adam_eps", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_eps = parse_double(v, k); }},
        {"train.momentum", [](RunConfig& c, const std::string& k, const std::string& v) { c.momentum = parse_double(v, k); }},
        {"train.grad_clip", [](RunConfig& c, const std::string& k, const std::string& v) { c.grad_clip = parse_double(v, k); }},
        {"train.lr_decay_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr_decay_steps = parse_size(v, k); }},
        {"train.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_size(v, k); }},
        {"train.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.max_epochs = parse_size(v, k); }},
        {"train.max_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.max_steps = parse_size(v, k); }},
        {"train.val_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.val_every = parse_size(v, k); }},
        {"train.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_size(v, k); }},
        {"data.train_manifest", [](RunConfig& c, const std::string&, const std::string& v) { c.train_manifest = v; }},
        {"data.val_manifest", [](RunConfig& c, const std::string&, const std::string& v) { c.val_manifest = v; }},
        {"data.vocab", [](RunConfig& c, const std::string&, const std::string& v) { c.vocab_path = v; }},
        {"out.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
    };
    return table;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
}

std::string fmt(double d) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& text,
                           const std::map<std::string, std::string>& overrides) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (std::size_t h = t.find('#'); h != std::string::npos) t = trim(t.substr(0, h));
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("bad section header at line " + std::to_string(lineno));
            section = t.substr(1, t.size() - 2);
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value at line " + std::to_string(lineno));
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (!section.empty()) key = section + "." + key;
        apply_key(cfg, key, value);
    }
    for (const auto& [k, v] : overrides) apply_key(cfg, k, v);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path,
                          const std::map<std::string, std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return parse_run_config(os.str(), overrides);
}

std::string serialize_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "[model]\n";
    os << "grid_rows = " << cfg.model.grid_rows << "\n";
    os << "grid_cols = " << cfg.model.grid_cols << "\n";
    os << "image_feat_dim = " << cfg.model.image_feat_dim << "\n";
    os << "image_ctx_dim = " << cfg.model.image_ctx_dim << "\n";
    os << "sentence_len = " << cfg.model.sentence_len << "\n";
    os << "blstm_hidden = " << cfg.model.blstm_hidden << "\n";
    os << "sentence_ctx_dim = " << cfg.model.sentence_ctx_dim << "\n";
    os << "hidden_dim = " << cfg.model.hidden_dim << "\n";
    os << "attention_dim = " << cfg.model.attention_dim << "\n";
    os << "sim_dim = " << cfg.model.sim_dim << "\n";
    os << "embed_dim = " << cfg.model.embed_dim << "\n";
    os << "timesteps = " << cfg.model.timesteps << "\n";
    os << "variant = " << to_string(cfg.model.variant) << "\n";
    os << "[train]\n";
    os << "margin = " << fmt(cfg.margin) << "\n";
    os << "lambda = " << fmt(cfg.lambda) << "\n";
    os << "regularizer = " << to_string(cfg.regularizer) << "\n";
    os << "negatives = " << cfg.negatives_per_positive << "\n";
    os << "optimizer = " << to_string(cfg.optimizer) << "\n";
    os << "learning_rate = " << fmt(cfg.learning_rate) << "\n";
    os << "adam_beta1 = " << fmt(cfg.adam_beta1) << "\n";
    os << "adam_beta2 = " << fmt(cfg.adam_beta2) << "\n";
    os << "adam_eps = " << fmt(cfg.adam_eps) << "\n";
    os << "momentum = " << fmt(cfg.momentum) << "\n";
    os << "grad_clip = " << fmt(cfg.grad_clip) << "\n";
    os << "lr_decay_steps = " << cfg.lr_decay_steps << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "epochs = " << cfg.max_epochs << "\n";
    os << "max_steps = " << cfg.max_steps << "\n";
    os << "val_every = " << cfg.val_every << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "[data]\n";
    os << "train_manifest = " << cfg.train_manifest << "\n";
    os << "val_manifest = " << cfg.val_manifest << "\n";
    os << "vocab = " << cfg.vocab_path << "\n";
    os << "[out]\n";
    os << "dir = " << cfg.out_dir << "\n";
    return os.str();
}

}  // namespace smlstm
