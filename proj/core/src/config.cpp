#include "flava/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "flava/util.hpp"

namespace flava {

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.hidden_size = 64;
    c.num_heads = 4;
    c.intermediate_size = 256;
    c.image_layers = 2;
    c.text_layers = 2;
    c.multimodal_layers = 2;
    c.patch_size = 8;
    c.image_size = 32;
    c.text_vocab_size = 1000;
    c.text_max_len = 16;
    c.codebook_size = 256;
    c.projection_dim = 32;
    c.block_min_area = 4;
    return c;
}

OptimConfig OptimConfig::paper() { return OptimConfig{}; }

OptimConfig OptimConfig::desk() {
    OptimConfig c;
    c.batch_size = 16;
    c.warmup_updates = 50;
    c.weight_decay = 0.01;
    c.total_updates = 500;
    return c;
}

FlavaConfig FlavaConfig::paper() {
    FlavaConfig c;
    c.model = ModelConfig::paper();
    c.optim = OptimConfig::paper();
    c.train.eval_interval = 8000;
    c.train.checkpoint_interval = 8000;
    return c;
}

FlavaConfig FlavaConfig::desk() {
    FlavaConfig c;
    c.model = ModelConfig::desk();
    c.optim = OptimConfig::desk();
    return c;
}

std::string to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::multimodal_pairs: return "multimodal_pairs";
        case DatasetKind::unimodal_images: return "unimodal_images";
        case DatasetKind::unimodal_text: return "unimodal_text";
    }
    return "unknown";
}

std::vector<DatasetSpec> TrainConfig::dataset_specs() const {
    return {
        {DatasetKind::multimodal_pairs, pairs_source, pairs_probability},
        {DatasetKind::unimodal_images, images_source, images_probability},
        {DatasetKind::unimodal_text, texts_source, texts_probability},
    };
}

namespace {

[[noreturn]] void invalid(const std::string& msg) { fail("invalid_config", msg); }

void check_positive(const char* field, std::int64_t v) {
    if (v < 1) invalid(std::string(field) + ": must be a positive integer, got " + std::to_string(v));
}

void check_fraction(const char* field, double v) {
    if (!(v >= 0.0 && v <= 1.0))
        invalid(std::string(field) + ": must be a fraction in [0,1], got " + format_double(v));
}

}  // namespace

const ModelConfig& validate_config(const ModelConfig& c) {
    check_positive("hidden_size", c.hidden_size);
    check_positive("num_heads", c.num_heads);
    check_positive("intermediate_size", c.intermediate_size);
    check_positive("image_layers", c.image_layers);
    check_positive("text_layers", c.text_layers);
    check_positive("multimodal_layers", c.multimodal_layers);
    check_positive("patch_size", c.patch_size);
    check_positive("image_size", c.image_size);
    check_positive("image_channels", c.image_channels);
    check_positive("text_vocab_size", c.text_vocab_size);
    check_positive("text_max_len", c.text_max_len);
    check_positive("codebook_size", c.codebook_size);
    check_positive("projection_dim", c.projection_dim);
    check_positive("block_min_area", c.block_min_area);
    check_fraction("dropout", c.dropout);
    check_fraction("mask_rate_text", c.mask_rate_text);
    check_fraction("mask_ratio_image", c.mask_ratio_image);
    if (c.hidden_size % c.num_heads != 0)
        invalid("hidden_size: must be divisible by num_heads (" + std::to_string(c.hidden_size) +
                " mod " + std::to_string(c.num_heads) + " != 0)");
    if (c.image_size % c.patch_size != 0)
        invalid("image_size: must be divisible by patch_size (" + std::to_string(c.image_size) +
                " mod " + std::to_string(c.patch_size) + " != 0)");
    if (c.temperature_init <= 0.0)
        invalid("temperature_init: must be positive, got " + format_double(c.temperature_init));
    if (!(c.block_aspect_min > 0.0 && c.block_aspect_min <= 1.0))
        invalid("block_aspect_min: must be in (0,1], got " + format_double(c.block_aspect_min));
    if (c.text_vocab_size <= kNumReservedTokens)
        invalid("text_vocab_size: must exceed the " + std::to_string(kNumReservedTokens) +
                " reserved token ids");
    return c;
}

const OptimConfig& validate_config(const OptimConfig& c) {
    check_positive("batch_size", c.batch_size);
    check_positive("total_updates", c.total_updates);
    if (c.warmup_updates < 0)
        invalid("warmup_updates: must be non-negative");
    if (c.warmup_updates > c.total_updates)
        invalid("warmup_updates: must not exceed total_updates (" +
                std::to_string(c.warmup_updates) + " > " + std::to_string(c.total_updates) + ")");
    if (c.learning_rate <= 0.0)
        invalid("learning_rate: must be positive");
    if (c.weight_decay < 0.0)
        invalid("weight_decay: must be non-negative");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0))
        invalid("beta1: must be in [0,1)");
    if (!(c.beta2 >= 0.0 && c.beta2 < 1.0))
        invalid("beta2: must be in [0,1)");
    if (c.grad_clip < 0.0)
        invalid("grad_clip: must be non-negative");
    return c;
}

const FlavaConfig& validate_config(const FlavaConfig& c) {
    if (c.config_version != 1)
        invalid("config_version: unsupported version " + std::to_string(c.config_version));
    validate_config(c.model);
    validate_config(c.optim);
    check_positive("train.eval_interval", c.train.eval_interval);
    check_positive("train.checkpoint_interval", c.train.checkpoint_interval);
    check_fraction("train.itm_negative_fraction", c.train.itm_negative_fraction);
    if (c.train.holdout_pairs < 0) invalid("train.holdout_pairs: must be non-negative");
    return c;
}

// ---------------------------------------------------------------------------
// Key-value file format
// ---------------------------------------------------------------------------

namespace {

enum class FieldKind { Int, I64, Dbl, Str, Bool, Sched };

struct Field {
    const char* key;
    FieldKind kind;
    std::function<std::string(const FlavaConfig&)> get;
    std::function<void(FlavaConfig&, const std::string&)> set;
};

std::int64_t parse_int(const char* key, const std::string& v) {
    std::int64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        invalid(std::string(key) + ": expected an integer, got '" + v + "'");
    return out;
}

double parse_dbl(const char* key, const std::string& v) {
    char* end = nullptr;
    double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || v.empty())
        invalid(std::string(key) + ": expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const char* key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    invalid(std::string(key) + ": expected true/false, got '" + v + "'");
}

Schedule parse_sched(const char* key, const std::string& v) {
    if (v == "warmup_cosine") return Schedule::warmup_cosine;
    invalid(std::string(key) + ": unknown schedule '" + v + "'");
}

const std::vector<Field>& field_registry() {
    static const std::vector<Field> fields = [] {
        std::vector<Field> f;
        auto add_int = [&f](const char* key, auto member) {
            f.push_back({key, FieldKind::Int,
                         [member](const FlavaConfig& c) { return std::to_string(std::invoke(member, c)); },
                         [member, key](FlavaConfig& c, const std::string& v) {
                             std::invoke(member, c) = static_cast<int>(parse_int(key, v));
                         }});
        };
        auto add_i64 = [&f](const char* key, auto member) {
            f.push_back({key, FieldKind::I64,
                         [member](const FlavaConfig& c) { return std::to_string(std::invoke(member, c)); },
                         [member, key](FlavaConfig& c, const std::string& v) {
                             std::invoke(member, c) = parse_int(key, v);
                         }});
        };
        auto add_dbl = [&f](const char* key, auto member) {
            f.push_back({key, FieldKind::Dbl,
                         [member](const FlavaConfig& c) { return format_double(std::invoke(member, c)); },
                         [member, key](FlavaConfig& c, const std::string& v) {
                             std::invoke(member, c) = parse_dbl(key, v);
                         }});
        };
        auto add_str = [&f](const char* key, auto member) {
            f.push_back({key, FieldKind::Str,
                         [member](const FlavaConfig& c) { return std::invoke(member, c); },
                         [member](FlavaConfig& c, const std::string& v) { std::invoke(member, c) = v; }});
        };
        auto add_bool = [&f](const char* key, auto member) {
            f.push_back({key, FieldKind::Bool,
                         [member](const FlavaConfig& c) { return std::invoke(member, c) ? "true" : "false"; },
                         [member, key](FlavaConfig& c, const std::string& v) {
                             std::invoke(member, c) = parse_bool(key, v);
                         }});
        };

        f.push_back({"config_version", FieldKind::Int,
                     [](const FlavaConfig& c) { return std::to_string(c.config_version); },
                     [](FlavaConfig& c, const std::string& v) {
                         c.config_version = static_cast<int>(parse_int("config_version", v));
                     }});

        add_int("model.hidden_size", [](auto& c) -> auto& { return c.model.hidden_size; });
        add_int("model.num_heads", [](auto& c) -> auto& { return c.model.num_heads; });
        add_int("model.intermediate_size", [](auto& c) -> auto& { return c.model.intermediate_size; });
        add_int("model.image_layers", [](auto& c) -> auto& { return c.model.image_layers; });
        add_int("model.text_layers", [](auto& c) -> auto& { return c.model.text_layers; });
        add_int("model.multimodal_layers", [](auto& c) -> auto& { return c.model.multimodal_layers; });
        add_dbl("model.dropout", [](auto& c) -> auto& { return c.model.dropout; });
        add_int("model.patch_size", [](auto& c) -> auto& { return c.model.patch_size; });
        add_int("model.image_size", [](auto& c) -> auto& { return c.model.image_size; });
        add_int("model.image_channels", [](auto& c) -> auto& { return c.model.image_channels; });
        add_int("model.text_vocab_size", [](auto& c) -> auto& { return c.model.text_vocab_size; });
        add_int("model.text_max_len", [](auto& c) -> auto& { return c.model.text_max_len; });
        add_int("model.codebook_size", [](auto& c) -> auto& { return c.model.codebook_size; });
        add_int("model.projection_dim", [](auto& c) -> auto& { return c.model.projection_dim; });
        add_dbl("model.mask_rate_text", [](auto& c) -> auto& { return c.model.mask_rate_text; });
        add_dbl("model.mask_ratio_image", [](auto& c) -> auto& { return c.model.mask_ratio_image; });
        add_dbl("model.temperature_init", [](auto& c) -> auto& { return c.model.temperature_init; });
        add_i64("model.seed", [](auto& c) -> auto& { return c.model.seed; });
        add_int("model.block_min_area", [](auto& c) -> auto& { return c.model.block_min_area; });
        add_dbl("model.block_aspect_min", [](auto& c) -> auto& { return c.model.block_aspect_min; });
        add_bool("model.mlm_bert_split", [](auto& c) -> auto& { return c.model.mlm_bert_split; });
        add_bool("model.tie_mlm_head", [](auto& c) -> auto& { return c.model.tie_mlm_head; });

        add_int("optim.batch_size", [](auto& c) -> auto& { return c.optim.batch_size; });
        add_dbl("optim.learning_rate", [](auto& c) -> auto& { return c.optim.learning_rate; });
        f.push_back({"optim.schedule", FieldKind::Sched,
                     [](const FlavaConfig& c) {
                         return c.optim.schedule == Schedule::warmup_cosine ? "warmup_cosine" : "?";
                     },
                     [](FlavaConfig& c, const std::string& v) {
                         c.optim.schedule = parse_sched("optim.schedule", v);
                     }});
        add_int("optim.warmup_updates", [](auto& c) -> auto& { return c.optim.warmup_updates; });
        add_dbl("optim.weight_decay", [](auto& c) -> auto& { return c.optim.weight_decay; });
        add_dbl("optim.beta1", [](auto& c) -> auto& { return c.optim.beta1; });
        add_dbl("optim.beta2", [](auto& c) -> auto& { return c.optim.beta2; });
        add_int("optim.total_updates", [](auto& c) -> auto& { return c.optim.total_updates; });
        add_dbl("optim.grad_clip", [](auto& c) -> auto& { return c.optim.grad_clip; });

        add_int("train.eval_interval", [](auto& c) -> auto& { return c.train.eval_interval; });
        add_int("train.checkpoint_interval", [](auto& c) -> auto& { return c.train.checkpoint_interval; });
        add_dbl("train.itm_negative_fraction", [](auto& c) -> auto& { return c.train.itm_negative_fraction; });
        add_int("train.holdout_pairs", [](auto& c) -> auto& { return c.train.holdout_pairs; });
        add_dbl("train.weights.gc", [](auto& c) -> auto& { return c.train.weights.gc; });
        add_dbl("train.weights.mmm_image", [](auto& c) -> auto& { return c.train.weights.mmm_image; });
        add_dbl("train.weights.mmm_text", [](auto& c) -> auto& { return c.train.weights.mmm_text; });
        add_dbl("train.weights.itm", [](auto& c) -> auto& { return c.train.weights.itm; });
        add_dbl("train.weights.mim", [](auto& c) -> auto& { return c.train.weights.mim; });
        add_dbl("train.weights.mlm", [](auto& c) -> auto& { return c.train.weights.mlm; });
        add_str("train.codebook_path", [](auto& c) -> auto& { return c.train.codebook_path; });
        add_str("data.pairs.source", [](auto& c) -> auto& { return c.train.pairs_source; });
        add_dbl("data.pairs.probability", [](auto& c) -> auto& { return c.train.pairs_probability; });
        add_str("data.images.source", [](auto& c) -> auto& { return c.train.images_source; });
        add_dbl("data.images.probability", [](auto& c) -> auto& { return c.train.images_probability; });
        add_str("data.texts.source", [](auto& c) -> auto& { return c.train.texts_source; });
        add_dbl("data.texts.probability", [](auto& c) -> auto& { return c.train.texts_probability; });
        return f;
    }();
    return fields;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : field_registry())
        if (key == f.key) return &f;
    return nullptr;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string serialize_config(const FlavaConfig& config) {
    std::ostringstream out;
    for (const auto& f : field_registry())
        out << f.key << " = " << f.get(config) << "\n";
    return out.str();
}

FlavaConfig parse_config(const std::string& text) {
    FlavaConfig config;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            invalid("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        const Field* f = find_field(key);
        if (!f) invalid("unknown config key '" + key + "' (line " + std::to_string(lineno) + ")");
        if (!seen.insert(key).second)
            invalid("duplicate config key '" + key + "' (line " + std::to_string(lineno) + ")");
        f->set(config, value);
    }
    if (!seen.count("config_version"))
        invalid("config file is missing the required 'config_version' key");
    return config;
}

FlavaConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("missing_input", "cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void write_config_file(const FlavaConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("io_error", "cannot write config file '" + path + "'");
    out << serialize_config(config);
}

void apply_override(FlavaConfig& config, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        invalid("override '" + assignment + "' must have the form key=value");
    std::string key = trim(assignment.substr(0, eq));
    std::string value = trim(assignment.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) invalid("unknown config key '" + key + "' in override");
    f->set(config, value);
}

}  // namespace flava
