#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace flava {

// Reserved token ids, shared by every preset. Text sequences start with CLS
// at position 0; PAD fills the tail; MASK is the MLM replacement token.
inline constexpr std::int64_t kPadTokenId = 0;
inline constexpr std::int64_t kClsTokenId = 1;
inline constexpr std::int64_t kMaskTokenId = 2;
inline constexpr std::int64_t kNumReservedTokens = 3;

struct ModelConfig {
    int hidden_size = 768;
    int num_heads = 12;
    int intermediate_size = 3072;
    int image_layers = 12;
    int text_layers = 12;
    int multimodal_layers = 6;
    double dropout = 0.0;
    int patch_size = 16;
    int image_size = 224;
    int image_channels = 3;
    int text_vocab_size = 30522;
    int text_max_len = 128;
    int codebook_size = 8192;
    int projection_dim = 512;
    double mask_rate_text = 0.15;
    double mask_ratio_image = 0.4;
    double temperature_init = 0.07;
    std::int64_t seed = 0;

    // Rectangular block masking knobs (BEiT-style).
    int block_min_area = 16;
    double block_aspect_min = 0.3;

    // MLM variants: pure [MASK] replacement by default, BERT 80/10/10 behind
    // a flag. MLM output head is untied from the embedding table by default.
    bool mlm_bert_split = false;
    bool tie_mlm_head = false;

    int grid_size() const { return image_size / patch_size; }
    int num_patches() const { return grid_size() * grid_size(); }
    int patch_dim() const { return image_channels * patch_size * patch_size; }
    int head_dim() const { return hidden_size / num_heads; }

    bool operator==(const ModelConfig&) const = default;

    static ModelConfig paper();
    static ModelConfig desk();
};

enum class Schedule { warmup_cosine };

struct OptimConfig {
    int batch_size = 8192;
    double learning_rate = 1e-3;
    Schedule schedule = Schedule::warmup_cosine;
    int warmup_updates = 10000;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int total_updates = 150000;
    double grad_clip = 0.0;  // 0 disables clipping

    bool operator==(const OptimConfig&) const = default;

    static OptimConfig paper();
    static OptimConfig desk();
};

enum class DatasetKind { multimodal_pairs, unimodal_images, unimodal_text };

std::string to_string(DatasetKind kind);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::multimodal_pairs;
    std::string source;  // "synthetic:<n>" or a fixture path
    double sampling_probability = 0.0;
};

struct LossWeights {
    bool operator==(const LossWeights&) const = default;
    double gc = 1.0;
    double mmm_image = 1.0;
    double mmm_text = 1.0;
    double itm = 1.0;
    double mim = 1.0;
    double mlm = 1.0;
};

struct TrainConfig {
    int eval_interval = 100;
    int checkpoint_interval = 100;
    double itm_negative_fraction = 0.5;
    int holdout_pairs = 32;
    LossWeights weights;
    std::string codebook_path;  // empty: fit from training images at startup
    std::string pairs_source = "synthetic:64";
    double pairs_probability = 0.70;
    std::string images_source = "synthetic:64";
    double images_probability = 0.15;
    std::string texts_source = "synthetic:64";
    double texts_probability = 0.15;

    std::vector<DatasetSpec> dataset_specs() const;

    bool operator==(const TrainConfig&) const = default;
};

struct FlavaConfig {
    int config_version = 1;
    ModelConfig model;
    OptimConfig optim;
    TrainConfig train;

    bool operator==(const FlavaConfig&) const = default;

    static FlavaConfig paper();
    static FlavaConfig desk();
};

// Throws FlavaError{"invalid_config"} naming the first violated invariant.
const ModelConfig& validate_config(const ModelConfig& config);
const OptimConfig& validate_config(const OptimConfig& config);
const FlavaConfig& validate_config(const FlavaConfig& config);

// Key-value config file format: one `key = value` per line, `#` comments,
// explicit `config_version`, unknown keys rejected.
std::string serialize_config(const FlavaConfig& config);
FlavaConfig parse_config(const std::string& text);
FlavaConfig load_config_file(const std::string& path);
void write_config_file(const FlavaConfig& config, const std::string& path);

// Dotted-key override, e.g. "model.hidden_size=64".
void apply_override(FlavaConfig& config, const std::string& assignment);

}  // namespace flava
