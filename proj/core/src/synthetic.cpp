#include "flava/synthetic.hpp"

#include <cmath>

#include "flava/util.hpp"

namespace flava {

namespace {

constexpr int kConceptCount = 8;

// Per-item texture: a random within-patch pattern tiled across the whole
// image. Averaging over patches preserves the pattern, so pooled
// representations see a full-strength per-item code from the start; a
// concept-keyed sinusoid and light pixel noise sit on top.
std::vector<double> item_pattern(int channels, int tile, std::uint64_t seed,
                                 const std::string& domain, int item) {
    auto rng = derive_rng(seed, domain + ".pattern", static_cast<std::uint64_t>(item));
    std::uniform_real_distribution<double> span(-0.42, 0.42);
    std::vector<double> pattern(static_cast<size_t>(channels * tile * tile));
    for (auto& v : pattern) v = span(rng);
    return pattern;
}

void fill_image(ImageBatch& batch, int item, int concept_id, int tile,
                const std::vector<double>& pattern, std::uint64_t seed,
                const std::string& domain) {
    auto rng = derive_rng(seed, domain + ".pixels", static_cast<std::uint64_t>(item));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double phase = 2.0 * M_PI * unit(rng);
    const double fx = 1.0 + concept_id % 4;
    const double fy = 1.0 + concept_id / 4;
    const int s = batch.height;
    for (int c = 0; c < batch.channels; ++c) {
        const double ch_off = 2.0 * M_PI * c / batch.channels;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                double v = 0.5 + 0.04 * std::sin(2.0 * M_PI * (fx * x + fy * y) / s + phase + ch_off);
                v += pattern[static_cast<size_t>((c * tile + y % tile) * tile + x % tile)];
                v += 0.03 * (unit(rng) - 0.5);
                batch.pixel(item, c, y, x) = std::clamp(v, 0.0, 1.0);
            }
    }
}

}  // namespace

ImageBatch make_synthetic_images(int n, const ModelConfig& config, std::uint64_t seed,
                                 const std::string& domain) {
    ImageBatch batch;
    batch.channels = config.image_channels;
    batch.height = config.image_size;
    batch.width = config.image_size;
    batch.pixels.resize(n, static_cast<Eigen::Index>(config.image_channels) * config.image_size *
                               config.image_size);
    const int tile = config.patch_size;
    for (int i = 0; i < n; ++i) {
        auto pattern = item_pattern(config.image_channels, tile, seed, domain, i);
        fill_image(batch, i, i % kConceptCount, tile, pattern, seed, domain);
    }
    return batch;
}

TextBatch make_synthetic_texts(int n, const ModelConfig& config, std::uint64_t seed,
                               const std::string& domain) {
    const int seq = config.text_max_len;
    const std::int64_t content = config.text_vocab_size - kNumReservedTokens;
    TextBatch batch;
    batch.token_ids = MatI64::Constant(n, seq, kPadTokenId);
    batch.attention_mask = MatI64::Zero(n, seq);
    for (int i = 0; i < n; ++i) {
        auto rng = derive_rng(seed, domain + ".tokens", static_cast<std::uint64_t>(i));
        std::uniform_int_distribution<std::int64_t> tok(kNumReservedTokens,
                                                        config.text_vocab_size - 1);
        const int min_len = std::min(6, seq);
        std::uniform_int_distribution<int> len_dist(min_len, seq);
        const int len = len_dist(rng);
        batch.token_ids(i, 0) = kClsTokenId;
        // two item-unique ids and one concept id make pairs identifiable
        const std::int64_t id_a = kNumReservedTokens + (static_cast<std::int64_t>(i) * 7919) % content;
        const std::int64_t id_b =
            kNumReservedTokens + (static_cast<std::int64_t>(i) * 104729 + 13) % content;
        const std::int64_t id_c = kNumReservedTokens + i % kConceptCount;
        if (seq > 1) batch.token_ids(i, 1) = id_a;
        if (seq > 2) batch.token_ids(i, 2) = id_b;
        if (seq > 3) batch.token_ids(i, 3) = id_c;
        for (int t = 4; t < len; ++t) batch.token_ids(i, t) = tok(rng);
        for (int t = 0; t < len; ++t) batch.attention_mask(i, t) = 1;
    }
    return batch;
}

PairBatch make_synthetic_pairs(int n, const ModelConfig& config, std::uint64_t seed,
                               const std::string& domain) {
    PairBatch batch;
    batch.images = make_synthetic_images(n, config, seed, domain + ".image");
    // Captions describe their image: each content token quantizes one sample
    // of the item's tiled texture pattern. Pairing is a shared code between
    // the modalities rather than an arbitrary item-id correlation, which
    // keeps matching learnable at desk scale.
    const int seq = config.text_max_len;
    const int tile = config.patch_size;
    const int pattern_dim = config.image_channels * tile * tile;
    // Position-coded alphabet: token id depends on (position, level), so two
    // captions share a token only where their codes agree. This keeps caption
    // embeddings decorrelated across items.
    const int content = static_cast<int>(config.text_vocab_size - kNumReservedTokens);
    const int levels = std::max(2, std::min(16, content / std::max(1, seq - 1)));
    batch.texts.token_ids = MatI64::Constant(n, seq, kPadTokenId);
    batch.texts.attention_mask = MatI64::Zero(n, seq);
    for (int i = 0; i < n; ++i) {
        auto pattern = item_pattern(config.image_channels, tile, seed, domain + ".image", i);
        batch.texts.token_ids(i, 0) = kClsTokenId;
        batch.texts.attention_mask(i, 0) = 1;
        for (int t = 1; t < seq; ++t) {
            const double v = pattern[static_cast<size_t>((t * 13) % pattern_dim)];
            int level = static_cast<int>((v + 0.42) / 0.84 * levels);
            level = std::clamp(level, 0, levels - 1);
            batch.texts.token_ids(i, t) =
                kNumReservedTokens + ((t - 1) * levels + level) % content;
            batch.texts.attention_mask(i, t) = 1;
        }
    }
    batch.match_labels.assign(static_cast<size_t>(n), 1);
    return batch;
}

SourceSpec parse_source(const std::string& source) {
    SourceSpec spec;
    if (source.rfind("synthetic:", 0) != 0) {
        spec.path = source;
        return spec;
    }
    spec.synthetic = true;
    std::string rest = source.substr(10);
    auto colon = rest.find(':');
    try {
        if (colon == std::string::npos) {
            spec.count = std::stoi(rest);
        } else {
            spec.count = std::stoi(rest.substr(0, colon));
            spec.seed = std::stoull(rest.substr(colon + 1));
            spec.seed_overridden = true;
        }
    } catch (const std::exception&) {
        fail("invalid_config", "bad synthetic source '" + source + "': expected synthetic:<n>[:<seed>]");
    }
    if (spec.count < 1) fail("invalid_config", "synthetic source needs a positive count");
    return spec;
}

ImageBatch load_image_source(const std::string& source, const ModelConfig& config,
                             std::uint64_t default_seed, const std::string& domain) {
    SourceSpec spec = parse_source(source);
    if (spec.synthetic)
        return make_synthetic_images(spec.count, config,
                                     spec.seed_overridden ? spec.seed : default_seed, domain);
    return get_image_batch(Archive::load(spec.path), "images");
}

TextBatch load_text_source(const std::string& source, const ModelConfig& config,
                           std::uint64_t default_seed, const std::string& domain) {
    SourceSpec spec = parse_source(source);
    if (spec.synthetic)
        return make_synthetic_texts(spec.count, config,
                                    spec.seed_overridden ? spec.seed : default_seed, domain);
    return get_text_batch(Archive::load(spec.path), "texts");
}

PairBatch load_pair_source(const std::string& source, const ModelConfig& config,
                           std::uint64_t default_seed, const std::string& domain) {
    SourceSpec spec = parse_source(source);
    if (spec.synthetic)
        return make_synthetic_pairs(spec.count, config,
                                    spec.seed_overridden ? spec.seed : default_seed, domain);
    return get_pair_batch(Archive::load(spec.path), "pairs");
}

}  // namespace flava
