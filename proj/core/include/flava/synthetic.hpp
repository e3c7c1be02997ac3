#pragma once

#include <cstdint>
#include <string>

#include "flava/batch.hpp"
#include "flava/config.hpp"

namespace flava {

// Deterministic procedural fixtures. Images are banded sinusoid patterns
// with a per-item phase signature; paired texts carry two item-unique token
// ids plus a shared concept token, so image i and text i are mutually
// identifiable and the pairing is learnable.
ImageBatch make_synthetic_images(int n, const ModelConfig& config, std::uint64_t seed,
                                 const std::string& domain = "images");
TextBatch make_synthetic_texts(int n, const ModelConfig& config, std::uint64_t seed,
                               const std::string& domain = "texts");
PairBatch make_synthetic_pairs(int n, const ModelConfig& config, std::uint64_t seed,
                               const std::string& domain = "pairs");

// "synthetic:<n>" or "synthetic:<n>:<seed>"; anything else is treated as a
// fixture archive path.
struct SourceSpec {
    bool synthetic = false;
    int count = 0;
    std::uint64_t seed = 0;
    bool seed_overridden = false;
    std::string path;
};
SourceSpec parse_source(const std::string& source);

ImageBatch load_image_source(const std::string& source, const ModelConfig& config,
                             std::uint64_t default_seed, const std::string& domain);
TextBatch load_text_source(const std::string& source, const ModelConfig& config,
                           std::uint64_t default_seed, const std::string& domain);
PairBatch load_pair_source(const std::string& source, const ModelConfig& config,
                           std::uint64_t default_seed, const std::string& domain);

}  // namespace flava
