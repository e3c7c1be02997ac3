#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "flava/checkpoint.hpp"

namespace flava {

// Pixel batch, flattened to [batch, channels*H*W] with channel-major rows
// (index = c*H*W + y*W + x). Values live in [0,1].
struct ImageBatch {
    int channels = 0;
    int height = 0;
    int width = 0;
    Eigen::MatrixXd pixels;  // [batch, channels*height*width]

    int batch() const { return static_cast<int>(pixels.rows()); }
    double pixel(int b, int c, int y, int x) const {
        return pixels(b, (c * height + y) * width + x);
    }
    double& pixel(int b, int c, int y, int x) {
        return pixels(b, (c * height + y) * width + x);
    }
    ImageBatch rows(const std::vector<int>& idx) const;
};

struct TextBatch {
    MatI64 token_ids;       // [batch, seq_len]
    MatI64 attention_mask;  // [batch, seq_len], 1 = real token, 0 = padding

    int batch() const { return static_cast<int>(token_ids.rows()); }
    int seq_len() const { return static_cast<int>(token_ids.cols()); }
    TextBatch rows(const std::vector<int>& idx) const;
};

struct PairBatch {
    ImageBatch images;
    TextBatch texts;
    std::vector<std::uint8_t> match_labels;  // 1 = aligned pair

    int batch() const { return images.batch(); }
    PairBatch rows(const std::vector<int>& idx) const;
};

void validate(const ImageBatch& b);
void validate(const TextBatch& b, int vocab_size);
void validate(const PairBatch& b, int vocab_size);

// Fixture serialization (regression fixtures, eval data files).
void put_batch(Archive& a, const std::string& prefix, const ImageBatch& b);
void put_batch(Archive& a, const std::string& prefix, const TextBatch& b);
void put_batch(Archive& a, const std::string& prefix, const PairBatch& b);
ImageBatch get_image_batch(const Archive& a, const std::string& prefix);
TextBatch get_text_batch(const Archive& a, const std::string& prefix);
PairBatch get_pair_batch(const Archive& a, const std::string& prefix);

}  // namespace flava
