#include "flava/batch.hpp"

#include "flava/util.hpp"

namespace flava {

ImageBatch ImageBatch::rows(const std::vector<int>& idx) const {
    ImageBatch out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.pixels.resize(static_cast<Eigen::Index>(idx.size()), pixels.cols());
    for (size_t i = 0; i < idx.size(); ++i) out.pixels.row(static_cast<Eigen::Index>(i)) = pixels.row(idx[i]);
    return out;
}

TextBatch TextBatch::rows(const std::vector<int>& idx) const {
    TextBatch out;
    out.token_ids.resize(static_cast<Eigen::Index>(idx.size()), token_ids.cols());
    out.attention_mask.resize(static_cast<Eigen::Index>(idx.size()), attention_mask.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        out.token_ids.row(static_cast<Eigen::Index>(i)) = token_ids.row(idx[i]);
        out.attention_mask.row(static_cast<Eigen::Index>(i)) = attention_mask.row(idx[i]);
    }
    return out;
}

PairBatch PairBatch::rows(const std::vector<int>& idx) const {
    PairBatch out;
    out.images = images.rows(idx);
    out.texts = texts.rows(idx);
    out.match_labels.reserve(idx.size());
    for (int i : idx) out.match_labels.push_back(match_labels[static_cast<size_t>(i)]);
    return out;
}

void validate(const ImageBatch& b) {
    if (b.channels < 1 || b.height < 1 || b.width < 1)
        fail("invalid_batch", "image batch has non-positive dimensions");
    if (b.pixels.cols() != static_cast<Eigen::Index>(b.channels) * b.height * b.width)
        fail("invalid_batch", "image batch pixel width does not match channels*H*W");
}

void validate(const TextBatch& b, int vocab_size) {
    if (b.token_ids.rows() != b.attention_mask.rows() || b.token_ids.cols() != b.attention_mask.cols())
        fail("invalid_batch", "token_ids and attention_mask shapes differ");
    for (Eigen::Index i = 0; i < b.token_ids.rows(); ++i)
        for (Eigen::Index j = 0; j < b.token_ids.cols(); ++j) {
            auto id = b.token_ids(i, j);
            if (id < 0 || id >= vocab_size)
                fail("out_of_range", "token id " + std::to_string(id) + " outside vocabulary of " +
                                         std::to_string(vocab_size));
        }
}

void validate(const PairBatch& b, int vocab_size) {
    validate(b.images);
    validate(b.texts, vocab_size);
    if (b.images.batch() != b.texts.batch() ||
        static_cast<int>(b.match_labels.size()) != b.images.batch())
        fail("invalid_batch", "pair batch: images, texts and match_labels must agree in length");
}

void put_batch(Archive& a, const std::string& prefix, const ImageBatch& b) {
    MatI64 dims(1, 3);
    dims << b.channels, b.height, b.width;
    a.put(prefix + ".dims", dims);
    a.put(prefix + ".pixels", b.pixels);
}

void put_batch(Archive& a, const std::string& prefix, const TextBatch& b) {
    a.put(prefix + ".token_ids", b.token_ids);
    a.put(prefix + ".attention_mask", b.attention_mask);
}

void put_batch(Archive& a, const std::string& prefix, const PairBatch& b) {
    put_batch(a, prefix + ".images", b.images);
    put_batch(a, prefix + ".texts", b.texts);
    MatI64 labels(1, static_cast<Eigen::Index>(b.match_labels.size()));
    for (size_t i = 0; i < b.match_labels.size(); ++i)
        labels(0, static_cast<Eigen::Index>(i)) = b.match_labels[i];
    a.put(prefix + ".match_labels", labels);
}

ImageBatch get_image_batch(const Archive& a, const std::string& prefix) {
    ImageBatch b;
    const MatI64& dims = a.get_i64(prefix + ".dims");
    b.channels = static_cast<int>(dims(0, 0));
    b.height = static_cast<int>(dims(0, 1));
    b.width = static_cast<int>(dims(0, 2));
    b.pixels = a.get_f64(prefix + ".pixels");
    validate(b);
    return b;
}

TextBatch get_text_batch(const Archive& a, const std::string& prefix) {
    TextBatch b;
    b.token_ids = a.get_i64(prefix + ".token_ids");
    b.attention_mask = a.get_i64(prefix + ".attention_mask");
    return b;
}

PairBatch get_pair_batch(const Archive& a, const std::string& prefix) {
    PairBatch b;
    b.images = get_image_batch(a, prefix + ".images");
    b.texts = get_text_batch(a, prefix + ".texts");
    const MatI64& labels = a.get_i64(prefix + ".match_labels");
    b.match_labels.resize(static_cast<size_t>(labels.cols()));
    for (Eigen::Index i = 0; i < labels.cols(); ++i)
        b.match_labels[static_cast<size_t>(i)] = static_cast<std::uint8_t>(labels(0, i));
    return b;
}

}  // namespace flava
