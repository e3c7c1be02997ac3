#include "flava/encoders.hpp"

#include <cmath>

namespace flava {

ad::Var HiddenStates::cls() const {
    std::vector<Eigen::Index> idx;
    idx.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) idx.push_back(row(b, 0));
    return ad::gather_rows(flat, idx);
}

std::vector<double> HiddenStates::item_key_mask(int item) const {
    std::vector<double> m(static_cast<size_t>(seq), 1.0);
    if (key_mask.size() != 0)
        for (int t = 0; t < seq; ++t) m[static_cast<size_t>(t)] = key_mask(item, t) != 0 ? 1.0 : 0.0;
    return m;
}

Eigen::MatrixXd patchify(const ImageBatch& images, int patch_size) {
    validate(images);
    if (images.height % patch_size != 0 || images.width % patch_size != 0)
        fail("shape_error", "patchify: image " + std::to_string(images.height) + "x" +
                                std::to_string(images.width) + " not divisible by patch size " +
                                std::to_string(patch_size));
    const int gh = images.height / patch_size, gw = images.width / patch_size;
    const int n_patches = gh * gw;
    const int patch_dim = images.channels * patch_size * patch_size;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.batch()) * n_patches, patch_dim);
    for (int b = 0; b < images.batch(); ++b)
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                Eigen::Index r = static_cast<Eigen::Index>(b) * n_patches + gy * gw + gx;
                for (int c = 0; c < images.channels; ++c)
                    for (int y = 0; y < patch_size; ++y)
                        for (int x = 0; x < patch_size; ++x)
                            out(r, (c * patch_size + y) * patch_size + x) =
                                images.pixel(b, c, gy * patch_size + y, gx * patch_size + x);
            }
    return out;
}

ad::Var MlpHead::forward(const ad::Var& x) const {
    ad::Var h = ad::add_rowvec(ad::matmul(x, w1), b1);
    h = ad::gelu(h);
    h = ad::layer_norm(h, ln_gain, ln_bias);
    if (tied_embedding)
        return ad::add_rowvec(ad::matmul_nt(h, tied_embedding), b2);
    return ad::add_rowvec(ad::matmul(h, w2), b2);
}

ad::Var LinearHead::forward(const ad::Var& x) const {
    return ad::add_rowvec(ad::matmul(x, w), b);
}

namespace {

// Catmull-Rom kernel (a = -0.5), the classic bicubic weighting.
double cubic_kernel(double t) {
    t = std::abs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

}  // namespace

Eigen::MatrixXd bicubic_interp_matrix(int src_grid, int dst_grid) {
    const int src_n = src_grid * src_grid, dst_n = dst_grid * dst_grid;
    if (src_grid == dst_grid) return Eigen::MatrixXd::Identity(dst_n, src_n);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dst_n, src_n);
    const double scale = static_cast<double>(src_grid) / dst_grid;
    for (int dy = 0; dy < dst_grid; ++dy)
        for (int dx = 0; dx < dst_grid; ++dx) {
            const double sy = (dy + 0.5) * scale - 0.5;
            const double sx = (dx + 0.5) * scale - 0.5;
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            double wsum = 0.0;
            for (int i = -1; i <= 2; ++i)
                for (int j = -1; j <= 2; ++j) {
                    const int yy = std::clamp(y0 + i, 0, src_grid - 1);
                    const int xx = std::clamp(x0 + j, 0, src_grid - 1);
                    const double w = cubic_kernel(sy - (y0 + i)) * cubic_kernel(sx - (x0 + j));
                    m(dy * dst_grid + dx, yy * src_grid + xx) += w;
                    wsum += w;
                }
            m.row(dy * dst_grid + dx) /= wsum;
        }
    return m;
}

FlavaModel::FlavaModel(const ModelConfig& config)
    : config_(validate_config(config)), params_(config.seed) {
    const int h = config_.hidden_size;
    const int inter = config_.intermediate_size;
    const int n_patches = config_.num_patches();

    auto make_blocks = [&](const std::string& prefix, int layers) {
        for (int i = 0; i < layers; ++i) {
            std::string b = prefix + ".blocks." + std::to_string(i) + ".";
            params_.create(b + "ln1.gain", 1, h, Init::Ones);
            params_.create(b + "ln1.bias", 1, h, Init::Zeros);
            for (const char* nm : {"wq", "wk", "wv", "wo"})
                params_.create(b + "attn." + nm, h, h, Init::TruncNormal002);
            for (const char* nm : {"bq", "bk", "bv", "bo"})
                params_.create(b + "attn." + nm, 1, h, Init::Zeros);
            params_.create(b + "ln2.gain", 1, h, Init::Ones);
            params_.create(b + "ln2.bias", 1, h, Init::Zeros);
            params_.create(b + "mlp.w1", h, inter, Init::TruncNormal002);
            params_.create(b + "mlp.b1", 1, inter, Init::Zeros);
            params_.create(b + "mlp.w2", inter, h, Init::TruncNormal002);
            params_.create(b + "mlp.b2", 1, h, Init::Zeros);
        }
        params_.create(prefix + ".final_ln.gain", 1, h, Init::Ones);
        params_.create(prefix + ".final_ln.bias", 1, h, Init::Zeros);
    };

    params_.create("image_encoder.patch_embed.weight", config_.patch_dim(), h, Init::TruncNormal002);
    params_.create("image_encoder.patch_embed.bias", 1, h, Init::Zeros);
    params_.create("image_encoder.cls", 1, h, Init::TruncNormal002);
    params_.create("image_encoder.pos", 1 + n_patches, h, Init::TruncNormal002);
    params_.create("image_encoder.mask_embed", 1, h, Init::TruncNormal002);
    make_blocks("image_encoder", config_.image_layers);

    params_.create("text_encoder.token_embed", config_.text_vocab_size, h, Init::TruncNormal002);
    params_.create("text_encoder.pos", config_.text_max_len, h, Init::TruncNormal002);
    make_blocks("text_encoder", config_.text_layers);

    params_.create("multimodal_encoder.cls", 1, h, Init::TruncNormal002);
    params_.create("multimodal_encoder.image_proj.weight", h, h, Init::TruncNormal002);
    params_.create("multimodal_encoder.image_proj.bias", 1, h, Init::Zeros);
    params_.create("multimodal_encoder.text_proj.weight", h, h, Init::TruncNormal002);
    params_.create("multimodal_encoder.text_proj.bias", 1, h, Init::Zeros);
    make_blocks("multimodal_encoder", config_.multimodal_layers);

    params_.create("heads.image_proj.weight", h, config_.projection_dim, Init::TruncNormal002);
    params_.create("heads.text_proj.weight", h, config_.projection_dim, Init::TruncNormal002);
    params_.create("heads.temperature.log_inv", 1, 1, Init::Value,
                   std::log(1.0 / config_.temperature_init));
    params_.create("heads.itm.weight", h, 1, Init::TruncNormal002);
    params_.create("heads.itm.bias", 1, 1, Init::Zeros);

    auto make_head = [&](const std::string& prefix, int out_dim, bool tied) {
        params_.create(prefix + ".fc1.weight", h, h, Init::TruncNormal002);
        params_.create(prefix + ".fc1.bias", 1, h, Init::Zeros);
        params_.create(prefix + ".ln.gain", 1, h, Init::Ones);
        params_.create(prefix + ".ln.bias", 1, h, Init::Zeros);
        if (!tied) params_.create(prefix + ".fc2.weight", h, out_dim, Init::TruncNormal002);
        params_.create(prefix + ".fc2.bias", 1, out_dim, Init::Zeros);
    };
    make_head("heads.mim", config_.codebook_size, false);
    make_head("heads.mlm", config_.text_vocab_size, config_.tie_mlm_head);
    make_head("heads.mmm_image", config_.codebook_size, false);
    make_head("heads.mmm_text", config_.text_vocab_size, config_.tie_mlm_head);
}

ad::Var FlavaModel::run_encoder(const std::string& prefix, int layers, ad::Var x, int batch,
                                int seq, const MatI64& key_mask) const {
    const int nh = config_.num_heads;
    const int dh = config_.head_dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));
    auto p = [&](const std::string& name) { return params_.get(prefix + "." + name); };

    std::vector<std::vector<double>> masks(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        masks[static_cast<size_t>(b)].assign(static_cast<size_t>(seq), 1.0);
        if (key_mask.size() != 0)
            for (int t = 0; t < seq; ++t)
                masks[static_cast<size_t>(b)][static_cast<size_t>(t)] =
                    key_mask(b, t) != 0 ? 1.0 : 0.0;
    }

    for (int layer = 0; layer < layers; ++layer) {
        std::string bp = "blocks." + std::to_string(layer) + ".";
        // pre-norm: normalize, attend, then residual-add
        ad::Var ln1 = ad::layer_norm(x, p(bp + "ln1.gain"), p(bp + "ln1.bias"));
        ad::Var q = ad::add_rowvec(ad::matmul(ln1, p(bp + "attn.wq")), p(bp + "attn.bq"));
        ad::Var k = ad::add_rowvec(ad::matmul(ln1, p(bp + "attn.wk")), p(bp + "attn.bk"));
        ad::Var v = ad::add_rowvec(ad::matmul(ln1, p(bp + "attn.wv")), p(bp + "attn.bv"));
        std::vector<ad::Var> per_item;
        per_item.reserve(static_cast<size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            std::vector<ad::Var> heads;
            heads.reserve(static_cast<size_t>(nh));
            for (int hh = 0; hh < nh; ++hh) {
                ad::Var qb = ad::block_view(q, static_cast<Eigen::Index>(b) * seq, seq,
                                            static_cast<Eigen::Index>(hh) * dh, dh);
                ad::Var kb = ad::block_view(k, static_cast<Eigen::Index>(b) * seq, seq,
                                            static_cast<Eigen::Index>(hh) * dh, dh);
                ad::Var vb = ad::block_view(v, static_cast<Eigen::Index>(b) * seq, seq,
                                            static_cast<Eigen::Index>(hh) * dh, dh);
                heads.push_back(
                    ad::attention_core(qb, kb, vb, masks[static_cast<size_t>(b)], inv_sqrt_d));
            }
            per_item.push_back(ad::hstack(heads));
        }
        ad::Var attn = ad::vstack(per_item);
        attn = ad::add_rowvec(ad::matmul(attn, p(bp + "attn.wo")), p(bp + "attn.bo"));
        x = ad::add(x, attn);

        ad::Var ln2 = ad::layer_norm(x, p(bp + "ln2.gain"), p(bp + "ln2.bias"));
        ad::Var m = ad::add_rowvec(ad::matmul(ln2, p(bp + "mlp.w1")), p(bp + "mlp.b1"));
        m = ad::gelu(m);
        m = ad::add_rowvec(ad::matmul(m, p(bp + "mlp.w2")), p(bp + "mlp.b2"));
        x = ad::add(x, m);
    }
    return ad::layer_norm(x, p("final_ln.gain"), p("final_ln.bias"));
}

ImageHiddenStates FlavaModel::encode_image(const ImageBatch& images, const MaskPlan* plan) const {
    if (images.channels != config_.image_channels)
        fail("shape_error", "encode_image: expected " + std::to_string(config_.image_channels) +
                                " channels, got " + std::to_string(images.channels));
    if (images.height != images.width)
        fail("shape_error", "encode_image: image must be square");
    Eigen::MatrixXd patches = patchify(images, config_.patch_size);
    const int batch = images.batch();
    const int grid = images.height / config_.patch_size;
    const int n_patches = grid * grid;

    ad::Var e = ad::add_rowvec(ad::matmul(ad::Var::constant(std::move(patches)),
                                          params_.get("image_encoder.patch_embed.weight")),
                               params_.get("image_encoder.patch_embed.bias"));
    if (plan && !plan->empty()) {
        const Eigen::Index total = static_cast<Eigen::Index>(batch) * n_patches;
        for (auto pos : plan->masked_positions)
            if (pos < 0 || pos >= total)
                fail("out_of_range", "image mask position " + std::to_string(pos) +
                                         " outside patch grid of " + std::to_string(total));
        e = ad::substitute_rows(e, plan->masked_positions, params_.get("image_encoder.mask_embed"));
    }
    ad::Var x = ad::prepend_row_each(e, params_.get("image_encoder.cls"), batch, n_patches);

    ad::Var pos = params_.get("image_encoder.pos");
    if (grid != config_.grid_size()) {
        Eigen::MatrixXd interp = bicubic_interp_matrix(config_.grid_size(), grid);
        Eigen::MatrixXd full = Eigen::MatrixXd::Zero(1 + n_patches, 1 + config_.num_patches());
        full(0, 0) = 1.0;
        full.block(1, 1, n_patches, config_.num_patches()) = interp;
        pos = ad::matmul(ad::Var::constant(std::move(full)), pos);
    }
    x = ad::add_tiled(x, pos, batch);

    HiddenStates out;
    out.flat = run_encoder("image_encoder", config_.image_layers, x, batch, 1 + n_patches, {});
    out.batch = batch;
    out.seq = 1 + n_patches;
    return out;
}

TextHiddenStates FlavaModel::encode_text(const TextBatch& texts) const {
    validate(texts, config_.text_vocab_size);
    const int batch = texts.batch();
    const int seq = texts.seq_len();
    if (seq > config_.text_max_len)
        fail("shape_error", "encode_text: sequence length " + std::to_string(seq) +
                                " exceeds text_max_len " + std::to_string(config_.text_max_len));
    std::vector<std::int64_t> ids;
    ids.reserve(static_cast<size_t>(batch) * seq);
    for (int b = 0; b < batch; ++b)
        for (int t = 0; t < seq; ++t) ids.push_back(texts.token_ids(b, t));

    ad::Var e = ad::embedding_lookup(params_.get("text_encoder.token_embed"), ids);
    ad::Var pos = ad::block_view(params_.get("text_encoder.pos"), 0, seq, 0, config_.hidden_size);
    ad::Var x = ad::add_tiled(e, pos, batch);

    HiddenStates out;
    out.flat = run_encoder("text_encoder", config_.text_layers, x, batch, seq, texts.attention_mask);
    out.batch = batch;
    out.seq = seq;
    out.key_mask = texts.attention_mask;
    return out;
}

MultimodalHiddenStates FlavaModel::encode_multimodal(const ImageHiddenStates& img,
                                                     const TextHiddenStates& txt) const {
    if (img.batch != txt.batch)
        fail("shape_error", "encode_multimodal: image batch " + std::to_string(img.batch) +
                                " != text batch " + std::to_string(txt.batch));
    const int batch = img.batch;
    ad::Var pi = ad::add_rowvec(ad::matmul(img.flat, params_.get("multimodal_encoder.image_proj.weight")),
                                params_.get("multimodal_encoder.image_proj.bias"));
    ad::Var pt = ad::add_rowvec(ad::matmul(txt.flat, params_.get("multimodal_encoder.text_proj.weight")),
                                params_.get("multimodal_encoder.text_proj.bias"));
    ad::Var c = ad::concat_seq_pair(pi, img.seq, pt, txt.seq, batch);
    const int seq = 1 + img.seq + txt.seq;
    ad::Var x = ad::prepend_row_each(c, params_.get("multimodal_encoder.cls"), batch, seq - 1);
    // No positional embeddings here: the projected unimodal states already
    // carry position information.

    MatI64 key_mask(batch, seq);
    for (int b = 0; b < batch; ++b) {
        key_mask(b, 0) = 1;
        for (int t = 0; t < img.seq; ++t) key_mask(b, 1 + t) = 1;
        for (int t = 0; t < txt.seq; ++t)
            key_mask(b, 1 + img.seq + t) =
                txt.key_mask.size() != 0 ? txt.key_mask(b, t) : 1;
    }

    HiddenStates out;
    out.flat = run_encoder("multimodal_encoder", config_.multimodal_layers, x, batch, seq, key_mask);
    out.batch = batch;
    out.seq = seq;
    out.key_mask = key_mask;
    return out;
}

ad::Var FlavaModel::image_embedding(const ImageHiddenStates& h) const {
    return ad::matmul(h.cls(), params_.get("heads.image_proj.weight"));
}

ad::Var FlavaModel::text_embedding(const TextHiddenStates& h) const {
    return ad::matmul(h.cls(), params_.get("heads.text_proj.weight"));
}

ad::Var FlavaModel::log_inv_temperature() const { return params_.get("heads.temperature.log_inv"); }

double FlavaModel::temperature() const {
    return std::exp(-params_.get("heads.temperature.log_inv").value()(0, 0));
}

void FlavaModel::clamp_temperature(double min_temperature) {
    auto v = params_.get("heads.temperature.log_inv");
    double max_log_inv = std::log(1.0 / min_temperature);
    if (v.value()(0, 0) > max_log_inv) v.mutable_value()(0, 0) = max_log_inv;
}

MlpHead FlavaModel::make_mlp_head(const std::string& prefix) const {
    MlpHead head;
    head.w1 = params_.get(prefix + ".fc1.weight");
    head.b1 = params_.get(prefix + ".fc1.bias");
    head.ln_gain = params_.get(prefix + ".ln.gain");
    head.ln_bias = params_.get(prefix + ".ln.bias");
    if (params_.has(prefix + ".fc2.weight")) head.w2 = params_.get(prefix + ".fc2.weight");
    else head.tied_embedding = params_.get("text_encoder.token_embed");
    head.b2 = params_.get(prefix + ".fc2.bias");
    return head;
}

MlpHead FlavaModel::mim_head() const { return make_mlp_head("heads.mim"); }
MlpHead FlavaModel::mlm_head() const { return make_mlp_head("heads.mlm"); }
MlpHead FlavaModel::mmm_image_head() const { return make_mlp_head("heads.mmm_image"); }
MlpHead FlavaModel::mmm_text_head() const { return make_mlp_head("heads.mmm_text"); }

LinearHead FlavaModel::itm_head() const {
    return LinearHead{params_.get("heads.itm.weight"), params_.get("heads.itm.bias")};
}

}  // namespace flava
