#include <doctest.h>

#include <cmath>

#include "flava/encoders.hpp"
#include "flava/synthetic.hpp"
#include "flava/util.hpp"
#include "test_helpers.hpp"

using namespace flava;

namespace {

ModelConfig toy_config() {
    ModelConfig c;
    c.hidden_size = 2;
    c.num_heads = 1;
    c.intermediate_size = 4;
    c.image_layers = 1;
    c.text_layers = 1;
    c.multimodal_layers = 1;
    c.patch_size = 8;
    c.image_size = 16;
    c.text_vocab_size = 10;
    c.text_max_len = 2;
    c.codebook_size = 4;
    c.projection_dim = 2;
    c.block_min_area = 1;
    c.seed = 51;
    return c;
}

TextBatch text_of(std::vector<std::vector<std::int64_t>> rows,
                  std::vector<std::vector<std::int64_t>> masks) {
    TextBatch t;
    t.token_ids.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(rows[0].size()));
    t.attention_mask.resize(t.token_ids.rows(), t.token_ids.cols());
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < rows[i].size(); ++j) {
            t.token_ids(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            t.attention_mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                masks[i][j];
        }
    return t;
}

// Naive scalar-loop layer norm, eps matching the production value.
void ln_row(const double* x, const double* g, const double* b, double* out, int n) {
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += x[i];
    mu /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= n;
    double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int i = 0; i < n; ++i) out[i] = (x[i] - mu) * inv * g[i] + b[i];
}

}  // namespace

TEST_CASE("patchify counts and row-major order") {
    ModelConfig desk = ModelConfig::desk();
    ImageBatch img224;
    img224.channels = 3;
    img224.height = img224.width = 224;
    img224.pixels = Eigen::MatrixXd::Zero(1, 3 * 224 * 224);
    CHECK(patchify(img224, 16).rows() == 196);

    ImageBatch img480;
    img480.channels = 3;
    img480.height = img480.width = 480;
    img480.pixels = Eigen::MatrixXd::Zero(1, 3 * 480 * 480);
    CHECK(patchify(img480, 16).rows() == 900);

    ImageBatch desk_img = make_synthetic_images(2, desk, 7);
    Eigen::MatrixXd patches = patchify(desk_img, 8);
    CHECK(patches.rows() == 2 * 16);
    CHECK(patches.cols() == 3 * 8 * 8);

    // row-major grid order, channel-major features
    CHECK(patches(0, 0) == desk_img.pixel(0, 0, 0, 0));
    CHECK(patches(1, 0) == desk_img.pixel(0, 0, 0, 8));      // one grid step right
    CHECK(patches(4, 0) == desk_img.pixel(0, 0, 8, 0));      // next grid row
    CHECK(patches(0, 8 * 8) == desk_img.pixel(0, 1, 0, 0));  // channel 1 block
    CHECK(patches(16, 0) == desk_img.pixel(1, 0, 0, 0));     // second item

    ImageBatch bad;
    bad.channels = 3;
    bad.height = bad.width = 224;
    bad.pixels = Eigen::MatrixXd::Zero(1, 3 * 224 * 224);
    CHECK_THROWS_WITH_AS(patchify(bad, 15), doctest::Contains("divisible"), FlavaError);
}

TEST_CASE("hand-computed single pre-norm block matches encode_text on a 2x2 toy") {
    ModelConfig cfg = toy_config();
    FlavaModel model(cfg);
    TextBatch texts = text_of({{kClsTokenId, 5}}, {{1, 1}});
    Eigen::MatrixXd got = model.encode_text(texts).flat.value();  // [2, 2]

    const auto& P = model.params();
    auto m = [&](const std::string& n) { return P.get(n).value(); };

    // embeddings + positions
    double x[2][2];
    for (int t = 0; t < 2; ++t)
        for (int d = 0; d < 2; ++d)
            x[t][d] = m("text_encoder.token_embed")(texts.token_ids(0, t), d) +
                      m("text_encoder.pos")(t, d);

    const std::string b = "text_encoder.blocks.0.";
    // layer norm BEFORE attention
    double ln1[2][2];
    for (int t = 0; t < 2; ++t)
        ln_row(x[t], m(b + "ln1.gain").data(), m(b + "ln1.bias").data(), ln1[t], 2);

    double q[2][2], k[2][2], v[2][2];
    for (int t = 0; t < 2; ++t)
        for (int d = 0; d < 2; ++d) {
            q[t][d] = m(b + "attn.bq")(0, d);
            k[t][d] = m(b + "attn.bk")(0, d);
            v[t][d] = m(b + "attn.bv")(0, d);
            for (int e = 0; e < 2; ++e) {
                q[t][d] += ln1[t][e] * m(b + "attn.wq")(e, d);
                k[t][d] += ln1[t][e] * m(b + "attn.wk")(e, d);
                v[t][d] += ln1[t][e] * m(b + "attn.wv")(e, d);
            }
        }
    const double scale = 1.0 / std::sqrt(2.0);
    double ctx[2][2];
    for (int t = 0; t < 2; ++t) {
        double s0 = scale * (q[t][0] * k[0][0] + q[t][1] * k[0][1]);
        double s1 = scale * (q[t][0] * k[1][0] + q[t][1] * k[1][1]);
        double mx = std::max(s0, s1);
        double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
        double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
        for (int d = 0; d < 2; ++d) ctx[t][d] = p0 * v[0][d] + p1 * v[1][d];
    }
    for (int t = 0; t < 2; ++t)
        for (int d = 0; d < 2; ++d) {
            double o = m(b + "attn.bo")(0, d);
            for (int e = 0; e < 2; ++e) o += ctx[t][e] * m(b + "attn.wo")(e, d);
            x[t][d] += o;  // residual
        }

    double ln2[2][2];
    for (int t = 0; t < 2; ++t)
        ln_row(x[t], m(b + "ln2.gain").data(), m(b + "ln2.bias").data(), ln2[t], 2);
    for (int t = 0; t < 2; ++t) {
        double hmid[4];
        for (int j = 0; j < 4; ++j) {
            double a = m(b + "mlp.b1")(0, j);
            for (int e = 0; e < 2; ++e) a += ln2[t][e] * m(b + "mlp.w1")(e, j);
            hmid[j] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
        }
        for (int d = 0; d < 2; ++d) {
            double o = m(b + "mlp.b2")(0, d);
            for (int j = 0; j < 4; ++j) o += hmid[j] * m(b + "mlp.w2")(j, d);
            x[t][d] += o;
        }
    }
    double final_out[2][2];
    for (int t = 0; t < 2; ++t)
        ln_row(x[t], m("text_encoder.final_ln.gain").data(),
               m("text_encoder.final_ln.bias").data(), final_out[t], 2);

    for (int t = 0; t < 2; ++t)
        for (int d = 0; d < 2; ++d)
            CHECK(got(t, d) == doctest::Approx(final_out[t][d]).epsilon(1e-12));
}

TEST_CASE("encoder output shapes on desk and paper configs") {
    ModelConfig desk = ModelConfig::desk();
    FlavaModel model(desk);
    ImageBatch images = make_synthetic_images(2, desk, 3);
    ImageHiddenStates hi = model.encode_image(images);
    CHECK(hi.batch == 2);
    CHECK(hi.seq == 17);  // 1 + (32/8)^2
    CHECK(hi.flat.rows() == 2 * 17);
    CHECK(hi.flat.cols() == 64);
    CHECK(hi.flat.value().allFinite());

    TextBatch texts = make_synthetic_texts(3, desk, 3);
    TextBatch eight;
    eight.token_ids = texts.token_ids.leftCols(8);
    eight.attention_mask = texts.attention_mask.leftCols(8);
    TextHiddenStates ht = model.encode_text(eight);
    CHECK(ht.seq == 8);
    CHECK(ht.flat.rows() == 3 * 8);
    CHECK(ht.flat.cols() == 64);

    ModelConfig paper = ModelConfig::paper();
    paper.seed = 9;
    FlavaModel big(paper);
    ImageBatch one = make_synthetic_images(1, paper, 1);
    ImageHiddenStates hp = big.encode_image(one);
    CHECK(hp.seq == 197);  // 1 + 196
    CHECK(hp.flat.cols() == 768);
    CHECK(hp.flat.value().allFinite());
}

TEST_CASE("multimodal sequence layout and batch mismatch error") {
    ModelConfig desk = ModelConfig::desk();
    FlavaModel model(desk);
    PairBatch pairs = make_synthetic_pairs(2, desk, 5);
    TextBatch eight;
    eight.token_ids = pairs.texts.token_ids.leftCols(8);
    eight.attention_mask = pairs.texts.attention_mask.leftCols(8);
    ImageHiddenStates hi = model.encode_image(pairs.images);
    TextHiddenStates ht = model.encode_text(eight);
    MultimodalHiddenStates hm = model.encode_multimodal(hi, ht);
    CHECK(hm.seq == 1 + 17 + 8);  // 26
    CHECK(hm.flat.rows() == 2 * 26);

    ImageBatch three = make_synthetic_images(3, desk, 6);
    ImageHiddenStates hi3 = model.encode_image(three);
    CHECK_THROWS_WITH_AS(model.encode_multimodal(hi3, ht), doctest::Contains("batch"), FlavaError);
}

TEST_CASE("padding positions never influence non-padding outputs") {
    ModelConfig desk = ModelConfig::desk();
    FlavaModel model(desk);
    TextBatch longer = text_of({{kClsTokenId, 10, 11, 12, kPadTokenId, kPadTokenId}},
                               {{1, 1, 1, 1, 0, 0}});
    TextBatch shorter = text_of({{kClsTokenId, 10, 11, 12}}, {{1, 1, 1, 1}});
    Eigen::MatrixXd with_pad = model.encode_text(longer).flat.value();
    Eigen::MatrixXd without = model.encode_text(shorter).flat.value();
    for (int t = 0; t < 4; ++t)
        for (int d = 0; d < 64; ++d)
            CHECK(with_pad(t, d) == doctest::Approx(without(t, d)).epsilon(1e-9));

    // stronger: changing a padded token's id must not change valid outputs
    TextBatch altered = longer;
    altered.token_ids(0, 5) = 500;
    Eigen::MatrixXd changed = model.encode_text(altered).flat.value();
    for (int t = 0; t < 4; ++t)
        for (int d = 0; d < 64; ++d) CHECK(changed(t, d) == with_pad(t, d));
}

TEST_CASE("out-of-range token id is an error") {
    ModelConfig desk = ModelConfig::desk();
    FlavaModel model(desk);
    TextBatch bad = text_of({{kClsTokenId, 1000}}, {{1, 1}});
    CHECK_THROWS_WITH_AS(model.encode_text(bad), doctest::Contains("token id"), FlavaError);
}

TEST_CASE("batch permutation permutes outputs identically") {
    ModelConfig desk = ModelConfig::desk();
    FlavaModel model(desk);
    ImageBatch images = make_synthetic_images(4, desk, 11);
    Eigen::MatrixXd fwd = model.encode_image(images).flat.value();
    ImageBatch permuted = images.rows({2, 0, 3, 1});
    Eigen::MatrixXd per = model.encode_image(permuted).flat.value();
    const int s = 17;
    std::vector<int> order = {2, 0, 3, 1};
    for (int b = 0; b < 4; ++b)
        CHECK(per.middleRows(b * s, s) == fwd.middleRows(order[static_cast<size_t>(b)] * s, s));
}

TEST_CASE("encoder blocks are live: dropping the final block changes outputs") {
    ModelConfig two = ModelConfig::desk();
    two.seed = 21;
    ModelConfig one = two;
    one.image_layers = 1;
    FlavaModel m2(two), m1(one);
    // per-name seeding makes block 0 bitwise identical across the two models
    CHECK(m2.params().get("image_encoder.blocks.0.attn.wq").value() ==
          m1.params().get("image_encoder.blocks.0.attn.wq").value());
    ImageBatch images = make_synthetic_images(1, two, 13);
    Eigen::MatrixXd o2 = m2.encode_image(images).flat.value();
    Eigen::MatrixXd o1 = m1.encode_image(images).flat.value();
    CHECK((o2 - o1).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("zeroed block output projections leave only the residual path, still finite") {
    ModelConfig desk = ModelConfig::desk();
    FlavaModel model(desk);
    for (int layer = 0; layer < desk.image_layers; ++layer) {
        std::string b = "image_encoder.blocks." + std::to_string(layer) + ".";
        model.params().get(b + "attn.wo").mutable_value().setZero();
        model.params().get(b + "mlp.w2").mutable_value().setZero();
    }
    ImageBatch images = make_synthetic_images(2, desk, 17);
    Eigen::MatrixXd out = model.encode_image(images).flat.value();
    CHECK(out.allFinite());
}

TEST_CASE("gradient of a multimodal CLS scalar w.r.t. an image pixel is nonzero") {
    ModelConfig desk = ModelConfig::desk();
    FlavaModel model(desk);
    PairBatch pairs = make_synthetic_pairs(1, desk, 19);

    // plain sums over a LayerNorm output are constant by construction, so
    // weight the coordinates unevenly
    Eigen::VectorXd weights(desk.hidden_size);
    for (int j = 0; j < desk.hidden_size; ++j) weights(j) = std::sin(1.0 + j);
    auto scalar_of = [&](const ImageBatch& imgs) {
        ImageHiddenStates hi = model.encode_image(imgs);
        TextHiddenStates ht = model.encode_text(pairs.texts);
        MultimodalHiddenStates hm = model.encode_multimodal(hi, ht);
        return (hm.cls().value() * weights).sum();
    };
    const double h = 1e-4;
    ImageBatch plus = pairs.images, minus = pairs.images;
    plus.pixel(0, 1, 7, 12) += h;
    minus.pixel(0, 1, 7, 12) -= h;
    double fd = (scalar_of(plus) - scalar_of(minus)) / (2 * h);
    CHECK(std::abs(fd) > 1e-10);
}

TEST_CASE("positional interpolation: identity at native size, usable at 2x") {
    CHECK(bicubic_interp_matrix(4, 4) == Eigen::MatrixXd::Identity(16, 16));
    Eigen::MatrixXd up = bicubic_interp_matrix(4, 8);
    CHECK(up.rows() == 64);
    CHECK(up.cols() == 16);
    for (Eigen::Index i = 0; i < up.rows(); ++i)
        CHECK(up.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

    ModelConfig desk = ModelConfig::desk();
    FlavaModel model(desk);
    ImageBatch big;
    big.channels = 3;
    big.height = big.width = 64;  // grid 8 vs native 4
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    big.pixels.resize(1, 3 * 64 * 64);
    for (Eigen::Index i = 0; i < big.pixels.size(); ++i) big.pixels(0, i) = unit(rng);
    ImageHiddenStates h = model.encode_image(big);
    CHECK(h.seq == 65);
    CHECK(h.flat.value().allFinite());
}

TEST_CASE("forward is deterministic for a fixed seed") {
    ModelConfig desk = ModelConfig::desk();
    FlavaModel a(desk), b(desk);
    ImageBatch images = make_synthetic_images(2, desk, 23);
    CHECK(a.encode_image(images).flat.value() == b.encode_image(images).flat.value());
}
