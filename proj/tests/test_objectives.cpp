#include <doctest.h>

#include <cmath>

#include "flava/objectives.hpp"
#include "flava/synthetic.hpp"
#include "flava/util.hpp"
#include "test_helpers.hpp"

using namespace flava;
using flava::testing::random_matrix;

namespace {

// Dense double-precision oracle: normalize by hand, materialize the full
// softmax in both directions.
double brute_force_contrastive(Eigen::MatrixXd img, Eigen::MatrixXd txt, double temperature) {
    const Eigen::Index b = img.rows();
    for (Eigen::Index i = 0; i < b; ++i) {
        img.row(i) /= img.row(i).norm();
        txt.row(i) /= txt.row(i).norm();
    }
    Eigen::MatrixXd logits(b, b);
    for (Eigen::Index i = 0; i < b; ++i)
        for (Eigen::Index j = 0; j < b; ++j)
            logits(i, j) = img.row(i).dot(txt.row(j)) / temperature;
    double row_ce = 0.0, col_ce = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        double denom_r = 0.0, denom_c = 0.0;
        for (Eigen::Index j = 0; j < b; ++j) {
            denom_r += std::exp(logits(i, j));
            denom_c += std::exp(logits(j, i));
        }
        row_ce += -std::log(std::exp(logits(i, i)) / denom_r);
        col_ce += -std::log(std::exp(logits(i, i)) / denom_c);
    }
    return 0.5 * (row_ce / static_cast<double>(b) + col_ce / static_cast<double>(b));
}

// Head whose logits are exactly the given bias row (fc2 weight zero).
MlpHead bias_only_head(int hidden, const Eigen::RowVectorXd& bias) {
    std::mt19937_64 rng(404);
    MlpHead head;
    head.w1 = ad::Var::constant(random_matrix(hidden, hidden, rng, 0.05));
    head.b1 = ad::Var::constant(Eigen::MatrixXd::Zero(1, hidden));
    head.ln_gain = ad::Var::constant(Eigen::MatrixXd::Ones(1, hidden));
    head.ln_bias = ad::Var::constant(Eigen::MatrixXd::Zero(1, hidden));
    head.w2 = ad::Var::constant(Eigen::MatrixXd::Zero(hidden, bias.cols()));
    head.b2 = ad::Var::constant(bias);
    return head;
}

MlpHead random_head(int hidden, int out, std::mt19937_64& rng) {
    MlpHead head;
    head.w1 = ad::Var::leaf(random_matrix(hidden, hidden, rng, 0.1));
    head.b1 = ad::Var::leaf(random_matrix(1, hidden, rng, 0.02));
    head.ln_gain = ad::Var::leaf(Eigen::MatrixXd::Ones(1, hidden));
    head.ln_bias = ad::Var::leaf(Eigen::MatrixXd::Zero(1, hidden));
    head.w2 = ad::Var::leaf(random_matrix(hidden, out, rng, 0.1));
    head.b2 = ad::Var::leaf(random_matrix(1, out, rng, 0.02));
    return head;
}

}  // namespace

TEST_CASE("single-pair batch has zero contrastive loss") {
    Eigen::MatrixXd e(1, 4);
    e << 1, 2, 3, 4;
    auto r = contrastive_loss(ad::Var::constant(e), ad::Var::constant(e), 0.07);
    CHECK(r.loss.scalar() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("orthonormal 2x2 case equals ln(1+exp(-1))") {
    Eigen::MatrixXd img(2, 2), txt(2, 2);
    img << 1, 0, 0, 1;
    txt << 1, 0, 0, 1;
    auto r = contrastive_loss(ad::Var::constant(img), ad::Var::constant(txt), 1.0);
    const double expected = std::log(1.0 + std::exp(-1.0));  // ~0.31326
    CHECK(r.loss.scalar() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.loss.scalar() == doctest::Approx(0.3132616875).epsilon(1e-8));
}

TEST_CASE("contrastive loss matches the brute-force oracle within 1e-10") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::MatrixXd img = random_matrix(8, 16, rng);
        Eigen::MatrixXd txt = random_matrix(8, 16, rng);
        double tau = 0.05 + 0.2 * trial;
        auto r = contrastive_loss(ad::Var::constant(img), ad::Var::constant(txt), tau);
        CHECK(std::abs(r.loss.scalar() - brute_force_contrastive(img, txt, tau)) < 1e-10);
    }
}

TEST_CASE("zero-norm embedding is an error") {
    Eigen::MatrixXd img = Eigen::MatrixXd::Zero(2, 4);
    img.row(1) << 1, 1, 1, 1;
    Eigen::MatrixXd txt = Eigen::MatrixXd::Ones(2, 4);
    CHECK_THROWS_WITH_AS(contrastive_loss(ad::Var::constant(img), ad::Var::constant(txt), 1.0),
                         doctest::Contains("zero norm"), FlavaError);
    CHECK_THROWS_AS(contrastive_loss(ad::Var::constant(txt), ad::Var::constant(txt), 0.0),
                    FlavaError);
}

TEST_CASE("contrastive loss is invariant to positive rescaling of raw embeddings") {
    std::mt19937_64 rng(7);
    Eigen::MatrixXd img = random_matrix(6, 8, rng);
    Eigen::MatrixXd txt = random_matrix(6, 8, rng);
    auto base = contrastive_loss(ad::Var::constant(img), ad::Var::constant(txt), 0.1);
    auto scaled = contrastive_loss(ad::Var::constant((3.7 * img).eval()),
                                   ad::Var::constant((0.02 * txt).eval()), 0.1);
    CHECK(std::abs(base.loss.scalar() - scaled.loss.scalar()) < 1e-10);
}

TEST_CASE("swapping arguments transposes the logit matrix exactly") {
    std::mt19937_64 rng(8);
    Eigen::MatrixXd img = random_matrix(5, 8, rng);
    Eigen::MatrixXd txt = random_matrix(5, 8, rng);
    auto ab = contrastive_loss(ad::Var::constant(img), ad::Var::constant(txt), 0.07);
    auto ba = contrastive_loss(ad::Var::constant(txt), ad::Var::constant(img), 0.07);
    CHECK(ab.logits.value() == ba.logits.value().transpose());
    CHECK(ab.loss.scalar() == ba.loss.scalar());
}

TEST_CASE("contrastive gradients flow through embeddings and temperature") {
    std::mt19937_64 rng(9);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(4, 6, rng), random_matrix(4, 6, rng),
                                         random_matrix(1, 1, rng, 0.3)};
    double err = testing::gradcheck(
        [](const std::vector<ad::Var>& v) {
            return contrastive_loss_inv(v[0], v[1], ad::exp(v[2])).loss;
        },
        vals);
    CHECK(err < 1e-5);
}

TEST_CASE("itm loss extremes and gradient") {
    const int hidden = 8;
    std::mt19937_64 rng(10);
    Eigen::MatrixXd cls = random_matrix(4, hidden, rng);
    std::vector<std::uint8_t> labels = {1, 0, 1, 1};

    // craft a weight that produces hugely-correct logits via a bias-only head
    LinearHead confident{ad::Var::constant(Eigen::MatrixXd::Zero(hidden, 1)),
                         ad::Var::constant(Eigen::MatrixXd::Constant(1, 1, 20.0))};
    std::vector<std::uint8_t> all_true = {1, 1, 1, 1};
    CHECK(itm_loss(ad::Var::constant(cls), all_true, confident).scalar() < 1e-6);
    CHECK(itm_head_accuracy(ad::Var::constant(cls), all_true, confident) == 1.0);

    LinearHead uniform{ad::Var::constant(Eigen::MatrixXd::Zero(hidden, 1)),
                       ad::Var::constant(Eigen::MatrixXd::Zero(1, 1))};
    CHECK(itm_loss(ad::Var::constant(cls), labels, uniform).scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    std::vector<Eigen::MatrixXd> vals = {cls, random_matrix(hidden, 1, rng),
                                         random_matrix(1, 1, rng)};
    double err = testing::gradcheck(
        [&labels](const std::vector<ad::Var>& v) {
            return itm_loss(v[0], labels, LinearHead{v[1], v[2]});
        },
        vals);
    CHECK(err < 1e-5);
}

TEST_CASE("uniform logits give ln(K) for the paper-scale class counts") {
    const int hidden = 64;
    const int batch = 2, n_patches = 4, img_seq = 5, txt_seq = 4;
    const int seq = 1 + img_seq + txt_seq;
    std::mt19937_64 rng(11);

    MultimodalHiddenStates h;
    h.flat = ad::Var::constant(random_matrix(batch * seq, hidden, rng));
    h.batch = batch;
    h.seq = seq;

    MaskPlan image_plan, text_plan;
    image_plan.masked_positions = {0, n_patches + 1};  // item0 patch0, item1 patch1
    image_plan.labels[0] = 17;
    image_plan.labels[n_patches + 1] = 8191;
    text_plan.masked_positions = {1, txt_seq + 2};
    text_plan.labels[1] = 30521;
    text_plan.labels[txt_seq + 2] = 5;

    MlpHead img_head = bias_only_head(hidden, Eigen::RowVectorXd::Zero(8192));
    MlpHead txt_head = bias_only_head(hidden, Eigen::RowVectorXd::Zero(30522));
    MmmLosses losses = mmm_loss(h, image_plan, text_plan, img_head, txt_head, img_seq, txt_seq);
    REQUIRE(losses.image.has_value());
    REQUIRE(losses.text.has_value());
    CHECK(std::abs(losses.image->scalar() - std::log(8192.0)) < 1e-6);
    CHECK(std::abs(losses.image->scalar() - 9.0109) < 1e-3);
    CHECK(std::abs(losses.text->scalar() - std::log(30522.0)) < 1e-6);
    CHECK(std::abs(losses.text->scalar() - 10.3264) < 1e-3);

    // no masked text positions: the text component is absent, image unaffected
    MaskPlan empty;
    MmmLosses partial = mmm_loss(h, image_plan, empty, img_head, txt_head, img_seq, txt_seq);
    CHECK(partial.image.has_value());
    CHECK_FALSE(partial.text.has_value());
    CHECK(partial.image->scalar() == losses.image->scalar());
}

TEST_CASE("mim uniform and near-one-hot logits at desk scale") {
    const int hidden = 16, n_patches = 16, batch = 2;
    std::mt19937_64 rng(12);
    ImageHiddenStates h;
    h.flat = ad::Var::constant(random_matrix(batch * (1 + n_patches), hidden, rng));
    h.batch = batch;
    h.seq = 1 + n_patches;

    MaskPlan plan;
    plan.masked_positions = {3, n_patches + 7};
    plan.labels[3] = 100;
    plan.labels[n_patches + 7] = 254;
    MlpHead uniform = bias_only_head(hidden, Eigen::RowVectorXd::Zero(256));
    auto loss = mim_loss(h, plan, uniform);
    REQUIRE(loss.has_value());
    CHECK(std::abs(loss->scalar() - std::log(256.0)) < 1e-6);
    CHECK(std::abs(loss->scalar() - 5.5452) < 1e-3);

    // one-hot at magnitude 20
    MaskPlan one;
    one.masked_positions = {3};
    one.labels[3] = 100;
    Eigen::RowVectorXd bias = Eigen::RowVectorXd::Constant(256, -20.0);
    bias(100) = 20.0;
    auto tiny = mim_loss(h, one, bias_only_head(hidden, bias));
    CHECK(tiny->scalar() < 1e-6);

    CHECK_FALSE(mim_loss(h, MaskPlan{}, uniform).has_value());
}

TEST_CASE("mim equals the mmm image component for shared states, plan and head") {
    const int hidden = 24, n_patches = 4, batch = 3, txt_seq = 5;
    const int img_seq = 1 + n_patches;
    const int m_seq = 1 + img_seq + txt_seq;
    std::mt19937_64 rng(13);

    Eigen::MatrixXd m_flat = random_matrix(batch * m_seq, hidden, rng);
    // image hidden states whose rows coincide with the multimodal rows of the
    // same patches
    Eigen::MatrixXd i_flat = random_matrix(batch * img_seq, hidden, rng);
    for (int b = 0; b < batch; ++b)
        for (int p = 0; p < n_patches; ++p)
            i_flat.row(b * img_seq + 1 + p) = m_flat.row(b * m_seq + 2 + p);

    MultimodalHiddenStates hm;
    hm.flat = ad::Var::constant(m_flat);
    hm.batch = batch;
    hm.seq = m_seq;
    ImageHiddenStates hi;
    hi.flat = ad::Var::constant(i_flat);
    hi.batch = batch;
    hi.seq = img_seq;

    MaskPlan plan;
    plan.masked_positions = {1, n_patches + 2, 2 * n_patches + 3};
    for (auto pos : plan.masked_positions) plan.labels[pos] = (pos * 37) % 256;

    MlpHead shared = random_head(hidden, 256, rng);
    auto from_mim = mim_loss(hi, plan, shared);
    auto from_mmm = mmm_loss(hm, plan, MaskPlan{}, shared, shared, img_seq, txt_seq);
    REQUIRE(from_mim.has_value());
    REQUIRE(from_mmm.image.has_value());
    CHECK(from_mim->scalar() == doctest::Approx(from_mmm.image->scalar()).epsilon(1e-14));
}

TEST_CASE("mlm uniform logits and empty plan") {
    const int hidden = 16, seq = 8, batch = 2;
    std::mt19937_64 rng(14);
    TextHiddenStates h;
    h.flat = ad::Var::constant(random_matrix(batch * seq, hidden, rng));
    h.batch = batch;
    h.seq = seq;

    MaskPlan plan;
    plan.masked_positions = {1, seq + 4};
    plan.labels[1] = 999;
    plan.labels[seq + 4] = 3;
    auto loss = mlm_loss(h, plan, bias_only_head(hidden, Eigen::RowVectorXd::Zero(1000)));
    REQUIRE(loss.has_value());
    CHECK(std::abs(loss->scalar() - std::log(1000.0)) < 1e-6);
    CHECK(std::abs(loss->scalar() - 6.9078) < 1e-3);
    CHECK_FALSE(mlm_loss(h, MaskPlan{}, bias_only_head(hidden, Eigen::RowVectorXd::Zero(1000)))
                    .has_value());
}

TEST_CASE("mlm gradient through a trainable head") {
    const int hidden = 6, seq = 4, batch = 2, vocab = 9;
    std::mt19937_64 rng(15);
    MaskPlan plan;
    plan.masked_positions = {1, 2, seq + 3};
    plan.labels[1] = 4;
    plan.labels[2] = 0;
    plan.labels[seq + 3] = 8;

    std::vector<Eigen::MatrixXd> vals = {random_matrix(batch * seq, hidden, rng),
                                         random_matrix(hidden, hidden, rng, 0.2),
                                         random_matrix(1, hidden, rng, 0.1),
                                         random_matrix(hidden, vocab, rng, 0.2),
                                         random_matrix(1, vocab, rng, 0.1)};
    double err = testing::gradcheck(
        [&](const std::vector<ad::Var>& v) {
            TextHiddenStates h;
            h.flat = v[0];
            h.batch = batch;
            h.seq = seq;
            MlpHead head;
            head.w1 = v[1];
            head.b1 = v[2];
            head.ln_gain = ad::Var::constant(Eigen::MatrixXd::Ones(1, hidden));
            head.ln_bias = ad::Var::constant(Eigen::MatrixXd::Zero(1, hidden));
            head.w2 = v[3];
            head.b2 = v[4];
            return *mlm_loss(h, plan, head);
        },
        vals);
    CHECK(err < 1e-5);
}

TEST_CASE("losses are finite and non-negative on random inputs") {
    std::mt19937_64 rng(16);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd img = random_matrix(5, 8, rng, 2.0);
        Eigen::MatrixXd txt = random_matrix(5, 8, rng, 2.0);
        double loss = contrastive_loss(ad::Var::constant(img), ad::Var::constant(txt), 0.07)
                          .loss.scalar();
        CHECK(std::isfinite(loss));
        CHECK(loss >= 0.0);
    }
}

TEST_CASE("itm negative construction") {
    ModelConfig desk = ModelConfig::desk();
    PairBatch pairs = make_synthetic_pairs(4, desk, 33);

    auto rng0 = derive_rng(1, "itm");
    PairBatch same = make_itm_negatives(pairs, 0.0, rng0);
    CHECK(same.texts.token_ids == pairs.texts.token_ids);
    for (auto l : same.match_labels) CHECK(l == 1);

    PairBatch two = make_synthetic_pairs(2, desk, 34);
    auto rng1 = derive_rng(2, "itm");
    PairBatch swapped = make_itm_negatives(two, 1.0, rng1);
    CHECK(swapped.texts.token_ids.row(0) == two.texts.token_ids.row(1));
    CHECK(swapped.texts.token_ids.row(1) == two.texts.token_ids.row(0));
    CHECK(swapped.match_labels[0] == 0);
    CHECK(swapped.match_labels[1] == 0);

    PairBatch one = make_synthetic_pairs(1, desk, 35);
    auto rng2 = derive_rng(3, "itm");
    CHECK_THROWS_AS(make_itm_negatives(one, 0.5, rng2), FlavaError);

    // selected rows always receive a DIFFERENT row's text
    PairBatch many = make_synthetic_pairs(16, desk, 36);
    for (int seed = 0; seed < 50; ++seed) {
        auto r = derive_rng(static_cast<std::uint64_t>(seed), "itm.diff");
        PairBatch neg = make_itm_negatives(many, 0.7, r);
        for (int i = 0; i < 16; ++i) {
            if (neg.match_labels[static_cast<size_t>(i)] == 0)
                REQUIRE(neg.texts.token_ids.row(i) != many.texts.token_ids.row(i));
            else
                REQUIRE(neg.texts.token_ids.row(i) == many.texts.token_ids.row(i));
        }
    }
}

TEST_CASE("negative fraction follows the binomial bound at n=10000") {
    ModelConfig desk = ModelConfig::desk();
    desk.text_max_len = 8;
    PairBatch pairs = make_synthetic_pairs(10000, desk, 37);
    auto rng = derive_rng(4, "itm.binomial");
    PairBatch neg = make_itm_negatives(pairs, 0.5, rng);
    int false_count = 0;
    for (auto l : neg.match_labels)
        if (l == 0) ++false_count;
    const double sigma = std::sqrt(10000 * 0.5 * 0.5);
    CHECK(std::abs(false_count - 5000.0) <= 4.0 * sigma);
}

TEST_CASE("weighted totals include only present components") {
    LossBundle bundle;
    bundle.mlm = 2.0;
    LossWeights w;
    w.mlm = 0.5;
    CHECK(bundle.weighted_total(w) == 1.0);
    bundle.gc = 3.0;
    CHECK(bundle.weighted_total(w) == 4.0);
}
