#include <doctest.h>

#include "flava/autodiff.hpp"
#include "test_helpers.hpp"

using namespace flava;
using testing::gradcheck;
using testing::random_matrix;

namespace {
std::mt19937_64 rng_for(int tag) { return std::mt19937_64(9000 + tag); }
}

TEST_CASE("matmul and bias gradients") {
    auto rng = rng_for(1);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(3, 4, rng), random_matrix(4, 5, rng),
                                         random_matrix(1, 5, rng)};
    double err = gradcheck(
        [](const std::vector<ad::Var>& v) {
            return ad::sum_all(ad::gelu(ad::add_rowvec(ad::matmul(v[0], v[1]), v[2])));
        },
        vals);
    CHECK(err < 1e-6);
}

TEST_CASE("matmul_nt, transpose, cmul, sub, scale gradients") {
    auto rng = rng_for(2);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(3, 4, rng), random_matrix(3, 4, rng)};
    double err = gradcheck(
        [](const std::vector<ad::Var>& v) {
            ad::Var a = ad::matmul_nt(v[0], v[1]);              // [3,3]
            ad::Var b = ad::transpose(a);
            ad::Var c = ad::cmul(a, b);
            ad::Var d = ad::sub(c, ad::scale(a, 0.25));
            return ad::mean_all(d);
        },
        vals);
    CHECK(err < 1e-6);
}

TEST_CASE("layer_norm gradients") {
    auto rng = rng_for(3);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(5, 6, rng),
                                         random_matrix(1, 6, rng, 0.5).array() + 1.0,
                                         random_matrix(1, 6, rng, 0.2)};
    double err = gradcheck(
        [](const std::vector<ad::Var>& v) {
            return ad::mean_all(ad::cmul(ad::layer_norm(v[0], v[1], v[2]),
                                         ad::layer_norm(v[0], v[1], v[2])));
        },
        vals);
    CHECK(err < 1e-5);
}

TEST_CASE("l2_normalize_rows gradients and zero-norm error") {
    auto rng = rng_for(4);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(4, 6, rng)};
    double err = gradcheck(
        [](const std::vector<ad::Var>& v) {
            ad::Var n = ad::l2_normalize_rows(v[0]);
            return ad::sum_all(ad::cmul(n, ad::scale(n, 0.5)));
        },
        vals);
    CHECK(err < 1e-6);

    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 3);
    z.row(0) << 1.0, 2.0, 3.0;
    CHECK_THROWS_WITH_AS(ad::l2_normalize_rows(ad::Var::constant(z)),
                         doctest::Contains("zero norm"), FlavaError);
}

TEST_CASE("exp and scale_by gradients") {
    auto rng = rng_for(5);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(3, 3, rng), random_matrix(1, 1, rng, 0.3)};
    double err = gradcheck(
        [](const std::vector<ad::Var>& v) {
            return ad::mean_all(ad::scale_by(v[0], ad::exp(v[1])));
        },
        vals);
    CHECK(err < 1e-6);
}

TEST_CASE("stacking, gathering and substitution gradients") {
    auto rng = rng_for(6);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(4, 3, rng), random_matrix(2, 3, rng),
                                         random_matrix(1, 3, rng)};
    double err = gradcheck(
        [](const std::vector<ad::Var>& v) {
            ad::Var s = ad::vstack({v[0], v[1]});                       // [6,3]
            ad::Var g = ad::gather_rows(s, {0, 5, 2, 2});               // duplicates allowed
            ad::Var sub = ad::substitute_rows(s, {1, 4}, v[2]);
            ad::Var h = ad::hstack({g, ad::gather_rows(sub, {0, 1, 2, 3})});
            return ad::mean_all(h);
        },
        vals);
    CHECK(err < 1e-6);
}

TEST_CASE("block_view, add_tiled, prepend_row_each, concat_seq_pair gradients") {
    auto rng = rng_for(7);
    // batch=2, seq=3, hidden=4
    std::vector<Eigen::MatrixXd> vals = {random_matrix(6, 4, rng), random_matrix(3, 4, rng),
                                         random_matrix(1, 4, rng), random_matrix(4, 4, rng)};
    double err = gradcheck(
        [](const std::vector<ad::Var>& v) {
            ad::Var tiled = ad::add_tiled(v[0], v[1], 2);
            ad::Var with_cls = ad::prepend_row_each(tiled, v[2], 2, 3);   // [8,4]
            ad::Var merged = ad::concat_seq_pair(with_cls, 4, v[3], 2, 2);  // [12,4]
            ad::Var sliced = ad::block_view(merged, 1, 5, 1, 2);
            return ad::sum_all(ad::gelu(sliced));
        },
        vals);
    CHECK(err < 1e-6);
}

TEST_CASE("attention_core gradients with key masking") {
    auto rng = rng_for(8);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(5, 4, rng), random_matrix(5, 4, rng),
                                         random_matrix(5, 4, rng)};
    std::vector<double> mask = {1, 1, 1, 0, 1};
    double err = gradcheck(
        [mask](const std::vector<ad::Var>& v) {
            ad::Var out = ad::attention_core(v[0], v[1], v[2], mask, 0.5);
            return ad::mean_all(ad::cmul(out, out));
        },
        vals);
    CHECK(err < 1e-5);
}

TEST_CASE("softmax cross-entropy matches a brute-force oracle value and gradient") {
    auto rng = rng_for(9);
    Eigen::MatrixXd logits = random_matrix(4, 7, rng);
    std::vector<std::int64_t> targets = {2, 0, 6, 3};

    // independent dense softmax oracle
    double expected = 0.0;
    for (int i = 0; i < 4; ++i) {
        double denom = 0.0;
        for (int j = 0; j < 7; ++j) denom += std::exp(logits(i, j));
        expected += -std::log(std::exp(logits(i, targets[static_cast<size_t>(i)])) / denom);
    }
    expected /= 4.0;

    ad::Var loss = ad::softmax_xent_rows(ad::Var::constant(logits), targets);
    CHECK(loss.scalar() == doctest::Approx(expected).epsilon(1e-12));

    std::vector<Eigen::MatrixXd> vals = {logits};
    double err = gradcheck(
        [&targets](const std::vector<ad::Var>& v) {
            return ad::softmax_xent_rows(v[0], targets);
        },
        vals);
    CHECK(err < 1e-6);
}

TEST_CASE("bce_with_logits value and gradient") {
    Eigen::MatrixXd logits(3, 1);
    logits << 0.0, 2.0, -1.5;
    std::vector<double> labels = {1.0, 0.0, 1.0};
    double expected = 0.0;
    expected += -std::log(1.0 / (1.0 + std::exp(-0.0)));
    expected += -std::log(1.0 - 1.0 / (1.0 + std::exp(-2.0)));
    expected += -std::log(1.0 / (1.0 + std::exp(1.5)));
    expected /= 3.0;
    ad::Var loss = ad::bce_with_logits(ad::Var::constant(logits), labels);
    CHECK(loss.scalar() == doctest::Approx(expected).epsilon(1e-12));

    std::vector<Eigen::MatrixXd> vals = {logits};
    double err = gradcheck(
        [&labels](const std::vector<ad::Var>& v) { return ad::bce_with_logits(v[0], labels); },
        vals);
    CHECK(err < 1e-6);
}

TEST_CASE("embedding lookup gradients and range error") {
    auto rng = rng_for(10);
    std::vector<Eigen::MatrixXd> vals = {random_matrix(6, 3, rng)};
    std::vector<std::int64_t> ids = {0, 5, 2, 2, 1};
    double err = gradcheck(
        [&ids](const std::vector<ad::Var>& v) {
            return ad::mean_all(ad::embedding_lookup(v[0], ids));
        },
        vals);
    CHECK(err < 1e-6);

    CHECK_THROWS_AS(ad::embedding_lookup(ad::Var::constant(Eigen::MatrixXd::Zero(4, 2)), {4}),
                    FlavaError);
}

TEST_CASE("grad accumulation across shared subexpressions") {
    Eigen::MatrixXd x(1, 1);
    x << 3.0;
    ad::Var v = ad::Var::leaf(x);
    ad::Var y = ad::add(ad::cmul(v, v), ad::scale(v, 2.0));  // x^2 + 2x
    ad::backward(y);
    CHECK(v.grad()(0, 0) == doctest::Approx(2.0 * 3.0 + 2.0));
}
