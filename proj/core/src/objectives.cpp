#include "flava/objectives.hpp"

#include <cmath>

#include "flava/config.hpp"

namespace flava {

double LossBundle::weighted_total(const LossWeights& w) const {
    double total = 0.0;
    if (gc) total += w.gc * *gc;
    if (mmm_image) total += w.mmm_image * *mmm_image;
    if (mmm_text) total += w.mmm_text * *mmm_text;
    if (itm) total += w.itm * *itm;
    if (mim) total += w.mim * *mim;
    if (mlm) total += w.mlm * *mlm;
    return total;
}

namespace {

ContrastiveResult contrastive_core(const ad::Var& img_emb, const ad::Var& txt_emb,
                                   const ad::Var& inv_temperature) {
    if (img_emb.rows() < 1) fail("invalid_batch", "contrastive_loss: empty batch");
    if (img_emb.rows() != txt_emb.rows() || img_emb.cols() != txt_emb.cols())
        fail("shape_error", "contrastive_loss: embedding shapes differ");
    ad::Var in = ad::l2_normalize_rows(img_emb);
    ad::Var tn = ad::l2_normalize_rows(txt_emb);
    ad::Var logits = ad::scale_by(ad::matmul_nt(in, tn), inv_temperature);
    std::vector<std::int64_t> diag(static_cast<size_t>(img_emb.rows()));
    for (size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<std::int64_t>(i);
    ad::Var row_ce = ad::softmax_xent_rows(logits, diag);
    ad::Var col_ce = ad::softmax_xent_rows(ad::transpose(logits), diag);
    return {ad::scale(ad::add(row_ce, col_ce), 0.5), logits};
}

}  // namespace

ContrastiveResult contrastive_loss(const ad::Var& img_emb, const ad::Var& txt_emb,
                                   double temperature) {
    if (!(temperature > 0.0)) fail("invalid_config", "contrastive_loss: temperature must be positive");
    Eigen::MatrixXd inv(1, 1);
    inv(0, 0) = 1.0 / temperature;
    return contrastive_core(img_emb, txt_emb, ad::Var::constant(inv));
}

ContrastiveResult contrastive_loss_inv(const ad::Var& img_emb, const ad::Var& txt_emb,
                                       const ad::Var& inv_temperature) {
    if (!(inv_temperature.value()(0, 0) > 0.0))
        fail("invalid_config", "contrastive_loss: 1/temperature must be positive");
    return contrastive_core(img_emb, txt_emb, inv_temperature);
}

ad::Var itm_loss(const ad::Var& h_cls_m, const std::vector<std::uint8_t>& match_labels,
                 const LinearHead& head) {
    if (static_cast<Eigen::Index>(match_labels.size()) != h_cls_m.rows())
        fail("shape_error", "itm_loss: one label per row required");
    std::vector<double> labels(match_labels.begin(), match_labels.end());
    return ad::bce_with_logits(head.forward(h_cls_m), labels);
}

double itm_head_accuracy(const ad::Var& h_cls_m, const std::vector<std::uint8_t>& match_labels,
                         const LinearHead& head) {
    ad::Var logits = head.forward(h_cls_m);
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        bool predicted = logits.value()(i, 0) > 0.0;
        if (predicted == (match_labels[static_cast<size_t>(i)] != 0)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

namespace {

std::optional<ad::Var> masked_xent(const HiddenStates& h, const MaskPlan& plan,
                                   const MlpHead& head,
                                   const std::function<Eigen::Index(Eigen::Index)>& to_row) {
    if (plan.empty()) return std::nullopt;
    std::vector<Eigen::Index> rows;
    rows.reserve(plan.masked_positions.size());
    const Eigen::Index total = static_cast<Eigen::Index>(h.batch) * h.seq;
    for (auto pos : plan.masked_positions) {
        Eigen::Index r = to_row(pos);
        if (r < 0 || r >= total)
            fail("out_of_range", "mask plan position " + std::to_string(pos) +
                                     " does not fit this batch");
        rows.push_back(r);
    }
    ad::Var states = ad::gather_rows(h.flat, rows);
    ad::Var logits = head.forward(states);
    return ad::softmax_xent_rows(logits, plan.labels_in_position_order());
}

}  // namespace

MmmLosses mmm_loss(const MultimodalHiddenStates& h, const MaskPlan& image_plan,
                   const MaskPlan& text_plan, const MlpHead& image_head,
                   const MlpHead& text_head, int image_seq, int text_seq) {
    if (1 + image_seq + text_seq != h.seq)
        fail("shape_error", "mmm_loss: image_seq + text_seq does not match hidden states");
    const int n_patches = image_seq - 1;
    MmmLosses out;
    // multimodal row of patch p in item b: [CLS_M] ++ (CLS_I ++ patches) ++ text
    out.image = masked_xent(h, image_plan, image_head, [&](Eigen::Index pos) {
        Eigen::Index b = pos / n_patches, p = pos % n_patches;
        return b * h.seq + 1 + 1 + p;
    });
    out.text = masked_xent(h, text_plan, text_head, [&](Eigen::Index pos) {
        Eigen::Index b = pos / text_seq, t = pos % text_seq;
        return b * h.seq + 1 + image_seq + t;
    });
    return out;
}

std::optional<ad::Var> mim_loss(const ImageHiddenStates& h, const MaskPlan& plan,
                                const MlpHead& head) {
    const int n_patches = h.seq - 1;
    return masked_xent(h, plan, head, [&](Eigen::Index pos) {
        Eigen::Index b = pos / n_patches, p = pos % n_patches;
        return b * h.seq + 1 + p;
    });
}

std::optional<ad::Var> mlm_loss(const TextHiddenStates& h, const MaskPlan& plan,
                                const MlpHead& head) {
    return masked_xent(h, plan, head, [](Eigen::Index pos) { return pos; });
}

PairBatch make_itm_negatives(const PairBatch& batch, double neg_fraction, std::mt19937_64& rng) {
    if (neg_fraction < 0.0 || neg_fraction > 1.0)
        fail("invalid_config", "make_itm_negatives: neg_fraction must be in [0,1]");
    PairBatch out = batch;
    if (neg_fraction == 0.0) return out;
    const int b = batch.batch();
    if (b < 2) fail("invalid_batch", "make_itm_negatives: need at least 2 rows to build negatives");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> other(0, b - 2);
    for (int i = 0; i < b; ++i) {
        if (unit(rng) >= neg_fraction) continue;
        int j = other(rng);
        if (j >= i) ++j;  // uniform over rows != i
        out.texts.token_ids.row(i) = batch.texts.token_ids.row(j);
        out.texts.attention_mask.row(i) = batch.texts.attention_mask.row(j);
        out.match_labels[static_cast<size_t>(i)] = 0;
    }
    return out;
}

}  // namespace flava
