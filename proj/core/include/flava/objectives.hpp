#pragma once

#include <optional>
#include <random>
#include <vector>

#include "flava/autodiff.hpp"
#include "flava/batch.hpp"
#include "flava/encoders.hpp"
#include "flava/masking.hpp"

namespace flava {

// Named per-step losses; a component is present only when its modality /
// masking produced any input (e.g. no masked text positions -> no mmm_text).
struct LossBundle {
    std::optional<double> gc;
    std::optional<double> mmm_image;
    std::optional<double> mmm_text;
    std::optional<double> itm;
    std::optional<double> mim;
    std::optional<double> mlm;
    std::optional<double> itm_accuracy;  // monitoring only, not a loss

    double weighted_total(const LossWeights& w) const;
};

struct ContrastiveResult {
    ad::Var loss;
    ad::Var logits;  // [B, B]; matched pairs on the diagonal
};

// Symmetric InfoNCE: L2-normalize both sides, dot products scaled by
// 1/temperature, mean of row-wise and column-wise cross-entropy against the
// diagonal. Inputs are the raw (pre-normalization) projection outputs.
ContrastiveResult contrastive_loss(const ad::Var& img_emb, const ad::Var& txt_emb,
                                   double temperature);
// Training path: temperature is the learned scalar, passed as 1/tau.
ContrastiveResult contrastive_loss_inv(const ad::Var& img_emb, const ad::Var& txt_emb,
                                       const ad::Var& inv_temperature);

ad::Var itm_loss(const ad::Var& h_cls_m, const std::vector<std::uint8_t>& match_labels,
                 const LinearHead& head);
double itm_head_accuracy(const ad::Var& h_cls_m, const std::vector<std::uint8_t>& match_labels,
                         const LinearHead& head);

struct MmmLosses {
    std::optional<ad::Var> image;
    std::optional<ad::Var> text;
};

// Cross-entropy over masked positions only, from the multimodal states.
// Image plan positions live in patch space (item*N_patches + patch), text
// plan positions in token space (item*seq + token).
MmmLosses mmm_loss(const MultimodalHiddenStates& h, const MaskPlan& image_plan,
                   const MaskPlan& text_plan, const MlpHead& image_head,
                   const MlpHead& text_head, int image_seq, int text_seq);

std::optional<ad::Var> mim_loss(const ImageHiddenStates& h, const MaskPlan& plan,
                                const MlpHead& head);
std::optional<ad::Var> mlm_loss(const TextHiddenStates& h, const MaskPlan& plan,
                                const MlpHead& head);

// Each selected row gets a different row's text and a false label; selection
// is i.i.d. Bernoulli(neg_fraction).
PairBatch make_itm_negatives(const PairBatch& batch, double neg_fraction, std::mt19937_64& rng);

}  // namespace flava
