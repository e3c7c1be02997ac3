#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flava/autodiff.hpp"
#include "flava/batch.hpp"
#include "flava/config.hpp"
#include "flava/masking.hpp"
#include "flava/params.hpp"

namespace flava {

// Sequence activations in [batch*seq, hidden] layout. Position 0 of every
// item is its CLS state. key_mask marks valid attention keys (empty = all).
struct HiddenStates {
    ad::Var flat;
    int batch = 0;
    int seq = 0;
    MatI64 key_mask;  // [batch, seq]; empty means all valid

    Eigen::Index row(int item, int pos) const {
        return static_cast<Eigen::Index>(item) * seq + pos;
    }
    ad::Var cls() const;  // [batch, hidden]
    std::vector<double> item_key_mask(int item) const;
};

using ImageHiddenStates = HiddenStates;       // seq = 1 + N_patches
using TextHiddenStates = HiddenStates;        // seq = input seq_len
using MultimodalHiddenStates = HiddenStates;  // [CLS_M] ++ image states ++ text states

// Row-major patch extraction: output row b*N + (gy*gw + gx), feature layout
// c*P*P + y*P + x. Throws on non-divisible image dimensions.
Eigen::MatrixXd patchify(const ImageBatch& images, int patch_size);

// Two-layer prediction head: fc1 -> GELU -> LayerNorm -> fc2. When
// `tied_embedding` is set, fc2 multiplies by the embedding table transpose.
struct MlpHead {
    ad::Var w1, b1, ln_gain, ln_bias, w2, b2;
    ad::Var tied_embedding;
    ad::Var forward(const ad::Var& x) const;
};

struct LinearHead {
    ad::Var w, b;
    ad::Var forward(const ad::Var& x) const;
};

// Bicubic interpolation matrix taking a src x src positional grid (row-major
// flattened) to dst x dst; identity when src == dst.
Eigen::MatrixXd bicubic_interp_matrix(int src_grid, int dst_grid);

// The three pre-norm ViT encoders plus every pretraining head, addressed by
// canonical parameter names (image_encoder.*, text_encoder.*,
// multimodal_encoder.*, heads.*).
class FlavaModel {
public:
    explicit FlavaModel(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Masked patches (plan positions = item*N + patch) are replaced by the
    // learned mask embedding before positional embeddings are added. Images
    // of a different (divisible) size reuse bicubically interpolated
    // positional embeddings.
    ImageHiddenStates encode_image(const ImageBatch& images,
                                   const MaskPlan* plan = nullptr) const;
    TextHiddenStates encode_text(const TextBatch& texts) const;
    MultimodalHiddenStates encode_multimodal(const ImageHiddenStates& img,
                                             const TextHiddenStates& txt) const;

    // Contrastive projections of the CLS states (unnormalized, [batch, D]).
    ad::Var image_embedding(const ImageHiddenStates& h) const;
    ad::Var text_embedding(const TextHiddenStates& h) const;

    // Learned softmax temperature, stored as log(1/tau).
    ad::Var log_inv_temperature() const;
    double temperature() const;
    void clamp_temperature(double min_temperature = 0.01);

    MlpHead mim_head() const;
    MlpHead mlm_head() const;
    MlpHead mmm_image_head() const;
    MlpHead mmm_text_head() const;
    LinearHead itm_head() const;

private:
    ad::Var run_encoder(const std::string& prefix, int layers, ad::Var x, int batch, int seq,
                        const MatI64& key_mask) const;
    MlpHead make_mlp_head(const std::string& prefix) const;

    ModelConfig config_;
    ParamStore params_;
};

}  // namespace flava
