#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flava/config.hpp"
#include "flava/encoders.hpp"
#include "flava/objectives.hpp"
#include "flava/optim.hpp"
#include "flava/tokenizer.hpp"

namespace flava {

// One i.i.d. categorical draw over the dataset specs. Probabilities must sum
// to 1 within 1e-9.
std::size_t round_robin_sample(const std::vector<DatasetSpec>& specs, std::mt19937_64& rng);

struct TrainState {
    std::int64_t step = 0;  // completed updates
    AdamState adam;
    std::int64_t seed = 0;
    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    double best_metric = -1.0;
    std::int64_t best_step = -1;
};

struct StepRecord {
    std::int64_t step = 0;
    DatasetKind kind = DatasetKind::multimodal_pairs;
    double lr = 0.0;
    LossBundle losses;
    std::string log_line() const;
};

struct PretrainResult {
    std::vector<std::string> metrics_lines;
    std::string final_checkpoint;
    std::string best_checkpoint;
};

// Joint pretraining: per-step categorical dataset choice, one full batch
// from the chosen dataset, loss dispatch by kind, one AdamW update. Every
// stochastic decision at step t is a pure function of (seed, t), so resuming
// from a checkpoint continues the exact trajectory.
class Trainer {
public:
    explicit Trainer(const FlavaConfig& config);
    Trainer(const FlavaConfig& config, PairBatch pairs, ImageBatch images, TextBatch texts,
            std::optional<Codebook> codebook = std::nullopt);

    FlavaModel& model() { return *model_; }
    const FlavaModel& model() const { return *model_; }
    TrainState& state() { return state_; }
    const Codebook& codebook() const { return codebook_; }
    const FlavaConfig& config() const { return config_; }
    const PairBatch& pair_data() const { return pairs_; }

    // One full update; returns the record that was appended to history.
    StepRecord step();
    // Loss dispatch for an explicit batch without the sampling layer.
    LossBundle compute_losses(DatasetKind kind, const PairBatch* pair_batch,
                              const ImageBatch* image_batch, const TextBatch* text_batch,
                              std::int64_t step_index, ad::Var* total_out = nullptr);

    // Held-out retrieval metric (mean of image->text and text->image R@1).
    double holdout_retrieval_r1() const;

    PretrainResult pretrain(const std::string& out_dir, std::int64_t halt_at_step = -1);

    // Copies image_encoder.* / text_encoder.* parameter subsets from the
    // checkpoints; the multimodal encoder always keeps its fresh random init.
    void load_pretrained_encoders(const std::optional<std::string>& image_ckpt,
                                  const std::optional<std::string>& text_ckpt);

    void save_state(const std::string& path) const;
    void load_state(const std::string& path);

    std::vector<int> draw_batch_indices(std::int64_t step_index, DatasetKind kind, int pool) const;

private:
    void init_codebook(const std::optional<Codebook>& provided);

    FlavaConfig config_;
    std::unique_ptr<FlavaModel> model_;
    TrainState state_;
    Codebook codebook_;
    PairBatch pairs_;
    ImageBatch images_;
    TextBatch texts_;
    PairBatch holdout_;
};

}  // namespace flava
