#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "flava/batch.hpp"
#include "flava/checkpoint.hpp"

namespace flava {

// Positions are flattened indices: `item * seq_len + offset` for batched
// plans, plain grid offsets for single-image block masks. Labels hold the
// ground-truth target (codebook index / vocab id) per masked position.
struct MaskPlan {
    enum class Replacement { MASK_TOKEN };

    std::vector<Eigen::Index> masked_positions;  // sorted, unique
    std::map<Eigen::Index, std::int64_t> labels;
    Replacement replacement = Replacement::MASK_TOKEN;
    // BERT 80/10/10 variant only: overrides the [MASK] id at a position
    // (random token or the original id). Empty for the default scheme.
    std::map<Eigen::Index, std::int64_t> replacement_ids;

    bool empty() const { return masked_positions.empty(); }
    std::vector<std::int64_t> labels_in_position_order() const;
};

struct BlockRect {
    int row = 0, col = 0, height = 0, width = 0;
    int area() const { return height * width; }
};

struct BlockMaskResult {
    MaskPlan plan;                  // positions over the grid, no labels yet
    std::vector<BlockRect> blocks;  // rectangles whose union is the mask
};

// Union-of-rectangles masking over a grid_h x grid_w patch grid. Guarantees
// target_cells <= |mask| <= max(target_cells, floor(1.5*ratio*grid)) for
// ratio in (0,1), with target_cells = ceil(ratio*grid).
BlockMaskResult block_mask(int grid_h, int grid_w, double target_ratio, std::mt19937_64& rng,
                           int min_block_area = 4, double aspect_min = 0.3);

// Per-item block masks combined into one batch-flattened plan
// (positions = item*grid + offset).
MaskPlan block_mask_batch(int batch, int grid_h, int grid_w, double target_ratio,
                          std::mt19937_64& rng, int min_block_area = 4, double aspect_min = 0.3);

// Independent Bernoulli(rate) masking of maskable tokens: padding, position 0
// (CLS) and reserved ids are never masked. Labels record the original ids.
MaskPlan mlm_mask(const TextBatch& texts, double rate, std::mt19937_64& rng,
                  bool bert_split = false, int vocab_size = 0);

TextBatch apply_mask(const TextBatch& texts, const MaskPlan& plan);

// Attach ground-truth labels to an (image) plan from per-position targets
// indexed the same way as the plan positions.
void set_labels_from_tokens(MaskPlan& plan, const MatI64& tokens_flat);

void put_plan(Archive& a, const std::string& prefix, const MaskPlan& plan);
MaskPlan get_plan(const Archive& a, const std::string& prefix);

}  // namespace flava
