#include "flava/masking.hpp"

#include <algorithm>
#include <cmath>

#include "flava/config.hpp"
#include "flava/util.hpp"

namespace flava {

std::vector<std::int64_t> MaskPlan::labels_in_position_order() const {
    std::vector<std::int64_t> out;
    out.reserve(masked_positions.size());
    for (auto pos : masked_positions) {
        auto it = labels.find(pos);
        if (it == labels.end())
            fail("invalid_plan", "mask plan has no label for position " + std::to_string(pos));
        out.push_back(it->second);
    }
    return out;
}

BlockMaskResult block_mask(int grid_h, int grid_w, double target_ratio, std::mt19937_64& rng,
                           int min_block_area, double aspect_min) {
    if (grid_h < 1 || grid_w < 1) fail("invalid_plan", "block_mask: empty grid");
    if (target_ratio < 0.0 || target_ratio > 1.0)
        fail("invalid_plan", "block_mask: target_ratio must be in [0,1]");

    BlockMaskResult result;
    const int grid = grid_h * grid_w;
    if (target_ratio <= 0.0) return result;
    if (target_ratio >= 1.0) {
        result.blocks.push_back({0, 0, grid_h, grid_w});
        for (int i = 0; i < grid; ++i) result.plan.masked_positions.push_back(i);
        return result;
    }

    const int target = static_cast<int>(std::ceil(target_ratio * grid));
    const int cap = std::min(grid, std::max(target, static_cast<int>(std::floor(1.5 * target_ratio * grid))));
    // Keep individual blocks small relative to the target so the final count
    // overshoots the target by at most one modest block.
    const int max_block = std::max(min_block_area, target / 4);

    std::vector<char> masked(static_cast<size_t>(grid), 0);
    int count = 0;
    int failures = 0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    while (count < target && failures <= 50) {
        const int budget = cap - count;
        const int area_hi = std::min(max_block, budget);
        const int area_lo = std::min(min_block_area, area_hi);
        std::uniform_int_distribution<int> area_dist(area_lo, area_hi);
        const int area = area_dist(rng);
        const double log_lo = std::log(aspect_min), log_hi = std::log(1.0 / aspect_min);
        const double aspect = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
        int h = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, grid_h);
        int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, grid_w);
        std::uniform_int_distribution<int> row_dist(0, grid_h - h), col_dist(0, grid_w - w);
        const int r0 = row_dist(rng), c0 = col_dist(rng);

        int fresh = 0;
        for (int r = r0; r < r0 + h; ++r)
            for (int c = c0; c < c0 + w; ++c)
                if (!masked[static_cast<size_t>(r * grid_w + c)]) ++fresh;
        if (fresh == 0 || count + fresh > cap) {
            ++failures;
            continue;
        }
        for (int r = r0; r < r0 + h; ++r)
            for (int c = c0; c < c0 + w; ++c) masked[static_cast<size_t>(r * grid_w + c)] = 1;
        count += fresh;
        result.blocks.push_back({r0, c0, h, w});
    }
    // Rare fallback after repeated rejections: fill 1x1 blocks until target.
    for (int i = 0; i < grid && count < target; ++i) {
        if (!masked[static_cast<size_t>(i)]) {
            masked[static_cast<size_t>(i)] = 1;
            result.blocks.push_back({i / grid_w, i % grid_w, 1, 1});
            ++count;
        }
    }
    for (int i = 0; i < grid; ++i)
        if (masked[static_cast<size_t>(i)]) result.plan.masked_positions.push_back(i);
    return result;
}

MaskPlan block_mask_batch(int batch, int grid_h, int grid_w, double target_ratio,
                          std::mt19937_64& rng, int min_block_area, double aspect_min) {
    MaskPlan plan;
    const Eigen::Index grid = static_cast<Eigen::Index>(grid_h) * grid_w;
    for (int b = 0; b < batch; ++b) {
        BlockMaskResult r = block_mask(grid_h, grid_w, target_ratio, rng, min_block_area, aspect_min);
        for (auto pos : r.plan.masked_positions)
            plan.masked_positions.push_back(static_cast<Eigen::Index>(b) * grid + pos);
    }
    return plan;
}

MaskPlan mlm_mask(const TextBatch& texts, double rate, std::mt19937_64& rng, bool bert_split,
                  int vocab_size) {
    if (rate < 0.0 || rate > 1.0) fail("invalid_plan", "mlm_mask: rate must be in [0,1]");
    if (bert_split && vocab_size <= kNumReservedTokens)
        fail("invalid_plan", "mlm_mask: bert_split needs the vocabulary size");
    MaskPlan plan;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::Index seq = texts.token_ids.cols();
    for (Eigen::Index b = 0; b < texts.token_ids.rows(); ++b) {
        for (Eigen::Index t = 0; t < seq; ++t) {
            const std::int64_t id = texts.token_ids(b, t);
            const bool maskable =
                t != 0 && texts.attention_mask(b, t) != 0 && id >= kNumReservedTokens;
            if (!maskable) continue;
            if (unit(rng) >= rate) continue;
            const Eigen::Index pos = b * seq + t;
            plan.masked_positions.push_back(pos);
            plan.labels[pos] = id;
            if (bert_split) {
                double u = unit(rng);
                if (u < 0.8) {
                    // standard [MASK] replacement
                } else if (u < 0.9) {
                    std::uniform_int_distribution<std::int64_t> tok(kNumReservedTokens,
                                                                    vocab_size - 1);
                    plan.replacement_ids[pos] = tok(rng);
                } else {
                    plan.replacement_ids[pos] = id;
                }
            }
        }
    }
    return plan;
}

TextBatch apply_mask(const TextBatch& texts, const MaskPlan& plan) {
    TextBatch out = texts;
    const Eigen::Index total = texts.token_ids.rows() * texts.token_ids.cols();
    const Eigen::Index seq = texts.token_ids.cols();
    for (auto pos : plan.masked_positions) {
        if (pos < 0 || pos >= total)
            fail("out_of_range", "mask position " + std::to_string(pos) + " outside batch of " +
                                     std::to_string(total) + " tokens");
        std::int64_t replacement = kMaskTokenId;
        if (auto it = plan.replacement_ids.find(pos); it != plan.replacement_ids.end())
            replacement = it->second;
        out.token_ids(pos / seq, pos % seq) = replacement;
    }
    return out;
}

void set_labels_from_tokens(MaskPlan& plan, const MatI64& tokens_flat) {
    const Eigen::Index total = tokens_flat.size();
    for (auto pos : plan.masked_positions) {
        if (pos < 0 || pos >= total)
            fail("out_of_range", "mask position outside token table");
        plan.labels[pos] = tokens_flat(pos / tokens_flat.cols(), pos % tokens_flat.cols());
    }
}

void put_plan(Archive& a, const std::string& prefix, const MaskPlan& plan) {
    MatI64 pos(1, static_cast<Eigen::Index>(plan.masked_positions.size()));
    MatI64 lab(1, static_cast<Eigen::Index>(plan.masked_positions.size()));
    for (size_t i = 0; i < plan.masked_positions.size(); ++i) {
        pos(0, static_cast<Eigen::Index>(i)) = plan.masked_positions[i];
        auto it = plan.labels.find(plan.masked_positions[i]);
        lab(0, static_cast<Eigen::Index>(i)) = it == plan.labels.end() ? -1 : it->second;
    }
    a.put(prefix + ".positions", pos);
    a.put(prefix + ".labels", lab);
}

MaskPlan get_plan(const Archive& a, const std::string& prefix) {
    MaskPlan plan;
    const MatI64& pos = a.get_i64(prefix + ".positions");
    const MatI64& lab = a.get_i64(prefix + ".labels");
    for (Eigen::Index i = 0; i < pos.cols(); ++i) {
        plan.masked_positions.push_back(pos(0, i));
        if (lab(0, i) >= 0) plan.labels[pos(0, i)] = lab(0, i);
    }
    return plan;
}

}  // namespace flava
