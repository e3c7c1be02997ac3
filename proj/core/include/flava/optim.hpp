#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "flava/checkpoint.hpp"
#include "flava/config.hpp"
#include "flava/params.hpp"

namespace flava {

// Linear warmup to learning_rate over warmup_updates, then cosine decay to
// zero at total_updates. Valid for step in [0, total_updates].
double lr_at(std::int64_t step, const OptimConfig& optim);

// AdamW moments, lazily allocated per parameter on first update.
struct AdamState {
    std::map<std::string, Eigen::MatrixXd> m;
    std::map<std::string, Eigen::MatrixXd> v;
    std::int64_t updates = 0;

    void save(Archive& archive, const std::string& prefix = "adam/") const;
    void load(const Archive& archive, const std::string& prefix = "adam/");
};

// One decoupled-weight-decay update over every parameter that received a
// gradient this step. Weight decay is applied directly to the parameter
// (scaled by lr), never folded into the gradient moments.
void adamw_step(ParamStore& params, AdamState& state, double lr, const OptimConfig& optim);

}  // namespace flava
