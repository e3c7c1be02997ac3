#include "flava/optim.hpp"

#include <cmath>

#include "flava/util.hpp"

namespace flava {

double lr_at(std::int64_t step, const OptimConfig& optim) {
    if (step < 0 || step > optim.total_updates)
        fail("out_of_range", "lr_at: step " + std::to_string(step) + " outside [0, " +
                                 std::to_string(optim.total_updates) + "]");
    if (step < optim.warmup_updates)
        return optim.learning_rate * static_cast<double>(step) /
               static_cast<double>(optim.warmup_updates);
    const std::int64_t span = optim.total_updates - optim.warmup_updates;
    const double progress =
        span == 0 ? 1.0 : static_cast<double>(step - optim.warmup_updates) / static_cast<double>(span);
    return optim.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void AdamState::save(Archive& archive, const std::string& prefix) const {
    for (const auto& [name, mat] : m) archive.put(prefix + "m/" + name, mat);
    for (const auto& [name, mat] : v) archive.put(prefix + "v/" + name, mat);
    archive.put_scalar_i64(prefix + "updates", updates);
}

void AdamState::load(const Archive& archive, const std::string& prefix) {
    m.clear();
    v.clear();
    for (const auto& [full, mat] : archive.f64_entries()) {
        if (full.rfind(prefix + "m/", 0) == 0) m[full.substr(prefix.size() + 2)] = mat;
        else if (full.rfind(prefix + "v/", 0) == 0) v[full.substr(prefix.size() + 2)] = mat;
    }
    updates = archive.get_scalar_i64(prefix + "updates");
}

void adamw_step(ParamStore& params, AdamState& state, double lr, const OptimConfig& optim) {
    constexpr double eps = 1e-8;
    state.updates += 1;
    const double bc1 = 1.0 - std::pow(optim.beta1, static_cast<double>(state.updates));
    const double bc2 = 1.0 - std::pow(optim.beta2, static_cast<double>(state.updates));

    if (optim.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& [name, p] : params.all())
            if (p.has_grad()) sq += p.grad().squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > optim.grad_clip) {
            const double factor = optim.grad_clip / norm;
            for (auto& [name, p] : params.all_mutable())
                if (p.has_grad()) p.node()->grad *= factor;
        }
    }

    for (auto& [name, p] : params.all_mutable()) {
        if (!p.has_grad()) continue;
        const Eigen::MatrixXd& g = p.grad();
        auto& mm = state.m[name];
        auto& vv = state.v[name];
        if (mm.size() == 0) mm = Eigen::MatrixXd::Zero(g.rows(), g.cols());
        if (vv.size() == 0) vv = Eigen::MatrixXd::Zero(g.rows(), g.cols());
        mm = optim.beta1 * mm + (1.0 - optim.beta1) * g;
        vv = optim.beta2 * vv + (1.0 - optim.beta2) * g.cwiseProduct(g);
        Eigen::MatrixXd mhat = mm / bc1;
        Eigen::MatrixXd vhat = vv / bc2;
        Eigen::MatrixXd& value = p.mutable_value();
        // decoupled weight decay
        value -= lr * optim.weight_decay * value;
        value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    }
}

}  // namespace flava
