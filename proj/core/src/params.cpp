#include "flava/params.hpp"

namespace flava {

Eigen::MatrixXd truncated_normal(Eigen::Index rows, Eigen::Index cols, double stddev,
                                 std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            double v;
            do {
                v = dist(rng);
            } while (std::abs(v) > 2.0 * stddev);
            m(i, j) = v;
        }
    return m;
}

ad::Var ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                           Init init, double value) {
    if (params_.count(name)) fail("duplicate_param", "parameter '" + name + "' already exists");
    Eigen::MatrixXd m;
    switch (init) {
        case Init::TruncNormal002: {
            auto rng = derive_rng(static_cast<std::uint64_t>(seed_), name);
            m = truncated_normal(rows, cols, 0.02, rng);
            break;
        }
        case Init::Zeros: m = Eigen::MatrixXd::Zero(rows, cols); break;
        case Init::Ones: m = Eigen::MatrixXd::Ones(rows, cols); break;
        case Init::Value: m = Eigen::MatrixXd::Constant(rows, cols, value); break;
    }
    ad::Var v = ad::Var::leaf(std::move(m));
    params_.emplace(name, v);
    return v;
}

ad::Var ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("missing_param", "no parameter named '" + name + "'");
    return it->second;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_) n += static_cast<std::size_t>(v.value().size());
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, v] : params_) v.zero_grad();
}

void ParamStore::save(Archive& archive, const std::string& prefix) const {
    for (const auto& [name, v] : params_) archive.put(prefix + name, v.value());
}

void ParamStore::load(const Archive& archive, const std::string& prefix,
                      const std::string& only_under, bool strict) {
    for (const auto& [full, m] : archive.f64_entries()) {
        if (full.rfind(prefix, 0) != 0) continue;
        std::string name = full.substr(prefix.size());
        if (!only_under.empty() && name.rfind(only_under, 0) != 0) continue;
        auto it = params_.find(name);
        if (it == params_.end()) {
            if (strict) fail("missing_param", "checkpoint parameter '" + name + "' not in model");
            continue;
        }
        auto& dst = it->second.mutable_value();
        if (dst.rows() != m.rows() || dst.cols() != m.cols())
            fail("shape_error", "parameter '" + name + "': checkpoint shape " +
                                    std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                    " vs model " + std::to_string(dst.rows()) + "x" +
                                    std::to_string(dst.cols()));
        dst = m;
    }
}

}  // namespace flava
