#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flava/autodiff.hpp"
#include "flava/checkpoint.hpp"

namespace flava {

enum class Init { TruncNormal002, Zeros, Ones, Value };

// Named parameter tensors. Initialization is a pure function of
// (seed, parameter name), so the value of any parameter is independent of
// creation order and of which other parameters exist — loading a checkpoint
// subset leaves the rest bitwise equal to a fresh init at the same seed.
class ParamStore {
public:
    explicit ParamStore(std::int64_t seed = 0) : seed_(seed) {}

    ad::Var create(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init,
                   double value = 0.0);
    ad::Var get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    const std::map<std::string, ad::Var>& all() const { return params_; }
    std::map<std::string, ad::Var>& all_mutable() { return params_; }
    std::int64_t seed() const { return seed_; }
    std::size_t parameter_count() const;

    void zero_grads();

    // Checkpoint interop. `load` overwrites entries whose name matches
    // (shape-checked); names in the archive with no counterpart here are
    // ignored unless `strict`.
    void save(Archive& archive, const std::string& prefix = "params/") const;
    void load(const Archive& archive, const std::string& prefix = "params/",
              const std::string& only_under = "", bool strict = false);

private:
    std::int64_t seed_;
    std::map<std::string, ad::Var> params_;
};

Eigen::MatrixXd truncated_normal(Eigen::Index rows, Eigen::Index cols, double stddev,
                                 std::mt19937_64& rng);

}  // namespace flava
