#pragma once

#include <Eigen/Core>
#include <random>
#include <vector>

#include "flava/batch.hpp"
#include "flava/checkpoint.hpp"

namespace flava {

// Frozen visual vocabulary: image patches quantize to the nearest entry.
// Fit on raw flattened pixel patches so targets stay independent of the
// model being trained.
struct Codebook {
    Eigen::MatrixXd entries;  // [K, code_dim]

    int size() const { return static_cast<int>(entries.rows()); }
    int code_dim() const { return static_cast<int>(entries.cols()); }
    void validate() const;

    void save(const std::string& path) const;
    static Codebook load(const std::string& path);
};

struct CodebookFit {
    Codebook codebook;
    std::vector<double> error_log;  // total squared error after each assignment
    int iterations = 0;
    bool converged = false;
};

// k-means with k-means++ seeding. Stops when the assignment is unchanged or
// after max_iterations. Requires N >= K.
CodebookFit fit_codebook(const Eigen::MatrixXd& patch_features, int k, std::mt19937_64& rng,
                         int max_iterations = 100);

// Nearest entry per feature row, ties resolved to the lowest index.
std::vector<std::int64_t> tokenize_features(const Eigen::MatrixXd& features,
                                            const Codebook& codebook);

// Per-image patch token grid: [batch, N_patches].
MatI64 tokenize(const ImageBatch& images, const Codebook& codebook, int patch_size);

}  // namespace flava
