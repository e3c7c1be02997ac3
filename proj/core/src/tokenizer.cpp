#include "flava/tokenizer.hpp"

#include <limits>

#include "flava/encoders.hpp"
#include "flava/util.hpp"

namespace flava {

void Codebook::validate() const {
    if (size() < 2) fail("invalid_codebook", "codebook must have at least 2 entries");
    for (int i = 0; i < size(); ++i)
        for (int j = i + 1; j < size(); ++j)
            if (entries.row(i) == entries.row(j))
                fail("invalid_codebook", "codebook entries " + std::to_string(i) + " and " +
                                             std::to_string(j) + " are identical");
}

void Codebook::save(const std::string& path) const {
    Archive a;
    a.put("codebook.entries", entries);
    a.save(path);
}

Codebook Codebook::load(const std::string& path) {
    Archive a = Archive::load(path);
    Codebook cb;
    cb.entries = a.get_f64("codebook.entries");
    return cb;
}

namespace {

Eigen::Index nearest_entry(const Eigen::MatrixXd& entries, const Eigen::RowVectorXd& x) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < entries.rows(); ++c) {
        double d = (entries.row(c) - x).squaredNorm();
        if (d < best_d) {  // strict: ties keep the lowest index
            best_d = d;
            best = c;
        }
    }
    return best;
}

}  // namespace

CodebookFit fit_codebook(const Eigen::MatrixXd& features, int k, std::mt19937_64& rng,
                         int max_iterations) {
    const Eigen::Index n = features.rows();
    if (k < 2) fail("invalid_codebook", "codebook size must be at least 2");
    if (n < k)
        fail("insufficient_data", "k-means needs at least K=" + std::to_string(k) +
                                      " samples, got " + std::to_string(n));

    // k-means++ seeding
    Eigen::MatrixXd centroids(k, features.cols());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centroids.row(0) = features.row(first(rng));
    Eigen::VectorXd d2 = (features.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 1; c < k; ++c) {
        double total = d2.sum();
        Eigen::Index pick = 0;
        if (total <= 0.0) {
            // all remaining points coincide with chosen centroids; any new
            // point keeps the seeding valid
            pick = first(rng);
        } else {
            double r = unit(rng) * total, acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.row(c) = features.row(pick);
        d2 = d2.cwiseMin((features.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }

    CodebookFit fit;
    std::vector<Eigen::Index> assign(static_cast<size_t>(n), -1);
    for (int iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        double error = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index a = nearest_entry(centroids, features.row(i));
            error += (features.row(i) - centroids.row(a)).squaredNorm();
            if (a != assign[static_cast<size_t>(i)]) {
                assign[static_cast<size_t>(i)] = a;
                changed = true;
            }
        }
        fit.error_log.push_back(error);
        fit.iterations = iter + 1;
        if (!changed) {
            fit.converged = true;
            break;
        }
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, features.cols());
        std::vector<Eigen::Index> counts(static_cast<size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<size_t>(i)]) += features.row(i);
            ++counts[static_cast<size_t>(assign[static_cast<size_t>(i)])];
        }
        std::vector<Eigen::Index> reseeded;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
            } else {
                // re-seed an empty cluster on the worst-fit point; cost can
                // only decrease after reassignment
                Eigen::Index worst = -1;
                double worst_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    if (std::find(reseeded.begin(), reseeded.end(), i) != reseeded.end()) continue;
                    double d = (features.row(i) - centroids.row(assign[static_cast<size_t>(i)]))
                                   .squaredNorm();
                    if (d > worst_d) {
                        worst_d = d;
                        worst = i;
                    }
                }
                if (worst >= 0) {
                    centroids.row(c) = features.row(worst);
                    reseeded.push_back(worst);
                }
            }
        }
    }
    fit.codebook.entries = centroids;
    return fit;
}

std::vector<std::int64_t> tokenize_features(const Eigen::MatrixXd& features,
                                            const Codebook& codebook) {
    if (features.cols() != codebook.entries.cols())
        fail("shape_error", "feature dimension " + std::to_string(features.cols()) +
                                " does not match codebook dim " +
                                std::to_string(codebook.entries.cols()));
    std::vector<std::int64_t> out;
    out.reserve(static_cast<size_t>(features.rows()));
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        out.push_back(nearest_entry(codebook.entries, features.row(i)));
    return out;
}

MatI64 tokenize(const ImageBatch& images, const Codebook& codebook, int patch_size) {
    Eigen::MatrixXd patches = patchify(images, patch_size);
    const int n_patches = static_cast<int>(patches.rows()) / images.batch();
    std::vector<std::int64_t> flat = tokenize_features(patches, codebook);
    MatI64 out(images.batch(), n_patches);
    for (int b = 0; b < images.batch(); ++b)
        for (int p = 0; p < n_patches; ++p)
            out(b, p) = flat[static_cast<size_t>(b) * n_patches + static_cast<size_t>(p)];
    return out;
}

}  // namespace flava
