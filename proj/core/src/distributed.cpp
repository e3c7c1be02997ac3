#include "flava/distributed.hpp"

#include <future>

#include "flava/autodiff.hpp"
#include "flava/util.hpp"

namespace flava {

namespace {

struct WorkerResult {
    double partial_loss = 0.0;
    // gradient of this worker's partial loss w.r.t. every shard's embeddings
    std::vector<Eigen::MatrixXd> image_grads;
    std::vector<Eigen::MatrixXd> text_grads;
};

void check_shards(const std::vector<WorkerShard>& shards) {
    if (shards.empty()) fail("invalid_batch", "no worker shards");
    const Eigen::Index rows = shards[0].image_embeddings.rows();
    const Eigen::Index dim = shards[0].image_embeddings.cols();
    for (const auto& s : shards) {
        if (s.image_embeddings.rows() != rows || s.text_embeddings.rows() != rows)
            fail("invalid_batch", "ragged shards: every worker must hold B/K rows");
        if (s.image_embeddings.cols() != dim || s.text_embeddings.cols() != dim)
            fail("shape_error", "shards disagree on embedding dimension");
    }
}

// One worker's contribution: rows of the row-wise cross-entropy and columns
// of the column-wise cross-entropy that belong to its shard, each averaged
// into the symmetric full-batch loss.
WorkerResult run_worker(const std::vector<WorkerShard>& shards, int worker, double temperature,
                        bool local_only) {
    const int k = static_cast<int>(shards.size());
    const Eigen::Index per = shards[0].image_embeddings.rows();
    const Eigen::Index total = per * k;

    std::vector<ad::Var> img_leaves(static_cast<size_t>(k)), txt_leaves(static_cast<size_t>(k));
    std::vector<ad::Var> img_parts, txt_parts;
    for (int w = 0; w < k; ++w) {
        bool needs_grad = !local_only || w == worker;
        img_leaves[static_cast<size_t>(w)] = needs_grad
                                                 ? ad::Var::leaf(shards[static_cast<size_t>(w)].image_embeddings)
                                                 : ad::Var::constant(shards[static_cast<size_t>(w)].image_embeddings);
        txt_leaves[static_cast<size_t>(w)] = needs_grad
                                                 ? ad::Var::leaf(shards[static_cast<size_t>(w)].text_embeddings)
                                                 : ad::Var::constant(shards[static_cast<size_t>(w)].text_embeddings);
        img_parts.push_back(img_leaves[static_cast<size_t>(w)]);
        txt_parts.push_back(txt_leaves[static_cast<size_t>(w)]);
    }
    ad::Var img = ad::l2_normalize_rows(ad::vstack(img_parts));
    ad::Var txt = ad::l2_normalize_rows(ad::vstack(txt_parts));
    ad::Var logits = ad::scale(ad::matmul_nt(img, txt), 1.0 / temperature);

    std::vector<Eigen::Index> my_rows(static_cast<size_t>(per));
    std::vector<std::int64_t> my_targets(static_cast<size_t>(per));
    for (Eigen::Index i = 0; i < per; ++i) {
        my_rows[static_cast<size_t>(i)] = worker * per + i;
        my_targets[static_cast<size_t>(i)] = worker * per + i;
    }
    ad::Var row_ce = ad::softmax_xent_rows(ad::gather_rows(logits, my_rows), my_targets);
    ad::Var col_ce =
        ad::softmax_xent_rows(ad::gather_rows(ad::transpose(logits), my_rows), my_targets);
    // mean over the shard -> weight so that summing workers gives the
    // symmetric full-batch loss
    double w_scale = static_cast<double>(per) / (2.0 * static_cast<double>(total));
    ad::Var partial = ad::scale(ad::add(row_ce, col_ce), w_scale);
    ad::backward(partial);

    WorkerResult result;
    result.partial_loss = partial.scalar();
    result.image_grads.resize(static_cast<size_t>(k));
    result.text_grads.resize(static_cast<size_t>(k));
    for (int w = 0; w < k; ++w) {
        const auto& iv = img_leaves[static_cast<size_t>(w)];
        const auto& tv = txt_leaves[static_cast<size_t>(w)];
        result.image_grads[static_cast<size_t>(w)] =
            iv.has_grad() ? iv.grad() : Eigen::MatrixXd::Zero(per, shards[0].image_embeddings.cols());
        result.text_grads[static_cast<size_t>(w)] =
            tv.has_grad() ? tv.grad() : Eigen::MatrixXd::Zero(per, shards[0].text_embeddings.cols());
    }
    return result;
}

ShardGradients run(const std::vector<WorkerShard>& shards, double temperature, bool local_only,
                   bool parallel) {
    check_shards(shards);
    if (!(temperature > 0.0)) fail("invalid_config", "temperature must be positive");
    const int k = static_cast<int>(shards.size());

    std::vector<WorkerResult> results(static_cast<size_t>(k));
    if (parallel) {
        std::vector<std::future<WorkerResult>> futures;
        futures.reserve(static_cast<size_t>(k));
        for (int w = 0; w < k; ++w)
            futures.push_back(std::async(std::launch::async, run_worker, std::cref(shards), w,
                                         temperature, local_only));
        for (int w = 0; w < k; ++w) results[static_cast<size_t>(w)] = futures[static_cast<size_t>(w)].get();
    } else {
        for (int w = 0; w < k; ++w)
            results[static_cast<size_t>(w)] = run_worker(shards, w, temperature, local_only);
    }

    // deterministic merge in worker order, independent of execution schedule
    ShardGradients out;
    out.image_grads.assign(static_cast<size_t>(k),
                           Eigen::MatrixXd::Zero(shards[0].image_embeddings.rows(),
                                                 shards[0].image_embeddings.cols()));
    out.text_grads.assign(static_cast<size_t>(k),
                          Eigen::MatrixXd::Zero(shards[0].text_embeddings.rows(),
                                                shards[0].text_embeddings.cols()));
    for (int w = 0; w < k; ++w) {
        out.loss += results[static_cast<size_t>(w)].partial_loss;
        for (int s = 0; s < k; ++s) {
            out.image_grads[static_cast<size_t>(s)] += results[static_cast<size_t>(w)].image_grads[static_cast<size_t>(s)];
            out.text_grads[static_cast<size_t>(s)] += results[static_cast<size_t>(w)].text_grads[static_cast<size_t>(s)];
        }
    }
    return out;
}

}  // namespace

ShardGradients global_contrastive(const std::vector<WorkerShard>& shards, double temperature,
                                  bool parallel) {
    return run(shards, temperature, /*local_only=*/false, parallel);
}

ShardGradients local_contrastive(const std::vector<WorkerShard>& shards, double temperature,
                                 bool parallel) {
    return run(shards, temperature, /*local_only=*/true, parallel);
}

}  // namespace flava
