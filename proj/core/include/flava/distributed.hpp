#pragma once

#include <Eigen/Core>
#include <vector>

namespace flava {

// Simulated data-parallel worker holding its slice of the global batch's
// contrastive embeddings (raw, pre-normalization).
struct WorkerShard {
    int worker_id = 0;
    Eigen::MatrixXd image_embeddings;  // [B/K, D]
    Eigen::MatrixXd text_embeddings;   // [B/K, D]
};

struct ShardGradients {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> image_grads;  // per worker, shaped like the shard
    std::vector<Eigen::MatrixXd> text_grads;
};

// Full backward through the gather: every worker's partial loss contributes
// gradient to every embedding, local or remote. Equal (up to fp accumulation
// order) to running the loss on the concatenated batch.
ShardGradients global_contrastive(const std::vector<WorkerShard>& shards, double temperature,
                                  bool parallel = false);

// Remote embeddings enter each worker's logits but are treated as constants
// in its backward pass; gradients stay on the local shard. Forward loss is
// identical to the global variant.
ShardGradients local_contrastive(const std::vector<WorkerShard>& shards, double temperature,
                                 bool parallel = false);

}  // namespace flava
