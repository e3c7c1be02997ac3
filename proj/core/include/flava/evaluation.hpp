#pragma once

#include <Eigen/Core>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flava/batch.hpp"
#include "flava/config.hpp"
#include "flava/encoders.hpp"

namespace flava {

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m);

struct RetrievalIndex {
    Eigen::MatrixXd embeddings;  // [N, D], unit rows
    std::vector<std::int64_t> ids;

    // Normalizes and checks ids line up with rows.
    static RetrievalIndex build(const Eigen::MatrixXd& embeddings, std::vector<std::int64_t> ids);
    void validate() const;  // unit norms within 1e-6
};

// Fraction of queries whose gold item ranks in the top k by cosine
// similarity; ties broken by ascending item id. k must be in [1, N].
double recall_at_k(const RetrievalIndex& index, const Eigen::MatrixXd& queries,
                   const std::vector<std::int64_t>& gold, int k);

// Class embedding = L2-normalized mean of the class's normalized template
// embeddings; prediction = argmax cosine, ties to the lowest class index.
Eigen::MatrixXd class_embeddings_from_templates(
    const std::vector<Eigen::MatrixXd>& per_class_template_embeddings);
std::vector<int> zero_shot_classify(const Eigen::MatrixXd& image_embeddings,
                                    const Eigen::MatrixXd& class_embeddings);
// Encodes each class's text templates through the text encoder + contrastive
// projection, then classifies the images.
std::vector<int> zero_shot_classify(const FlavaModel& model, const ImageBatch& images,
                                    const std::vector<TextBatch>& class_templates);

// ---- linear probe --------------------------------------------------------

// 13 logarithmically spaced points, endpoints exactly 1e-6 and 1e6.
std::vector<double> default_lambda_grid();

struct ProbeOptions {
    int max_iterations = 1000;
    double tolerance = 1e-8;
    // Validation rows; when absent every 5th sample (index % 5 == 0) is held out.
    std::optional<std::vector<int>> val_indices;
};

struct ProbeResult {
    double best_accuracy = 0.0;
    double best_lambda = 0.0;
    std::vector<std::pair<double, double>> per_lambda;  // (lambda, accuracy)
};

// L2-regularized multinomial logistic regression (L-BFGS, bias unpenalized),
// swept over the lambda grid; returns the validation-best point.
ProbeResult linear_probe(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                         const std::vector<double>& lambda_grid, const ProbeOptions& opts = {});

// Features for probing come from the image encoder's final layer, before the
// multimodal encoder.
Eigen::MatrixXd probe_features(const FlavaModel& model, const ImageBatch& images);

// ---- fine-tuning heads -----------------------------------------------------

enum class FinetuneTask { vision_cls, text_cls, text_regression, multimodal_cls };

struct ClassifierHeadSpec {
    enum class Kind { linear, two_layer };
    Kind kind = Kind::two_layer;
    int hidden = 1536;
};

struct FinetuneRecipe {
    double learning_rate = 1e-4;
    int updates = 44000;
    int batch_size = 256;
    double weight_decay = 1e-2;
    int warmup_updates = 2000;
    int image_size = 224;

    static FinetuneRecipe vqa_style();   // lr 1e-4, 44000 updates, 480px input
    static FinetuneRecipe nli_style();   // lr 1e-5, 24000 updates, 224px input
    static FinetuneRecipe desk(int updates = 200);
};

struct FinetuneData {
    std::optional<PairBatch> pairs;   // multimodal_cls
    std::optional<ImageBatch> images; // vision_cls
    std::optional<TextBatch> texts;   // text_cls / text_regression
    std::vector<double> targets;      // class index, or regression target
};

struct FinetuneResult {
    double metric = 0.0;  // accuracy for classification, mse for regression
    int head_input_dim = 0;
    int head_output_dim = 0;
};

// Trains a classification/regression head on the task's CLS vector
// (h_cls_I / h_cls_T / h_cls_M), optionally fine-tuning the trunk end to end
// (the default). `concat_baseline` routes the multimodal task through the
// concatenated unimodal CLS vectors instead of the fusion encoder.
FinetuneResult finetune_head(FlavaModel& model, const FinetuneData& train,
                             const FinetuneData& eval, FinetuneTask task,
                             const ClassifierHeadSpec& head, const FinetuneRecipe& recipe,
                             int num_classes, bool freeze_trunk = false,
                             bool concat_baseline = false);

// Logits of the CLIP-style baseline: head over [img_cls ++ txt_cls].
ad::Var concat_baseline_head(const ad::Var& img_cls, const ad::Var& txt_cls,
                             const MlpHead& head);

}  // namespace flava
