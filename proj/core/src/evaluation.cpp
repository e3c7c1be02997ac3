#include "flava/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "flava/optim.hpp"
#include "flava/util.hpp"

namespace flava {

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        double n = out.row(i).norm();
        if (n < 1e-12) fail("zero_norm", "cannot normalize a zero row");
        out.row(i) /= n;
    }
    return out;
}

RetrievalIndex RetrievalIndex::build(const Eigen::MatrixXd& embeddings,
                                     std::vector<std::int64_t> ids) {
    if (static_cast<Eigen::Index>(ids.size()) != embeddings.rows())
        fail("shape_error", "RetrievalIndex: one id per row required");
    RetrievalIndex index;
    index.embeddings = normalize_rows(embeddings);
    index.ids = std::move(ids);
    return index;
}

void RetrievalIndex::validate() const {
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i)
        if (std::abs(embeddings.row(i).norm() - 1.0) > 1e-6)
            fail("invalid_index", "retrieval index row " + std::to_string(i) + " is not unit norm");
}

double recall_at_k(const RetrievalIndex& index, const Eigen::MatrixXd& queries,
                   const std::vector<std::int64_t>& gold, int k) {
    const Eigen::Index n = index.embeddings.rows();
    if (k < 1 || k > n)
        fail("out_of_range", "recall_at_k: k=" + std::to_string(k) + " outside [1, " +
                                 std::to_string(n) + "]");
    if (static_cast<Eigen::Index>(gold.size()) != queries.rows())
        fail("shape_error", "recall_at_k: gold must cover every query");
    if (queries.cols() != index.embeddings.cols())
        fail("shape_error", "recall_at_k: query dimension mismatch");

    int hits = 0;
    std::vector<std::pair<double, std::int64_t>> ranked(static_cast<size_t>(n));
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        Eigen::VectorXd sims = index.embeddings * queries.row(q).transpose();
        for (Eigen::Index i = 0; i < n; ++i)
            ranked[static_cast<size_t>(i)] = {sims(i), index.ids[static_cast<size_t>(i)]};
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;  // ties: ascending item id
        });
        for (int r = 0; r < k; ++r)
            if (ranked[static_cast<size_t>(r)].second == gold[static_cast<size_t>(q)]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(queries.rows());
}

Eigen::MatrixXd class_embeddings_from_templates(
    const std::vector<Eigen::MatrixXd>& per_class_template_embeddings) {
    if (per_class_template_embeddings.empty())
        fail("invalid_batch", "zero_shot_classify: no classes");
    const Eigen::Index dim = per_class_template_embeddings[0].cols();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(per_class_template_embeddings.size()), dim);
    for (size_t c = 0; c < per_class_template_embeddings.size(); ++c) {
        const Eigen::MatrixXd& t = per_class_template_embeddings[c];
        if (t.rows() < 1) fail("invalid_batch", "class " + std::to_string(c) + " has no templates");
        Eigen::RowVectorXd mean = normalize_rows(t).colwise().mean();
        double n = mean.norm();
        if (n < 1e-12) fail("zero_norm", "class template embeddings cancel out");
        out.row(static_cast<Eigen::Index>(c)) = mean / n;
    }
    return out;
}

std::vector<int> zero_shot_classify(const Eigen::MatrixXd& image_embeddings,
                                    const Eigen::MatrixXd& class_embeddings) {
    Eigen::MatrixXd img = normalize_rows(image_embeddings);
    std::vector<int> out(static_cast<size_t>(img.rows()));
    for (Eigen::Index i = 0; i < img.rows(); ++i) {
        Eigen::VectorXd sims = class_embeddings * img.row(i).transpose();
        int best = 0;
        for (Eigen::Index c = 1; c < sims.size(); ++c)
            if (sims(c) > sims(best)) best = static_cast<int>(c);  // ties keep lowest index
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

std::vector<int> zero_shot_classify(const FlavaModel& model, const ImageBatch& images,
                                    const std::vector<TextBatch>& class_templates) {
    std::vector<Eigen::MatrixXd> per_class;
    per_class.reserve(class_templates.size());
    for (const auto& templates : class_templates) {
        TextHiddenStates h = model.encode_text(templates);
        per_class.push_back(model.text_embedding(h).value());
    }
    ImageHiddenStates hi = model.encode_image(images);
    return zero_shot_classify(model.image_embedding(hi).value(),
                              class_embeddings_from_templates(per_class));
}

// ---------------------------------------------------------------------------
// linear probe
// ---------------------------------------------------------------------------

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int e = -6; e <= 6; ++e) grid.push_back(std::pow(10.0, e));
    return grid;
}

namespace {

using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

// L-BFGS with two-loop recursion and Armijo backtracking.
Eigen::VectorXd lbfgs_minimize(const Objective& fg, Eigen::VectorXd x, int max_iterations,
                               double tolerance) {
    const int history = 10;
    std::deque<Eigen::VectorXd> s_hist, y_hist;
    Eigen::VectorXd grad(x.size());
    double f = fg(x, grad);
    for (int iter = 0; iter < max_iterations; ++iter) {
        if (grad.norm() <= tolerance * std::max(1.0, x.norm())) break;

        // two-loop recursion
        Eigen::VectorXd q = grad;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            double rho = 1.0 / y_hist[static_cast<size_t>(i)].dot(s_hist[static_cast<size_t>(i)]);
            alpha[static_cast<size_t>(i)] = rho * s_hist[static_cast<size_t>(i)].dot(q);
            q -= alpha[static_cast<size_t>(i)] * y_hist[static_cast<size_t>(i)];
        }
        if (!s_hist.empty()) {
            const auto& s = s_hist.back();
            const auto& y = y_hist.back();
            q *= s.dot(y) / y.dot(y);
        }
        for (size_t i = 0; i < s_hist.size(); ++i) {
            double rho = 1.0 / y_hist[i].dot(s_hist[i]);
            double beta = rho * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd direction = -q;
        double dg = direction.dot(grad);
        if (dg >= 0.0) {  // not a descent direction: fall back to steepest descent
            direction = -grad;
            dg = -grad.squaredNorm();
        }

        double step = 1.0;
        Eigen::VectorXd x_new, g_new(x.size());
        double f_new = f;
        const double c1 = 1e-4;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = x + step * direction;
            f_new = fg(x_new, g_new);
            if (f_new <= f + c1 * step * dg) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = g_new - grad;
        if (s.dot(y) > 1e-10) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            if (static_cast<int>(s_hist.size()) > history) {
                s_hist.pop_front();
                y_hist.pop_front();
            }
        }
        x = std::move(x_new);
        grad = std::move(g_new);
        if (std::abs(f - f_new) <= tolerance * std::max(1.0, std::abs(f))) {
            f = f_new;
            break;
        }
        f = f_new;
    }
    return x;
}

struct LogisticProblem {
    const Eigen::MatrixXd& x;  // [N, D]
    const std::vector<int>& y;
    int classes;
    double lambda;

    // weights packed [(D+1) x C]: last row is the unpenalized bias
    double operator()(const Eigen::VectorXd& w_flat, Eigen::VectorXd& grad_flat) const {
        const Eigen::Index n = x.rows(), d = x.cols();
        Eigen::Map<const Eigen::MatrixXd> w(w_flat.data(), d + 1, classes);
        Eigen::Map<Eigen::MatrixXd> grad(grad_flat.data(), d + 1, classes);
        grad.setZero();

        Eigen::MatrixXd logits = x * w.topRows(d);
        logits.rowwise() += w.row(d);
        double nll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double mx = logits.row(i).maxCoeff();
            Eigen::Array<double, 1, Eigen::Dynamic> e = (logits.row(i).array() - mx).exp();
            double denom = e.sum();
            nll += std::log(denom) + mx - logits(i, y[static_cast<size_t>(i)]);
            Eigen::RowVectorXd p = (e / denom).matrix();
            p(y[static_cast<size_t>(i)]) -= 1.0;
            grad.topRows(d).noalias() += x.row(i).transpose() * p;
            grad.row(d) += p;
        }
        grad /= static_cast<double>(n);
        grad.topRows(d) += lambda * w.topRows(d);
        return nll / static_cast<double>(n) + 0.5 * lambda * w.topRows(d).squaredNorm();
    }
};

double classify_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& y,
                         const Eigen::VectorXd& w_flat, int classes) {
    const Eigen::Index d = x.cols();
    Eigen::Map<const Eigen::MatrixXd> w(w_flat.data(), d + 1, classes);
    Eigen::MatrixXd logits = x * w.topRows(d);
    logits.rowwise() += w.row(d);
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (logits(i, c) > logits(i, best)) best = c;
        if (best == y[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows());
}

}  // namespace

ProbeResult linear_probe(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                         const std::vector<double>& lambda_grid, const ProbeOptions& opts) {
    if (static_cast<Eigen::Index>(labels.size()) != features.rows())
        fail("shape_error", "linear_probe: one label per feature row required");
    if (lambda_grid.empty()) fail("invalid_config", "linear_probe: empty lambda grid");
    int classes = 0;
    for (int label : labels) {
        if (label < 0) fail("out_of_range", "linear_probe: negative label");
        classes = std::max(classes, label + 1);
    }
    if (classes < 2) fail("invalid_batch", "linear_probe: need at least 2 classes");

    std::vector<char> is_val(labels.size(), 0);
    if (opts.val_indices) {
        for (int i : *opts.val_indices) is_val[static_cast<size_t>(i)] = 1;
    } else {
        for (size_t i = 0; i < labels.size(); i += 5) is_val[i] = 1;
    }
    std::vector<int> train_rows, val_rows;
    for (size_t i = 0; i < labels.size(); ++i) (is_val[i] ? val_rows : train_rows).push_back(static_cast<int>(i));
    if (train_rows.empty() || val_rows.empty())
        fail("invalid_batch", "linear_probe: train/validation split is degenerate");

    auto take = [&](const std::vector<int>& rows, Eigen::MatrixXd& xs, std::vector<int>& ys) {
        xs.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
        ys.resize(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            xs.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
            ys[i] = labels[static_cast<size_t>(rows[i])];
        }
    };
    Eigen::MatrixXd x_train, x_val;
    std::vector<int> y_train, y_val;
    take(train_rows, x_train, y_train);
    take(val_rows, x_val, y_val);

    ProbeResult result;
    result.best_accuracy = -1.0;
    for (double lambda : lambda_grid) {
        LogisticProblem problem{x_train, y_train, classes, lambda};
        Eigen::VectorXd w0 = Eigen::VectorXd::Zero((features.cols() + 1) * classes);
        Eigen::VectorXd w = lbfgs_minimize(problem, w0, opts.max_iterations, opts.tolerance);
        double acc = classify_accuracy(x_val, y_val, w, classes);
        result.per_lambda.push_back({lambda, acc});
        if (acc > result.best_accuracy) {
            result.best_accuracy = acc;
            result.best_lambda = lambda;
        }
    }
    return result;
}

Eigen::MatrixXd probe_features(const FlavaModel& model, const ImageBatch& images) {
    ImageHiddenStates h = model.encode_image(images);
    return h.cls().value();
}

// ---------------------------------------------------------------------------
// fine-tuning heads
// ---------------------------------------------------------------------------

FinetuneRecipe FinetuneRecipe::vqa_style() {
    FinetuneRecipe r;
    r.learning_rate = 1e-4;
    r.updates = 44000;
    r.image_size = 480;
    return r;
}

FinetuneRecipe FinetuneRecipe::nli_style() {
    FinetuneRecipe r;
    r.learning_rate = 1e-5;
    r.updates = 24000;
    r.image_size = 224;
    return r;
}

FinetuneRecipe FinetuneRecipe::desk(int updates) {
    FinetuneRecipe r;
    r.learning_rate = 1e-3;
    r.updates = updates;
    r.batch_size = 16;
    r.weight_decay = 1e-2;
    r.warmup_updates = std::max(1, updates / 10);
    r.image_size = 32;
    return r;
}

ad::Var concat_baseline_head(const ad::Var& img_cls, const ad::Var& txt_cls, const MlpHead& head) {
    if (img_cls.rows() != txt_cls.rows())
        fail("shape_error", "concat_baseline_head: batch mismatch");
    return head.forward(ad::hstack({img_cls, txt_cls}));
}

namespace {

int finetune_batch_count(const FinetuneData& data, FinetuneTask task) {
    switch (task) {
        case FinetuneTask::multimodal_cls:
            if (!data.pairs) fail("invalid_batch", "multimodal_cls needs pair data");
            return data.pairs->batch();
        case FinetuneTask::vision_cls:
            if (!data.images) fail("invalid_batch", "vision_cls needs image data");
            return data.images->batch();
        case FinetuneTask::text_cls:
        case FinetuneTask::text_regression:
            if (!data.texts) fail("invalid_batch", "text task needs text data");
            return data.texts->batch();
    }
    return 0;
}

}  // namespace

FinetuneResult finetune_head(FlavaModel& model, const FinetuneData& train,
                             const FinetuneData& eval, FinetuneTask task,
                             const ClassifierHeadSpec& head_spec, const FinetuneRecipe& recipe,
                             int num_classes, bool freeze_trunk, bool concat_baseline) {
    if (task == FinetuneTask::text_regression && num_classes != 1)
        fail("invalid_config", "regression tasks use a single-output head");
    if (task != FinetuneTask::text_regression && num_classes < 2)
        fail("invalid_config", "classification needs at least 2 classes");
    if (concat_baseline && task != FinetuneTask::multimodal_cls)
        fail("invalid_config", "the concat baseline only applies to the multimodal task");
    const int n_train = finetune_batch_count(train, task);
    if (static_cast<int>(train.targets.size()) != n_train)
        fail("invalid_batch", "finetune: one target per training row required");

    const int hidden = model.config().hidden_size;
    const int in_dim = concat_baseline ? 2 * hidden : hidden;
    const int out_dim = num_classes;

    ParamStore head_params(model.config().seed ^ 0x5eedf1e1d);
    ad::Var w1, b1, w2, b2;
    if (head_spec.kind == ClassifierHeadSpec::Kind::two_layer) {
        w1 = head_params.create("finetune.fc1.weight", in_dim, head_spec.hidden, Init::TruncNormal002);
        b1 = head_params.create("finetune.fc1.bias", 1, head_spec.hidden, Init::Zeros);
        w2 = head_params.create("finetune.fc2.weight", head_spec.hidden, out_dim, Init::TruncNormal002);
        b2 = head_params.create("finetune.fc2.bias", 1, out_dim, Init::Zeros);
    } else {
        w2 = head_params.create("finetune.fc.weight", in_dim, out_dim, Init::TruncNormal002);
        b2 = head_params.create("finetune.fc.bias", 1, out_dim, Init::Zeros);
    }

    auto head_forward = [&](const ad::Var& x) {
        if (head_spec.kind == ClassifierHeadSpec::Kind::two_layer)
            return ad::add_rowvec(ad::matmul(ad::gelu(ad::add_rowvec(ad::matmul(x, w1), b1)), w2), b2);
        return ad::add_rowvec(ad::matmul(x, w2), b2);
    };

    auto task_cls = [&](const FinetuneData& data, const std::vector<int>& rows) {
        switch (task) {
            case FinetuneTask::multimodal_cls: {
                PairBatch b = data.pairs->rows(rows);
                ImageHiddenStates hi = model.encode_image(b.images);
                TextHiddenStates ht = model.encode_text(b.texts);
                if (concat_baseline) return ad::hstack({hi.cls(), ht.cls()});
                return model.encode_multimodal(hi, ht).cls();
            }
            case FinetuneTask::vision_cls: {
                ImageBatch b = data.images->rows(rows);
                return model.encode_image(b).cls();
            }
            case FinetuneTask::text_cls:
            case FinetuneTask::text_regression: {
                TextBatch b = data.texts->rows(rows);
                return model.encode_text(b).cls();
            }
        }
        fail("invalid_config", "unknown finetune task");
    };

    OptimConfig optim;
    optim.batch_size = recipe.batch_size;
    optim.learning_rate = recipe.learning_rate;
    optim.warmup_updates = recipe.warmup_updates;
    optim.weight_decay = recipe.weight_decay;
    optim.total_updates = recipe.updates;
    AdamState head_adam, trunk_adam;

    for (int u = 1; u <= recipe.updates; ++u) {
        auto rng = derive_rng(static_cast<std::uint64_t>(model.config().seed), "finetune.batch",
                              static_cast<std::uint64_t>(u));
        std::vector<int> rows(static_cast<size_t>(n_train));
        std::iota(rows.begin(), rows.end(), 0);
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(static_cast<size_t>(std::min(recipe.batch_size, n_train)));

        head_params.zero_grads();
        model.params().zero_grads();
        ad::Var logits = head_forward(task_cls(train, rows));
        ad::Var loss;
        if (task == FinetuneTask::text_regression) {
            Eigen::MatrixXd t(static_cast<Eigen::Index>(rows.size()), 1);
            for (size_t i = 0; i < rows.size(); ++i)
                t(static_cast<Eigen::Index>(i), 0) = train.targets[static_cast<size_t>(rows[i])];
            ad::Var diff = ad::sub(logits, ad::Var::constant(t));
            loss = ad::mean_all(ad::cmul(diff, diff));
        } else {
            std::vector<std::int64_t> t(rows.size());
            for (size_t i = 0; i < rows.size(); ++i)
                t[i] = static_cast<std::int64_t>(train.targets[static_cast<size_t>(rows[i])]);
            loss = ad::softmax_xent_rows(logits, t);
        }
        ad::backward(loss);
        const double lr = lr_at(u, optim);
        adamw_step(head_params, head_adam, lr, optim);
        if (!freeze_trunk) adamw_step(model.params(), trunk_adam, lr, optim);
    }

    const int n_eval = finetune_batch_count(eval, task);
    if (static_cast<int>(eval.targets.size()) != n_eval)
        fail("invalid_batch", "finetune: one target per eval row required");
    std::vector<int> all(static_cast<size_t>(n_eval));
    std::iota(all.begin(), all.end(), 0);
    ad::Var logits = head_forward(task_cls(eval, all));

    FinetuneResult result;
    result.head_input_dim = in_dim;
    result.head_output_dim = out_dim;
    if (task == FinetuneTask::text_regression) {
        double mse = 0.0;
        for (int i = 0; i < n_eval; ++i) {
            double d = logits.value()(i, 0) - eval.targets[static_cast<size_t>(i)];
            mse += d * d;
        }
        result.metric = mse / n_eval;
    } else {
        int correct = 0;
        for (int i = 0; i < n_eval; ++i) {
            int best = 0;
            for (int c = 1; c < out_dim; ++c)
                if (logits.value()(i, c) > logits.value()(i, best)) best = c;
            if (best == static_cast<int>(eval.targets[static_cast<size_t>(i)])) ++correct;
        }
        result.metric = static_cast<double>(correct) / n_eval;
    }
    return result;
}

}  // namespace flava
