#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "flava/corpus.hpp"
#include "flava/distributed.hpp"
#include "flava/evaluation.hpp"
#include "flava/synthetic.hpp"
#include "flava/trainer.hpp"
#include "flava/util.hpp"

namespace fs = std::filesystem;
using namespace flava;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::int64_t> seed;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "config file path");
    if (config_required) c->required();
    cmd->add_option("--set", opts.overrides, "dotted-key override, e.g. model.hidden_size=64");
    cmd->add_option("--seed", opts.seed, "master seed (overrides model.seed)");
    cmd->add_option("--out", opts.out_dir, "output directory")->required();
}

FlavaConfig resolve_config(const CommonOpts& opts) {
    FlavaConfig config =
        opts.config_path.empty() ? FlavaConfig::desk() : load_config_file(opts.config_path);
    for (const auto& o : opts.overrides) apply_override(config, o);
    if (opts.seed) config.model.seed = *opts.seed;
    validate_config(config);
    return config;
}

// Every run records its fully resolved config and seed next to its outputs.
void record_run(const FlavaConfig& config, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_file(config, out_dir + "/config.cfg");
    std::ofstream seed_file(out_dir + "/seed");
    seed_file << config.model.seed << "\n";
}

void emit_report(const std::vector<std::string>& lines, const std::string& out_dir) {
    std::ofstream out(out_dir + "/report.txt");
    for (const auto& line : lines) {
        std::cout << line << "\n";
        out << line << "\n";
    }
}

struct LoadedModel {
    FlavaConfig config;
    std::unique_ptr<FlavaModel> model;
};

LoadedModel model_from_checkpoint(const std::string& path) {
    Archive a = Archive::load(path);
    LoadedModel loaded;
    loaded.config = parse_config(a.get_str("meta/config"));
    loaded.model = std::make_unique<FlavaModel>(loaded.config.model);
    loaded.model->params().load(a);
    return loaded;
}

int run_corpus(const std::string& sources_path, const std::string& out_dir, int shard_size) {
    auto sources = load_sources_manifest(sources_path);
    BuildOptions opts;
    opts.shard_size = shard_size;
    BuildReport report = build_corpus(sources, out_dir, opts);
    std::vector<std::string> lines;
    lines.push_back(format_kv("pairs", report.stats.pair_count));
    lines.push_back(format_kv("unique_images", report.stats.unique_image_count));
    lines.push_back(format_kv("mean_caption_words", report.stats.mean_caption_words));
    lines.push_back(format_kv("rejected", report.rejected));
    for (const auto& [source, count] : report.stats.per_source)
        lines.push_back("source=" + source + " " + format_kv("pairs", count));
    emit_report(lines, out_dir);
    return 0;
}

int run_tokenizer_fit(const CommonOpts& opts, const std::string& data) {
    FlavaConfig config = resolve_config(opts);
    record_run(config, opts.out_dir);
    ImageBatch images = load_image_source(data, config.model,
                                          static_cast<std::uint64_t>(config.model.seed), "tokenizer");
    Eigen::MatrixXd features = patchify(images, config.model.patch_size);
    auto rng = derive_rng(static_cast<std::uint64_t>(config.model.seed), "codebook");
    CodebookFit fit = fit_codebook(features, config.model.codebook_size, rng);
    fit.codebook.validate();
    fit.codebook.save(opts.out_dir + "/codebook.ckpt");
    std::vector<std::string> lines;
    lines.push_back(format_kv("codebook_size", static_cast<std::int64_t>(fit.codebook.size())));
    lines.push_back(format_kv("code_dim", static_cast<std::int64_t>(fit.codebook.code_dim())));
    lines.push_back(format_kv("iterations", static_cast<std::int64_t>(fit.iterations)));
    lines.push_back(format_kv("converged", fit.converged ? "true" : "false"));
    lines.push_back(format_kv("final_error", fit.error_log.back()));
    emit_report(lines, opts.out_dir);
    return 0;
}

int run_pretrain(const CommonOpts& opts, const std::optional<std::string>& image_init,
                 const std::optional<std::string>& text_init,
                 const std::optional<std::string>& resume, std::int64_t halt_at_step) {
    FlavaConfig config = resolve_config(opts);
    Trainer trainer(config);
    if (image_init || text_init) trainer.load_pretrained_encoders(image_init, text_init);
    if (resume) trainer.load_state(*resume);
    PretrainResult result = trainer.pretrain(opts.out_dir, halt_at_step);
    std::cout << format_kv("steps", trainer.state().step) << " "
              << format_kv("final_checkpoint", result.final_checkpoint) << "\n";
    if (!result.best_checkpoint.empty())
        std::cout << format_kv("best_checkpoint", result.best_checkpoint) << " "
                  << format_kv("best_retrieval_r1", trainer.state().best_metric) << "\n";
    return 0;
}

int run_eval(const CommonOpts& opts, const std::string& task, const std::string& checkpoint,
             const std::string& data) {
    LoadedModel loaded = model_from_checkpoint(checkpoint);
    if (!opts.config_path.empty()) {
        FlavaConfig given = load_config_file(opts.config_path);
        if (!(given == loaded.config))
            fail("config_mismatch", "--config disagrees with the checkpoint's recorded config");
    }
    FlavaConfig config = loaded.config;
    if (opts.seed) config.model.seed = *opts.seed;
    record_run(config, opts.out_dir);
    FlavaModel& model = *loaded.model;
    const std::uint64_t seed = static_cast<std::uint64_t>(config.model.seed);
    std::vector<std::string> lines;

    if (task == "retrieval") {
        PairBatch pairs = load_pair_source(data, config.model, seed, "eval.retrieval");
        Eigen::MatrixXd img = model.image_embedding(model.encode_image(pairs.images)).value();
        Eigen::MatrixXd txt = model.text_embedding(model.encode_text(pairs.texts)).value();
        std::vector<std::int64_t> ids(static_cast<size_t>(pairs.batch()));
        for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i);
        RetrievalIndex text_index = RetrievalIndex::build(txt, ids);
        RetrievalIndex image_index = RetrievalIndex::build(img, ids);
        const int k5 = std::min(5, pairs.batch());
        lines.push_back("task=retrieval direction=image_to_text metric=R@1 " +
                        format_kv("value", recall_at_k(text_index, normalize_rows(img), ids, 1)));
        lines.push_back("task=retrieval direction=image_to_text metric=R@5 " +
                        format_kv("value", recall_at_k(text_index, normalize_rows(img), ids, k5)));
        lines.push_back("task=retrieval direction=text_to_image metric=R@1 " +
                        format_kv("value", recall_at_k(image_index, normalize_rows(txt), ids, 1)));
        lines.push_back("task=retrieval direction=text_to_image metric=R@5 " +
                        format_kv("value", recall_at_k(image_index, normalize_rows(txt), ids, k5)));
    } else if (task == "zeroshot") {
        // 8-concept synthetic benchmark: one labeled image set, one template
        // set per class built from texts that share the class concept token
        SourceSpec spec = parse_source(data);
        const int n = spec.synthetic ? spec.count : 32;
        ImageBatch images = make_synthetic_images(n, config.model, seed, "eval.zeroshot");
        std::vector<int> labels(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % 8;
        std::vector<TextBatch> templates;
        for (int c = 0; c < 8; ++c) {
            std::vector<int> members;
            TextBatch all = make_synthetic_texts(32, config.model, seed, "eval.zeroshot.templates");
            for (int i = c; i < 32; i += 8) members.push_back(i);
            templates.push_back(all.rows(members));
        }
        auto pred = zero_shot_classify(model, images, templates);
        int correct = 0;
        for (int i = 0; i < n; ++i)
            if (pred[static_cast<size_t>(i)] == labels[static_cast<size_t>(i)]) ++correct;
        lines.push_back("task=zeroshot metric=accuracy " +
                        format_kv("value", static_cast<double>(correct) / n));
    } else if (task == "probe") {
        SourceSpec spec = parse_source(data);
        const int n = spec.synthetic ? spec.count : 64;
        ImageBatch images = make_synthetic_images(n, config.model, seed, "eval.probe");
        std::vector<int> labels(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % 8;
        Eigen::MatrixXd features = probe_features(model, images);
        ProbeResult r = linear_probe(features, labels, default_lambda_grid());
        lines.push_back("task=probe metric=accuracy " + format_kv("value", r.best_accuracy) + " " +
                        format_kv("lambda", r.best_lambda));
    } else if (task == "finetune") {
        SourceSpec spec = parse_source(data);
        const int n = spec.synthetic ? spec.count : 128;
        PairBatch pairs = make_synthetic_pairs(n, config.model, seed, "eval.finetune");
        FinetuneData all;
        all.pairs = pairs;
        for (int i = 0; i < n; ++i) all.targets.push_back(i % 2);
        const int split = n - n / 5;
        std::vector<int> train_rows, eval_rows;
        for (int i = 0; i < split; ++i) train_rows.push_back(i);
        for (int i = split; i < n; ++i) eval_rows.push_back(i);
        FinetuneData train, held;
        train.pairs = pairs.rows(train_rows);
        held.pairs = pairs.rows(eval_rows);
        for (int i : train_rows) train.targets.push_back(all.targets[static_cast<size_t>(i)]);
        for (int i : eval_rows) held.targets.push_back(all.targets[static_cast<size_t>(i)]);
        ClassifierHeadSpec head;
        head.hidden = std::min(1536, 4 * config.model.hidden_size);
        FinetuneResult r = finetune_head(model, train, held, FinetuneTask::multimodal_cls, head,
                                         FinetuneRecipe::desk(100), 2);
        lines.push_back("task=finetune metric=accuracy " + format_kv("value", r.metric));
    } else {
        fail("invalid_config", "unknown eval task '" + task + "'");
    }
    emit_report(lines, opts.out_dir);
    return 0;
}

int run_verify(const CommonOpts& opts, int workers, int batch, int dim, double temperature) {
    FlavaConfig config = resolve_config(opts);
    record_run(config, opts.out_dir);
    if (batch % workers != 0)
        fail("invalid_config", "batch " + std::to_string(batch) + " must be divisible by workers " +
                                   std::to_string(workers));
    std::mt19937_64 rng = derive_rng(static_cast<std::uint64_t>(config.model.seed), "verify");
    std::normal_distribution<double> dist(0.0, 1.0);
    const int per = batch / workers;
    std::vector<WorkerShard> shards;
    Eigen::MatrixXd full_img(batch, dim), full_txt(batch, dim);
    for (int w = 0; w < workers; ++w) {
        WorkerShard s;
        s.worker_id = w;
        s.image_embeddings.resize(per, dim);
        s.text_embeddings.resize(per, dim);
        for (int i = 0; i < per; ++i)
            for (int d = 0; d < dim; ++d) {
                s.image_embeddings(i, d) = dist(rng);
                s.text_embeddings(i, d) = dist(rng);
            }
        full_img.middleRows(w * per, per) = s.image_embeddings;
        full_txt.middleRows(w * per, per) = s.text_embeddings;
        shards.push_back(std::move(s));
    }

    ad::Var iv = ad::Var::leaf(full_img), tv = ad::Var::leaf(full_txt);
    auto reference = contrastive_loss(iv, tv, temperature);
    ad::backward(reference.loss);

    ShardGradients global = global_contrastive(shards, temperature);
    ShardGradients local = local_contrastive(shards, temperature);

    double max_rel = 0.0;
    double local_diff_norm = 0.0;
    for (int w = 0; w < workers; ++w) {
        Eigen::MatrixXd oi = iv.grad().middleRows(w * per, per);
        Eigen::MatrixXd ot = tv.grad().middleRows(w * per, per);
        max_rel = std::max(max_rel, (global.image_grads[static_cast<size_t>(w)] - oi).cwiseAbs().maxCoeff() /
                                        std::max(1e-300, oi.cwiseAbs().maxCoeff()));
        max_rel = std::max(max_rel, (global.text_grads[static_cast<size_t>(w)] - ot).cwiseAbs().maxCoeff() /
                                        std::max(1e-300, ot.cwiseAbs().maxCoeff()));
        local_diff_norm +=
            (global.image_grads[static_cast<size_t>(w)] - local.image_grads[static_cast<size_t>(w)])
                .squaredNorm() +
            (global.text_grads[static_cast<size_t>(w)] - local.text_grads[static_cast<size_t>(w)])
                .squaredNorm();
    }
    local_diff_norm = std::sqrt(local_diff_norm);
    const double forward_diff = std::abs(global.loss - local.loss);
    const double loss_vs_ref = std::abs(global.loss - reference.loss.scalar());

    const bool pass_global = max_rel < 1e-6 && loss_vs_ref < 1e-9;
    const bool pass_forward = forward_diff < 1e-10;
    const bool pass_local = local_diff_norm > 0.0;

    std::vector<std::string> lines;
    lines.push_back("check=global_matches_full_batch " + format_kv("max_rel_grad_diff", max_rel) +
                    " " + format_kv("loss_diff", loss_vs_ref) + " tolerance=1e-6 " +
                    std::string("status=") + (pass_global ? "pass" : "fail"));
    lines.push_back("check=forward_losses_agree " + format_kv("diff", forward_diff) +
                    " tolerance=1e-10 " + std::string("status=") + (pass_forward ? "pass" : "fail"));
    lines.push_back("check=local_gradients_differ " + format_kv("grad_diff_norm", local_diff_norm) +
                    " " + std::string("status=") + (pass_local ? "pass" : "fail"));
    lines.push_back(std::string("overall=") +
                    ((pass_global && pass_forward && pass_local) ? "pass" : "fail"));
    emit_report(lines, opts.out_dir);
    return (pass_global && pass_forward && pass_local) ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale FLAVA pretraining, evaluation and corpus tooling"};
    app.require_subcommand(1);

    // corpus build
    auto* corpus = app.add_subcommand("corpus", "corpus construction");
    corpus->require_subcommand(1);
    auto* corpus_build = corpus->add_subcommand("build", "ingest, filter, dedupe and shard");
    std::string sources_path, corpus_out;
    int shard_size = 10000;
    corpus_build->add_option("--sources", sources_path, "sources manifest JSON")->required();
    corpus_build->add_option("--out", corpus_out, "output directory")->required();
    corpus_build->add_option("--shard-size", shard_size, "records per shard");

    // tokenizer fit
    auto* tokenizer = app.add_subcommand("tokenizer", "visual tokenizer");
    tokenizer->require_subcommand(1);
    auto* tok_fit = tokenizer->add_subcommand("fit", "fit the k-means codebook");
    CommonOpts tok_opts;
    std::string tok_data = "synthetic:64";
    add_common(tok_fit, tok_opts, /*config_required=*/false);
    tok_fit->add_option("--data", tok_data, "image source (synthetic:<n> or fixture path)");

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "joint round-robin pretraining");
    CommonOpts pre_opts;
    std::string image_init, text_init, resume;
    std::int64_t halt_at_step = -1;
    add_common(pretrain, pre_opts, /*config_required=*/false);
    pretrain->add_option("--image-init", image_init, "image encoder checkpoint");
    pretrain->add_option("--text-init", text_init, "text encoder checkpoint");
    pretrain->add_option("--resume", resume, "training state to resume from");
    pretrain->add_option("--halt-at-step", halt_at_step, "stop after this update (for resume tests)");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluation protocols");
    eval->require_subcommand(1);
    std::map<std::string, CLI::App*> eval_subs;
    struct EvalArgs {
        CommonOpts opts;
        std::string checkpoint;
        std::string data = "synthetic:32";
    };
    std::map<std::string, std::shared_ptr<EvalArgs>> eval_args;
    for (const char* task : {"retrieval", "zeroshot", "probe", "finetune"}) {
        auto* sub = eval->add_subcommand(task, std::string("run ") + task + " evaluation");
        auto args = std::make_shared<EvalArgs>();
        add_common(sub, args->opts, /*config_required=*/false);
        sub->add_option("--checkpoint", args->checkpoint, "model checkpoint")->required();
        sub->add_option("--data", args->data, "eval data source");
        eval_subs[task] = sub;
        eval_args[task] = args;
    }

    // verify-global-contrastive
    auto* verify = app.add_subcommand("verify-global-contrastive",
                                      "check global vs local contrastive gradient semantics");
    CommonOpts ver_opts;
    int workers = 4, batch = 32, dim = 16;
    double temperature = 0.07;
    add_common(verify, ver_opts, /*config_required=*/false);
    verify->add_option("--workers", workers, "simulated worker count");
    verify->add_option("--batch", batch, "global batch size");
    verify->add_option("--dim", dim, "embedding dimension");
    verify->add_option("--temperature", temperature, "softmax temperature");

    CLI11_PARSE(app, argc, argv);

    try {
        if (corpus_build->parsed()) return run_corpus(sources_path, corpus_out, shard_size);
        if (tok_fit->parsed()) return run_tokenizer_fit(tok_opts, tok_data);
        if (pretrain->parsed()) {
            auto opt = [](const std::string& s) {
                return s.empty() ? std::nullopt : std::optional<std::string>(s);
            };
            return run_pretrain(pre_opts, opt(image_init), opt(text_init), opt(resume),
                                halt_at_step);
        }
        for (const auto& [task, sub] : eval_subs)
            if (sub->parsed())
                return run_eval(eval_args[task]->opts, task, eval_args[task]->checkpoint,
                                eval_args[task]->data);
        if (verify->parsed()) return run_verify(ver_opts, workers, batch, dim, temperature);
    } catch (const FlavaError& e) {
        std::cerr << "error category=" << e.category << " message=\"" << e.what() << "\"\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error category=internal message=\"" << e.what() << "\"\n";
        return 2;
    }
    return 1;
}
