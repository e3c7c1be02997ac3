#include "flava/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "flava/evaluation.hpp"
#include "flava/synthetic.hpp"
#include "flava/util.hpp"

namespace flava {

std::size_t round_robin_sample(const std::vector<DatasetSpec>& specs, std::mt19937_64& rng) {
    if (specs.empty()) fail("invalid_config", "round_robin_sample: no dataset specs");
    double sum = 0.0;
    for (const auto& s : specs) {
        if (s.sampling_probability < 0.0)
            fail("invalid_config", "sampling probability must be non-negative");
        sum += s.sampling_probability;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        fail("invalid_config", "sampling probabilities sum to " + format_double(sum) + ", expected 1");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double r = unit(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        acc += specs[i].sampling_probability;
        if (r < acc) return i;
    }
    return specs.size() - 1;
}

std::string StepRecord::log_line() const {
    std::ostringstream out;
    out << format_kv("step", static_cast<std::int64_t>(step));
    out << " " << format_kv("kind", to_string(kind));
    out << " " << format_kv("lr", lr);
    auto emit = [&](const char* key, const std::optional<double>& v) {
        if (v) out << " " << format_kv(key, *v);
    };
    emit("gc", losses.gc);
    emit("mmm_image", losses.mmm_image);
    emit("mmm_text", losses.mmm_text);
    emit("itm", losses.itm);
    emit("mim", losses.mim);
    emit("mlm", losses.mlm);
    emit("itm_acc", losses.itm_accuracy);
    return out.str();
}

Trainer::Trainer(const FlavaConfig& config)
    : Trainer(config,
              load_pair_source(config.train.pairs_source, config.model,
                               static_cast<std::uint64_t>(config.model.seed), "pairs"),
              load_image_source(config.train.images_source, config.model,
                                static_cast<std::uint64_t>(config.model.seed), "images"),
              load_text_source(config.train.texts_source, config.model,
                               static_cast<std::uint64_t>(config.model.seed), "texts")) {}

Trainer::Trainer(const FlavaConfig& config, PairBatch pairs, ImageBatch images, TextBatch texts,
                 std::optional<Codebook> codebook)
    : config_(validate_config(config)),
      model_(std::make_unique<FlavaModel>(config.model)),
      pairs_(std::move(pairs)),
      images_(std::move(images)),
      texts_(std::move(texts)) {
    state_.seed = config_.model.seed;
    validate(pairs_, config_.model.text_vocab_size);
    holdout_ = make_synthetic_pairs(config_.train.holdout_pairs, config_.model,
                                    static_cast<std::uint64_t>(config_.model.seed), "holdout");
    init_codebook(codebook);
}

void Trainer::init_codebook(const std::optional<Codebook>& provided) {
    if (provided) {
        codebook_ = *provided;
    } else if (!config_.train.codebook_path.empty()) {
        codebook_ = Codebook::load(config_.train.codebook_path);
    } else {
        // fit on the training images so MIM/MMM targets exist out of the box
        Eigen::MatrixXd feats = patchify(images_.batch() > 0 ? images_ : pairs_.images,
                                         config_.model.patch_size);
        auto rng = derive_rng(static_cast<std::uint64_t>(state_.seed), "codebook");
        codebook_ = fit_codebook(feats, config_.model.codebook_size, rng).codebook;
    }
    if (codebook_.code_dim() != config_.model.patch_dim())
        fail("shape_error", "codebook dimension " + std::to_string(codebook_.code_dim()) +
                                " does not match patch dim " +
                                std::to_string(config_.model.patch_dim()));
}

std::vector<int> Trainer::draw_batch_indices(std::int64_t step_index, DatasetKind kind,
                                             int pool) const {
    if (pool < 1) fail("invalid_batch", "dataset for " + to_string(kind) + " is empty");
    const int b = config_.optim.batch_size;
    auto rng = derive_rng(static_cast<std::uint64_t>(state_.seed), "batch." + to_string(kind),
                          static_cast<std::uint64_t>(step_index));
    std::vector<int> idx;
    if (b <= pool) {
        idx.resize(static_cast<size_t>(pool));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<size_t>(b));
    } else {
        std::uniform_int_distribution<int> pick(0, pool - 1);
        idx.resize(static_cast<size_t>(b));
        for (auto& v : idx) v = pick(rng);
    }
    return idx;
}

LossBundle Trainer::compute_losses(DatasetKind kind, const PairBatch* pair_batch,
                                   const ImageBatch* image_batch, const TextBatch* text_batch,
                                   std::int64_t step_index, ad::Var* total_out) {
    const ModelConfig& mc = config_.model;
    const LossWeights& w = config_.train.weights;
    LossBundle bundle;
    std::vector<ad::Var> terms;
    auto add_term = [&](const ad::Var& loss, double weight, std::optional<double>& slot) {
        slot = loss.scalar();
        terms.push_back(weight == 1.0 ? loss : ad::scale(loss, weight));
    };

    switch (kind) {
        case DatasetKind::multimodal_pairs: {
            if (!pair_batch) fail("invalid_batch", "multimodal step without a pair batch");
            const PairBatch& batch = *pair_batch;
            const int grid = mc.grid_size();

            // 1) global contrastive on the raw, unmasked batch
            ImageHiddenStates gi = model_->encode_image(batch.images);
            TextHiddenStates gt = model_->encode_text(batch.texts);
            ad::Var inv_temp = ad::exp(model_->log_inv_temperature());
            ContrastiveResult gc = contrastive_loss_inv(model_->image_embedding(gi),
                                                        model_->text_embedding(gt), inv_temp);
            add_term(gc.loss, w.gc, bundle.gc);

            // 2) masked multimodal modeling
            auto mask_rng = derive_rng(static_cast<std::uint64_t>(state_.seed), "mmm.image_mask",
                                       static_cast<std::uint64_t>(step_index));
            MaskPlan image_plan =
                block_mask_batch(batch.batch(), grid, grid, mc.mask_ratio_image, mask_rng,
                                 mc.block_min_area, mc.block_aspect_min);
            set_labels_from_tokens(image_plan, tokenize(batch.images, codebook_, mc.patch_size));
            auto text_rng = derive_rng(static_cast<std::uint64_t>(state_.seed), "mmm.text_mask",
                                       static_cast<std::uint64_t>(step_index));
            MaskPlan text_plan = mlm_mask(batch.texts, mc.mask_rate_text, text_rng,
                                          mc.mlm_bert_split, mc.text_vocab_size);
            ImageHiddenStates mi = model_->encode_image(batch.images, &image_plan);
            TextHiddenStates mt = model_->encode_text(apply_mask(batch.texts, text_plan));
            MultimodalHiddenStates mm = model_->encode_multimodal(mi, mt);
            MmmLosses mmm = mmm_loss(mm, image_plan, text_plan, model_->mmm_image_head(),
                                     model_->mmm_text_head(), mi.seq, mt.seq);
            if (mmm.image) add_term(*mmm.image, w.mmm_image, bundle.mmm_image);
            if (mmm.text) add_term(*mmm.text, w.mmm_text, bundle.mmm_text);

            // 3) image-text matching on a negative-injected, unmasked batch
            auto itm_rng = derive_rng(static_cast<std::uint64_t>(state_.seed), "itm.negatives",
                                      static_cast<std::uint64_t>(step_index));
            PairBatch itm_batch =
                make_itm_negatives(batch, config_.train.itm_negative_fraction, itm_rng);
            ImageHiddenStates ii = model_->encode_image(itm_batch.images);
            TextHiddenStates it = model_->encode_text(itm_batch.texts);
            MultimodalHiddenStates im = model_->encode_multimodal(ii, it);
            add_term(itm_loss(im.cls(), itm_batch.match_labels, model_->itm_head()), w.itm,
                     bundle.itm);
            bundle.itm_accuracy =
                itm_head_accuracy(im.cls(), itm_batch.match_labels, model_->itm_head());
            break;
        }
        case DatasetKind::unimodal_images: {
            if (!image_batch) fail("invalid_batch", "image step without an image batch");
            const int grid = mc.grid_size();
            auto rng = derive_rng(static_cast<std::uint64_t>(state_.seed), "mim.mask",
                                  static_cast<std::uint64_t>(step_index));
            MaskPlan plan = block_mask_batch(image_batch->batch(), grid, grid, mc.mask_ratio_image,
                                             rng, mc.block_min_area, mc.block_aspect_min);
            set_labels_from_tokens(plan, tokenize(*image_batch, codebook_, mc.patch_size));
            ImageHiddenStates h = model_->encode_image(*image_batch, &plan);
            if (auto loss = mim_loss(h, plan, model_->mim_head()))
                add_term(*loss, w.mim, bundle.mim);
            break;
        }
        case DatasetKind::unimodal_text: {
            if (!text_batch) fail("invalid_batch", "text step without a text batch");
            auto rng = derive_rng(static_cast<std::uint64_t>(state_.seed), "mlm.mask",
                                  static_cast<std::uint64_t>(step_index));
            MaskPlan plan = mlm_mask(*text_batch, mc.mask_rate_text, rng, mc.mlm_bert_split,
                                     mc.text_vocab_size);
            TextHiddenStates h = model_->encode_text(apply_mask(*text_batch, plan));
            if (auto loss = mlm_loss(h, plan, model_->mlm_head()))
                add_term(*loss, w.mlm, bundle.mlm);
            break;
        }
    }

    for (const auto& [name, value] :
         std::initializer_list<std::pair<const char*, std::optional<double>>>{
             {"gc", bundle.gc},
             {"mmm_image", bundle.mmm_image},
             {"mmm_text", bundle.mmm_text},
             {"itm", bundle.itm},
             {"mim", bundle.mim},
             {"mlm", bundle.mlm}}) {
        if (value && !std::isfinite(*value))
            fail("nan_loss", std::string("non-finite ") + name + " loss at step " +
                                 std::to_string(step_index) + " on a " + to_string(kind) + " batch");
    }

    if (total_out) {
        if (terms.empty()) fail("invalid_batch", "no loss terms produced for " + to_string(kind));
        ad::Var total = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
        *total_out = total;
    }
    return bundle;
}

StepRecord Trainer::step() {
    const std::int64_t u = state_.step + 1;
    if (u > config_.optim.total_updates)
        fail("out_of_range", "training past total_updates");

    auto rr_rng = derive_rng(static_cast<std::uint64_t>(state_.seed), "roundrobin",
                             static_cast<std::uint64_t>(u));
    const auto specs = config_.train.dataset_specs();
    const std::size_t which = round_robin_sample(specs, rr_rng);
    const DatasetKind kind = specs[which].kind;

    PairBatch pair_batch;
    ImageBatch image_batch;
    TextBatch text_batch;
    const PairBatch* pb = nullptr;
    const ImageBatch* ib = nullptr;
    const TextBatch* tb = nullptr;
    std::vector<int> idx;
    switch (kind) {
        case DatasetKind::multimodal_pairs:
            idx = draw_batch_indices(u, kind, pairs_.batch());
            pair_batch = pairs_.rows(idx);
            pb = &pair_batch;
            break;
        case DatasetKind::unimodal_images:
            idx = draw_batch_indices(u, kind, images_.batch());
            image_batch = images_.rows(idx);
            ib = &image_batch;
            break;
        case DatasetKind::unimodal_text:
            idx = draw_batch_indices(u, kind, texts_.batch());
            text_batch = texts_.rows(idx);
            tb = &text_batch;
            break;
    }

    model_->params().zero_grads();
    ad::Var total;
    LossBundle bundle;
    try {
        bundle = compute_losses(kind, pb, ib, tb, u, &total);
    } catch (const FlavaError& e) {
        if (e.category == "nan_loss") {
            std::string ids;
            for (int i : idx) ids += (ids.empty() ? "" : ",") + std::to_string(i);
            fail("nan_loss", std::string(e.what()) + " (batch ids: " + ids + ")");
        }
        throw;
    }
    ad::backward(total);
    const double lr = lr_at(u, config_.optim);
    adamw_step(model_->params(), state_.adam, lr, config_.optim);
    model_->clamp_temperature();

    state_.step = u;
    state_.loss_sum += total.scalar();
    state_.loss_count += 1;

    StepRecord rec;
    rec.step = u;
    rec.kind = kind;
    rec.lr = lr;
    rec.losses = bundle;
    return rec;
}

double Trainer::holdout_retrieval_r1() const {
    if (holdout_.batch() == 0) return 0.0;
    ImageHiddenStates hi = model_->encode_image(holdout_.images);
    TextHiddenStates ht = model_->encode_text(holdout_.texts);
    Eigen::MatrixXd img = model_->image_embedding(hi).value();
    Eigen::MatrixXd txt = model_->text_embedding(ht).value();
    std::vector<std::int64_t> ids(static_cast<size_t>(holdout_.batch()));
    std::vector<std::int64_t> gold(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = gold[i] = static_cast<std::int64_t>(i);
    RetrievalIndex text_index = RetrievalIndex::build(txt, ids);
    RetrievalIndex image_index = RetrievalIndex::build(img, ids);
    Eigen::MatrixXd img_q = normalize_rows(img);
    Eigen::MatrixXd txt_q = normalize_rows(txt);
    double tr = recall_at_k(text_index, img_q, gold, 1);
    double ir = recall_at_k(image_index, txt_q, gold, 1);
    return 0.5 * (tr + ir);
}

PretrainResult Trainer::pretrain(const std::string& out_dir, std::int64_t halt_at_step) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_config_file(config_, out_dir + "/config.cfg");
    {
        std::ofstream seed_file(out_dir + "/seed");
        seed_file << state_.seed << "\n";
    }

    PretrainResult result;
    if (state_.step == 0) save_state(out_dir + "/checkpoint-0.ckpt");

    const std::int64_t total = config_.optim.total_updates;
    const std::int64_t stop = halt_at_step >= 0 ? std::min(halt_at_step, total) : total;
    while (state_.step < stop) {
        StepRecord rec = step();
        result.metrics_lines.push_back(rec.log_line());
        if (rec.step % config_.train.eval_interval == 0) {
            const double r1 = holdout_retrieval_r1();
            result.metrics_lines.push_back(format_kv("step", rec.step) + " kind=eval " +
                                           format_kv("retrieval_r1", r1));
            if (r1 > state_.best_metric) {
                state_.best_metric = r1;
                state_.best_step = rec.step;
                save_state(out_dir + "/best.ckpt");
                result.best_checkpoint = out_dir + "/best.ckpt";
            }
        }
        if (rec.step % config_.train.checkpoint_interval == 0)
            save_state(out_dir + "/state-" + std::to_string(rec.step) + ".ckpt");
    }
    save_state(out_dir + "/state-final.ckpt");
    result.final_checkpoint = out_dir + "/state-final.ckpt";

    std::ofstream log(out_dir + "/metrics.log", std::ios::app);
    for (const auto& line : result.metrics_lines) log << line << "\n";
    return result;
}

void Trainer::load_pretrained_encoders(const std::optional<std::string>& image_ckpt,
                                       const std::optional<std::string>& text_ckpt) {
    if (image_ckpt) {
        Archive a = Archive::load(*image_ckpt);
        model_->params().load(a, "params/", "image_encoder.");
    }
    if (text_ckpt) {
        Archive a = Archive::load(*text_ckpt);
        model_->params().load(a, "params/", "text_encoder.");
    }
}

void Trainer::save_state(const std::string& path) const {
    Archive a;
    model_->params().save(a);
    state_.adam.save(a);
    a.put_scalar_i64("meta/step", state_.step);
    a.put_scalar_i64("meta/seed", state_.seed);
    a.put_scalar("meta/loss_sum", state_.loss_sum);
    a.put_scalar_i64("meta/loss_count", state_.loss_count);
    a.put_scalar("meta/best_metric", state_.best_metric);
    a.put_scalar_i64("meta/best_step", state_.best_step);
    a.put("meta/config", serialize_config(config_));
    a.put("codebook.entries", codebook_.entries);
    a.save(path);
}

void Trainer::load_state(const std::string& path) {
    Archive a = Archive::load(path);
    if (a.get_str("meta/config") != serialize_config(config_))
        fail("config_mismatch", "checkpoint '" + path + "' was written with a different config");
    model_->params().load(a, "params/", "", /*strict=*/true);
    state_.adam.load(a);
    state_.step = a.get_scalar_i64("meta/step");
    state_.seed = a.get_scalar_i64("meta/seed");
    state_.loss_sum = a.get_scalar("meta/loss_sum");
    state_.loss_count = a.get_scalar_i64("meta/loss_count");
    state_.best_metric = a.get_scalar("meta/best_metric");
    state_.best_step = a.get_scalar_i64("meta/best_step");
    codebook_.entries = a.get_f64("codebook.entries");
}

}  // namespace flava
