#include "agepred/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "agepred/errors.hpp"
#include "agepred/hash.hpp"
#include "agepred/losses.hpp"

namespace agepred {

namespace {

using json = nlohmann::ordered_json;

Mat softmax_rows(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp().matrix();
        out.row(r) = e / e.sum();
    }
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (input_dim <= 0) throw ConfigError("input_dim must be positive");
    if (latent_dim < 4) throw ConfigError("latent_dim must be at least 4");
    if (alpha < 0) throw ConfigError("alpha must be nonnegative");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (steps_per_epoch <= 0) throw ConfigError("steps_per_epoch must be positive");
    if (bp_updates < 0 || dist_updates < 0) {
        throw ConfigError("update counts must be nonnegative");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout_rate must lie in [0, 1)");
    }
    if (noise_std < 0) throw ConfigError("noise_std must be nonnegative");
    if (bp_trunk_depth < 1) throw ConfigError("bp_trunk_depth must be >= 1");
    if (bsf_penalty.strength < 0 || bsf_penalty.cut_threshold < 0) {
        throw ConfigError("bsf penalty parameters must be nonnegative");
    }
}

std::string ModelConfig::to_json() const {
    json j;
    j["input_dim"] = input_dim;
    j["latent_dim"] = latent_dim;
    j["use_bsf"] = use_bsf;
    j["alpha"] = alpha;
    j["lr_bp"] = lr_bp;
    j["lr_dist"] = lr_dist;
    j["lr_task"] = lr_task;
    j["batch_size"] = batch_size;
    j["steps_per_epoch"] = steps_per_epoch;
    j["bp_updates"] = bp_updates;
    j["dist_updates"] = dist_updates;
    j["burn_in_epochs"] = burn_in_epochs;
    j["max_epochs"] = max_epochs;
    j["checkpoint_every"] = checkpoint_every;
    j["fixed_epochs"] = fixed_epochs;
    j["best_epoch"] = best_epoch;
    j["seed"] = seed;
    j["dropout_rate"] = dropout_rate;
    j["noise_std"] = noise_std;
    j["task_l2"] = task_l2;
    j["encoder_l2"] = encoder_l2;
    j["bp_trunk_depth"] = bp_trunk_depth;
    j["mask_threshold"] = mask_threshold;
    j["bsf_strength"] = bsf_penalty.strength;
    j["bsf_cut_threshold"] = bsf_penalty.cut_threshold;
    j["bsf_per_sample_mask"] = bsf_per_sample_mask;
    j["fresh_batch_per_update"] = fresh_batch_per_update;
    j["head_weights"] = head_weights;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ModelConfig c;
    auto get = [&](const char* key, auto& slot) {
        if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("input_dim", c.input_dim);
    get("latent_dim", c.latent_dim);
    get("use_bsf", c.use_bsf);
    get("alpha", c.alpha);
    get("lr_bp", c.lr_bp);
    get("lr_dist", c.lr_dist);
    get("lr_task", c.lr_task);
    get("batch_size", c.batch_size);
    get("steps_per_epoch", c.steps_per_epoch);
    get("bp_updates", c.bp_updates);
    get("dist_updates", c.dist_updates);
    get("burn_in_epochs", c.burn_in_epochs);
    get("max_epochs", c.max_epochs);
    get("checkpoint_every", c.checkpoint_every);
    get("fixed_epochs", c.fixed_epochs);
    get("best_epoch", c.best_epoch);
    get("seed", c.seed);
    get("dropout_rate", c.dropout_rate);
    get("noise_std", c.noise_std);
    get("task_l2", c.task_l2);
    get("encoder_l2", c.encoder_l2);
    get("bp_trunk_depth", c.bp_trunk_depth);
    get("mask_threshold", c.mask_threshold);
    get("bsf_strength", c.bsf_penalty.strength);
    get("bsf_cut_threshold", c.bsf_penalty.cut_threshold);
    get("bsf_per_sample_mask", c.bsf_per_sample_mask);
    get("fresh_batch_per_update", c.fresh_batch_per_update);
    get("head_weights", c.head_weights);
    return c;
}

std::vector<int> TrainingData::attr_class_counts() const {
    std::vector<int> out;
    out.reserve(attrs.size());
    for (const auto& a : attrs) out.push_back(int(a.cols()));
    return out;
}

TrainBatch TrainingData::sample_batch(int batch_size, RngState& rng) const {
    if (batch_size < 2) throw BatchError("batch must contain at least 2 samples");
    if (size() == 0) throw EmptyBatchError("no training samples");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch_size));
    for (auto& i : idx) {
        i = Eigen::Index(rng.next_below(std::uint64_t(size())));
    }
    TrainBatch b;
    b.x.resize(batch_size, x.cols());
    b.age.resize(batch_size);
    b.attrs.reserve(attrs.size());
    for (const auto& a : attrs) {
        b.attrs.emplace_back(batch_size, a.cols());
    }
    for (int r = 0; r < batch_size; ++r) {
        b.x.row(r) = x.row(idx[std::size_t(r)]);
        b.age[r] = age[idx[std::size_t(r)]];
        for (std::size_t h = 0; h < attrs.size(); ++h) {
            b.attrs[h].row(r) = attrs[h].row(idx[std::size_t(r)]);
        }
    }
    return b;
}

TrainingData build_training_data(const ExpressionMatrix& x,
                                 const MetadataTable& meta) {
    TrainingData td;
    td.x = x.values;
    td.sample_ids = x.sample_ids;
    td.age.resize(Eigen::Index(x.sample_ids.size()));
    td.attr_names = {"sex", "tissue", "platform", "series_id"};

    auto field = [](const SampleMeta& m, std::size_t which) -> const std::string& {
        switch (which) {
            case 0: return m.sex;
            case 1: return m.tissue;
            case 2: return m.platform;
            default: return m.series_id;
        }
    };

    for (Eigen::Index i = 0; i < Eigen::Index(x.sample_ids.size()); ++i) {
        td.age[i] = meta.require(x.sample_ids[std::size_t(i)]).age_months;
    }

    for (std::size_t a = 0; a < td.attr_names.size(); ++a) {
        std::set<std::string> vocab_set;
        for (const auto& sid : x.sample_ids) {
            vocab_set.insert(field(meta.require(sid), a));
        }
        std::vector<std::string> vocab(vocab_set.begin(), vocab_set.end());
        Mat onehot = Mat::Zero(Eigen::Index(x.sample_ids.size()),
                               Eigen::Index(vocab.size()));
        for (Eigen::Index i = 0; i < Eigen::Index(x.sample_ids.size()); ++i) {
            const auto& v = field(meta.require(x.sample_ids[std::size_t(i)]), a);
            const auto pos = std::lower_bound(vocab.begin(), vocab.end(), v);
            onehot(i, Eigen::Index(pos - vocab.begin())) = 1.0;
        }
        td.attr_vocab.push_back(std::move(vocab));
        td.attrs.push_back(std::move(onehot));
    }
    return td;
}

AdversarialModel::AdversarialModel(const ModelConfig& cfg,
                                   std::vector<int> attr_classes)
    : cfg_(cfg), attr_classes_(std::move(attr_classes)) {
    cfg_.validate();
    if (attr_classes_.empty()) {
        throw ConfigError("model needs at least one attribute head");
    }
    head_weights_ = cfg_.head_weights;
    if (head_weights_.empty()) {
        head_weights_.assign(attr_classes_.size(), 1.0);
    }
    if (head_weights_.size() != attr_classes_.size()) {
        throw ConfigError("head_weights must match the number of attributes");
    }

    const int d = cfg_.input_dim;
    const int f = cfg_.latent_dim;
    const double el2 = cfg_.encoder_l2;
    const double rate = cfg_.dropout_rate;

    if (cfg_.use_bsf) bsf_.emplace(d);

    encoder_ = Stack(d, {
        LayerSpec::dense(d, 256, el2), LayerSpec::batchnorm(), LayerSpec::relu(),
        LayerSpec::dense(256, 256, el2), LayerSpec::batchnorm(), LayerSpec::relu(),
        LayerSpec::dropout(rate),
        LayerSpec::dense(256, 106, el2), LayerSpec::batchnorm(), LayerSpec::relu(),
        LayerSpec::dropout(rate),
        LayerSpec::gaussian_noise(cfg_.noise_std),
        LayerSpec::dense(106, 64, el2), LayerSpec::batchnorm(), LayerSpec::relu(),
        LayerSpec::dense(64, f, el2),
    });

    const int h1 = std::max(1, f / 2);
    const int h2 = std::max(1, f / 4);
    task_head_ = Stack(f, {
        LayerSpec::dense(f, h1, cfg_.task_l2), LayerSpec::relu(),
        LayerSpec::dense(h1, h2, cfg_.task_l2), LayerSpec::relu(),
        LayerSpec::dense(h2, 1),
    });

    std::vector<LayerSpec> trunk;
    int in = f;
    for (int t = 0; t < cfg_.bp_trunk_depth; ++t) {
        trunk.push_back(LayerSpec::dense(in, 256));
        trunk.push_back(LayerSpec::batchnorm());
        trunk.push_back(LayerSpec::relu());
        trunk.push_back(LayerSpec::dropout(rate));
        in = 256;
    }
    bp_trunk_ = Stack(f, std::move(trunk));

    bp_heads_.reserve(attr_classes_.size());
    for (int k : attr_classes_) {
        if (k < 1) throw ConfigError("attribute head needs at least one class");
        bp_heads_.emplace_back(256, std::vector<LayerSpec>{
            LayerSpec::dense(256, 128), LayerSpec::relu(),
            LayerSpec::dropout(rate),
            LayerSpec::dense(128, k),
        });
    }
}

void AdversarialModel::init_params() {
    RngState rng = RngState::derive(cfg_.seed, 0);
    encoder_.init_params(rng);
    task_head_.init_params(rng);
    bp_trunk_.init_params(rng);
    for (auto& head : bp_heads_) head.init_params(rng);
    if (bsf_) bsf_->weights().setOnes();
}

AdversarialModel::EncodeTapes AdversarialModel::encode_train(const Mat& x,
                                                             RngState& rng) {
    EncodeTapes tapes;
    if (bsf_) {
        auto [gated, tape] = bsf_->forward(x, Mode::Train, rng,
                                           cfg_.mask_threshold,
                                           cfg_.bsf_per_sample_mask);
        tapes.bsf = std::move(tape);
        tapes.enc = encoder_.forward(gated, Mode::Train, rng);
    } else {
        tapes.enc = encoder_.forward(x, Mode::Train, rng);
    }
    tapes.latent = tapes.enc.output;
    return tapes;
}

void AdversarialModel::encoder_backward(EncodeTapes& tapes, const Mat& g_latent) {
    Mat g_in = encoder_.backward(tapes.enc, g_latent, /*accumulate_grads=*/true);
    if (bsf_) bsf_->backward(*tapes.bsf, g_in, /*accumulate_grads=*/true);
}

AdversarialModel::BiasLoss AdversarialModel::bias_loss(const TrainBatch& batch,
                                                       RngState& rng) {
    if (batch.attrs.size() != bp_heads_.size()) {
        throw LabelError("batch attribute blocks do not match bias heads");
    }
    zero_grads();
    // The latent representation is an input here; no encoder tape is kept.
    EncodeTapes enc = encode_train(batch.x, rng);

    Tape trunk_tape = bp_trunk_.forward(enc.latent, Mode::Train, rng);
    BiasLoss out;
    out.per_head.resize(bp_heads_.size());
    Mat g_trunk_out = Mat::Zero(trunk_tape.output.rows(), trunk_tape.output.cols());
    for (std::size_t h = 0; h < bp_heads_.size(); ++h) {
        Tape head_tape = bp_heads_[h].forward(trunk_tape.output, Mode::Train, rng);
        auto ce = categorical_cross_entropy(head_tape.output, batch.attrs[h]);
        out.per_head[h] = ce.value;
        out.h += head_weights_[h] * ce.value;
        g_trunk_out += bp_heads_[h].backward(head_tape, head_weights_[h] * ce.grad);
    }
    bp_trunk_.backward(trunk_tape, g_trunk_out);
    return out;
}

AdversarialModel::DistillerLoss AdversarialModel::distiller_loss(
    const TrainBatch& batch, double alpha, RngState& rng) {
    if (batch.attrs.size() != bp_heads_.size()) {
        throw LabelError("batch attribute blocks do not match bias heads");
    }
    zero_grads();
    EncodeTapes enc = encode_train(batch.x, rng);

    Tape trunk_tape = bp_trunk_.forward(enc.latent, Mode::Train, rng);
    double h_total = 0.0;
    Mat g_trunk_out = Mat::Zero(trunk_tape.output.rows(), trunk_tape.output.cols());
    for (std::size_t h = 0; h < bp_heads_.size(); ++h) {
        Tape head_tape = bp_heads_[h].forward(trunk_tape.output, Mode::Train, rng);
        auto ce = categorical_cross_entropy(head_tape.output, batch.attrs[h]);
        h_total += head_weights_[h] * ce.value;
        // Upstream of -alpha * H; bias-predictor parameters stay frozen.
        const Mat up = (-alpha * head_weights_[h]) * ce.grad;
        g_trunk_out += bp_heads_[h].backward(head_tape, up,
                                             /*accumulate_grads=*/false);
    }
    Mat g_latent = bp_trunk_.backward(trunk_tape, g_trunk_out,
                                      /*accumulate_grads=*/false);
    encoder_backward(enc, g_latent);

    DistillerLoss out;
    out.h = h_total;
    out.omega = encoder_.l2_value();
    if (bsf_) out.omega += bsf_->penalty(cfg_.bsf_penalty, /*accumulate_grads=*/true);
    out.value = -alpha * h_total + out.omega;
    return out;
}

AdversarialModel::TaskLoss AdversarialModel::task_loss(const TrainBatch& batch,
                                                       RngState& rng) {
    zero_grads();
    EncodeTapes enc = encode_train(batch.x, rng);
    Tape task_tape = task_head_.forward(enc.latent, Mode::Train, rng);

    auto mse = mse_loss(task_tape.output.col(0), batch.age);
    Mat up(task_tape.output.rows(), 1);
    up.col(0) = mse.grad;
    Mat g_latent = task_head_.backward(task_tape, up);
    encoder_backward(enc, g_latent);

    TaskLoss out;
    out.mse = mse.value;
    out.value = mse.value + task_head_.l2_value() + encoder_.l2_value();
    return out;
}

Vec AdversarialModel::predict_age(const Mat& x) const {
    return task_head_.infer(encode(x)).col(0);
}

Mat AdversarialModel::encode(const Mat& x) const {
    if (bsf_) return encoder_.infer(bsf_->infer(x, cfg_.mask_threshold));
    return encoder_.infer(x);
}

std::vector<Mat> AdversarialModel::bias_probabilities(const Mat& latent) const {
    const Mat trunk_out = bp_trunk_.infer(latent);
    std::vector<Mat> out;
    out.reserve(bp_heads_.size());
    for (const auto& head : bp_heads_) {
        out.push_back(softmax_rows(head.infer(trunk_out)));
    }
    return out;
}

void AdversarialModel::zero_grads() {
    if (bsf_) bsf_->zero_grads();
    encoder_.zero_grads();
    task_head_.zero_grads();
    bp_trunk_.zero_grads();
    for (auto& head : bp_heads_) head.zero_grads();
}

void AdversarialModel::clip_bsf() {
    if (bsf_) bsf_->clip();
}

std::vector<ParamRef> AdversarialModel::encoder_params() {
    std::vector<ParamRef> out;
    if (bsf_) {
        auto b = bsf_->params("encoder.");
        out.insert(out.end(), b.begin(), b.end());
    }
    auto e = encoder_.params("encoder.");
    out.insert(out.end(), e.begin(), e.end());
    return out;
}

std::vector<ParamRef> AdversarialModel::task_params() {
    return task_head_.params("task.");
}

std::vector<ParamRef> AdversarialModel::bp_params() {
    std::vector<ParamRef> out = bp_trunk_.params("bp.trunk.");
    for (std::size_t h = 0; h < bp_heads_.size(); ++h) {
        auto p = bp_heads_[h].params("bp.head" + std::to_string(h) + ".");
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<ParamRef> AdversarialModel::bn_state() {
    std::vector<ParamRef> out = encoder_.state("encoder.");
    auto t = bp_trunk_.state("bp.trunk.");
    out.insert(out.end(), t.begin(), t.end());
    for (std::size_t h = 0; h < bp_heads_.size(); ++h) {
        auto s = bp_heads_[h].state("bp.head" + std::to_string(h) + ".");
        out.insert(out.end(), s.begin(), s.end());
    }
    auto k = task_head_.state("task.");
    out.insert(out.end(), k.begin(), k.end());
    return out;
}

std::uint64_t param_fingerprint(const std::vector<ParamRef>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : params) {
        h = fnv1a64(p.value, std::size_t(p.size) * sizeof(double), h);
    }
    return h;
}

}  // namespace agepred
