#include <doctest.h>

#include <cmath>

#include "agepred/errors.hpp"
#include "agepred/losses.hpp"
#include "agepred/model.hpp"
#include "agepred/trainer.hpp"

using namespace agepred;

namespace {

TrainingData gaussian_data(int n, int d, const std::vector<int>& classes,
                           std::uint64_t seed) {
    RngState rng(seed);
    TrainingData td;
    td.x.resize(n, d);
    for (Eigen::Index i = 0; i < td.x.size(); ++i) {
        td.x.data()[i] = rng.next_gaussian();
    }
    td.age.resize(n);
    for (int i = 0; i < n; ++i) {
        td.age[i] = rng.next_uniform(3.0, 30.0);
        td.sample_ids.push_back("s" + std::to_string(i));
    }
    int tag = 0;
    for (int k : classes) {
        Mat onehot = Mat::Zero(n, k);
        std::vector<std::string> vocab;
        for (int c = 0; c < k; ++c) vocab.push_back("v" + std::to_string(c));
        for (int i = 0; i < n; ++i) {
            onehot(i, Eigen::Index(rng.next_below(std::uint64_t(k)))) = 1.0;
        }
        td.attrs.push_back(std::move(onehot));
        td.attr_vocab.push_back(std::move(vocab));
        td.attr_names.push_back("attr" + std::to_string(tag++));
    }
    return td;
}

ModelConfig tiny_config(int d, std::uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.input_dim = d;
    cfg.latent_dim = 4;
    cfg.batch_size = 6;
    cfg.steps_per_epoch = 3;
    cfg.burn_in_epochs = 0;
    cfg.max_epochs = 2;
    cfg.seed = seed;
    cfg.dropout_rate = 0.3;
    cfg.noise_std = 0.05;
    return cfg;
}

double eval_bias_h(const AdversarialModel& model, const TrainBatch& batch) {
    // Deterministic eval-mode cross-entropy of the bias predictor.
    const Mat latent = model.encode(batch.x);
    const auto probs = model.bias_probabilities(latent);
    double h = 0.0;
    for (std::size_t head = 0; head < probs.size(); ++head) {
        double total = 0.0;
        for (Eigen::Index r = 0; r < probs[head].rows(); ++r) {
            for (Eigen::Index c = 0; c < probs[head].cols(); ++c) {
                if (batch.attrs[head](r, c) == 1.0) {
                    total -= std::log(std::max(probs[head](r, c), 1e-300));
                }
            }
        }
        h += total / double(probs[head].rows());
    }
    return h;
}

}  // namespace

TEST_CASE("train_step performs exactly 5/2/1 optimizer updates") {
    TrainingData td = gaussian_data(40, 10, {2, 3}, 5);
    ModelConfig cfg = tiny_config(10);
    TrainContext ctx(cfg, td.attr_class_counts(), td.attr_names);
    ctx.train_step(td);
    CHECK(ctx.bp_steps() == 5);
    CHECK(ctx.dist_steps() == 2);
    CHECK(ctx.task_steps() == 1);
    ctx.train_step(td);
    CHECK(ctx.bp_steps() == 10);
    CHECK(ctx.dist_steps() == 4);
    CHECK(ctx.task_steps() == 2);
}

TEST_CASE("phase isolation via parameter fingerprints") {
    TrainingData td = gaussian_data(40, 10, {2, 3}, 7);
    ModelConfig cfg = tiny_config(10);
    cfg.bp_updates = 5;
    cfg.dist_updates = 0;  // isolate the bias phase first
    TrainContext ctx(cfg, td.attr_class_counts(), td.attr_names);

    auto& model = ctx.model();
    const auto enc_before = param_fingerprint(model.encoder_params());
    const auto task_before = param_fingerprint(model.task_params());
    const auto bp_before = param_fingerprint(model.bp_params());

    // A full step moves bp (bias phase) and encoder+task (task phase); the
    // task phase must leave bp untouched.
    ctx.train_step(td);
    CHECK(param_fingerprint(model.bp_params()) != bp_before);
    CHECK(param_fingerprint(model.encoder_params()) != enc_before);
    CHECK(param_fingerprint(model.task_params()) != task_before);
}

TEST_CASE("alpha=0 with no regularizers leaves the distiller phase inert") {
    TrainingData td = gaussian_data(40, 10, {2}, 9);
    ModelConfig cfg = tiny_config(10);
    cfg.alpha = 0.0;
    cfg.task_l2 = 0.0;
    cfg.encoder_l2 = 0.0;
    cfg.lr_task = 0.0;  // freeze the task phase so only the distiller could move
    TrainContext ctx(cfg, td.attr_class_counts(), td.attr_names);

    // Distiller gradients are identically zero at alpha = 0 with no l2 and
    // no gate penalty, so its Adam moments stay zero and the encoder never
    // moves even though the phase runs and its step counter advances.
    const auto enc_before = param_fingerprint(ctx.model().encoder_params());
    for (int s = 0; s < 3; ++s) ctx.train_step(td);
    CHECK(ctx.dist_steps() == 6);
    CHECK(param_fingerprint(ctx.model().encoder_params()) == enc_before);
}

TEST_CASE("fixed seed reproduces the run bitwise") {
    TrainingData td = gaussian_data(50, 12, {2, 4}, 11);
    ModelConfig cfg = tiny_config(12, 77);
    auto run = [&] {
        TrainContext ctx(cfg, td.attr_class_counts(), td.attr_names);
        for (int i = 0; i < 4; ++i) ctx.train_step(td);
        return param_fingerprint(ctx.model().encoder_params()) ^
               param_fingerprint(ctx.model().task_params()) ^
               param_fingerprint(ctx.model().bp_params());
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoint round-trip continues bit-exactly") {
    TrainingData td = gaussian_data(60, 10, {2, 3}, 13);
    ModelConfig cfg = tiny_config(10, 21);
    cfg.max_epochs = 4;

    EvalSplit val;
    val.x = td.x.topRows(10);
    val.age = td.age.head(10);

    // Uninterrupted run.
    FitResult full = fit(td, val, cfg);
    REQUIRE(full.trace.epochs.size() == 4);

    // Split run: 2 epochs, serialize + parse the checkpoint, resume.
    ModelConfig cfg_half = cfg;
    cfg_half.max_epochs = 2;
    FitResult first = fit(td, val, cfg_half);
    const std::string blob = first.final_state.to_json();
    Checkpoint restored = Checkpoint::from_json(blob);
    restored.config.max_epochs = 4;  // continue to the same horizon
    FitResult second = fit(td, val, cfg, "", &restored);

    REQUIRE(second.trace.epochs.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
        const auto& a = full.trace.epochs[e + 2];
        const auto& b = second.trace.epochs[e];
        CHECK(a.epoch == b.epoch);
        CHECK(a.l_task == b.l_task);    // bitwise
        CHECK(a.l_bp == b.l_bp);        // bitwise
        CHECK(a.l_dist == b.l_dist);    // bitwise
        CHECK(a.val_mae == b.val_mae);  // bitwise
    }
    // Final parameters agree bitwise.
    TrainContext full_ctx = TrainContext::restore(full.final_state);
    TrainContext split_ctx = TrainContext::restore(second.final_state);
    CHECK(param_fingerprint(full_ctx.model().encoder_params()) ==
          param_fingerprint(split_ctx.model().encoder_params()));
    CHECK(param_fingerprint(full_ctx.model().task_params()) ==
          param_fingerprint(split_ctx.model().task_params()));
    CHECK(param_fingerprint(full_ctx.model().bp_params()) ==
          param_fingerprint(split_ctx.model().bp_params()));
}

TEST_CASE("one epoch means exactly steps_per_epoch train steps") {
    TrainingData td = gaussian_data(30, 8, {2}, 17);
    ModelConfig cfg = tiny_config(8);
    cfg.max_epochs = 1;
    cfg.steps_per_epoch = 50;
    EvalSplit val;
    val.x = td.x.topRows(5);
    val.age = td.age.head(5);
    FitResult res = fit(td, val, cfg);
    REQUIRE(res.trace.epochs.size() == 1);
    TrainContext restored = TrainContext::restore(res.final_state);
    CHECK(restored.task_steps() == 50);
    CHECK(restored.bp_steps() == 250);
    CHECK(restored.dist_steps() == 100);
}

TEST_CASE("burn-in excludes early epochs from selection") {
    TrainingData td = gaussian_data(40, 8, {2}, 19);
    ModelConfig cfg = tiny_config(8);
    cfg.max_epochs = 6;
    cfg.burn_in_epochs = 4;
    EvalSplit val;
    val.x = td.x.topRows(8);
    val.age = td.age.head(8);
    FitResult res = fit(td, val, cfg);
    CHECK(res.best_epoch >= 4);
    // The fallback applies when no epoch is eligible.
    cfg.burn_in_epochs = 50;
    FitResult fallback = fit(td, val, cfg);
    CHECK(fallback.best_epoch == 5);  // last epoch, 0-based
}

TEST_CASE("fixed-length run emits periodic checkpoints and honors best_epoch") {
    TrainingData td = gaussian_data(40, 8, {2}, 23);
    ModelConfig cfg = tiny_config(8);
    cfg.fixed_epochs = 20;
    cfg.checkpoint_every = 10;
    cfg.burn_in_epochs = 0;
    cfg.best_epoch = 7;
    EvalSplit val;
    val.x = td.x.topRows(8);
    val.age = td.age.head(8);
    std::vector<int> seen;
    FitResult res = fit(td, val, cfg, "", nullptr,
                        [&](const Checkpoint& c) { seen.push_back(c.epoch); });
    CHECK(seen == std::vector<int>{9, 19});
    CHECK(res.best_epoch == 7);
    CHECK(res.best.epoch == 7);
}

TEST_CASE("non-finite loss aborts with the last good state") {
    TrainingData td = gaussian_data(30, 8, {2}, 29);
    // NaN targets make the task gradients non-finite on the first step.
    td.age.setConstant(std::numeric_limits<double>::quiet_NaN());
    ModelConfig cfg = tiny_config(8);
    EvalSplit val;
    FitResult res = fit(td, val, cfg);
    CHECK(res.aborted);
}

TEST_CASE("distiller ascent direction on the bias objective") {
    // Over many seeded trials, one distiller phase (bias predictor frozen)
    // does not decrease the bias cross-entropy on the same batch on average.
    int trials = 0;
    double mean_delta = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        TrainingData td = gaussian_data(24, 8, {2, 2}, seed * 31);
        ModelConfig cfg = tiny_config(8, seed);
        cfg.dropout_rate = 0.0;
        cfg.noise_std = 0.0;
        cfg.alpha = 1.0;
        TrainContext ctx(cfg, td.attr_class_counts(), td.attr_names);
        auto& model = ctx.model();

        TrainBatch batch = td.sample_batch(12, ctx.rng());
        const double h_before = eval_bias_h(model, batch);
        // Two distiller updates, mirroring the phase inside train_step.
        AdamOptimizer opt(cfg.lr_dist);
        auto enc = model.encoder_params();
        opt.attach(enc);
        for (int u = 0; u < 2; ++u) {
            model.distiller_loss(batch, cfg.alpha, ctx.rng());
            opt.step(enc);
        }
        const double h_after = eval_bias_h(model, batch);
        mean_delta += h_after - h_before;
        ++trials;
    }
    mean_delta /= double(trials);
    CHECK(mean_delta >= 0.0);
}

TEST_CASE("trace serialization is deterministic") {
    TrainTrace trace;
    trace.attr_names = {"sex", "tissue"};
    EpochRecord rec;
    rec.epoch = 0;
    rec.l_task = 1.5;
    rec.l_bp = 0.25;
    rec.l_dist = -0.125;
    rec.val_mae = 2.75;
    rec.attr_r2_mean = 0.5;
    rec.attr_r2 = {0.25, 0.75};
    trace.epochs.push_back(rec);
    const std::string a = trace.to_tsv();
    const std::string b = trace.to_tsv();
    CHECK(a == b);
    CHECK(a.find("epoch\tl_task\tl_bp\tl_dist\tval_mae\tattr_r2_mean\t"
                 "attr_r2_sex\tattr_r2_tissue\tis_best") == 0);
}

TEST_CASE("batch sampling validates the batch size") {
    TrainingData td = gaussian_data(10, 4, {2}, 37);
    RngState rng(1);
    CHECK_THROWS_AS(td.sample_batch(1, rng), BatchError);
    const TrainBatch b = td.sample_batch(4, rng);
    CHECK(b.x.rows() == 4);
    CHECK(b.attrs[0].rows() == 4);
}
