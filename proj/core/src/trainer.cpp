#include "agepred/trainer.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "agepred/errors.hpp"
#include "agepred/stats.hpp"
#include "agepred/text.hpp"

namespace agepred {

namespace {

using json = nlohmann::ordered_json;

std::map<std::string, std::vector<double>> params_from_json(const json& j) {
    std::map<std::string, std::vector<double>> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        out[it.key()] = it.value().get<std::vector<double>>();
    }
    return out;
}

void load_refs(const std::map<std::string, std::vector<double>>& values,
               std::vector<ParamRef>& refs, const char* what) {
    for (auto& r : refs) {
        auto it = values.find(r.name);
        if (it == values.end()) {
            throw ConfigError(std::string("checkpoint missing ") + what + ": " + r.name);
        }
        if (Eigen::Index(it->second.size()) != r.size) {
            throw ConfigError("checkpoint size mismatch for " + r.name);
        }
        std::copy(it->second.begin(), it->second.end(), r.value);
    }
}

std::map<std::string, std::vector<double>> capture_refs(
    const std::vector<ParamRef>& refs) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& r : refs) {
        out[r.name] = std::vector<double>(r.value, r.value + r.size);
    }
    return out;
}

Checkpoint::OptState capture_opt(const AdamOptimizer& opt,
                                 const std::vector<ParamRef>& refs) {
    Checkpoint::OptState s;
    s.step_count = opt.step_count();
    const auto& m = opt.first_moments();
    const auto& v = opt.second_moments();
    for (std::size_t i = 0; i < refs.size(); ++i) {
        s.m[refs[i].name] = std::vector<double>(m[i].data(), m[i].data() + m[i].size());
        s.v[refs[i].name] = std::vector<double>(v[i].data(), v[i].data() + v[i].size());
    }
    return s;
}

void restore_opt(AdamOptimizer& opt, const Checkpoint::OptState& s,
                 const std::vector<ParamRef>& refs) {
    std::vector<Eigen::VectorXd> m, v;
    m.reserve(refs.size());
    v.reserve(refs.size());
    for (const auto& r : refs) {
        auto mi = s.m.find(r.name);
        auto vi = s.v.find(r.name);
        if (mi == s.m.end() || vi == s.v.end()) {
            throw ConfigError("checkpoint missing optimizer state for " + r.name);
        }
        m.push_back(Eigen::Map<const Eigen::VectorXd>(mi->second.data(),
                                                      Eigen::Index(mi->second.size())));
        v.push_back(Eigen::Map<const Eigen::VectorXd>(vi->second.data(),
                                                      Eigen::Index(vi->second.size())));
    }
    opt.restore(s.step_count, std::move(m), std::move(v));
}

json opt_to_json(const Checkpoint::OptState& s) {
    json j;
    j["step_count"] = s.step_count;
    j["m"] = s.m;
    j["v"] = s.v;
    return j;
}

Checkpoint::OptState opt_from_json(const json& j) {
    Checkpoint::OptState s;
    s.step_count = j.at("step_count").get<long>();
    s.m = j.at("m").get<std::map<std::string, std::vector<double>>>();
    s.v = j.at("v").get<std::map<std::string, std::vector<double>>>();
    return s;
}

}  // namespace

std::string TrainTrace::to_tsv() const {
    std::ostringstream out;
    out << "epoch\tl_task\tl_bp\tl_dist\tval_mae\tattr_r2_mean";
    for (const auto& name : attr_names) out << "\tattr_r2_" << name;
    out << "\tis_best\n";
    for (const auto& e : epochs) {
        out << e.epoch << '\t' << format_double(e.l_task) << '\t'
            << format_double(e.l_bp) << '\t' << format_double(e.l_dist) << '\t'
            << format_double(e.val_mae) << '\t' << format_double(e.attr_r2_mean);
        for (double r : e.attr_r2) out << '\t' << format_double(r);
        out << '\t' << (e.is_best ? 1 : 0) << '\n';
    }
    return out.str();
}

std::string Checkpoint::to_json() const {
    json j;
    j["format"] = "agepredict-checkpoint-v1";
    j["epoch"] = epoch;
    j["config"] = json::parse(config.to_json());
    j["attr_classes"] = attr_classes;
    j["attr_names"] = attr_names;
    j["params"] = params;
    j["state"] = state;
    j["opt_bp"] = opt_to_json(opt_bp);
    j["opt_dist"] = opt_to_json(opt_dist);
    j["opt_task"] = opt_to_json(opt_task);
    j["rng_seed"] = train_rng.seed;
    j["rng_counter"] = train_rng.counter;
    j["preprocess_ref"] = preprocess_ref;
    j["best_epoch"] = best_epoch;
    j["best_val_mae"] = std::isfinite(best_val_mae) ? json(best_val_mae) : json();
    return j.dump();
}

Checkpoint Checkpoint::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != "agepredict-checkpoint-v1") {
        throw ConfigError("unknown checkpoint format");
    }
    Checkpoint c;
    c.epoch = j.at("epoch").get<int>();
    c.config = ModelConfig::from_json(j.at("config").dump());
    c.attr_classes = j.at("attr_classes").get<std::vector<int>>();
    c.attr_names = j.at("attr_names").get<std::vector<std::string>>();
    c.params = params_from_json(j.at("params"));
    c.state = params_from_json(j.at("state"));
    c.opt_bp = opt_from_json(j.at("opt_bp"));
    c.opt_dist = opt_from_json(j.at("opt_dist"));
    c.opt_task = opt_from_json(j.at("opt_task"));
    c.train_rng.seed = j.at("rng_seed").get<std::uint64_t>();
    c.train_rng.counter = j.at("rng_counter").get<std::uint64_t>();
    c.preprocess_ref = j.value("preprocess_ref", "");
    c.best_epoch = j.value("best_epoch", -1);
    if (j.contains("best_val_mae") && !j.at("best_val_mae").is_null()) {
        c.best_val_mae = j.at("best_val_mae").get<double>();
    }
    return c;
}

TrainContext::TrainContext(const ModelConfig& cfg, std::vector<int> attr_classes,
                           std::vector<std::string> attr_names)
    : model_(cfg, std::move(attr_classes)),
      attr_names_(std::move(attr_names)),
      opt_bp_(cfg.lr_bp),
      opt_dist_(cfg.lr_dist),
      opt_task_(cfg.lr_task),
      rng_(RngState::derive(cfg.seed, 1)) {
    model_.init_params();
    enc_params_ = model_.encoder_params();
    bp_params_ = model_.bp_params();
    task_all_params_ = model_.encoder_params();
    auto t = model_.task_params();
    task_all_params_.insert(task_all_params_.end(), t.begin(), t.end());
    opt_bp_.attach(bp_params_);
    opt_dist_.attach(enc_params_);
    opt_task_.attach(task_all_params_);
}

TrainContext TrainContext::restore(const Checkpoint& ckpt) {
    TrainContext ctx(ckpt.config, ckpt.attr_classes, ckpt.attr_names);
    ctx.load_weights(ckpt);
    restore_opt(ctx.opt_bp_, ckpt.opt_bp, ctx.bp_params_);
    restore_opt(ctx.opt_dist_, ckpt.opt_dist, ctx.enc_params_);
    restore_opt(ctx.opt_task_, ckpt.opt_task, ctx.task_all_params_);
    ctx.rng_ = ckpt.train_rng;
    return ctx;
}

void TrainContext::load_weights(const Checkpoint& ckpt) {
    auto all_params = model_.encoder_params();
    auto t = model_.task_params();
    auto b = model_.bp_params();
    all_params.insert(all_params.end(), t.begin(), t.end());
    all_params.insert(all_params.end(), b.begin(), b.end());
    load_refs(ckpt.params, all_params, "parameter");
    auto st = model_.bn_state();
    load_refs(ckpt.state, st, "state");
}

Checkpoint TrainContext::snapshot(int epoch, const std::string& preprocess_ref) const {
    auto& self = const_cast<TrainContext&>(*this);
    Checkpoint c;
    c.epoch = epoch;
    c.config = model_.config();
    c.attr_classes = model_.attr_classes();
    c.attr_names = attr_names_;
    auto all_params = self.model_.encoder_params();
    auto t = self.model_.task_params();
    auto b = self.model_.bp_params();
    all_params.insert(all_params.end(), t.begin(), t.end());
    all_params.insert(all_params.end(), b.begin(), b.end());
    c.params = capture_refs(all_params);
    c.state = capture_refs(self.model_.bn_state());
    c.opt_bp = capture_opt(opt_bp_, self.bp_params_);
    c.opt_dist = capture_opt(opt_dist_, self.enc_params_);
    c.opt_task = capture_opt(opt_task_, self.task_all_params_);
    c.train_rng = rng_;
    c.preprocess_ref = preprocess_ref;
    return c;
}

TrainBatch TrainContext::next_batch(const TrainingData& data,
                                    TrainBatch& phase_batch, bool first_in_phase) {
    const auto& cfg = model_.config();
    if (cfg.fresh_batch_per_update || first_in_phase) {
        phase_batch = data.sample_batch(cfg.batch_size, rng_);
    }
    return phase_batch;
}

StepRecord TrainContext::train_step(const TrainingData& data) {
    const auto& cfg = model_.config();
    if (cfg.batch_size < 2) throw BatchError("batch must contain at least 2 samples");

    StepRecord rec;
    TrainBatch batch;

    for (int u = 0; u < cfg.bp_updates; ++u) {
        auto b = next_batch(data, batch, u == 0);
        rec.l_bp += model_.bias_loss(b, rng_).h;
        opt_bp_.step(bp_params_);
    }
    if (cfg.bp_updates > 0) rec.l_bp /= double(cfg.bp_updates);

    for (int u = 0; u < cfg.dist_updates; ++u) {
        auto b = next_batch(data, batch, u == 0);
        rec.l_dist += model_.distiller_loss(b, cfg.alpha, rng_).value;
        opt_dist_.step(enc_params_);
        model_.clip_bsf();
    }
    if (cfg.dist_updates > 0) rec.l_dist /= double(cfg.dist_updates);

    auto b = next_batch(data, batch, true);
    rec.l_task = model_.task_loss(b, rng_).value;
    opt_task_.step(task_all_params_);
    model_.clip_bsf();

    return rec;
}

namespace {

double validation_mae(const AdversarialModel& model, const EvalSplit& val) {
    if (val.x.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
    const Vec pred = model.predict_age(val.x);
    std::vector<double> yt(val.age.data(), val.age.data() + val.age.size());
    std::vector<double> yp(pred.data(), pred.data() + pred.size());
    return regression_metrics(yt, yp).mae;
}

void train_attr_r2(const AdversarialModel& model, const TrainingData& train,
                   EpochRecord& rec) {
    const Mat latent = model.encode(train.x);
    const auto probs = model.bias_probabilities(latent);
    rec.attr_r2.assign(probs.size(), std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int counted = 0;
    for (std::size_t h = 0; h < probs.size(); ++h) {
        if (train.attrs[h].cols() < 2) continue;  // single-level attribute
        rec.attr_r2[h] = attribute_r2(probs[h], train.attrs[h]).mean_r2;
        sum += rec.attr_r2[h];
        ++counted;
    }
    rec.attr_r2_mean = counted > 0 ? sum / double(counted)
                                   : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

FitResult fit(const TrainingData& train, const EvalSplit& val,
              const ModelConfig& requested_cfg,
              const std::string& preprocess_ref, const Checkpoint* resume,
              const CheckpointSink& periodic) {
    if (train.size() == 0) throw EmptyBatchError("fit: empty training split");

    TrainContext ctx = resume ? TrainContext::restore(*resume)
                              : TrainContext(requested_cfg, train.attr_class_counts(),
                                             train.attr_names);
    // A resumed run replays the checkpoint's own configuration.
    const ModelConfig cfg = resume ? resume->config : requested_cfg;

    FitResult result;
    result.trace.attr_names = resume ? resume->attr_names : train.attr_names;

    int start_epoch = 0;
    if (resume) {
        start_epoch = resume->epoch + 1;
        result.best_epoch = resume->best_epoch;
        result.best_val_mae = resume->best_val_mae;
        result.best_from_this_run = false;
    }

    const bool fixed_run = cfg.fixed_epochs > 0;
    const int total_epochs = fixed_run ? cfg.fixed_epochs : cfg.max_epochs;
    if (cfg.best_epoch >= total_epochs) {
        throw ConfigError("best_epoch beyond the end of the run");
    }

    double best_mae = resume ? resume->best_val_mae
                             : std::numeric_limits<double>::infinity();
    int best_epoch = resume ? resume->best_epoch : -1;
    Checkpoint last_good;
    bool have_best_params = false;
    bool have_forced_best = false;

    for (int epoch = start_epoch; epoch < total_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        bool blew_up = false;
        for (int s = 0; s < cfg.steps_per_epoch; ++s) {
            try {
                StepRecord sr = ctx.train_step(train);
                rec.l_bp += sr.l_bp;
                rec.l_dist += sr.l_dist;
                rec.l_task += sr.l_task;
            } catch (const NumericsError&) {
                blew_up = true;
                break;
            }
        }
        if (blew_up) {
            result.aborted = true;
            break;
        }
        rec.l_bp /= double(cfg.steps_per_epoch);
        rec.l_dist /= double(cfg.steps_per_epoch);
        rec.l_task /= double(cfg.steps_per_epoch);

        rec.val_mae = validation_mae(ctx.model(), val);
        train_attr_r2(ctx.model(), train, rec);

        // Burn-in: epochs below cfg.burn_in_epochs (0-based) are never
        // selected even if their validation error is lower.
        const bool eligible = epoch >= cfg.burn_in_epochs;
        if (eligible && std::isfinite(rec.val_mae) && rec.val_mae < best_mae) {
            best_mae = rec.val_mae;
            best_epoch = epoch;
            rec.is_best = true;
            if (!(fixed_run && cfg.best_epoch >= 0)) {
                result.best = ctx.snapshot(epoch, preprocess_ref);
                result.best.best_epoch = best_epoch;
                result.best.best_val_mae = best_mae;
                have_best_params = true;
                result.best_from_this_run = true;
            }
        }
        if (fixed_run && cfg.best_epoch == epoch) {
            result.best = ctx.snapshot(epoch, preprocess_ref);
            result.best.best_epoch = epoch;
            result.best.best_val_mae = rec.val_mae;
            have_forced_best = true;
        }
        if (fixed_run && periodic && (epoch + 1) % cfg.checkpoint_every == 0) {
            Checkpoint c = ctx.snapshot(epoch, preprocess_ref);
            c.best_epoch = best_epoch;
            c.best_val_mae = best_mae;
            periodic(c);
        }

        last_good = ctx.snapshot(epoch, preprocess_ref);
        last_good.best_epoch = best_epoch;
        last_good.best_val_mae = best_mae;
        result.trace.epochs.push_back(std::move(rec));
    }

    result.final_state = last_good;
    if (fixed_run && cfg.best_epoch >= 0) {
        if (!have_forced_best) {
            throw ConfigError("configured best_epoch was not reached");
        }
        result.best_epoch = cfg.best_epoch;
        result.best_val_mae = result.best.best_val_mae;
        return result;
    }

    if (best_epoch >= 0) {
        result.best_epoch = best_epoch;
        result.best_val_mae = best_mae;
        if (!have_best_params) {
            // The selected epoch predates this run (resume) or parameters were
            // not captured; fall back to the final state.
            result.best = result.final_state;
            result.best_from_this_run = false;
        }
    } else {
        // No eligible epoch (e.g. the run is shorter than the burn-in):
        // fall back to the final epoch.
        result.best = result.final_state;
        result.best_epoch = result.final_state.epoch;
        result.best_val_mae = result.trace.epochs.empty()
                                  ? std::numeric_limits<double>::quiet_NaN()
                                  : result.trace.epochs.back().val_mae;
    }
    return result;
}

}  // namespace agepred
