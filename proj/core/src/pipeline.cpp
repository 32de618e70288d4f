#include "agepred/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "agepred/errors.hpp"
#include "agepred/hash.hpp"
#include "agepred/text.hpp"
#include "agepred/version.hpp"

namespace fs = std::filesystem;

namespace agepred {

namespace {

using json = nlohmann::ordered_json;

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir);
}

std::string join_path(const std::string& a, const std::string& b) {
    return (fs::path(a) / b).string();
}

std::vector<std::vector<std::string>> read_table(const std::string& path,
                                                 char& delim_out) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    char delim = '\t';
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {
            delim = sniff_delimiter(line);
            first = false;
        }
        rows.push_back(split(line, delim));
    }
    if (rows.empty()) throw ParseError(path + ": empty table");
    delim_out = delim;
    return rows;
}

std::size_t require_column(const std::vector<std::string>& header,
                           const std::string& name, const std::string& path) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw ParseError(path + ": missing required column '" + name + "'");
    }
    return std::size_t(it - header.begin());
}

double require_real(const std::string& tok, const std::string& what) {
    auto v = parse_real(tok);
    if (!v) throw ValueError("invalid number for " + what + ": '" + tok + "'");
    return *v;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.id = fs::path(dir).filename().string();
    if (ds.id.empty()) ds.id = fs::path(dir).parent_path().filename().string();
    const std::string counts_path = join_path(dir, "counts.tsv");
    const std::string meta_path = join_path(dir, "metadata.tsv");
    ds.counts = parse_counts(counts_path);
    ds.meta = parse_metadata(meta_path);
    const std::string lengths_path = join_path(dir, "gene_lengths.tsv");
    if (fs::exists(lengths_path)) {
        ds.counts.gene_lengths = parse_gene_lengths(lengths_path);
    }
    for (const auto& s : ds.counts.sample_ids) {
        if (!ds.meta.contains(s)) {
            throw MetadataMismatchError("dataset " + ds.id +
                                        ": sample missing from metadata: " + s);
        }
    }
    return ds;
}

Dataset merge_datasets(const std::vector<const Dataset*>& parts,
                       const std::string& merged_id) {
    if (parts.empty()) throw InvariantError("merge_datasets: no parts");

    // Shared genes only; a gene absent from one training set cannot be used.
    std::set<std::string> shared(parts[0]->counts.gene_ids.begin(),
                                 parts[0]->counts.gene_ids.end());
    for (std::size_t p = 1; p < parts.size(); ++p) {
        std::set<std::string> here(parts[p]->counts.gene_ids.begin(),
                                   parts[p]->counts.gene_ids.end());
        std::set<std::string> kept;
        std::set_intersection(shared.begin(), shared.end(), here.begin(),
                              here.end(), std::inserter(kept, kept.begin()));
        shared = std::move(kept);
    }
    if (shared.empty()) {
        throw EmptyGeneSetError("training datasets share no genes");
    }

    Dataset merged;
    merged.id = merged_id;
    merged.counts.gene_ids.assign(shared.begin(), shared.end());

    std::size_t total_samples = 0;
    for (const auto* p : parts) total_samples += p->counts.sample_ids.size();
    merged.counts.counts.resize(Eigen::Index(merged.counts.gene_ids.size()),
                                Eigen::Index(total_samples));

    std::unordered_set<std::string> seen;
    Eigen::Index col = 0;
    for (const auto* p : parts) {
        std::unordered_map<std::string, Eigen::Index> row_of;
        for (Eigen::Index i = 0; i < Eigen::Index(p->counts.gene_ids.size()); ++i) {
            row_of.emplace(p->counts.gene_ids[std::size_t(i)], i);
        }
        for (Eigen::Index j = 0; j < Eigen::Index(p->counts.sample_ids.size()); ++j) {
            const auto& sid = p->counts.sample_ids[std::size_t(j)];
            if (!seen.insert(sid).second) {
                throw DataLeakError("sample id appears in multiple datasets: " + sid);
            }
            merged.counts.sample_ids.push_back(sid);
            for (Eigen::Index g = 0; g < Eigen::Index(merged.counts.gene_ids.size());
                 ++g) {
                merged.counts.counts(g, col) =
                    p->counts.counts(row_of[merged.counts.gene_ids[std::size_t(g)]], j);
            }
            ++col;
            const auto& meta = p->meta.require(sid);
            merged.meta.by_sample.emplace(sid, merged.meta.rows.size());
            merged.meta.rows.push_back(meta);
        }
        for (const auto& [g, len] : p->counts.gene_lengths) {
            if (shared.count(g)) merged.counts.gene_lengths.emplace(g, len);
        }
    }
    merged.counts.validate();
    return merged;
}

std::string RunManifest::manifest_hash() const {
    json j;
    j["tool_version"] = tool_version;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["input_hashes"] = input_hashes;
    j["seed"] = seed;
    return sha256_hex(j.dump());
}

std::string RunManifest::to_json() const {
    json j;
    j["tool_version"] = tool_version;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["input_hashes"] = input_hashes;
    j["seed"] = seed;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["outputs"] = outputs;
    j["manifest_hash"] = manifest_hash();
    return j.dump(2);
}

// ---- preprocess -------------------------------------------------------------

PreprocessResult run_preprocess(const PreprocessCommand& cmd) {
    ensure_dir(cmd.out_dir);
    RunManifest manifest;
    manifest.tool_version = AGEPREDICT_VERSION;
    manifest.command = "preprocess";
    manifest.started_at = iso_now();
    manifest.input_hashes[cmd.counts_path] = sha256_file_hex(cmd.counts_path);
    manifest.input_hashes[cmd.metadata_path] = sha256_file_hex(cmd.metadata_path);

    CountMatrix counts = parse_counts(cmd.counts_path);
    MetadataTable meta = parse_metadata(cmd.metadata_path);
    if (!cmd.lengths_path.empty()) {
        counts.gene_lengths = parse_gene_lengths(cmd.lengths_path);
        manifest.input_hashes[cmd.lengths_path] = sha256_file_hex(cmd.lengths_path);
    }

    std::vector<GeneRemoval> allowlist_removals;
    if (!cmd.allowlist_path.empty()) {
        auto allow = parse_allowlist(cmd.allowlist_path);
        manifest.input_hashes[cmd.allowlist_path] = sha256_file_hex(cmd.allowlist_path);
        counts = restrict_to_allowlist(counts, allow, allowlist_removals);
        if (counts.gene_ids.empty()) {
            throw EmptyGeneSetError("allowlist removed every gene");
        }
    }

    GeneSet gene_set = filter_genes(counts, meta, cmd.filter);
    gene_set.removed.insert(gene_set.removed.begin(), allowlist_removals.begin(),
                            allowlist_removals.end());

    ExpressionMatrix expr = cpm_log_transform(counts, gene_set);
    PreprocessResult result;
    result.artifact = fit_standardizer(expr);
    result.artifact.gene_set.removed = gene_set.removed;
    result.artifact.gene_set.length_filter_applied = gene_set.length_filter_applied;
    result.standardized = apply_standardizer(expr, result.artifact);

    const std::string art_path = join_path(cmd.out_dir, "artifact.json");
    write_text_file(art_path, result.artifact.to_json());
    const std::string expr_path = join_path(cmd.out_dir, "expression.tsv");
    write_text_file(expr_path, expression_to_tsv(result.standardized));
    manifest.outputs = {art_path, expr_path};

    json cfg;
    cfg["filter"] = {{"min_len_bp", cmd.filter.min_len_bp},
                     {"expr_count", cmd.filter.expr_count},
                     {"tissue_frac", cmd.filter.tissue_frac}};
    manifest.config_hash = sha256_hex(cfg.dump());
    manifest.finished_at = iso_now();
    write_text_file(join_path(cmd.out_dir, "manifest.json"), manifest.to_json());
    return result;
}

// ---- train ------------------------------------------------------------------

namespace {

struct FoldPlan {
    std::string held_out_id;
    std::vector<const Dataset*> train_parts;
    std::vector<const Dataset*> eval_parts;
};

struct EvalSet {
    std::string dataset_id;
    ExpressionMatrix x;  // standardized, aligned to the artifact
    Vec age;
    std::vector<std::string> tissues;
};

EvalSet prepare_eval(const Dataset& ds, const PreprocessArtifact& artifact) {
    // Only genes the holdout actually has can be transformed; the
    // standardizer fills the rest with zeros.
    std::unordered_set<std::string> have(ds.counts.gene_ids.begin(),
                                         ds.counts.gene_ids.end());
    GeneSet available;
    for (const auto& g : artifact.gene_set.gene_ids) {
        if (have.count(g)) available.gene_ids.push_back(g);
    }
    ExpressionMatrix expr;
    if (available.gene_ids.empty()) {
        expr.sample_ids = ds.counts.sample_ids;
        expr.values = Mat::Zero(Eigen::Index(ds.counts.sample_ids.size()), 0);
    } else {
        expr = cpm_log_transform(ds.counts, available);
    }
    EvalSet out;
    out.dataset_id = ds.id;
    out.x = apply_standardizer(expr, artifact);
    out.age.resize(Eigen::Index(ds.counts.sample_ids.size()));
    for (Eigen::Index i = 0; i < out.age.size(); ++i) {
        const auto& m = ds.meta.require(ds.counts.sample_ids[std::size_t(i)]);
        out.age[i] = m.age_months;
        out.tissues.push_back(m.tissue);
    }
    return out;
}

std::string latent_to_tsv(const std::vector<std::string>& sample_ids,
                          const Mat& latent) {
    std::ostringstream out;
    out << "sample_id";
    for (Eigen::Index j = 0; j < latent.cols(); ++j) out << "\tf" << j;
    out << '\n';
    for (Eigen::Index i = 0; i < latent.rows(); ++i) {
        out << sample_ids[std::size_t(i)];
        for (Eigen::Index j = 0; j < latent.cols(); ++j) {
            out << '\t' << format_double(latent(i, j));
        }
        out << '\n';
    }
    return out.str();
}

FoldOutcome run_fold(const FoldPlan& plan, const TrainCommand& cmd,
                     const std::string& fold_dir) {
    ensure_dir(fold_dir);

    Dataset merged = merge_datasets(plan.train_parts, "train");

    std::vector<GeneRemoval> allowlist_removals;
    if (!cmd.allowlist_path.empty()) {
        auto allow = parse_allowlist(cmd.allowlist_path);
        merged.counts =
            restrict_to_allowlist(merged.counts, allow, allowlist_removals);
        if (merged.counts.gene_ids.empty()) {
            throw EmptyGeneSetError("allowlist removed every gene");
        }
    }

    // Gene selection and standardization use training data only.
    GeneSet gene_set = filter_genes(merged.counts, merged.meta, cmd.filter);
    gene_set.removed.insert(gene_set.removed.begin(), allowlist_removals.begin(),
                            allowlist_removals.end());
    ExpressionMatrix train_expr = cpm_log_transform(merged.counts, gene_set);
    PreprocessArtifact artifact = fit_standardizer(train_expr);
    artifact.gene_set.removed = gene_set.removed;
    artifact.gene_set.length_filter_applied = gene_set.length_filter_applied;
    const std::string artifact_path = join_path(fold_dir, "artifact.json");
    write_text_file(artifact_path, artifact.to_json());

    ExpressionMatrix train_std = apply_standardizer(train_expr, artifact);
    TrainingData train_data = build_training_data(train_std, merged.meta);

    std::vector<EvalSet> evals;
    for (const auto* ds : plan.eval_parts) {
        evals.push_back(prepare_eval(*ds, artifact));
    }
    EvalSplit val;
    {
        Eigen::Index total = 0;
        for (const auto& e : evals) total += e.x.values.rows();
        val.x.resize(total, Eigen::Index(artifact.gene_set.gene_ids.size()));
        val.age.resize(total);
        Eigen::Index at = 0;
        for (const auto& e : evals) {
            val.x.middleRows(at, e.x.values.rows()) = e.x.values;
            val.age.segment(at, e.age.size()) = e.age;
            at += e.x.values.rows();
        }
    }

    ModelConfig mc = cmd.model;
    mc.input_dim = int(artifact.gene_set.gene_ids.size());
    // Independent stream per fold; reruns stay reproducible.
    mc.seed = cmd.model.seed ^ fnv1a64(plan.held_out_id.data(),
                                       plan.held_out_id.size());
    if (cmd.mode == TrainMode::Intervention && mc.fixed_epochs == 0) {
        mc.fixed_epochs = 500;
    }

    CheckpointSink periodic = nullptr;
    if (cmd.mode == TrainMode::Intervention) {
        periodic = [&fold_dir](const Checkpoint& c) {
            std::string name = "checkpoint_epoch_" + std::to_string(c.epoch) + ".json";
            write_text_file(join_path(fold_dir, name), c.to_json());
        };
    }

    FitResult fitres = fit(train_data, val, mc, artifact.content_hash(), nullptr,
                           periodic);

    fitres.trace.attr_names = train_data.attr_names;
    write_text_file(join_path(fold_dir, "trace.tsv"), fitres.trace.to_tsv());
    write_text_file(join_path(fold_dir, "checkpoint_best.json"),
                    fitres.best.to_json());

    // Predictions and latents come from the selected checkpoint.
    TrainContext best_ctx = TrainContext::restore(fitres.best);
    const AdversarialModel& best = best_ctx.model();

    std::ostringstream pred;
    pred << "dataset\tfold\talpha\tsample_id\tage_months\tpredicted_age\ttissue\n";
    std::vector<double> all_age, all_pred;
    for (const auto& e : evals) {
        if (e.x.values.rows() == 0) continue;
        const Vec yhat = best.predict_age(e.x.values);
        for (Eigen::Index i = 0; i < yhat.size(); ++i) {
            pred << e.dataset_id << '\t' << plan.held_out_id << '\t'
                 << format_double(mc.alpha) << '\t' << e.x.sample_ids[std::size_t(i)]
                 << '\t' << format_double(e.age[i]) << '\t'
                 << format_double(yhat[i]) << '\t' << e.tissues[std::size_t(i)]
                 << '\n';
            all_age.push_back(e.age[i]);
            all_pred.push_back(yhat[i]);
        }
    }
    write_text_file(join_path(fold_dir, "predictions.tsv"), pred.str());

    write_text_file(join_path(fold_dir, "latent_train.tsv"),
                    latent_to_tsv(train_data.sample_ids, best.encode(train_data.x)));
    {
        std::vector<std::string> ids;
        Mat lat(val.x.rows(), mc.latent_dim);
        Eigen::Index at = 0;
        for (const auto& e : evals) {
            if (e.x.values.rows() == 0) continue;
            lat.middleRows(at, e.x.values.rows()) = best.encode(e.x.values);
            ids.insert(ids.end(), e.x.sample_ids.begin(), e.x.sample_ids.end());
            at += e.x.values.rows();
        }
        write_text_file(join_path(fold_dir, "latent_val.tsv"),
                        latent_to_tsv(ids, lat.topRows(at)));
    }

    if (mc.use_bsf && best.bsf()) {
        const GeneRanking ranking =
            best.bsf()->export_ranking(artifact.gene_set.gene_ids, mc.mask_threshold);
        write_text_file(join_path(fold_dir, "gene_ranking.tsv"),
                        ranking_to_tsv(ranking));
    }

    FoldOutcome outcome;
    outcome.held_out_id = plan.held_out_id;
    outcome.best_epoch = fitres.best_epoch;
    outcome.aborted = fitres.aborted;
    outcome.fold_dir = fold_dir;
    if (!all_age.empty()) {
        const auto metrics = regression_metrics(all_age, all_pred);
        outcome.val_mae = metrics.mae;
        outcome.val_r2 = metrics.r2;
    }

    json summary;
    summary["held_out"] = plan.held_out_id;
    summary["alpha"] = mc.alpha;
    summary["best_epoch"] = outcome.best_epoch;
    summary["val_mae"] = outcome.val_mae;
    summary["val_r2"] =
        std::isfinite(outcome.val_r2) ? json(outcome.val_r2) : json();
    summary["aborted"] = outcome.aborted;
    summary["n_genes"] = artifact.gene_set.gene_ids.size();
    summary["fold_seed"] = mc.seed;
    summary["preprocess_hash"] = artifact.content_hash();
    write_text_file(join_path(fold_dir, "summary.json"), summary.dump(2));
    return outcome;
}

}  // namespace

TrainResult run_train(const TrainCommand& cmd) {
    ensure_dir(cmd.out_dir);

    std::vector<Dataset> datasets;
    datasets.reserve(cmd.data_dirs.size());
    for (const auto& dir : cmd.data_dirs) datasets.push_back(load_dataset(dir));

    // Duplicate sample ids anywhere across datasets leak between splits.
    std::unordered_set<std::string> seen;
    for (const auto& ds : datasets) {
        for (const auto& sid : ds.counts.sample_ids) {
            if (!seen.insert(sid).second) {
                throw DataLeakError("sample id appears in multiple datasets: " + sid);
            }
        }
    }

    auto find_ds = [&](const std::string& id) -> const Dataset* {
        for (const auto& ds : datasets) {
            if (ds.id == id) return &ds;
        }
        throw ConfigError("unknown dataset id: " + id);
    };

    std::vector<FoldPlan> plans;
    if (cmd.mode == TrainMode::Loso) {
        if (datasets.size() < 3) {
            throw ConfigError("loso mode needs at least 3 datasets");
        }
        for (const auto& held : datasets) {
            FoldPlan plan;
            plan.held_out_id = held.id;
            plan.eval_parts = {&held};
            for (const auto& other : datasets) {
                if (other.id != held.id) plan.train_parts.push_back(&other);
            }
            plans.push_back(std::move(plan));
        }
    } else {
        if (cmd.train_dataset_ids.empty() || cmd.eval_dataset_ids.empty()) {
            throw ConfigError("holdout/intervention modes need explicit train "
                              "and eval dataset ids");
        }
        FoldPlan plan;
        plan.held_out_id =
            cmd.mode == TrainMode::Intervention ? "intervention" : "holdout";
        for (const auto& id : cmd.train_dataset_ids) {
            plan.train_parts.push_back(find_ds(id));
        }
        for (const auto& id : cmd.eval_dataset_ids) {
            plan.eval_parts.push_back(find_ds(id));
        }
        plans.push_back(std::move(plan));
    }

    RunManifest manifest;
    manifest.tool_version = AGEPREDICT_VERSION;
    manifest.command = "train";
    manifest.started_at = iso_now();
    manifest.seed = cmd.model.seed;
    for (const auto& dir : cmd.data_dirs) {
        for (const char* name : {"counts.tsv", "metadata.tsv"}) {
            const std::string p = join_path(dir, name);
            manifest.input_hashes[p] = sha256_file_hex(p);
        }
    }
    manifest.config_hash = sha256_hex(cmd.model.to_json());

    TrainResult result;
    auto fold_dir_for = [&](const FoldPlan& p) {
        return join_path(cmd.out_dir, "fold_" + p.held_out_id);
    };

    if (cmd.jobs > 1 && plans.size() > 1) {
        std::vector<std::future<FoldOutcome>> futures;
        futures.reserve(plans.size());
        for (const auto& plan : plans) {
            futures.push_back(std::async(std::launch::async, [&plan, &cmd,
                                                              &fold_dir_for]() {
                return run_fold(plan, cmd, fold_dir_for(plan));
            }));
        }
        for (auto& f : futures) result.folds.push_back(f.get());
    } else {
        for (const auto& plan : plans) {
            result.folds.push_back(run_fold(plan, cmd, fold_dir_for(plan)));
        }
    }

    for (const auto& f : result.folds) manifest.outputs.push_back(f.fold_dir);
    manifest.finished_at = iso_now();
    write_text_file(join_path(cmd.out_dir, "manifest.json"), manifest.to_json());
    return result;
}

// ---- evaluate ----------------------------------------------------------------

EvaluateResult run_evaluate(const EvaluateCommand& cmd) {
    ensure_dir(cmd.out_dir);
    if (cmd.prediction_files.empty()) {
        throw ConfigError("evaluate needs at least one predictions file");
    }

    struct Row {
        double alpha;
        std::string dataset, fold, sample;
        double age, pred;
        std::string tissue;
    };
    std::vector<Row> rows;
    for (const auto& path : cmd.prediction_files) {
        char delim;
        auto table = read_table(path, delim);
        const auto& header = table[0];
        const auto c_ds = require_column(header, "dataset", path);
        const auto c_fold = require_column(header, "fold", path);
        const auto c_alpha = require_column(header, "alpha", path);
        const auto c_sid = require_column(header, "sample_id", path);
        const auto c_age = require_column(header, "age_months", path);
        const auto c_pred = require_column(header, "predicted_age", path);
        const auto c_tissue = require_column(header, "tissue", path);
        for (std::size_t r = 1; r < table.size(); ++r) {
            const auto& f = table[r];
            if (f.size() != header.size()) {
                throw ParseError(path + ": row " + std::to_string(r + 1) +
                                 " has wrong field count");
            }
            rows.push_back({require_real(f[c_alpha], "alpha"), f[c_ds], f[c_fold],
                            f[c_sid], require_real(f[c_age], "age"),
                            require_real(f[c_pred], "prediction"), f[c_tissue]});
        }
    }

    EvaluateResult result;

    // Per (alpha, dataset, fold) metrics.
    std::map<std::tuple<double, std::string, std::string>,
             std::pair<std::vector<double>, std::vector<double>>>
        folds;
    for (const auto& r : rows) {
        auto& slot = folds[{r.alpha, r.dataset, r.fold}];
        slot.first.push_back(r.age);
        slot.second.push_back(r.pred);
    }
    for (const auto& [key, ys] : folds) {
        FoldMetrics fm;
        fm.alpha = std::get<0>(key);
        fm.dataset = std::get<1>(key);
        fm.fold = std::get<2>(key);
        fm.n = int(ys.first.size());
        const auto m = regression_metrics(ys.first, ys.second);
        fm.mae = m.mae;
        fm.r2 = m.r2;
        fm.r2_defined = m.r2_defined;
        result.fold_metrics.push_back(std::move(fm));
    }

    // Fold-averaged per dataset, then CV across datasets, per alpha.
    std::map<double, std::map<std::string, std::pair<std::vector<double>,
                                                     std::vector<double>>>>
        by_alpha;
    for (const auto& fm : result.fold_metrics) {
        auto& slot = by_alpha[fm.alpha][fm.dataset];
        slot.first.push_back(fm.mae);
        if (fm.r2_defined) slot.second.push_back(fm.r2);
    }
    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / double(v.size());
    };
    for (const auto& [alpha, datasets] : by_alpha) {
        std::vector<double> mae_means, r2_means;
        for (const auto& [_, slot] : datasets) {
            if (!slot.first.empty()) mae_means.push_back(mean_of(slot.first));
            if (!slot.second.empty()) r2_means.push_back(mean_of(slot.second));
        }
        if (mae_means.size() >= 2) {
            result.stability.push_back(
                {alpha, "mae", cross_dataset_cv(mae_means, cmd.sample_form_cv),
                 int(mae_means.size())});
        }
        if (r2_means.size() >= 2) {
            result.stability.push_back(
                {alpha, "r2", cross_dataset_cv(r2_means, cmd.sample_form_cv),
                 int(r2_means.size())});
        }
    }

    // Tissue bias per (alpha, dataset) on per-sample fold-averaged residuals.
    std::map<std::pair<double, std::string>,
             std::map<std::string, std::pair<std::vector<double>, std::string>>>
        residuals;
    for (const auto& r : rows) {
        auto& slot = residuals[{r.alpha, r.dataset}][r.sample];
        slot.first.push_back(r.pred - r.age);
        slot.second = r.tissue;
    }
    for (const auto& [key, samples] : residuals) {
        std::vector<double> abs_res;
        std::vector<std::string> tissues;
        for (const auto& [_, slot] : samples) {
            abs_res.push_back(std::fabs(mean_of(slot.first)));
            tissues.push_back(slot.second);
        }
        const auto var = tissue_bias_variance(abs_res, tissues);
        if (var) {
            result.tissue_bias[format_double(key.first) + "|" + key.second] = *var;
        }
    }

    // Writers.
    if (cmd.format == OutputFormat::Tsv) {
        std::ostringstream m;
        m << "alpha\tdataset\tfold\tn\tmae\tr2\n";
        for (const auto& fm : result.fold_metrics) {
            m << format_double(fm.alpha) << '\t' << fm.dataset << '\t' << fm.fold
              << '\t' << fm.n << '\t' << format_double(fm.mae) << '\t'
              << format_double(fm.r2) << '\n';
        }
        write_text_file(join_path(cmd.out_dir, "metrics.tsv"), m.str());

        std::ostringstream s;
        s << "alpha\tmetric\tcv_percent\tn_datasets\n";
        for (const auto& row : result.stability) {
            s << format_double(row.alpha) << '\t' << row.metric << '\t'
              << format_double(row.cv_percent) << '\t' << row.n_datasets << '\n';
        }
        write_text_file(join_path(cmd.out_dir, "stability.tsv"), s.str());

        std::ostringstream t;
        t << "alpha\tdataset\ttissue_bias_variance\n";
        for (const auto& [key, value] : result.tissue_bias) {
            const auto bar = key.find('|');
            t << key.substr(0, bar) << '\t' << key.substr(bar + 1) << '\t'
              << format_double(value) << '\n';
        }
        write_text_file(join_path(cmd.out_dir, "tissue_bias.tsv"), t.str());
    } else {
        json j;
        j["fold_metrics"] = json::array();
        for (const auto& fm : result.fold_metrics) {
            j["fold_metrics"].push_back(
                {{"alpha", fm.alpha},
                 {"dataset", fm.dataset},
                 {"fold", fm.fold},
                 {"n", fm.n},
                 {"mae", fm.mae},
                 {"r2", fm.r2_defined ? json(fm.r2) : json()}});
        }
        j["stability"] = json::array();
        for (const auto& row : result.stability) {
            j["stability"].push_back({{"alpha", row.alpha},
                                      {"metric", row.metric},
                                      {"cv_percent", row.cv_percent},
                                      {"n_datasets", row.n_datasets}});
        }
        j["tissue_bias"] = result.tissue_bias;
        write_text_file(join_path(cmd.out_dir, "metrics.json"), j.dump(2));
    }
    return result;
}

// ---- probe -------------------------------------------------------------------

std::vector<ProbeReport> run_probe(const ProbeCommand& cmd) {
    ensure_dir(cmd.out_dir);
    char delim;
    auto table = read_table(cmd.latent_path, delim);
    const auto& header = table[0];
    const auto c_sid = require_column(header, "sample_id", cmd.latent_path);

    std::vector<std::string> sample_ids;
    Mat latent(Eigen::Index(table.size() - 1), Eigen::Index(header.size() - 1));
    for (std::size_t r = 1; r < table.size(); ++r) {
        const auto& f = table[r];
        if (f.size() != header.size()) {
            throw ParseError(cmd.latent_path + ": row " + std::to_string(r + 1) +
                             " has wrong field count");
        }
        sample_ids.push_back(f[c_sid]);
        Eigen::Index col = 0;
        for (std::size_t c = 0; c < f.size(); ++c) {
            if (c == c_sid) continue;
            latent(Eigen::Index(r - 1), col++) = require_real(f[c], header[c]);
        }
    }

    MetadataTable meta = parse_metadata(cmd.metadata_path);
    std::vector<std::string> attrs = cmd.attributes;
    if (attrs.empty()) attrs = {"sex", "tissue", "platform", "series_id"};

    std::vector<ProbeReport> reports;
    for (const auto& attr : attrs) {
        std::vector<std::string> labels;
        labels.reserve(sample_ids.size());
        for (const auto& sid : sample_ids) {
            const auto& m = meta.require(sid);
            if (attr == "sex") labels.push_back(m.sex);
            else if (attr == "tissue") labels.push_back(m.tissue);
            else if (attr == "platform") labels.push_back(m.platform);
            else if (attr == "series_id") labels.push_back(m.series_id);
            else throw ConfigError("unknown attribute: " + attr);
        }
        ProbeReport rep = probe_attribute(latent, labels, cmd.seed);
        rep.attribute = attr;
        reports.push_back(std::move(rep));
    }

    if (cmd.format == OutputFormat::Tsv) {
        std::ostringstream out;
        out << "attribute\tbalanced_accuracy\tpermutation_baseline\tn_classes\t"
               "chance_level\tn_train\tn_test\n";
        for (const auto& r : reports) {
            out << r.attribute << '\t' << format_double(r.balanced_accuracy) << '\t'
                << format_double(r.permutation_baseline) << '\t' << r.n_classes
                << '\t' << format_double(1.0 / double(r.n_classes)) << '\t'
                << r.n_train << '\t' << r.n_test << '\n';
        }
        write_text_file(join_path(cmd.out_dir, "probe_report.tsv"), out.str());
    } else {
        json j = json::array();
        for (const auto& r : reports) {
            j.push_back({{"attribute", r.attribute},
                         {"balanced_accuracy", r.balanced_accuracy},
                         {"permutation_baseline", r.permutation_baseline},
                         {"n_classes", r.n_classes},
                         {"chance_level", 1.0 / double(r.n_classes)},
                         {"n_train", r.n_train},
                         {"n_test", r.n_test}});
        }
        write_text_file(join_path(cmd.out_dir, "probe_report.json"), j.dump(2));
    }
    return reports;
}

// ---- compare -----------------------------------------------------------------

CompareResult run_compare(const CompareCommand& cmd) {
    ensure_dir(cmd.out_dir);
    char delim;
    auto table = read_table(cmd.table_path, delim);
    const auto& header = table[0];
    const auto c_model = require_column(header, "model", cmd.table_path);
    const auto c_sid = require_column(header, "sample_id", cmd.table_path);
    const auto c_tissue = require_column(header, "tissue", cmd.table_path);
    const auto c_sex = require_column(header, "sex", cmd.table_path);
    const auto c_ageg = require_column(header, "age_group", cmd.table_path);
    const auto c_group = require_column(header, "group", cmd.table_path);
    const auto c_pred = require_column(header, "predicted", cmd.table_path);

    std::vector<PredictionRow> rows;
    for (std::size_t r = 1; r < table.size(); ++r) {
        const auto& f = table[r];
        if (f.size() != header.size()) {
            throw ParseError(cmd.table_path + ": row " + std::to_string(r + 1) +
                             " has wrong field count");
        }
        rows.push_back({f[c_model], f[c_sid], f[c_tissue], f[c_sex], f[c_ageg],
                        f[c_group], require_real(f[c_pred], "predicted")});
    }

    CompareResult result = compare_groups(rows, cmd.spec);

    if (cmd.format == OutputFormat::Tsv) {
        std::ostringstream out;
        out << "model\ttissue\tsex\tage_group\tlevel_a\tlevel_b\tn_a\tn_b\tt\tdf\t"
               "p\tp_adj\tstars\n";
        for (const auto& c : result.rows) {
            out << c.model << '\t' << c.tissue << '\t' << c.sex << '\t'
                << c.age_group << '\t' << c.level_a << '\t' << c.level_b << '\t'
                << c.n_a << '\t' << c.n_b << '\t' << format_double(c.t) << '\t'
                << format_double(c.df) << '\t' << format_double(c.p) << '\t'
                << format_double(c.p_adj) << '\t' << c.stars << '\n';
        }
        write_text_file(join_path(cmd.out_dir, "comparisons.tsv"), out.str());
    } else {
        json j = json::array();
        for (const auto& c : result.rows) {
            j.push_back({{"model", c.model},
                         {"tissue", c.tissue},
                         {"sex", c.sex},
                         {"age_group", c.age_group},
                         {"level_a", c.level_a},
                         {"level_b", c.level_b},
                         {"n_a", c.n_a},
                         {"n_b", c.n_b},
                         {"t", c.t},
                         {"df", c.df},
                         {"p", c.p},
                         {"p_adj", c.p_adj},
                         {"stars", c.stars}});
        }
        write_text_file(join_path(cmd.out_dir, "comparisons.json"), j.dump(2));
    }
    return result;
}

// ---- synth -------------------------------------------------------------------

void run_synth(const SynthCommand& cmd) {
    ensure_dir(cmd.out_dir);
    SynthDataset data = generate(cmd.config);

    if (!cmd.per_series) {
        write_counts_tsv(data.counts, join_path(cmd.out_dir, "counts.tsv"));
        write_metadata_tsv(data.meta, join_path(cmd.out_dir, "metadata.tsv"));
        write_text_file(join_path(cmd.out_dir, "truth.json"), data.truth.to_json());
        return;
    }

    // One dataset directory per series id, so LOSO runs on synthetic data.
    std::map<std::string, std::vector<Eigen::Index>> by_series;
    for (Eigen::Index j = 0; j < Eigen::Index(data.counts.sample_ids.size()); ++j) {
        const auto& m = data.meta.require(data.counts.sample_ids[std::size_t(j)]);
        by_series[m.series_id].push_back(j);
    }
    for (const auto& [series, cols] : by_series) {
        const std::string dir = join_path(cmd.out_dir, series);
        ensure_dir(dir);
        CountMatrix sub;
        sub.gene_ids = data.counts.gene_ids;
        sub.counts.resize(data.counts.counts.rows(), Eigen::Index(cols.size()));
        MetadataTable meta;
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto& sid = data.counts.sample_ids[std::size_t(cols[k])];
            sub.sample_ids.push_back(sid);
            sub.counts.col(Eigen::Index(k)) = data.counts.counts.col(cols[k]);
            meta.by_sample.emplace(sid, meta.rows.size());
            meta.rows.push_back(data.meta.require(sid));
        }
        write_counts_tsv(sub, join_path(dir, "counts.tsv"));
        write_metadata_tsv(meta, join_path(dir, "metadata.tsv"));
    }
    write_text_file(join_path(cmd.out_dir, "truth.json"), data.truth.to_json());
}

// ---- export-genes -------------------------------------------------------------

GeneRanking run_export_genes(const ExportGenesCommand& cmd) {
    const Checkpoint ckpt = Checkpoint::from_json(read_text_file(cmd.checkpoint_path));
    const PreprocessArtifact artifact =
        PreprocessArtifact::from_json(read_text_file(cmd.artifact_path));

    auto it = ckpt.params.find("encoder.bsf.w");
    if (it == ckpt.params.end()) {
        throw ConfigError("checkpoint has no bsf gate weights");
    }
    const auto& w = it->second;
    if (w.size() != artifact.gene_set.gene_ids.size()) {
        throw ConfigError("bsf weights do not match the artifact gene list");
    }
    BsfLayer layer(int(w.size()));
    layer.weights() =
        Eigen::Map<const Vec>(w.data(), Eigen::Index(w.size()));
    const GeneRanking ranking =
        layer.export_ranking(artifact.gene_set.gene_ids, cmd.mask_threshold);
    write_text_file(cmd.out_path, ranking_to_tsv(ranking));
    return ranking;
}

// ---- writers --------------------------------------------------------------------

std::string expression_to_tsv(const ExpressionMatrix& m) {
    std::ostringstream out;
    out << "sample_id";
    for (const auto& g : m.gene_ids) out << '\t' << g;
    out << '\n';
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        out << m.sample_ids[std::size_t(i)];
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
            out << '\t' << format_double(m.values(i, j));
        }
        out << '\n';
    }
    return out.str();
}

std::string ranking_to_tsv(const GeneRanking& ranking) {
    std::ostringstream out;
    out << "rank\tgene_id\tweight\n";
    int rank = 1;
    for (const auto& [gene, weight] : ranking.entries) {
        out << rank++ << '\t' << gene << '\t' << format_double(weight) << '\n';
    }
    return out.str();
}

void write_counts_tsv(const CountMatrix& counts, const std::string& path) {
    std::ostringstream out;
    out << "gene_id";
    for (const auto& s : counts.sample_ids) out << '\t' << s;
    out << '\n';
    for (Eigen::Index g = 0; g < counts.counts.rows(); ++g) {
        out << counts.gene_ids[std::size_t(g)];
        for (Eigen::Index s = 0; s < counts.counts.cols(); ++s) {
            out << '\t' << counts.counts(g, s);
        }
        out << '\n';
    }
    write_text_file(path, out.str());
}

void write_metadata_tsv(const MetadataTable& meta, const std::string& path) {
    std::ostringstream out;
    out << "sample_id\tage\tsex\ttissue\tplatform\tseries_id\n";
    for (const auto& row : meta.rows) {
        out << row.sample_id << '\t' << format_double(row.age_months) << '\t'
            << row.sex << '\t' << row.tissue << '\t' << row.platform << '\t'
            << row.series_id << '\n';
    }
    write_text_file(path, out.str());
}

}  // namespace agepred
