// agepredict: domain-adversarial transcriptomic age prediction toolkit.
//
// Subcommands: preprocess, train, evaluate, probe, compare, synth,
// export-genes. stdout carries progress; stderr carries machine-parsable
// error names. Exit codes: 0 ok, 2 input error, 3 empty result, 4 numerics.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agepred/errors.hpp"
#include "agepred/pipeline.hpp"
#include "agepred/text.hpp"
#include "agepred/version.hpp"

namespace {

using namespace agepred;

OutputFormat parse_format(const std::string& fmt) {
    if (fmt == "tsv") return OutputFormat::Tsv;
    if (fmt == "json") return OutputFormat::Json;
    throw ConfigError("unknown format: " + fmt);
}

ModelConfig load_model_config(const std::string& config_path) {
    if (config_path.empty()) return ModelConfig{};
    return ModelConfig::from_json(read_text_file(config_path));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Domain-adversarial chronological age predictor"};
    app.set_version_flag("--version", AGEPREDICT_VERSION);
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::string format = "tsv";
    std::uint64_t seed = 0;
    bool seed_given = false;
    int jobs = 1;
    app.add_option("--config", config_path, "Run configuration JSON")->envname("");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--format", format, "Output format: tsv or json")
        ->check(CLI::IsMember({"tsv", "json"}));
    app.add_option_function<std::uint64_t>(
           "--seed", [&](std::uint64_t s) { seed = s; seed_given = true; },
           "Seed override");
    app.add_option("--jobs", jobs, "Parallel fold jobs");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Filter, normalize, standardize");
    PreprocessCommand pre_cmd;
    pre->add_option("--counts", pre_cmd.counts_path, "Count matrix TSV/CSV")
        ->required();
    pre->add_option("--metadata", pre_cmd.metadata_path, "Metadata TSV")->required();
    pre->add_option("--lengths", pre_cmd.lengths_path, "Gene length table");
    pre->add_option("--allowlist", pre_cmd.allowlist_path, "Gene allowlist");
    pre->add_option("--min-len-bp", pre_cmd.filter.min_len_bp, "Minimum gene length");
    pre->add_option("--expr-count", pre_cmd.filter.expr_count,
                    "Count threshold for 'expressed'");
    pre->add_option("--tissue-frac", pre_cmd.filter.tissue_frac,
                    "Fraction of tissue samples that must express a gene");

    // train
    auto* train = app.add_subcommand("train", "Train the adversarial model");
    TrainCommand train_cmd;
    std::string mode = "loso";
    double alpha_override = -1.0;
    train->add_option("--data", train_cmd.data_dirs,
                      "Dataset directories (counts.tsv + metadata.tsv)")
        ->required();
    train->add_option("--mode", mode, "loso | holdout | intervention")
        ->check(CLI::IsMember({"loso", "holdout", "intervention"}));
    train->add_option("--train-datasets", train_cmd.train_dataset_ids,
                      "Training dataset ids (holdout/intervention)");
    train->add_option("--eval-datasets", train_cmd.eval_dataset_ids,
                      "Evaluation dataset ids (holdout/intervention)");
    train->add_option("--alpha", alpha_override, "Adversarial strength override");
    train->add_flag("--bsf,!--no-bsf", train_cmd.model.use_bsf,
                    "Enable the binary stochastic filter gate");
    train->add_option("--min-len-bp", train_cmd.filter.min_len_bp, "");
    train->add_option("--expr-count", train_cmd.filter.expr_count, "");
    train->add_option("--tissue-frac", train_cmd.filter.tissue_frac, "");
    train->add_option("--allowlist", train_cmd.allowlist_path, "Gene allowlist");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Aggregate fold predictions");
    EvaluateCommand eval_cmd;
    eval->add_option("--predictions", eval_cmd.prediction_files,
                     "predictions.tsv files from train runs")
        ->required();
    eval->add_flag("--sample-cv", eval_cmd.sample_form_cv,
                   "Use the sample (n-1) form in CV");

    // probe
    auto* probe = app.add_subcommand("probe", "Post-hoc attribute leakage probe");
    ProbeCommand probe_cmd;
    probe->add_option("--latent", probe_cmd.latent_path, "Latent TSV")->required();
    probe->add_option("--metadata", probe_cmd.metadata_path, "Metadata TSV")
        ->required();
    probe->add_option("--attributes", probe_cmd.attributes,
                      "Attributes to probe (default: all four)");

    // compare
    auto* compare = app.add_subcommand("compare", "Stratified group comparisons");
    CompareCommand compare_cmd;
    std::string contrast = "group";
    compare->add_option("--table", compare_cmd.table_path,
                        "Long-format predictions table")
        ->required();
    compare->add_option("--contrast", contrast, "group | age_group")
        ->check(CLI::IsMember({"group", "age_group"}));
    compare->add_option("--level-a", compare_cmd.spec.level_a, "First level")
        ->required();
    compare->add_option("--level-b", compare_cmd.spec.level_b, "Second level")
        ->required();

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a planted-truth dataset");
    SynthCommand synth_cmd;
    synth->add_option("--n-per-env", synth_cmd.config.n_per_env, "Samples per environment");
    synth->add_option("--genes", synth_cmd.config.n_genes, "Gene count");
    synth->add_option("--k-signal", synth_cmd.config.k_signal, "Age-signal genes");
    synth->add_option("--k-confound", synth_cmd.config.k_confound,
                      "Attribute-confound genes");
    synth->add_option("--noise-std", synth_cmd.config.noise_std, "Noise level");
    synth->add_option("--confound-strength", synth_cmd.config.confound_strength,
                      "Confound amplitude");
    synth->add_option("--signal-amplitude", synth_cmd.config.signal_amplitude,
                      "Age-signal amplitude");
    synth->add_option("--coupling", synth_cmd.config.attr_age_coupling,
                      "Attribute-age coupling in [0, 1]");
    synth->add_flag("--per-series", synth_cmd.per_series,
                    "Write one dataset directory per series");

    // export-genes
    auto* exp = app.add_subcommand("export-genes", "Ranked gene list from a checkpoint");
    ExportGenesCommand exp_cmd;
    exp->add_option("--checkpoint", exp_cmd.checkpoint_path, "Checkpoint JSON")
        ->required();
    exp->add_option("--artifact", exp_cmd.artifact_path, "Preprocess artifact JSON")
        ->required();
    exp->add_option("--threshold", exp_cmd.mask_threshold, "Mask threshold");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pre) {
            pre_cmd.out_dir = out_dir;
            run_preprocess(pre_cmd);
            std::cout << "preprocess: wrote artifact + expression to " << out_dir
                      << "\n";
        } else if (*train) {
            train_cmd.out_dir = out_dir;
            train_cmd.jobs = jobs;
            train_cmd.model = load_model_config(config_path);
            if (*train->get_option("--bsf")) {
                train_cmd.model.use_bsf = true;
            }
            if (alpha_override >= 0.0) train_cmd.model.alpha = alpha_override;
            if (seed_given) train_cmd.model.seed = seed;
            if (mode == "loso") train_cmd.mode = TrainMode::Loso;
            else if (mode == "holdout") train_cmd.mode = TrainMode::Holdout;
            else train_cmd.mode = TrainMode::Intervention;
            auto result = run_train(train_cmd);
            for (const auto& fold : result.folds) {
                std::cout << "fold " << fold.held_out_id << ": best epoch "
                          << fold.best_epoch << ", val MAE "
                          << format_double(fold.val_mae)
                          << (fold.aborted ? " [aborted]" : "") << "\n";
            }
        } else if (*eval) {
            eval_cmd.out_dir = out_dir;
            eval_cmd.format = parse_format(format);
            auto result = run_evaluate(eval_cmd);
            std::cout << "evaluate: " << result.fold_metrics.size()
                      << " fold rows, " << result.stability.size()
                      << " stability rows\n";
        } else if (*probe) {
            probe_cmd.out_dir = out_dir;
            probe_cmd.format = parse_format(format);
            probe_cmd.seed = seed;
            auto reports = run_probe(probe_cmd);
            for (const auto& r : reports) {
                std::cout << "probe " << r.attribute << ": balanced accuracy "
                          << format_double(r.balanced_accuracy) << " (chance "
                          << format_double(1.0 / double(r.n_classes)) << ")\n";
            }
        } else if (*compare) {
            compare_cmd.out_dir = out_dir;
            compare_cmd.format = parse_format(format);
            compare_cmd.spec.contrast_column = contrast;
            auto result = run_compare(compare_cmd);
            for (const auto& w : result.warnings) {
                std::cerr << "Warning: " << w << "\n";
            }
            std::cout << "compare: " << result.rows.size() << " comparisons\n";
        } else if (*synth) {
            synth_cmd.out_dir = out_dir;
            if (seed_given) synth_cmd.config.seed = seed;
            run_synth(synth_cmd);
            std::cout << "synth: wrote dataset to " << out_dir << "\n";
        } else if (*exp) {
            exp_cmd.out_path = (out_dir.empty() ? std::string(".") : out_dir) +
                               "/gene_ranking.tsv";
            std::error_code ec;
            std::filesystem::create_directories(out_dir, ec);
            auto ranking = run_export_genes(exp_cmd);
            std::cout << "export-genes: " << ranking.entries.size()
                      << " genes above threshold\n";
            if (ranking.entries.empty()) {
                std::cout << "note: empty ranking (no weight above threshold)\n";
            }
        }
    } catch (const Error& e) {
        std::cerr << e.name() << ": " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "InternalError: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
