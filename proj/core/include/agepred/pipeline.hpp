#pragma once
// Batch-run orchestration behind the CLI: dataset loading, leave-one-set-out
// splitting, leak-free preprocessing per fold, training, prediction and
// latent export, metric aggregation, and run manifests. Every command writes
// only below its own output directory.

#include <map>
#include <string>
#include <vector>

#include "agepred/compare.hpp"
#include "agepred/ingest.hpp"
#include "agepred/model.hpp"
#include "agepred/probe.hpp"
#include "agepred/stats.hpp"
#include "agepred/synth.hpp"
#include "agepred/trainer.hpp"

namespace agepred {

enum class OutputFormat { Tsv, Json };

struct Dataset {
    std::string id;
    CountMatrix counts;
    MetadataTable meta;
};

// A dataset directory holds counts.tsv and metadata.tsv, optionally
// gene_lengths.tsv; the directory name is the dataset id.
Dataset load_dataset(const std::string& dir);

// Intersection of gene rows, concatenation of samples. Duplicate sample ids
// across datasets raise DataLeakError.
Dataset merge_datasets(const std::vector<const Dataset*>& parts,
                       const std::string& merged_id);

struct RunManifest {
    std::string tool_version;
    std::string command;
    std::string config_hash;
    std::map<std::string, std::string> input_hashes;
    std::uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> outputs;

    std::string to_json() const;
    // Over version, command, config and input hashes, and seed; timestamps
    // and output paths excluded so equal-hash runs are comparable bytewise.
    std::string manifest_hash() const;
};

// ---- preprocess ----------------------------------------------------------

struct PreprocessCommand {
    std::string counts_path;
    std::string metadata_path;
    std::string lengths_path;    // optional
    std::string allowlist_path;  // optional
    FilterParams filter;
    std::string out_dir;
};

struct PreprocessResult {
    PreprocessArtifact artifact;
    ExpressionMatrix standardized;
};

PreprocessResult run_preprocess(const PreprocessCommand& cmd);

// ---- train ----------------------------------------------------------------

enum class TrainMode { Loso, Holdout, Intervention };

struct TrainCommand {
    std::vector<std::string> data_dirs;
    TrainMode mode = TrainMode::Loso;
    ModelConfig model;           // input_dim is filled per fold
    FilterParams filter;
    std::string allowlist_path;  // optional
    std::vector<std::string> train_dataset_ids;  // holdout/intervention modes
    std::vector<std::string> eval_dataset_ids;
    std::string out_dir;
    int jobs = 1;
};

struct FoldOutcome {
    std::string held_out_id;
    int best_epoch = -1;
    double val_mae = 0.0;
    double val_r2 = 0.0;
    bool aborted = false;
    std::string fold_dir;
};

struct TrainResult {
    std::vector<FoldOutcome> folds;
};

TrainResult run_train(const TrainCommand& cmd);

// ---- evaluate --------------------------------------------------------------

struct EvaluateCommand {
    std::vector<std::string> prediction_files;
    std::string out_dir;
    OutputFormat format = OutputFormat::Tsv;
    bool sample_form_cv = false;
};

struct FoldMetrics {
    double alpha = 0.0;
    std::string dataset;
    std::string fold;
    int n = 0;
    double mae = 0.0;
    double r2 = 0.0;
    bool r2_defined = true;
};

struct StabilityRow {
    double alpha = 0.0;
    std::string metric;  // "mae" | "r2"
    double cv_percent = 0.0;
    int n_datasets = 0;
};

struct EvaluateResult {
    std::vector<FoldMetrics> fold_metrics;
    std::vector<StabilityRow> stability;
    std::map<std::string, double> tissue_bias;  // per alpha (stringified)
};

EvaluateResult run_evaluate(const EvaluateCommand& cmd);

// ---- probe -----------------------------------------------------------------

struct ProbeCommand {
    std::string latent_path;    // sample_id + latent columns
    std::string metadata_path;
    std::vector<std::string> attributes;  // default: all four
    std::uint64_t seed = 0;
    std::string out_dir;
    OutputFormat format = OutputFormat::Tsv;
};

std::vector<ProbeReport> run_probe(const ProbeCommand& cmd);

// ---- compare ---------------------------------------------------------------

struct CompareCommand {
    std::string table_path;  // long format, one row per sample per model
    CompareSpec spec;
    std::string out_dir;
    OutputFormat format = OutputFormat::Tsv;
};

CompareResult run_compare(const CompareCommand& cmd);

// ---- synth -----------------------------------------------------------------

struct SynthCommand {
    SynthConfig config;
    bool per_series = false;  // one dataset directory per series id
    std::string out_dir;
};

void run_synth(const SynthCommand& cmd);

// ---- export-genes -----------------------------------------------------------

struct ExportGenesCommand {
    std::string checkpoint_path;
    std::string artifact_path;  // supplies the gene ids
    double mask_threshold = 0.5;
    std::string out_path;
};

GeneRanking run_export_genes(const ExportGenesCommand& cmd);

// ---- shared writers (deterministic formatting) ------------------------------

std::string expression_to_tsv(const ExpressionMatrix& m);
std::string ranking_to_tsv(const GeneRanking& ranking);
void write_counts_tsv(const CountMatrix& counts, const std::string& path);
void write_metadata_tsv(const MetadataTable& meta, const std::string& path);

}  // namespace agepred
