#pragma once
// Count-matrix ingestion: parsing, gene filtering, CPM + log2(c+1) transform,
// and train-fitted standardization. The PreprocessArtifact is the only state
// ever applied to holdout data.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace agepred {

struct CountMatrix {
    std::vector<std::string> gene_ids;    // rows
    std::vector<std::string> sample_ids;  // columns
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;
    // Per-gene length in base pairs; empty when the source lacks lengths.
    std::unordered_map<std::string, std::int64_t> gene_lengths;

    void validate() const;  // throws on any invariant violation
};

struct SampleMeta {
    std::string sample_id;
    double age_months = 0.0;
    std::string sex;
    std::string tissue;
    std::string platform;
    std::string series_id;
};

struct MetadataTable {
    std::vector<SampleMeta> rows;
    std::unordered_map<std::string, std::size_t> by_sample;

    const SampleMeta& require(const std::string& sample_id) const;
    bool contains(const std::string& sample_id) const {
        return by_sample.count(sample_id) > 0;
    }
};

struct GeneRemoval {
    std::string gene_id;
    std::string filter;  // "zero_total" | "min_length" | "not_common" | "allowlist"
};

struct GeneSet {
    std::vector<std::string> gene_ids;  // lexicographic
    std::vector<GeneRemoval> removed;
    bool length_filter_applied = false;
};

struct ExpressionMatrix {
    std::vector<std::string> gene_ids;    // columns
    std::vector<std::string> sample_ids;  // rows
    Eigen::MatrixXd values;               // samples x genes
};

struct PreprocessArtifact {
    GeneSet gene_set;
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;              // strictly positive
    std::vector<bool> degenerate_std;    // flagged columns stored with std 1
    std::string transform_tag = "cpm_log2_zscore_v1";

    std::string to_json() const;
    static PreprocessArtifact from_json(const std::string& text);
    std::string content_hash() const;  // sha256 of the canonical JSON
};

enum class Delimiter { Auto, Tab, Comma };

// First column gene ids, header row sample ids, body nonnegative integers.
CountMatrix parse_counts(const std::string& path, Delimiter fmt = Delimiter::Auto);

// Required columns: sample_id, age, sex, tissue, platform, series_id.
MetadataTable parse_metadata(const std::string& path, Delimiter fmt = Delimiter::Auto);

// Two-column file: gene_id, length_bp. Attaches lengths to the matrix.
std::unordered_map<std::string, std::int64_t> parse_gene_lengths(
    const std::string& path, Delimiter fmt = Delimiter::Auto);

// One gene id per line; blank lines ignored.
std::vector<std::string> parse_allowlist(const std::string& path);

// Restrict a count matrix to the given genes (intersection, applied before
// filtering); removals are recorded so provenance survives into the GeneSet.
CountMatrix restrict_to_allowlist(const CountMatrix& counts,
                                  const std::vector<std::string>& allowlist,
                                  std::vector<GeneRemoval>& removals);

struct FilterParams {
    std::int64_t min_len_bp = 500;
    std::int64_t expr_count = 10;
    double tissue_frac = 0.2;
};

// Zero-total filter, optional length filter, then "common genes": a gene is
// kept iff, in every retained tissue, it reaches expr_count in at least
// max(1, ceil(tissue_frac * N_tissue)) samples of that tissue.
GeneSet filter_genes(const CountMatrix& counts, const MetadataTable& meta,
                     const FilterParams& params = {});

// Per sample: log2(count / library_size * 1e6 + 1). The library size is the
// total over all genes in `counts`, not just the filtered set.
ExpressionMatrix cpm_log_transform(const CountMatrix& counts,
                                   const GeneSet& gene_set);

// Per-gene mean and population std over the training samples; columns with
// std < 1e-12 are stored with std 1 and flagged.
PreprocessArtifact fit_standardizer(const ExpressionMatrix& train);

// Aligns columns to the artifact's gene order. Genes missing from `m` become
// all-zero columns (the train mean in standardized space).
ExpressionMatrix apply_standardizer(const ExpressionMatrix& m,
                                    const PreprocessArtifact& art);

}  // namespace agepred
