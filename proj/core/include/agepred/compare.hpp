#pragma once
// Stratified two-group comparisons of model predictions: Welch's t-test per
// stratum, Benjamini-Hochberg adjustment within each tissue x sex family
// (across models and remaining strata), and significance stars.

#include <string>
#include <vector>

namespace agepred {

// One prediction per sample per model, long format.
struct PredictionRow {
    std::string model;
    std::string sample_id;
    std::string tissue;
    std::string sex;
    std::string age_group;  // e.g. "7" vs "26" (months)
    std::string group;      // e.g. "control" vs "treated"
    double predicted = 0.0;
};

struct CompareSpec {
    // Which column carries the contrast: "group" (treated-vs-control) or
    // "age_group" (young-vs-old). The other columns stratify.
    std::string contrast_column = "group";
    std::string level_a;
    std::string level_b;
};

struct GroupComparison {
    std::string model;
    std::string tissue;
    std::string sex;
    std::string age_group;  // empty when age_group is the contrast
    std::string level_a, level_b;
    int n_a = 0, n_b = 0;
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
    double p_adj = 1.0;
    std::string stars;  // "***", "**", "*", or "ns"
};

struct CompareResult {
    std::vector<GroupComparison> rows;
    std::vector<std::string> warnings;  // skipped strata
};

// Stars: *** p_adj < 0.001, ** < 0.01, * < 0.05, ns otherwise (strict).
std::string significance_stars(double p_adj);

CompareResult compare_groups(const std::vector<PredictionRow>& rows,
                             const CompareSpec& spec);

}  // namespace agepred
