#pragma once
// Deterministic generator of transcriptome-shaped datasets with a planted age
// signal and planted attribute confounding, sized for desk-scale checks of
// the adversarial mechanics. Values live on a log scale, are exponentiated
// and rounded to integer counts, so the ingest pipeline runs unmodified.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agepred/ingest.hpp"

namespace agepred {

struct SynthEnv {
    std::string tissue;
    std::string platform;
    std::string series_id;
};

struct SynthConfig {
    int n_per_env = 150;
    int n_genes = 500;
    int k_signal = 20;
    int k_confound = 20;
    std::vector<SynthEnv> environments;  // empty = 4 default environments
    std::vector<std::string> sexes = {"F", "M"};
    double age_min_months = 3.0;
    double age_max_months = 30.0;
    double noise_std = 0.3;
    double signal_amplitude = 2.0;     // log-scale swing over the age range
    double confound_strength = 3.0;    // log-scale bump for the planted level
    double baseline_log = 5.0;
    // 0 keeps the planted attribute independent of age; > 0 couples them to
    // exercise the regime where suppression must cost accuracy.
    double attr_age_coupling = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<SynthEnv> resolved_environments() const;
};

struct PlantedTruth {
    std::vector<int> signal_genes;
    std::vector<double> signal_coef;
    std::vector<int> confound_genes;
    std::vector<int> confound_level;  // environment index each gene marks
    std::vector<double> confound_coef;
    Eigen::MatrixXd raw;  // samples x genes, pre-integerization log values

    std::string to_json() const;  // indices and coefficients only
};

struct SynthDataset {
    CountMatrix counts;
    MetadataTable meta;
    PlantedTruth truth;
};

SynthDataset generate(const SynthConfig& cfg);

}  // namespace agepred
