#include "agepred/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "agepred/errors.hpp"
#include "agepred/rng.hpp"

namespace agepred {

namespace {

using json = nlohmann::ordered_json;

std::string padded_id(const char* prefix, int i, int width) {
    std::string num = std::to_string(i);
    if (int(num.size()) < width) num.insert(0, std::size_t(width) - num.size(), '0');
    return prefix + num;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_per_env < 1 || n_genes < 1 || k_signal < 0 || k_confound < 0) {
        throw ConfigError("synth sizes must be positive");
    }
    if (k_signal + k_confound > n_genes) {
        throw ConfigError("planted gene sets exceed the gene count");
    }
    if (age_max_months <= age_min_months || age_min_months < 0) {
        throw ConfigError("invalid age range");
    }
    if (noise_std < 0 || confound_strength < 0 || signal_amplitude < 0) {
        throw ConfigError("synth magnitudes must be nonnegative");
    }
    if (!(attr_age_coupling >= 0.0 && attr_age_coupling <= 1.0)) {
        throw ConfigError("attr_age_coupling must lie in [0, 1]");
    }
    if (sexes.empty()) throw ConfigError("at least one sex level required");
}

std::vector<SynthEnv> SynthConfig::resolved_environments() const {
    if (!environments.empty()) return environments;
    std::vector<SynthEnv> envs;
    for (int e = 0; e < 4; ++e) {
        envs.push_back({"tissue" + std::to_string(e),
                        "platform" + std::to_string(e % 2),
                        "series" + std::to_string(e)});
    }
    return envs;
}

SynthDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    const auto envs = cfg.resolved_environments();
    const int n_env = int(envs.size());
    const int n = cfg.n_per_env * n_env;
    const int d = cfg.n_genes;

    RngState rng = RngState::derive(cfg.seed, 7);

    // Disjoint planted index sets from a seeded permutation.
    std::vector<int> perm(static_cast<std::size_t>(d));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = perm.size(); k-- > 1;) {
        std::size_t j = std::size_t(rng.next_below(k + 1));
        std::swap(perm[k], perm[j]);
    }

    SynthDataset out;
    auto& truth = out.truth;
    for (int k = 0; k < cfg.k_signal; ++k) {
        truth.signal_genes.push_back(perm[std::size_t(k)]);
        // Mixed-sign coefficients in +-[0.5, 1] * amplitude.
        const double mag = cfg.signal_amplitude * rng.next_uniform(0.5, 1.0);
        truth.signal_coef.push_back(rng.next_bernoulli(0.5) ? mag : -mag);
    }
    for (int k = 0; k < cfg.k_confound; ++k) {
        truth.confound_genes.push_back(perm[std::size_t(cfg.k_signal + k)]);
        truth.confound_level.push_back(k % n_env);
        truth.confound_coef.push_back(cfg.confound_strength *
                                      rng.next_uniform(0.8, 1.2));
    }

    // Samples: even split across environments, ages uniform over the range.
    std::vector<double> ages(static_cast<std::size_t>(n));
    std::vector<int> env_of(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ages[std::size_t(i)] = rng.next_uniform(cfg.age_min_months, cfg.age_max_months);
        env_of[std::size_t(i)] = i % n_env;
    }
    if (cfg.attr_age_coupling > 0.0) {
        // With probability `coupling`, the environment is set by the age
        // quantile, tying the attribute to the target.
        for (int i = 0; i < n; ++i) {
            if (rng.next_bernoulli(cfg.attr_age_coupling)) {
                const double q = (ages[std::size_t(i)] - cfg.age_min_months) /
                                 (cfg.age_max_months - cfg.age_min_months);
                env_of[std::size_t(i)] =
                    std::min(n_env - 1, int(q * double(n_env)));
            }
        }
    }

    const int id_width = int(std::to_string(std::max(n, d)).size()) + 1;
    out.counts.gene_ids.reserve(std::size_t(d));
    for (int g = 0; g < d; ++g) {
        out.counts.gene_ids.push_back(padded_id("g", g, id_width));
    }
    truth.raw.resize(n, d);
    out.counts.counts.resize(d, n);

    for (int i = 0; i < n; ++i) {
        const std::string sid = padded_id("smp", i, id_width);
        out.counts.sample_ids.push_back(sid);
        SampleMeta meta;
        meta.sample_id = sid;
        meta.age_months = ages[std::size_t(i)];
        meta.sex = cfg.sexes[std::size_t(rng.next_below(cfg.sexes.size()))];
        const auto& env = envs[std::size_t(env_of[std::size_t(i)])];
        meta.tissue = env.tissue;
        meta.platform = env.platform;
        meta.series_id = env.series_id;
        out.meta.by_sample.emplace(sid, out.meta.rows.size());
        out.meta.rows.push_back(std::move(meta));
    }

    const double age_span = cfg.age_max_months - cfg.age_min_months;
    std::vector<double> signal_of(static_cast<std::size_t>(d), 0.0);
    std::vector<int> conf_level_of(static_cast<std::size_t>(d), -1);
    std::vector<double> conf_coef_of(static_cast<std::size_t>(d), 0.0);
    for (std::size_t k = 0; k < truth.signal_genes.size(); ++k) {
        signal_of[std::size_t(truth.signal_genes[k])] = truth.signal_coef[k];
    }
    for (std::size_t k = 0; k < truth.confound_genes.size(); ++k) {
        conf_level_of[std::size_t(truth.confound_genes[k])] = truth.confound_level[k];
        conf_coef_of[std::size_t(truth.confound_genes[k])] = truth.confound_coef[k];
    }

    for (int i = 0; i < n; ++i) {
        const double age_norm = (ages[std::size_t(i)] - cfg.age_min_months) / age_span;
        for (int g = 0; g < d; ++g) {
            double v = cfg.baseline_log;
            v += signal_of[std::size_t(g)] * age_norm;
            if (conf_level_of[std::size_t(g)] == env_of[std::size_t(i)]) {
                v += conf_coef_of[std::size_t(g)];
            }
            if (cfg.noise_std > 0.0) v += cfg.noise_std * rng.next_gaussian();
            truth.raw(i, g) = v;
            const double count = std::llround(std::exp(v));
            out.counts.counts(g, i) = std::max<std::int64_t>(0, std::int64_t(count));
        }
    }
    out.counts.validate();
    return out;
}

std::string PlantedTruth::to_json() const {
    json j;
    j["signal_genes"] = signal_genes;
    j["signal_coef"] = signal_coef;
    j["confound_genes"] = confound_genes;
    j["confound_level"] = confound_level;
    j["confound_coef"] = confound_coef;
    return j.dump(2);
}

}  // namespace agepred
