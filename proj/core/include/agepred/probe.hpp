#pragma once
// Post-hoc leakage probing: a deterministic multinomial linear probe trained
// on frozen latents measures how much attribute signal survives adversarial
// training, plus a domain-classifier proxy for the divergence between two
// sets of latents.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agepred/rng.hpp"

namespace agepred {

struct ProbeOptions {
    double train_frac = 0.7;
    double l2 = 1e-4;
    double tol = 1e-6;
    int max_iters = 5000;
};

struct ProbeReport {
    std::string attribute;
    double balanced_accuracy = 0.0;
    double permutation_baseline = 0.0;  // same probe after one label shuffle
    int n_classes = 0;
    int n_train = 0;
    int n_test = 0;
};

// Softmax regression by full-batch gradient descent on a stratified 70/30
// split. Every class needs at least two samples (one on each side).
ProbeReport probe_attribute(const Eigen::MatrixXd& latent,
                            const std::vector<std::string>& labels,
                            std::uint64_t seed, const ProbeOptions& opt = {});

// Trains the same probe to tell the two sets apart; from the held-out error
// rate err, returns 2 * (1 - 2 * err) clamped to [0, 2].
double proxy_divergence(const Eigen::MatrixXd& f_source,
                        const Eigen::MatrixXd& f_target, std::uint64_t seed,
                        const ProbeOptions& opt = {});

}  // namespace agepred
