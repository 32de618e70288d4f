#pragma once
// Binary stochastic filter: a learned per-input gate. Training multiplies the
// input by Bernoulli draws from the per-feature keep probabilities (one mask
// per mini-batch by default); inference thresholds the probabilities into a
// deterministic mask. Gradients to the probabilities use the straight-through
// estimator. A hinged penalty on the probability sum drives sparsity.

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agepred/optimizer.hpp"
#include "agepred/rng.hpp"
#include "agepred/stack.hpp"

namespace agepred {

struct SparsityPenalty {
    double strength = 1e-2;
    double cut_threshold = 3000.0;
};

struct BsfTape {
    Mat input;
    Mat mask;  // batch x d (rows identical unless per-sample masks are on)
    bool train = false;
    bool consumed = false;
};

struct GeneRanking {
    // (gene_id, weight), weight > threshold, descending, lexicographic ties.
    std::vector<std::pair<std::string, double>> entries;
};

class BsfLayer {
public:
    explicit BsfLayer(int dim);

    int dim() const { return int(w_.size()); }
    const Vec& weights() const { return w_; }
    Vec& weights() { return w_; }

    // Train: x .* z with z_j ~ Bernoulli(w_j); eval: z_j = 1[w_j > threshold].
    std::pair<Mat, BsfTape> forward(const Mat& x, Mode mode, RngState& rng,
                                    double mask_threshold = 0.5,
                                    bool per_sample_mask = false);

    Mat infer(const Mat& x, double mask_threshold = 0.5) const;

    // grad_x = upstream .* z (exact); grad_w_j = sum_batch upstream_j * x_j
    // (straight-through). Requires a train-mode tape.
    Mat backward(BsfTape& tape, const Mat& upstream, bool accumulate_grads = true);

    // p = strength * max(0, sum(w) - cut); the subgradient at the hinge is 0.
    // Returns the value; adds the gradient to the accumulator when asked.
    double penalty(const SparsityPenalty& pen, bool accumulate_grads = true);

    void zero_grads() { gw_.setZero(); }
    void clip() { w_ = w_.cwiseMax(0.0).cwiseMin(1.0); }

    std::vector<ParamRef> params(const std::string& prefix = "");

    GeneRanking export_ranking(const std::vector<std::string>& gene_ids,
                               double mask_threshold = 0.5) const;

private:
    void check_weights() const;  // InvariantError when w leaves [0, 1]

    Vec w_;   // keep probabilities
    Vec gw_;
};

}  // namespace agepred
