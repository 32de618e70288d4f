#pragma once
// Three-network adversarial age predictor: a feature encoder (optionally
// gated by a binary stochastic filter), an age regression head, and a
// multi-head bias predictor that tries to read sample attributes out of the
// latent representation. The encoder is trained against the bias predictor
// with an explicitly negated cross-entropy (equivalent to gradient reversal).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agepred/bsf.hpp"
#include "agepred/ingest.hpp"
#include "agepred/stack.hpp"

namespace agepred {

struct ModelConfig {
    int input_dim = 0;
    int latent_dim = 60;   // 60 for cross-dataset runs, 40 for intervention runs
    bool use_bsf = false;
    double alpha = 1.0;    // adversarial strength

    double lr_bp = 3e-4;
    double lr_dist = 2e-4;
    double lr_task = 1e-3;

    int batch_size = 64;   // 128 for intervention runs
    int steps_per_epoch = 50;
    int bp_updates = 5;
    int dist_updates = 2;
    int burn_in_epochs = 50;
    int max_epochs = 200;
    int checkpoint_every = 10;
    int fixed_epochs = 0;  // > 0: fixed-length run with periodic checkpoints
    int best_epoch = -1;   // fixed-length runs: externally configured pick

    std::uint64_t seed = 0;

    double dropout_rate = 0.3;
    double noise_std = 0.05;
    double task_l2 = 1e-4;
    double encoder_l2 = 0.0;
    int bp_trunk_depth = 1;

    double mask_threshold = 0.5;
    SparsityPenalty bsf_penalty;
    bool bsf_per_sample_mask = false;
    bool fresh_batch_per_update = true;
    std::vector<double> head_weights;  // empty = all 1.0

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    void validate() const;  // throws ConfigError
};

struct TrainBatch {
    Mat x;
    Vec age;
    std::vector<Mat> attrs;  // one-hot blocks, one per attribute head
};

struct TrainingData {
    Mat x;
    Vec age;
    std::vector<Mat> attrs;
    std::vector<std::string> attr_names;
    std::vector<std::vector<std::string>> attr_vocab;
    std::vector<std::string> sample_ids;

    Eigen::Index size() const { return x.rows(); }
    std::vector<int> attr_class_counts() const;
    // Uniform with replacement, so steps per epoch stay independent of the
    // split size.
    TrainBatch sample_batch(int batch_size, RngState& rng) const;
};

// One-hot encodes {sex, tissue, platform, series_id} for the given samples.
// Vocabularies are the sorted unique values observed in these samples.
TrainingData build_training_data(const ExpressionMatrix& x,
                                 const MetadataTable& meta);

class AdversarialModel {
public:
    AdversarialModel(const ModelConfig& cfg, std::vector<int> attr_classes);

    // He-uniform weights drawn from cfg.seed; BSF weights start at 1.
    void init_params();

    struct BiasLoss {
        double h = 0.0;  // sum of per-head weighted cross-entropies
        std::vector<double> per_head;
    };
    // Gradients land in the bias predictor only; the encoder output is
    // treated as a fixed input.
    BiasLoss bias_loss(const TrainBatch& batch, RngState& rng);

    struct DistillerLoss {
        double value = 0.0;  // -alpha * h + omega
        double h = 0.0;
        double omega = 0.0;  // encoder l2 + bsf sparsity penalty
    };
    // Gradients land in the encoder (including BSF weights) only; the bias
    // predictor is frozen.
    DistillerLoss distiller_loss(const TrainBatch& batch, double alpha,
                                 RngState& rng);

    struct TaskLoss {
        double value = 0.0;  // mse + l2 terms
        double mse = 0.0;
    };
    // Gradients land in the task head and the encoder.
    TaskLoss task_loss(const TrainBatch& batch, RngState& rng);

    // Eval-mode inference: deterministic BSF mask, running batchnorm stats,
    // no dropout or noise.
    Vec predict_age(const Mat& x) const;
    Mat encode(const Mat& x) const;
    // Softmax outputs of each bias-predictor head for given latents.
    std::vector<Mat> bias_probabilities(const Mat& latent) const;

    void zero_grads();
    void clip_bsf();

    std::vector<ParamRef> encoder_params();  // includes bsf.w when enabled
    std::vector<ParamRef> task_params();
    std::vector<ParamRef> bp_params();
    std::vector<ParamRef> bn_state();  // running stats across all subnets

    const ModelConfig& config() const { return cfg_; }
    const std::vector<int>& attr_classes() const { return attr_classes_; }
    BsfLayer* bsf() { return bsf_ ? &*bsf_ : nullptr; }
    const BsfLayer* bsf() const { return bsf_ ? &*bsf_ : nullptr; }

private:
    struct EncodeTapes {
        std::optional<BsfTape> bsf;
        Tape enc;
        Mat latent;
    };
    EncodeTapes encode_train(const Mat& x, RngState& rng);
    // Backprop d(loss)/d(latent) through the encoder and BSF gate.
    void encoder_backward(EncodeTapes& tapes, const Mat& g_latent);

    ModelConfig cfg_;
    std::vector<int> attr_classes_;
    std::vector<double> head_weights_;
    std::optional<BsfLayer> bsf_;
    Stack encoder_;
    Stack task_head_;
    Stack bp_trunk_;
    std::vector<Stack> bp_heads_;
};

// FNV digest over raw parameter bytes; used to assert update isolation.
std::uint64_t param_fingerprint(const std::vector<ParamRef>& params);

}  // namespace agepred
