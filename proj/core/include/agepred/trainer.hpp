#pragma once
// Alternating minimax training: per step, 5 bias-predictor updates, 2
// adversarial encoder (distiller) updates, 1 age-task update, each with its
// own Adam state. Epochs are fixed-length step blocks; model selection picks
// the checkpoint with the lowest validation MAE after the burn-in window.

#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "agepred/model.hpp"

namespace agepred {

struct EpochRecord {
    int epoch = 0;  // 0-based
    double l_task = 0.0;
    double l_bp = 0.0;
    double l_dist = 0.0;
    double val_mae = std::numeric_limits<double>::quiet_NaN();
    double attr_r2_mean = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> attr_r2;  // per attribute, on the training split
    bool is_best = false;
};

struct TrainTrace {
    std::vector<std::string> attr_names;
    std::vector<EpochRecord> epochs;

    std::string to_tsv() const;
};

struct Checkpoint {
    int epoch = -1;
    ModelConfig config;
    std::vector<int> attr_classes;
    std::vector<std::string> attr_names;
    std::map<std::string, std::vector<double>> params;
    std::map<std::string, std::vector<double>> state;  // batchnorm running stats

    struct OptState {
        long step_count = 0;
        std::map<std::string, std::vector<double>> m;
        std::map<std::string, std::vector<double>> v;
    };
    OptState opt_bp, opt_dist, opt_task;

    RngState train_rng;
    std::string preprocess_ref;  // content hash of the PreprocessArtifact

    // Selection bookkeeping carried across resumes.
    int best_epoch = -1;
    double best_val_mae = std::numeric_limits<double>::infinity();

    std::string to_json() const;
    static Checkpoint from_json(const std::string& text);
};

struct StepRecord {
    double l_bp = 0.0;    // mean over the bias-predictor updates
    double l_dist = 0.0;  // mean over the distiller updates
    double l_task = 0.0;
};

// Owns the model, the three optimizers, and the training RNG stream.
class TrainContext {
public:
    TrainContext(const ModelConfig& cfg, std::vector<int> attr_classes,
                 std::vector<std::string> attr_names);
    static TrainContext restore(const Checkpoint& ckpt);

    StepRecord train_step(const TrainingData& data);

    Checkpoint snapshot(int epoch, const std::string& preprocess_ref) const;
    void load_weights(const Checkpoint& ckpt);  // params + state only

    AdversarialModel& model() { return model_; }
    const AdversarialModel& model() const { return model_; }
    RngState& rng() { return rng_; }
    long bp_steps() const { return opt_bp_.step_count(); }
    long dist_steps() const { return opt_dist_.step_count(); }
    long task_steps() const { return opt_task_.step_count(); }

private:
    TrainBatch next_batch(const TrainingData& data, TrainBatch& phase_batch,
                          bool first_in_phase);

    AdversarialModel model_;
    std::vector<std::string> attr_names_;
    std::vector<ParamRef> enc_params_, task_all_params_, bp_params_;
    AdamOptimizer opt_bp_, opt_dist_, opt_task_;
    RngState rng_;

    friend struct FitRunner;
};

struct EvalSplit {
    Mat x;
    Vec age;
};

struct FitResult {
    Checkpoint best;         // state at the selected epoch
    Checkpoint final_state;  // end-of-run state, usable for resumption
    TrainTrace trace;
    int best_epoch = -1;
    double best_val_mae = std::numeric_limits<double>::quiet_NaN();
    bool best_from_this_run = true;  // false if a resumed run's best predates it
    bool aborted = false;            // non-finite loss; best holds last good state
};

using CheckpointSink = std::function<void(const Checkpoint&)>;

// Runs cfg.max_epochs epochs (or cfg.fixed_epochs when set, emitting periodic
// checkpoints through `periodic`). Selection: lowest validation MAE among
// epochs >= cfg.burn_in_epochs (0-based); falls back to the final epoch when
// no epoch is eligible. With cfg.fixed_epochs and cfg.best_epoch >= 0, the
// configured epoch is reported instead.
FitResult fit(const TrainingData& train, const EvalSplit& val,
              const ModelConfig& cfg, const std::string& preprocess_ref = "",
              const Checkpoint* resume = nullptr,
              const CheckpointSink& periodic = nullptr);

}  // namespace agepred
