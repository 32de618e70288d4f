#pragma once
// Sequential dense-network kernel with exact reverse-mode gradients. A Stack
// owns layer parameters and produces a Tape on forward; backward consumes the
// tape and accumulates parameter gradients. f64 throughout.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agepred/optimizer.hpp"
#include "agepred/rng.hpp"

namespace agepred {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class Mode { Train, Eval };

enum class LayerKind {
    Dense,
    BatchNorm,
    Relu,
    Dropout,
    GaussianNoise,
    Softmax,
    Identity,
};

struct LayerSpec {
    LayerKind kind = LayerKind::Identity;
    int in_dim = 0;   // dense
    int out_dim = 0;  // dense
    double l2 = 0.0;        // dense weight decay coefficient
    double rate = 0.0;      // dropout, in [0, 1)
    double noise_std = 0.0; // gaussian noise

    static LayerSpec dense(int in, int out, double l2 = 0.0);
    static LayerSpec batchnorm();
    static LayerSpec relu();
    static LayerSpec dropout(double rate);
    static LayerSpec gaussian_noise(double std);
    static LayerSpec softmax();
    static LayerSpec identity();
};

struct LayerTape {
    Mat input;        // dense / relu / batchnorm input
    Mat mask;         // dropout keep-mask (scaled)
    Mat xhat;         // batchnorm normalized activations
    Vec inv_std;      // batchnorm 1/sqrt(var+eps) actually used
    Mat softmax_out;
    bool bn_used_batch_stats = false;
};

struct Tape {
    std::vector<LayerTape> recs;
    Mat output;
    Mode mode = Mode::Eval;
    bool consumed = false;
    Eigen::Index batch = 0;
};

class Stack {
public:
    // Batchnorm running statistics follow an exponential moving average.
    static constexpr double kBnDecay = 0.99;
    static constexpr double kBnEps = 1e-3;

    Stack() = default;
    Stack(int input_dim, std::vector<LayerSpec> specs);

    // He-uniform kernels, zero biases, unit gamma / zero beta.
    void init_params(RngState& rng);

    // Train mode samples dropout masks and gaussian noise from `rng` and
    // updates batchnorm running statistics; eval mode is pure.
    Tape forward(const Mat& x, Mode mode, RngState& rng);

    // Eval-mode forward without a tape; const and deterministic.
    Mat infer(const Mat& x) const;

    // Accumulates parameter gradients (unless accumulate_grads is false, used
    // for frozen subnetworks) and returns the gradient w.r.t. the input.
    // Dense l2 contributes 2*l2*w to kernel gradients.
    Mat backward(Tape& tape, const Mat& upstream, bool accumulate_grads = true);

    void zero_grads();
    double l2_value() const;  // sum of l2 * ||w||^2 over dense layers

    // Trainable parameters / non-trainable state, names prefixed for
    // checkpointing. Pointers stay valid for the lifetime of the stack.
    std::vector<ParamRef> params(const std::string& prefix = "");
    std::vector<ParamRef> state(const std::string& prefix = "");

    int input_dim() const { return input_dim_; }
    int output_dim() const { return output_dim_; }
    const std::vector<LayerSpec>& specs() const { return specs_; }

private:
    struct Slot {
        LayerSpec spec;
        int dim = 0;  // feature width at this layer's output
        // dense
        Mat w;
        Vec b;
        Mat gw;
        Vec gb;
        // batchnorm
        Vec gamma, beta, g_gamma, g_beta;
        Vec run_mean, run_var;
    };

    int input_dim_ = 0;
    int output_dim_ = 0;
    std::vector<LayerSpec> specs_;
    std::vector<Slot> slots_;
};

}  // namespace agepred
