#include "agepred/stack.hpp"

#include <cmath>

#include "agepred/errors.hpp"

namespace agepred {

LayerSpec LayerSpec::dense(int in, int out, double l2) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_dim = in;
    s.out_dim = out;
    s.l2 = l2;
    return s;
}
LayerSpec LayerSpec::batchnorm() { return LayerSpec{LayerKind::BatchNorm}; }
LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::Relu}; }
LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}
LayerSpec LayerSpec::gaussian_noise(double std) {
    LayerSpec s;
    s.kind = LayerKind::GaussianNoise;
    s.noise_std = std;
    return s;
}
LayerSpec LayerSpec::softmax() { return LayerSpec{LayerKind::Softmax}; }
LayerSpec LayerSpec::identity() { return LayerSpec{LayerKind::Identity}; }

Stack::Stack(int input_dim, std::vector<LayerSpec> specs)
    : input_dim_(input_dim), specs_(std::move(specs)) {
    if (input_dim <= 0) throw ShapeError("stack input dim must be positive");
    int dim = input_dim;
    slots_.reserve(specs_.size());
    for (const auto& spec : specs_) {
        Slot slot;
        slot.spec = spec;
        switch (spec.kind) {
            case LayerKind::Dense:
                if (spec.in_dim != dim) {
                    throw ShapeError("dense in_dim " + std::to_string(spec.in_dim) +
                                     " does not chain from " + std::to_string(dim));
                }
                if (spec.out_dim <= 0) throw ShapeError("dense out_dim must be positive");
                if (spec.l2 < 0) throw ShapeError("dense l2 must be nonnegative");
                slot.w = Mat::Zero(spec.in_dim, spec.out_dim);
                slot.b = Vec::Zero(spec.out_dim);
                slot.gw = Mat::Zero(spec.in_dim, spec.out_dim);
                slot.gb = Vec::Zero(spec.out_dim);
                dim = spec.out_dim;
                break;
            case LayerKind::BatchNorm:
                slot.gamma = Vec::Ones(dim);
                slot.beta = Vec::Zero(dim);
                slot.g_gamma = Vec::Zero(dim);
                slot.g_beta = Vec::Zero(dim);
                slot.run_mean = Vec::Zero(dim);
                slot.run_var = Vec::Ones(dim);
                break;
            case LayerKind::Dropout:
                if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
                    throw ShapeError("dropout rate must lie in [0, 1)");
                }
                break;
            case LayerKind::GaussianNoise:
                if (spec.noise_std < 0.0) throw ShapeError("noise std must be >= 0");
                break;
            default:
                break;
        }
        slot.dim = dim;
        slots_.push_back(std::move(slot));
    }
    output_dim_ = dim;
}

void Stack::init_params(RngState& rng) {
    for (auto& slot : slots_) {
        if (slot.spec.kind == LayerKind::Dense) {
            const double limit = std::sqrt(6.0 / double(slot.spec.in_dim));
            double* w = slot.w.data();
            for (Eigen::Index k = 0; k < slot.w.size(); ++k) {
                w[k] = rng.next_uniform(-limit, limit);
            }
            slot.b.setZero();
        } else if (slot.spec.kind == LayerKind::BatchNorm) {
            slot.gamma.setOnes();
            slot.beta.setZero();
            slot.run_mean.setZero();
            slot.run_var.setOnes();
        }
    }
}

Tape Stack::forward(const Mat& x, Mode mode, RngState& rng) {
    if (x.cols() != input_dim_) {
        throw ShapeError("stack expects width " + std::to_string(input_dim_) +
                         ", got " + std::to_string(x.cols()));
    }
    if (!x.allFinite()) throw NumericsError("non-finite input to forward");

    Tape tape;
    tape.mode = mode;
    tape.batch = x.rows();
    tape.recs.resize(slots_.size());

    Mat cur = x;
    const double n = double(x.rows());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        Slot& slot = slots_[i];
        LayerTape& rec = tape.recs[i];
        switch (slot.spec.kind) {
            case LayerKind::Dense: {
                rec.input = cur;
                cur = (cur * slot.w).rowwise() + slot.b.transpose();
                break;
            }
            case LayerKind::BatchNorm: {
                rec.xhat.resize(cur.rows(), cur.cols());
                rec.inv_std.resize(slot.dim);
                if (mode == Mode::Train) {
                    Vec mean(slot.dim), var(slot.dim);
                    for (Eigen::Index j = 0; j < slot.dim; ++j) {
                        mean[j] = cur.col(j).mean();
                        var[j] = (cur.col(j).array() - mean[j]).square().sum() / n;
                        rec.inv_std[j] = 1.0 / std::sqrt(var[j] + kBnEps);
                        rec.xhat.col(j) = ((cur.col(j).array() - mean[j]) * rec.inv_std[j]).matrix();
                    }
                    rec.bn_used_batch_stats = true;
                    slot.run_mean = kBnDecay * slot.run_mean + (1.0 - kBnDecay) * mean;
                    slot.run_var = kBnDecay * slot.run_var + (1.0 - kBnDecay) * var;
                } else {
                    for (Eigen::Index j = 0; j < slot.dim; ++j) {
                        rec.inv_std[j] = 1.0 / std::sqrt(slot.run_var[j] + kBnEps);
                        rec.xhat.col(j) =
                            ((cur.col(j).array() - slot.run_mean[j]) * rec.inv_std[j])
                                .matrix();
                    }
                    rec.bn_used_batch_stats = false;
                }
                for (Eigen::Index j = 0; j < slot.dim; ++j) {
                    cur.col(j) = (rec.xhat.col(j).array() * slot.gamma[j] + slot.beta[j]).matrix();
                }
                break;
            }
            case LayerKind::Relu: {
                rec.input = cur;
                cur = cur.cwiseMax(0.0);
                break;
            }
            case LayerKind::Dropout: {
                if (mode == Mode::Train && slot.spec.rate > 0.0) {
                    const double keep = 1.0 - slot.spec.rate;
                    rec.mask.resize(cur.rows(), cur.cols());
                    double* m = rec.mask.data();
                    for (Eigen::Index k = 0; k < rec.mask.size(); ++k) {
                        m[k] = rng.next_double() < keep ? 1.0 / keep : 0.0;
                    }
                    cur = cur.cwiseProduct(rec.mask);
                }
                break;
            }
            case LayerKind::GaussianNoise: {
                if (mode == Mode::Train && slot.spec.noise_std > 0.0) {
                    Mat noise(cur.rows(), cur.cols());
                    double* nz = noise.data();
                    for (Eigen::Index k = 0; k < noise.size(); ++k) {
                        nz[k] = slot.spec.noise_std * rng.next_gaussian();
                    }
                    cur += noise;
                }
                break;
            }
            case LayerKind::Softmax: {
                rec.softmax_out.resize(cur.rows(), cur.cols());
                for (Eigen::Index r = 0; r < cur.rows(); ++r) {
                    const double mx = cur.row(r).maxCoeff();
                    Eigen::RowVectorXd e = (cur.row(r).array() - mx).exp().matrix();
                    rec.softmax_out.row(r) = e / e.sum();
                }
                cur = rec.softmax_out;
                break;
            }
            case LayerKind::Identity:
                break;
        }
    }
    if (!cur.allFinite()) throw NumericsError("non-finite activation in forward");
    tape.output = std::move(cur);
    return tape;
}

Mat Stack::infer(const Mat& x) const {
    if (x.cols() != input_dim_) {
        throw ShapeError("stack expects width " + std::to_string(input_dim_) +
                         ", got " + std::to_string(x.cols()));
    }
    Mat cur = x;
    for (const Slot& slot : slots_) {
        switch (slot.spec.kind) {
            case LayerKind::Dense:
                cur = (cur * slot.w).rowwise() + slot.b.transpose();
                break;
            case LayerKind::BatchNorm: {
                for (Eigen::Index j = 0; j < slot.dim; ++j) {
                    const double inv_std = 1.0 / std::sqrt(slot.run_var[j] + kBnEps);
                    cur.col(j) = ((cur.col(j).array() - slot.run_mean[j]) * inv_std *
                                      slot.gamma[j] +
                                  slot.beta[j])
                                     .matrix();
                }
                break;
            }
            case LayerKind::Relu:
                cur = cur.cwiseMax(0.0);
                break;
            case LayerKind::Softmax: {
                for (Eigen::Index r = 0; r < cur.rows(); ++r) {
                    const double mx = cur.row(r).maxCoeff();
                    Eigen::RowVectorXd e = (cur.row(r).array() - mx).exp().matrix();
                    cur.row(r) = e / e.sum();
                }
                break;
            }
            default:
                break;  // dropout, noise, identity: eval passthrough
        }
    }
    if (!cur.allFinite()) throw NumericsError("non-finite activation in infer");
    return cur;
}

Mat Stack::backward(Tape& tape, const Mat& upstream, bool accumulate_grads) {
    if (tape.consumed) throw TapeError("tape already consumed");
    if (tape.recs.size() != slots_.size()) throw TapeError("tape does not match stack");
    if (upstream.rows() != tape.batch || upstream.cols() != output_dim_) {
        throw ShapeError("upstream gradient shape mismatch");
    }
    tape.consumed = true;

    Mat up = upstream;
    const double n = double(tape.batch);
    for (std::size_t idx = slots_.size(); idx-- > 0;) {
        Slot& slot = slots_[idx];
        LayerTape& rec = tape.recs[idx];
        switch (slot.spec.kind) {
            case LayerKind::Dense: {
                if (accumulate_grads) {
                    slot.gw.noalias() += rec.input.transpose() * up;
                    if (slot.spec.l2 > 0.0) slot.gw += 2.0 * slot.spec.l2 * slot.w;
                    slot.gb += up.colwise().sum().transpose();
                }
                up = up * slot.w.transpose();
                break;
            }
            case LayerKind::BatchNorm: {
                if (accumulate_grads) {
                    for (Eigen::Index j = 0; j < slot.dim; ++j) {
                        slot.g_gamma[j] += up.col(j).dot(rec.xhat.col(j));
                        slot.g_beta[j] += up.col(j).sum();
                    }
                }
                Mat gx(up.rows(), up.cols());
                if (rec.bn_used_batch_stats) {
                    for (Eigen::Index j = 0; j < slot.dim; ++j) {
                        const double scale = slot.gamma[j] * rec.inv_std[j] / n;
                        const double sum_up = up.col(j).sum();
                        const double sum_up_xhat = up.col(j).dot(rec.xhat.col(j));
                        gx.col(j) = (scale * (n * up.col(j).array() - sum_up -
                                                 rec.xhat.col(j).array() * sum_up_xhat))
                                        .matrix();
                    }
                } else {
                    // Running statistics are constants in eval mode.
                    for (Eigen::Index j = 0; j < slot.dim; ++j) {
                        gx.col(j) = up.col(j) * (slot.gamma[j] * rec.inv_std[j]);
                    }
                }
                up = std::move(gx);
                break;
            }
            case LayerKind::Relu: {
                up = up.cwiseProduct(
                    (rec.input.array() > 0.0).cast<double>().matrix());
                break;
            }
            case LayerKind::Dropout: {
                if (rec.mask.size() > 0) up = up.cwiseProduct(rec.mask);
                break;
            }
            case LayerKind::GaussianNoise:
            case LayerKind::Identity:
                break;  // additive noise and identity pass gradients through
            case LayerKind::Softmax: {
                const Mat& s = rec.softmax_out;
                Mat gx(up.rows(), up.cols());
                for (Eigen::Index r = 0; r < up.rows(); ++r) {
                    const double dot = up.row(r).dot(s.row(r));
                    gx.row(r) = s.row(r).cwiseProduct((up.row(r).array() - dot).matrix());
                }
                up = std::move(gx);
                break;
            }
        }
    }
    return up;
}

void Stack::zero_grads() {
    for (auto& slot : slots_) {
        if (slot.spec.kind == LayerKind::Dense) {
            slot.gw.setZero();
            slot.gb.setZero();
        } else if (slot.spec.kind == LayerKind::BatchNorm) {
            slot.g_gamma.setZero();
            slot.g_beta.setZero();
        }
    }
}

double Stack::l2_value() const {
    double total = 0.0;
    for (const auto& slot : slots_) {
        if (slot.spec.kind == LayerKind::Dense && slot.spec.l2 > 0.0) {
            total += slot.spec.l2 * slot.w.squaredNorm();
        }
    }
    return total;
}

std::vector<ParamRef> Stack::params(const std::string& prefix) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        Slot& slot = slots_[i];
        const std::string base = prefix + "layer" + std::to_string(i);
        if (slot.spec.kind == LayerKind::Dense) {
            out.push_back({base + ".w", slot.w.data(), slot.gw.data(), slot.w.size()});
            out.push_back({base + ".b", slot.b.data(), slot.gb.data(), slot.b.size()});
        } else if (slot.spec.kind == LayerKind::BatchNorm) {
            out.push_back({base + ".gamma", slot.gamma.data(), slot.g_gamma.data(),
                           slot.gamma.size()});
            out.push_back({base + ".beta", slot.beta.data(), slot.g_beta.data(),
                           slot.beta.size()});
        }
    }
    return out;
}

std::vector<ParamRef> Stack::state(const std::string& prefix) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        Slot& slot = slots_[i];
        const std::string base = prefix + "layer" + std::to_string(i);
        if (slot.spec.kind == LayerKind::BatchNorm) {
            out.push_back({base + ".run_mean", slot.run_mean.data(), nullptr,
                           slot.run_mean.size()});
            out.push_back({base + ".run_var", slot.run_var.data(), nullptr,
                           slot.run_var.size()});
        }
    }
    return out;
}

}  // namespace agepred
