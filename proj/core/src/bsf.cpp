#include "agepred/bsf.hpp"

#include <algorithm>

#include "agepred/errors.hpp"

namespace agepred {

BsfLayer::BsfLayer(int dim) {
    if (dim <= 0) throw ShapeError("bsf dim must be positive");
    w_ = Vec::Ones(dim);  // all genes start switched on
    gw_ = Vec::Zero(dim);
}

void BsfLayer::check_weights() const {
    for (Eigen::Index j = 0; j < w_.size(); ++j) {
        if (!(w_[j] >= 0.0 && w_[j] <= 1.0)) {
            throw InvariantError("bsf weight outside [0, 1] at index " +
                                 std::to_string(j));
        }
    }
}

std::pair<Mat, BsfTape> BsfLayer::forward(const Mat& x, Mode mode, RngState& rng,
                                          double mask_threshold,
                                          bool per_sample_mask) {
    if (x.cols() != w_.size()) throw ShapeError("bsf input width mismatch");
    check_weights();

    BsfTape tape;
    tape.train = (mode == Mode::Train);
    tape.input = x;
    tape.mask.resize(x.rows(), x.cols());
    if (mode == Mode::Train) {
        if (per_sample_mask) {
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                for (Eigen::Index j = 0; j < x.cols(); ++j) {
                    tape.mask(i, j) = rng.next_bernoulli(w_[j]) ? 1.0 : 0.0;
                }
            }
        } else {
            Eigen::RowVectorXd z(x.cols());
            for (Eigen::Index j = 0; j < x.cols(); ++j) {
                z[j] = rng.next_bernoulli(w_[j]) ? 1.0 : 0.0;
            }
            tape.mask.rowwise() = z;
        }
    } else {
        Eigen::RowVectorXd z(x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            z[j] = w_[j] > mask_threshold ? 1.0 : 0.0;
        }
        tape.mask.rowwise() = z;
    }
    return {x.cwiseProduct(tape.mask), std::move(tape)};
}

Mat BsfLayer::infer(const Mat& x, double mask_threshold) const {
    if (x.cols() != w_.size()) throw ShapeError("bsf input width mismatch");
    check_weights();
    Mat out = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (!(w_[j] > mask_threshold)) out.col(j).setZero();
    }
    return out;
}

Mat BsfLayer::backward(BsfTape& tape, const Mat& upstream, bool accumulate_grads) {
    if (!tape.train) throw TapeError("bsf backward needs a train-mode tape");
    if (tape.consumed) throw TapeError("bsf tape already consumed");
    tape.consumed = true;
    if (upstream.rows() != tape.input.rows() ||
        upstream.cols() != tape.input.cols()) {
        throw ShapeError("bsf upstream shape mismatch");
    }
    if (accumulate_grads) {
        // Straight-through: d z_j / d w_j treated as 1.
        gw_ += upstream.cwiseProduct(tape.input).colwise().sum().transpose();
    }
    return upstream.cwiseProduct(tape.mask);
}

double BsfLayer::penalty(const SparsityPenalty& pen, bool accumulate_grads) {
    const double excess = w_.sum() - pen.cut_threshold;
    if (excess <= 0.0) return 0.0;
    if (accumulate_grads) gw_.array() += pen.strength;
    return pen.strength * excess;
}

std::vector<ParamRef> BsfLayer::params(const std::string& prefix) {
    return {{prefix + "bsf.w", w_.data(), gw_.data(), w_.size()}};
}

GeneRanking BsfLayer::export_ranking(const std::vector<std::string>& gene_ids,
                                     double mask_threshold) const {
    if (Eigen::Index(gene_ids.size()) != w_.size()) {
        throw ShapeError("gene id list does not match bsf dimension");
    }
    GeneRanking out;
    for (Eigen::Index j = 0; j < w_.size(); ++j) {
        if (w_[j] > mask_threshold) {
            out.entries.emplace_back(gene_ids[std::size_t(j)], w_[j]);
        }
    }
    std::sort(out.entries.begin(), out.entries.end(),
              [](const auto& a, const auto& b) {
                  if (a.second != b.second) return a.second > b.second;
                  return a.first < b.first;
              });
    return out;
}

}  // namespace agepred
