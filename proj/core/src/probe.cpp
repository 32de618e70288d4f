#include "agepred/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "agepred/errors.hpp"

namespace agepred {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct ProbeSplit {
    std::vector<Eigen::Index> train, test;
};

// Stratified split: per class, a seeded shuffle, then round(train_frac * n)
// samples to the training side (clamped so both sides stay nonempty).
ProbeSplit stratified_split(const std::vector<int>& y, int n_classes,
                            double train_frac, RngState& rng) {
    std::vector<std::vector<Eigen::Index>> per_class(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < y.size(); ++i) {
        per_class[std::size_t(y[i])].push_back(Eigen::Index(i));
    }
    ProbeSplit split;
    for (auto& members : per_class) {
        if (members.size() < 2) {
            throw StratifyError("class with fewer than 2 samples");
        }
        for (std::size_t k = members.size(); k-- > 1;) {
            std::size_t j = std::size_t(rng.next_below(k + 1));
            std::swap(members[k], members[j]);
        }
        auto n_train = std::size_t(std::llround(train_frac * double(members.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
        for (std::size_t k = 0; k < members.size(); ++k) {
            (k < n_train ? split.train : split.test).push_back(members[k]);
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

Mat gather_rows(const Mat& x, const std::vector<Eigen::Index>& idx) {
    Mat out(Eigen::Index(idx.size()), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(Eigen::Index(r)) = x.row(idx[r]);
    return out;
}

// Columnwise standardization fitted on the training rows; degenerate columns
// get unit scale.
void standardize_in_place(Mat& train, Mat& test) {
    const double n = double(train.rows());
    for (Eigen::Index j = 0; j < train.cols(); ++j) {
        const double m = train.col(j).mean();
        double sd = std::sqrt((train.col(j).array() - m).square().sum() / n);
        if (sd < 1e-12) sd = 1.0;
        train.col(j) = ((train.col(j).array() - m) / sd).matrix();
        test.col(j) = ((test.col(j).array() - m) / sd).matrix();
    }
}

struct SoftmaxFit {
    Mat w;  // (d+1) x K, last row is the unregularized bias
};

double softmax_loss(const Mat& xb, const std::vector<int>& y, const Mat& w,
                    double l2, Mat* grad) {
    const Eigen::Index n = xb.rows();
    const Eigen::Index k = w.cols();
    Mat logits = xb * w;
    Mat probs(n, k);
    double loss = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mx = logits.row(r).maxCoeff();
        Eigen::RowVectorXd shifted = (logits.row(r).array() - mx).matrix();
        const double log_sum = std::log(shifted.array().exp().sum());
        probs.row(r) = (shifted.array() - log_sum).exp().matrix();
        loss -= shifted[y[std::size_t(r)]] - log_sum;
    }
    loss /= double(n);
    const Eigen::Index d = w.rows() - 1;
    loss += l2 * w.topRows(d).squaredNorm();
    if (grad) {
        Mat delta = probs;
        for (Eigen::Index r = 0; r < n; ++r) delta(r, y[std::size_t(r)]) -= 1.0;
        *grad = xb.transpose() * delta / double(n);
        grad->topRows(d) += 2.0 * l2 * w.topRows(d);
    }
    return loss;
}

// Full-batch gradient descent with a deterministic backtracking step size.
SoftmaxFit fit_softmax(const Mat& x, const std::vector<int>& y, int n_classes,
                       const ProbeOptions& opt) {
    Mat xb(x.rows(), x.cols() + 1);
    xb.leftCols(x.cols()) = x;
    xb.col(x.cols()).setOnes();

    SoftmaxFit fit;
    fit.w = Mat::Zero(xb.cols(), n_classes);

    double lr = 1.0;
    Mat grad;
    double loss = softmax_loss(xb, y, fit.w, opt.l2, &grad);
    for (int it = 0; it < opt.max_iters; ++it) {
        Mat w_next = fit.w - lr * grad;
        Mat grad_next;
        double loss_next = softmax_loss(xb, y, w_next, opt.l2, &grad_next);
        if (loss_next > loss && lr > 1e-6) {
            lr *= 0.5;
            continue;
        }
        const double delta = std::fabs(loss - loss_next);
        fit.w = std::move(w_next);
        grad = std::move(grad_next);
        loss = loss_next;
        lr = std::min(lr * 1.05, 10.0);
        if (delta <= opt.tol * std::max(1.0, std::fabs(loss))) break;
    }
    return fit;
}

std::vector<int> predict_classes(const Mat& x, const SoftmaxFit& fit) {
    Mat xb(x.rows(), x.cols() + 1);
    xb.leftCols(x.cols()) = x;
    xb.col(x.cols()).setOnes();
    Mat logits = xb * fit.w;
    std::vector<int> out(std::size_t(x.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index best = 0;
        logits.row(r).maxCoeff(&best);
        out[std::size_t(r)] = int(best);
    }
    return out;
}

double balanced_accuracy(const std::vector<int>& y_true,
                         const std::vector<int>& y_pred, int n_classes) {
    std::vector<double> correct(std::size_t(n_classes), 0.0);
    std::vector<double> total(std::size_t(n_classes), 0.0);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        total[std::size_t(y_true[i])] += 1.0;
        if (y_true[i] == y_pred[i]) correct[std::size_t(y_true[i])] += 1.0;
    }
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < n_classes; ++c) {
        if (total[std::size_t(c)] > 0) {
            sum += correct[std::size_t(c)] / total[std::size_t(c)];
            ++counted;
        }
    }
    return counted > 0 ? sum / double(counted) : 0.0;
}

// One probe round: split, standardize, fit, score on the held-out side.
double run_probe(const Mat& latent, const std::vector<int>& y, int n_classes,
                 RngState& rng, const ProbeOptions& opt, bool balanced,
                 int* n_train = nullptr, int* n_test = nullptr) {
    ProbeSplit split = stratified_split(y, n_classes, opt.train_frac, rng);
    Mat x_train = gather_rows(latent, split.train);
    Mat x_test = gather_rows(latent, split.test);
    standardize_in_place(x_train, x_test);

    std::vector<int> y_train, y_test;
    for (auto i : split.train) y_train.push_back(y[std::size_t(i)]);
    for (auto i : split.test) y_test.push_back(y[std::size_t(i)]);

    SoftmaxFit fit = fit_softmax(x_train, y_train, n_classes, opt);
    std::vector<int> pred = predict_classes(x_test, fit);

    if (n_train) *n_train = int(split.train.size());
    if (n_test) *n_test = int(split.test.size());
    if (balanced) return balanced_accuracy(y_test, pred, n_classes);
    double errors = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] != y_test[i]) errors += 1.0;
    }
    return errors / double(pred.size());
}

}  // namespace

ProbeReport probe_attribute(const Eigen::MatrixXd& latent,
                            const std::vector<std::string>& labels,
                            std::uint64_t seed, const ProbeOptions& opt) {
    if (Eigen::Index(labels.size()) != latent.rows()) {
        throw ShapeError("probe: labels do not match latent rows");
    }
    std::map<std::string, int> vocab;
    for (const auto& l : labels) vocab.emplace(l, 0);
    int next = 0;
    for (auto& [_, id] : vocab) id = next++;
    if (vocab.size() < 2) {
        throw StratifyError("probe needs at least two attribute levels");
    }
    std::vector<int> y;
    y.reserve(labels.size());
    for (const auto& l : labels) y.push_back(vocab.at(l));

    ProbeReport rep;
    rep.n_classes = int(vocab.size());

    RngState rng = RngState::derive(seed, 101);
    rep.balanced_accuracy = run_probe(latent, y, rep.n_classes, rng, opt,
                                      /*balanced=*/true, &rep.n_train, &rep.n_test);

    // Permutation baseline: shuffle the labels once, rerun the identical
    // procedure.
    RngState perm_rng = RngState::derive(seed, 202);
    std::vector<int> y_perm = y;
    for (std::size_t k = y_perm.size(); k-- > 1;) {
        std::size_t j = std::size_t(perm_rng.next_below(k + 1));
        std::swap(y_perm[k], y_perm[j]);
    }
    rep.permutation_baseline =
        run_probe(latent, y_perm, rep.n_classes, perm_rng, opt, /*balanced=*/true);
    return rep;
}

double proxy_divergence(const Eigen::MatrixXd& f_source,
                        const Eigen::MatrixXd& f_target, std::uint64_t seed,
                        const ProbeOptions& opt) {
    if (f_source.rows() == 0 || f_target.rows() == 0) {
        throw EmptyBatchError("proxy_divergence: empty latent set");
    }
    if (f_source.cols() != f_target.cols()) {
        throw ShapeError("proxy_divergence: latent widths differ");
    }
    Mat all(f_source.rows() + f_target.rows(), f_source.cols());
    all.topRows(f_source.rows()) = f_source;
    all.bottomRows(f_target.rows()) = f_target;
    std::vector<int> y(std::size_t(all.rows()), 0);
    for (Eigen::Index i = f_source.rows(); i < all.rows(); ++i) {
        y[std::size_t(i)] = 1;
    }
    RngState rng = RngState::derive(seed, 303);
    const double err = run_probe(all, y, 2, rng, opt, /*balanced=*/false);
    return std::clamp(2.0 * (1.0 - 2.0 * err), 0.0, 2.0);
}

}  // namespace agepred
