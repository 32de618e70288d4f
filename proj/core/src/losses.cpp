#include "agepred/losses.hpp"

#include <cmath>

#include "agepred/errors.hpp"

namespace agepred {

MseResult mse_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
    if (pred.size() == 0) throw EmptyBatchError("mse_loss: empty batch");
    if (pred.size() != target.size()) {
        throw ShapeError("mse_loss: length mismatch");
    }
    const double n = double(pred.size());
    MseResult out;
    const Eigen::VectorXd diff = pred - target;
    out.value = diff.squaredNorm() / n;
    out.grad = 2.0 * diff / n;
    return out;
}

CrossEntropyResult categorical_cross_entropy(const Eigen::MatrixXd& logits,
                                             const Eigen::MatrixXd& onehot) {
    const auto n = logits.rows();
    const auto k = logits.cols();
    if (n == 0) throw EmptyBatchError("cross_entropy: empty batch");
    if (onehot.rows() != n || onehot.cols() != k) {
        throw ShapeError("cross_entropy: shape mismatch");
    }

    CrossEntropyResult out;
    out.softmax.resize(n, k);
    out.grad.resize(n, k);
    double total = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        int ones = 0;
        Eigen::Index true_class = 0;
        for (Eigen::Index c = 0; c < k; ++c) {
            const double v = onehot(r, c);
            if (v == 1.0) {
                ++ones;
                true_class = c;
            } else if (v != 0.0) {
                throw LabelError("one-hot row has entry outside {0, 1}");
            }
        }
        if (ones != 1) throw LabelError("one-hot row must contain exactly one 1");

        const double mx = logits.row(r).maxCoeff();
        const Eigen::RowVectorXd shifted = logits.row(r).array() - mx;
        const double log_sum = std::log(shifted.array().exp().sum());
        out.softmax.row(r) = (shifted.array() - log_sum).exp().matrix();
        total += -(shifted[true_class] - log_sum);
    }
    out.value = total / double(n);
    out.grad = (out.softmax - onehot) / double(n);
    return out;
}

}  // namespace agepred
