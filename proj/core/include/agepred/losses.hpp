#pragma once
// Loss functions returning value and gradient together.

#include <Eigen/Dense>

namespace agepred {

struct MseResult {
    double value = 0.0;
    Eigen::VectorXd grad;  // 2 * (pred - target) / N
};

MseResult mse_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target);

struct CrossEntropyResult {
    double value = 0.0;          // mean over batch, natural log
    Eigen::MatrixXd grad;        // (softmax - onehot) / N
    Eigen::MatrixXd softmax;
};

// Each one-hot row must contain a single 1 and zeros elsewhere.
CrossEntropyResult categorical_cross_entropy(const Eigen::MatrixXd& logits,
                                             const Eigen::MatrixXd& onehot);

}  // namespace agepred
