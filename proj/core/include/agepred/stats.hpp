#pragma once
// Quantitative evaluation machinery: regression metrics, cross-dataset
// coefficient of variation, per-class attribute correlation, tissue bias,
// Welch's t-test (self-contained t CDF via the regularized incomplete beta),
// and Benjamini-Hochberg adjustment.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace agepred {

struct RegressionMetrics {
    double mae = 0.0;
    double r2 = 0.0;       // NaN when the targets have zero variance
    bool r2_defined = true;
};

// MAE = mean |yhat - y|; R^2 = 1 - SS_res / SS_tot.
RegressionMetrics regression_metrics(std::span<const double> y_true,
                                     std::span<const double> y_pred);

// 100 * sigma / mu over dataset-level means. Population sigma by default;
// sample_form switches to the (n-1) denominator for sensitivity checks.
double cross_dataset_cv(std::span<const double> dataset_means,
                        bool sample_form = false);

struct AttributeR2 {
    double mean_r2 = 0.0;
    std::vector<double> per_class;
    std::vector<bool> degenerate;  // zero-variance classes, counted as 0
};

// Per class: squared Pearson correlation between the one-hot indicator column
// and the predicted probability column, averaged over classes.
AttributeR2 attribute_r2(const Eigen::MatrixXd& probs,
                         const Eigen::MatrixXd& onehot);

// Population variance of per-tissue mean absolute residuals.
// Empty optional when fewer than two tissues are present.
std::optional<double> tissue_bias_variance(
    std::span<const double> abs_residuals,
    std::span<const std::string> tissues);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided
};

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

std::vector<double> bh_adjust(std::span<const double> p_values);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
// Exposed because the t CDF below is built on it and tests probe it directly.
double incomplete_beta(double a, double b, double x);

// CDF of Student's t distribution with df degrees of freedom.
double student_t_cdf(double t, double df);

}  // namespace agepred
