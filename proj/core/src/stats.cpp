#include "agepred/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "agepred/errors.hpp"

namespace agepred {

namespace {

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

// Variance with selectable denominator.
double variance_of(std::span<const double> v, bool sample_form) {
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double denom = sample_form ? double(v.size()) - 1.0 : double(v.size());
    return ss / denom;
}

}  // namespace

RegressionMetrics regression_metrics(std::span<const double> y_true,
                                     std::span<const double> y_pred) {
    if (y_true.empty() || y_true.size() != y_pred.size()) {
        throw InvariantError("regression_metrics: lengths must match and be nonempty");
    }
    RegressionMetrics out;
    const std::size_t n = y_true.size();
    const double y_mean = mean_of(y_true);
    double abs_sum = 0.0, ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y_pred[i] - y_true[i];
        abs_sum += std::fabs(e);
        ss_res += e * e;
        const double d = y_true[i] - y_mean;
        ss_tot += d * d;
    }
    out.mae = abs_sum / double(n);
    if (ss_tot == 0.0) {
        out.r2 = std::numeric_limits<double>::quiet_NaN();
        out.r2_defined = false;
    } else {
        out.r2 = 1.0 - ss_res / ss_tot;
    }
    return out;
}

double cross_dataset_cv(std::span<const double> dataset_means, bool sample_form) {
    if (dataset_means.size() < 2) {
        throw InvariantError("cross_dataset_cv: needs at least two datasets");
    }
    const double mu = mean_of(dataset_means);
    if (mu == 0.0) throw DegenerateCvError("cross_dataset_cv: zero mean");
    const double sigma = std::sqrt(variance_of(dataset_means, sample_form));
    return 100.0 * sigma / mu;
}

AttributeR2 attribute_r2(const Eigen::MatrixXd& probs,
                         const Eigen::MatrixXd& onehot) {
    const auto n = probs.rows();
    const auto k = probs.cols();
    if (n == 0 || k < 2 || onehot.rows() != n || onehot.cols() != k) {
        throw InvariantError("attribute_r2: shapes must match, K >= 2");
    }
    AttributeR2 out;
    out.per_class.resize(std::size_t(k), 0.0);
    out.degenerate.resize(std::size_t(k), false);
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::VectorXd x = onehot.col(c);
        const Eigen::VectorXd y = probs.col(c);
        const double mx = x.mean();
        const double my = y.mean();
        const Eigen::VectorXd dx = x.array() - mx;
        const Eigen::VectorXd dy = y.array() - my;
        const double vx = dx.squaredNorm();
        const double vy = dy.squaredNorm();
        if (vx <= 0.0 || vy <= 0.0) {
            out.degenerate[std::size_t(c)] = true;
            continue;  // zero-variance class contributes 0
        }
        const double r = dx.dot(dy) / std::sqrt(vx * vy);
        out.per_class[std::size_t(c)] = r * r;
    }
    out.mean_r2 =
        std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) /
        double(k);
    return out;
}

std::optional<double> tissue_bias_variance(
    std::span<const double> abs_residuals,
    std::span<const std::string> tissues) {
    if (abs_residuals.size() != tissues.size()) {
        throw InvariantError("tissue_bias_variance: lengths must match");
    }
    std::unordered_map<std::string, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < tissues.size(); ++i) {
        auto& slot = acc[tissues[i]];
        slot.first += abs_residuals[i];
        slot.second += 1;
    }
    if (acc.size() < 2) return std::nullopt;
    std::vector<double> tissue_means;
    tissue_means.reserve(acc.size());
    for (const auto& [_, slot] : acc) {
        tissue_means.push_back(slot.first / double(slot.second));
    }
    return variance_of(tissue_means, /*sample_form=*/false);
}

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    // I_x(a,b) = x^a (1-x)^b / (a B(a,b)) * CF; use the symmetry that keeps
    // the continued fraction convergent (x < (a+1)/(a+b+2)).
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    auto contfrac = [](double a_, double b_, double x_) {
        // Lentz's algorithm.
        constexpr double tiny = 1e-300;
        constexpr double eps = 1e-16;
        double c = 1.0;
        double d = 1.0 - (a_ + b_) * x_ / (a_ + 1.0);
        if (std::fabs(d) < tiny) d = tiny;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= 500; ++m) {
            const double m2 = 2.0 * m;
            double num = m * (b_ - m) * x_ / ((a_ + m2 - 1.0) * (a_ + m2));
            d = 1.0 + num * d;
            if (std::fabs(d) < tiny) d = tiny;
            c = 1.0 + num / c;
            if (std::fabs(c) < tiny) c = tiny;
            d = 1.0 / d;
            h *= d * c;
            num = -(a_ + m) * (a_ + b_ + m) * x_ / ((a_ + m2) * (a_ + m2 + 1.0));
            d = 1.0 + num * d;
            if (std::fabs(d) < tiny) d = tiny;
            c = 1.0 + num / c;
            if (std::fabs(c) < tiny) c = tiny;
            d = 1.0 / d;
            const double delta = d * c;
            h *= delta;
            if (std::fabs(delta - 1.0) < eps) break;
        }
        return h;
    };
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return std::exp(ln_front) * contfrac(a, b, x) / a;
    }
    return 1.0 - std::exp(ln_front) * contfrac(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double x = df / (df + t * t);
    const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t > 0 ? 1.0 - tail : tail;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) {
        throw InvariantError("welch_t_test: each group needs >= 2 samples");
    }
    const double na = double(a.size());
    const double nb = double(b.size());
    const double ma = mean_of(a);
    const double mb = mean_of(b);
    const double va = variance_of(a, /*sample_form=*/true);
    const double vb = variance_of(b, /*sample_form=*/true);
    const double ra = va / na;
    const double rb = vb / nb;
    WelchResult out;
    if (ra + rb == 0.0) {
        // No variance in either group: p = 1 when the means agree, otherwise
        // the separation is infinitely significant.
        out.df = na + nb - 2.0;
        if (ma == mb) {
            out.t = 0.0;
            out.p = 1.0;
        } else {
            out.t = ma > mb ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
            out.p = 0.0;
        }
        return out;
    }
    out.t = (ma - mb) / std::sqrt(ra + rb);
    out.df = (ra + rb) * (ra + rb) /
             (ra * ra / (na - 1.0) + rb * rb / (nb - 1.0));
    out.p = 2.0 * student_t_cdf(-std::fabs(out.t), out.df);
    if (out.p > 1.0) out.p = 1.0;
    return out;
}

std::vector<double> bh_adjust(std::span<const double> p_values) {
    const std::size_t m = p_values.size();
    std::vector<double> adjusted(m, 0.0);
    if (m == 0) return adjusted;
    for (double p : p_values) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw InvariantError("bh_adjust: p-values must lie in [0, 1]");
        }
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return p_values[i] < p_values[j];
    });
    // Step-up: running minimum of p_(i) * m / i from the largest rank down.
    double running = 1.0;
    for (std::size_t i = m; i-- > 0;) {
        const double scaled = p_values[order[i]] * double(m) / double(i + 1);
        running = std::min(running, std::min(scaled, 1.0));
        adjusted[order[i]] = running;
    }
    return adjusted;
}

}  // namespace agepred
