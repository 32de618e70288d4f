#include <doctest.h>

#include <cmath>

#include "agepred/errors.hpp"
#include "agepred/probe.hpp"
#include "agepred/rng.hpp"

using namespace agepred;

namespace {

// K well-separated gaussian blobs in the plane.
void blobs(int per_class, int k, double spread, std::uint64_t seed,
           Eigen::MatrixXd& f, std::vector<std::string>& labels) {
    RngState rng(seed);
    f.resize(per_class * k, 2);
    labels.clear();
    for (int c = 0; c < k; ++c) {
        const double cx = 10.0 * std::cos(2.0 * M_PI * c / k);
        const double cy = 10.0 * std::sin(2.0 * M_PI * c / k);
        for (int i = 0; i < per_class; ++i) {
            const int row = c * per_class + i;
            f(row, 0) = cx + spread * rng.next_gaussian();
            f(row, 1) = cy + spread * rng.next_gaussian();
            labels.push_back("class" + std::to_string(c));
        }
    }
}

}  // namespace

TEST_CASE("separable classes probe near perfectly") {
    Eigen::MatrixXd f;
    std::vector<std::string> labels;
    blobs(40, 3, 0.5, 11, f, labels);
    const auto rep = probe_attribute(f, labels, 42);
    CHECK(rep.n_classes == 3);
    CHECK(rep.balanced_accuracy >= 0.95);
    // The permutation baseline collapses to chance.
    CHECK(std::fabs(rep.permutation_baseline - 1.0 / 3.0) < 0.15);
}

TEST_CASE("independent labels probe at chance") {
    RngState rng(13);
    const int n = 400;
    Eigen::MatrixXd f(n, 5);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.next_gaussian();
    std::vector<std::string> labels;
    for (int i = 0; i < n; ++i) {
        labels.push_back("c" + std::to_string(rng.next_below(4)));
    }
    const auto rep = probe_attribute(f, labels, 7);
    CHECK(std::fabs(rep.balanced_accuracy - 0.25) < 0.1);
    CHECK(std::fabs(rep.permutation_baseline - 0.25) < 0.1);
}

TEST_CASE("probe is deterministic in the seed") {
    Eigen::MatrixXd f;
    std::vector<std::string> labels;
    blobs(20, 4, 2.0, 17, f, labels);
    const auto a = probe_attribute(f, labels, 99);
    const auto b = probe_attribute(f, labels, 99);
    CHECK(a.balanced_accuracy == b.balanced_accuracy);
    CHECK(a.permutation_baseline == b.permutation_baseline);
}

TEST_CASE("stratification errors") {
    Eigen::MatrixXd f(3, 2);
    f.setZero();
    std::vector<std::string> lonely{"a", "a", "b"};  // class b has one sample
    CHECK_THROWS_AS(probe_attribute(f, lonely, 1), StratifyError);
    std::vector<std::string> single{"a", "a", "a"};
    CHECK_THROWS_AS(probe_attribute(f, single, 1), StratifyError);
}

TEST_CASE("proxy divergence: same distribution is near zero") {
    RngState rng(23);
    Eigen::MatrixXd a(120, 4), b(120, 4);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.next_gaussian();
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.next_gaussian();
    CHECK(proxy_divergence(a, b, 5) <= 0.3);
}

TEST_CASE("proxy divergence: separated clusters saturate") {
    RngState rng(29);
    Eigen::MatrixXd a(80, 3), b(80, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        a.data()[i] = rng.next_gaussian() * 0.3;
    }
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        b.data()[i] = 20.0 + rng.next_gaussian() * 0.3;
    }
    CHECK(proxy_divergence(a, b, 5) >= 1.7);
}

TEST_CASE("proxy divergence stays in [0, 2]") {
    RngState rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const int na = 10 + int(rng.next_below(60));
        const int nb = 10 + int(rng.next_below(60));
        Eigen::MatrixXd a(na, 3), b(nb, 3);
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            a.data()[i] = rng.next_gaussian();
        }
        const double shift = rng.next_uniform(0.0, 4.0);
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            b.data()[i] = shift + rng.next_gaussian();
        }
        const double d = proxy_divergence(a, b, trial);
        CHECK(d >= 0.0);
        CHECK(d <= 2.0);
    }
}
