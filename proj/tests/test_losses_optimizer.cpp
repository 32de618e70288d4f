#include <doctest.h>

#include <cmath>

#include "agepred/errors.hpp"
#include "agepred/losses.hpp"
#include "agepred/optimizer.hpp"
#include "agepred/rng.hpp"

using namespace agepred;

TEST_CASE("mse worked examples") {
    Eigen::VectorXd same(3);
    same << 1, 2, 3;
    CHECK(mse_loss(same, same).value == 0.0);

    Eigen::VectorXd pred(2), target(2);
    pred << 0, 0;
    target << 1, 3;
    CHECK(mse_loss(pred, target).value == doctest::Approx(5.0));

    Eigen::VectorXd p1(1), t1(1);
    p1 << 2;
    t1 << 0;
    const auto r = mse_loss(p1, t1);
    CHECK(r.grad[0] == doctest::Approx(4.0));

    Eigen::VectorXd empty;
    CHECK_THROWS_AS(mse_loss(empty, empty), EmptyBatchError);
}

TEST_CASE("cross entropy worked examples") {
    // Strongly peaked logits on the true class: loss tends to zero.
    Eigen::MatrixXd logits(1, 3), onehot(1, 3);
    logits << 50, 0, 0;
    onehot << 1, 0, 0;
    CHECK(categorical_cross_entropy(logits, onehot).value < 1e-15);

    // Uniform logits, K = 4: loss = ln 4.
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(3, 4);
    Eigen::MatrixXd uo = Eigen::MatrixXd::Zero(3, 4);
    uo(0, 0) = uo(1, 1) = uo(2, 3) = 1;
    CHECK(categorical_cross_entropy(u, uo).value ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // K = 2, logits [0, 0], true class 0, batch of 2:
    // gradient row = [-0.25, 0.25].
    Eigen::MatrixXd l2 = Eigen::MatrixXd::Zero(2, 2);
    Eigen::MatrixXd o2(2, 2);
    o2 << 1, 0, 1, 0;
    const auto r = categorical_cross_entropy(l2, o2);
    CHECK(r.grad(0, 0) == doctest::Approx(-0.25));
    CHECK(r.grad(0, 1) == doctest::Approx(0.25));

    Eigen::MatrixXd bad(1, 2);
    bad << 0.5, 0.5;
    CHECK_THROWS_AS(categorical_cross_entropy(l2.topRows(1), bad), LabelError);
}

TEST_CASE("cross entropy properties") {
    RngState rng(313);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 2 + int(rng.next_below(6));
        const int k = 2 + int(rng.next_below(5));
        Eigen::MatrixXd logits(n, k);
        for (Eigen::Index i = 0; i < logits.size(); ++i) {
            logits.data()[i] = 4.0 * rng.next_gaussian();
        }
        Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, k);
        for (int r = 0; r < n; ++r) {
            onehot(r, Eigen::Index(rng.next_below(std::uint64_t(k)))) = 1;
        }
        const auto res = categorical_cross_entropy(logits, onehot);
        CHECK(res.value >= 0.0);
        for (int r = 0; r < n; ++r) {
            CHECK(std::fabs(res.softmax.row(r).sum() - 1.0) < 1e-12);
            // Gradient rows sum to zero: softmax minus one-hot.
            CHECK(std::fabs(res.grad.row(r).sum()) < 1e-12);
        }
    }
}

namespace {

std::vector<ParamRef> single_param(Eigen::VectorXd& value, Eigen::VectorXd& grad) {
    return {{"p", value.data(), grad.data(), value.size()}};
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Eigen::VectorXd value(3), grad = Eigen::VectorXd::Zero(3);
    value << 1, -2, 3;
    auto params = single_param(value, grad);
    AdamOptimizer opt(1e-3);
    opt.attach(params);
    opt.step(params);
    CHECK(value[0] == 1.0);
    CHECK(value[1] == -2.0);
    CHECK(value[2] == 3.0);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: single bias-corrected step") {
    Eigen::VectorXd value(1), grad(1);
    value << 0.0;
    grad << 1.0;
    auto params = single_param(value, grad);
    AdamOptimizer opt(1e-3);
    opt.attach(params);
    opt.step(params);
    // mhat = 1, vhat = 1 after bias correction: delta = -lr / (1 + eps).
    CHECK(value[0] == doctest::Approx(-0.000999999990).epsilon(1e-9));
}

TEST_CASE("adam: constant gradient approaches lr-sized steps") {
    Eigen::VectorXd value(1), grad(1);
    value << 0.0;
    grad << 0.37;
    auto params = single_param(value, grad);
    AdamOptimizer opt(1e-2);
    opt.attach(params);
    double prev = value[0];
    double last_step = 0.0;
    for (int i = 0; i < 500; ++i) {
        opt.step(params);
        last_step = value[0] - prev;
        prev = value[0];
    }
    CHECK(std::fabs(last_step) == doctest::Approx(1e-2).epsilon(1e-3));
}

TEST_CASE("adam: quadratic convergence and NaN rejection") {
    Eigen::VectorXd value(1), grad(1);
    value << 0.0;
    auto params = single_param(value, grad);
    AdamOptimizer opt(0.1);
    opt.attach(params);
    for (int i = 0; i < 2000; ++i) {
        grad[0] = 2.0 * (value[0] - 3.0);
        opt.step(params);
    }
    CHECK(value[0] == doctest::Approx(3.0).epsilon(1e-4));

    grad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(params), NumericsError);
}
