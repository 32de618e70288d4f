#include <doctest.h>

#include <cmath>

#include "agepred/bsf.hpp"
#include "agepred/errors.hpp"

using namespace agepred;

TEST_CASE("degenerate keep probabilities") {
    BsfLayer all_on(3);
    Mat x(2, 3);
    x << 1, 2, 3, 4, 5, 6;
    RngState rng(1);
    auto [y_train, tape] = all_on.forward(x, Mode::Train, rng);
    CHECK((y_train - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((all_on.infer(x) - x).cwiseAbs().maxCoeff() == 0.0);

    BsfLayer all_off(3);
    all_off.weights().setZero();
    auto [y0, tape0] = all_off.forward(x, Mode::Train, rng);
    CHECK(y0.cwiseAbs().maxCoeff() == 0.0);
    CHECK(all_off.infer(x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("eval threshold mask") {
    BsfLayer layer(2);
    layer.weights() << 0.9, 0.2;
    Mat x(1, 2);
    x << 5, 7;
    RngState rng(1);
    auto [y, tape] = layer.forward(x, Mode::Eval, rng);
    CHECK(y(0, 0) == 5.0);
    CHECK(y(0, 1) == 0.0);
    CHECK(tape.mask(0, 0) == 1.0);
    CHECK(tape.mask(0, 1) == 0.0);
}

TEST_CASE("weights outside [0,1] violate the invariant") {
    BsfLayer layer(2);
    layer.weights() << 1.2, 0.5;
    Mat x = Mat::Ones(1, 2);
    RngState rng(1);
    CHECK_THROWS_AS(layer.forward(x, Mode::Train, rng), InvariantError);
    layer.clip();
    CHECK(layer.weights()[0] == 1.0);
    CHECK_NOTHROW(layer.forward(x, Mode::Train, rng));
}

TEST_CASE("straight-through backward") {
    BsfLayer layer(1);
    Mat x(1, 1);
    x << 2.0;
    RngState rng(1);
    auto [y, tape] = layer.forward(x, Mode::Train, rng);  // w = 1 so z = 1
    Mat up(1, 1);
    up << 3.0;
    Mat gx = layer.backward(tape, up);
    CHECK(gx(0, 0) == 3.0);  // upstream .* z
    auto params = layer.params();
    CHECK(params[0].grad[0] == doctest::Approx(6.0));  // upstream * x

    // Zero upstream: both gradients zero.
    layer.zero_grads();
    auto [y2, tape2] = layer.forward(x, Mode::Train, rng);
    Mat gx2 = layer.backward(tape2, Mat::Zero(1, 1));
    CHECK(gx2(0, 0) == 0.0);
    CHECK(params[0].grad[0] == 0.0);
}

TEST_CASE("gate blocks the input gradient where z is zero") {
    BsfLayer layer(2);
    layer.weights() << 0.0, 1.0;  // z = [0, 1] deterministically
    Mat x(3, 2);
    x << 1, 2, 3, 4, 5, 6;
    RngState rng(1);
    auto [y, tape] = layer.forward(x, Mode::Train, rng);
    Mat up = Mat::Ones(3, 2);
    Mat gx = layer.backward(tape, up);
    CHECK(gx.col(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(gx.col(1).minCoeff() == 1.0);
    // Straight-through weight gradient ignores the sampled mask.
    auto params = layer.params();
    CHECK(params[0].grad[0] == doctest::Approx(1 + 3 + 5));
    CHECK(params[0].grad[1] == doctest::Approx(2 + 4 + 6));
}

TEST_CASE("eval tape cannot flow gradients") {
    BsfLayer layer(2);
    Mat x = Mat::Ones(1, 2);
    RngState rng(1);
    auto [y, tape] = layer.forward(x, Mode::Eval, rng);
    CHECK_THROWS_AS(layer.backward(tape, Mat::Ones(1, 2)), TapeError);
}

TEST_CASE("hinged sparsity penalty") {
    SparsityPenalty pen;  // strength 1e-2, cut 3000
    BsfLayer layer(3500);
    layer.weights().setConstant(2999.0 / 3500.0);
    CHECK(layer.penalty(pen, false) == doctest::Approx(0.0));

    layer.weights().setConstant(3100.0 / 3500.0);
    CHECK(layer.penalty(pen, false) == doctest::Approx(1.0).epsilon(1e-9));

    // At the threshold exactly: zero value, zero subgradient.
    BsfLayer tiny(4);
    SparsityPenalty small{0.5, 4.0};
    tiny.weights().setOnes();  // sum exactly 4
    tiny.zero_grads();
    CHECK(tiny.penalty(small, true) == 0.0);
    CHECK(tiny.params()[0].grad[0] == 0.0);

    // Above threshold: slope equals strength on every coordinate.
    SparsityPenalty tight{0.5, 3.0};
    tiny.zero_grads();
    CHECK(tiny.penalty(tight, true) == doctest::Approx(0.5));
    for (int j = 0; j < 4; ++j) CHECK(tiny.params()[0].grad[j] == 0.5);
}

TEST_CASE("penalty is piecewise linear in the weight sum") {
    SparsityPenalty pen{0.01, 10.0};
    BsfLayer layer(20);
    auto penalty_at = [&](double per_weight) {
        layer.weights().setConstant(per_weight);
        return layer.penalty(pen, false);
    };
    // Zero at and below the threshold.
    CHECK(penalty_at(0.5) == 0.0);   // sum 10 == cut
    CHECK(penalty_at(0.25) == 0.0);  // sum 5
    // Linear with slope `strength` in the excess above it.
    const double p1 = penalty_at(0.6);   // sum 12, excess 2
    const double p2 = penalty_at(0.8);   // sum 16, excess 6
    const double p3 = penalty_at(1.0);   // sum 20, excess 10
    CHECK(p1 == doctest::Approx(0.01 * 2.0));
    CHECK((p2 - p1) / 4.0 == doctest::Approx(0.01).epsilon(1e-12));
    CHECK((p3 - p2) / 4.0 == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("empirical gate frequency tracks the keep probabilities") {
    BsfLayer layer(3);
    layer.weights() << 0.15, 0.5, 0.85;
    Mat x = Mat::Ones(1, 3);
    RngState rng(20240801);
    const int trials = 20000;
    Eigen::Vector3d hits = Eigen::Vector3d::Zero();
    for (int t = 0; t < trials; ++t) {
        auto [y, tape] = layer.forward(x, Mode::Train, rng);
        for (int j = 0; j < 3; ++j) hits[j] += tape.mask(0, j);
    }
    for (int j = 0; j < 3; ++j) {
        const double w = layer.weights()[j];
        const double sigma = std::sqrt(w * (1 - w) / double(trials));
        CHECK(std::fabs(hits[j] / trials - w) < 3.0 * sigma + 1e-12);
    }
}

TEST_CASE("per-batch vs per-sample masks") {
    BsfLayer layer(4);
    layer.weights().setConstant(0.5);
    Mat x = Mat::Ones(64, 4);
    RngState rng(7);
    auto [y_batch, tape_batch] = layer.forward(x, Mode::Train, rng, 0.5, false);
    for (int i = 1; i < 64; ++i) {
        CHECK((tape_batch.mask.row(i) - tape_batch.mask.row(0)).cwiseAbs().maxCoeff() ==
              0.0);
    }
    auto [y_per, tape_per] = layer.forward(x, Mode::Train, rng, 0.5, true);
    bool any_diff = false;
    for (int i = 1; i < 64 && !any_diff; ++i) {
        any_diff = (tape_per.mask.row(i) - tape_per.mask.row(0)).cwiseAbs().maxCoeff() > 0;
    }
    CHECK(any_diff);
}

TEST_CASE("gene ranking export") {
    BsfLayer layer(3);
    layer.weights() << 0.9, 0.4, 0.6;
    const auto ranking = layer.export_ranking({"g1", "g2", "g3"}, 0.5);
    REQUIRE(ranking.entries.size() == 2);
    CHECK(ranking.entries[0].first == "g1");
    CHECK(ranking.entries[0].second == doctest::Approx(0.9));
    CHECK(ranking.entries[1].first == "g3");

    layer.weights() << 0.1, 0.2, 0.3;
    CHECK(layer.export_ranking({"g1", "g2", "g3"}, 0.5).entries.empty());

    // Ties break lexicographically.
    layer.weights() << 0.7, 0.7, 0.1;
    const auto tied = layer.export_ranking({"gb", "ga", "gc"}, 0.5);
    REQUIRE(tied.entries.size() == 2);
    CHECK(tied.entries[0].first == "ga");
    CHECK(tied.entries[1].first == "gb");
}

TEST_CASE("raising the threshold never adds a gene") {
    BsfLayer layer(6);
    layer.weights() << 0.1, 0.35, 0.5, 0.65, 0.8, 0.95;
    std::vector<std::string> ids{"a", "b", "c", "d", "e", "f"};
    std::size_t prev = 7;
    for (double thr : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        const auto r = layer.export_ranking(ids, thr);
        CHECK(r.entries.size() <= prev);
        prev = r.entries.size();
    }
}
