#include <doctest.h>

#include "agepred/compare.hpp"
#include "agepred/errors.hpp"
#include "agepred/rng.hpp"

using namespace agepred;

namespace {

void add_group(std::vector<PredictionRow>& rows, const std::string& model,
               const std::string& tissue, const std::string& sex,
               const std::string& age_group, const std::string& group,
               const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        rows.push_back({model, "s" + std::to_string(rows.size()), tissue, sex,
                        age_group, group, values[i]});
    }
}

}  // namespace

TEST_CASE("significance stars use strict thresholds") {
    CHECK(significance_stars(0.0005) == "***");
    CHECK(significance_stars(0.005) == "**");
    CHECK(significance_stars(0.04) == "*");
    CHECK(significance_stars(0.05) == "ns");  // boundary stays ns
    CHECK(significance_stars(0.3) == "ns");
}

TEST_CASE("treated-vs-control contrast within strata") {
    std::vector<PredictionRow> rows;
    // Clearly shifted stratum.
    add_group(rows, "m1", "heart", "F", "26", "control", {10, 11, 10.5, 10.2, 10.8});
    add_group(rows, "m1", "heart", "F", "26", "treated", {20, 21, 20.5, 20.2, 20.8});
    // Non-shifted stratum.
    add_group(rows, "m1", "heart", "M", "26", "control", {10, 11, 10.5, 10.2, 10.8});
    add_group(rows, "m1", "heart", "M", "26", "treated", {10.1, 10.9, 10.4, 10.3, 10.7});

    CompareSpec spec;
    spec.contrast_column = "group";
    spec.level_a = "control";
    spec.level_b = "treated";
    const auto result = compare_groups(rows, spec);
    REQUIRE(result.rows.size() == 2);
    const auto& shifted =
        result.rows[0].sex == "F" ? result.rows[0] : result.rows[1];
    const auto& flat = result.rows[0].sex == "F" ? result.rows[1] : result.rows[0];
    CHECK(shifted.p_adj < 0.001);
    CHECK(shifted.stars == "***");
    CHECK(flat.stars == "ns");
    CHECK(shifted.n_a == 5);
    CHECK(shifted.n_b == 5);
}

TEST_CASE("identical strata give identical rows") {
    std::vector<PredictionRow> rows;
    add_group(rows, "m1", "heart", "F", "7", "control", {1, 2, 3});
    add_group(rows, "m1", "heart", "F", "7", "treated", {2, 3, 4});
    add_group(rows, "m1", "gastroc", "F", "7", "control", {1, 2, 3});
    add_group(rows, "m1", "gastroc", "F", "7", "treated", {2, 3, 4});
    CompareSpec spec{"group", "control", "treated"};
    const auto result = compare_groups(rows, spec);
    REQUIRE(result.rows.size() == 2);
    CHECK(result.rows[0].t == result.rows[1].t);
    CHECK(result.rows[0].p == result.rows[1].p);
    CHECK(result.rows[0].p_adj == result.rows[1].p_adj);
}

TEST_CASE("strata missing a group are skipped with a warning") {
    std::vector<PredictionRow> rows;
    add_group(rows, "m1", "heart", "F", "7", "control", {1, 2, 3});
    add_group(rows, "m1", "heart", "F", "7", "treated", {2, 3, 4});
    add_group(rows, "m1", "heart", "M", "7", "control", {1, 2, 3});
    // No treated group for heart/M.
    CompareSpec spec{"group", "control", "treated"};
    const auto result = compare_groups(rows, spec);
    CHECK(result.rows.size() == 1);
    REQUIRE(result.warnings.size() == 1);
    CHECK(result.warnings[0].find("sex=M") != std::string::npos);
}

TEST_CASE("adjustment family spans models within tissue x sex") {
    std::vector<PredictionRow> rows;
    // Two models, same tissue x sex: one family of two tests.
    add_group(rows, "m1", "heart", "F", "7", "control", {1, 2, 3, 2, 1});
    add_group(rows, "m1", "heart", "F", "7", "treated", {9, 10, 11, 10, 9});
    add_group(rows, "m2", "heart", "F", "7", "control", {1, 2, 3, 2, 1});
    add_group(rows, "m2", "heart", "F", "7", "treated", {1.1, 2.2, 2.9, 2.1, 1.2});
    CompareSpec spec{"group", "control", "treated"};
    const auto result = compare_groups(rows, spec);
    REQUIRE(result.rows.size() == 2);
    const auto& strong = result.rows[0].model == "m1" ? result.rows[0] : result.rows[1];
    const auto& weak = result.rows[0].model == "m1" ? result.rows[1] : result.rows[0];
    // Family size 2: the smaller p is doubled unless capped by the larger.
    CHECK(strong.p_adj == doctest::Approx(std::min(strong.p * 2.0, weak.p)));
    CHECK(weak.p_adj == doctest::Approx(weak.p));
}

TEST_CASE("age-group contrast drops the age stratum") {
    std::vector<PredictionRow> rows;
    add_group(rows, "m1", "heart", "F", "7", "control", {6, 7, 8, 7, 6});
    add_group(rows, "m1", "heart", "F", "26", "control", {24, 25, 26, 25, 24});
    CompareSpec spec{"age_group", "7", "26"};
    const auto result = compare_groups(rows, spec);
    REQUIRE(result.rows.size() == 1);
    CHECK(result.rows[0].age_group.empty());
    CHECK(result.rows[0].p < 0.001);
}

TEST_CASE("contrast specification is validated") {
    std::vector<PredictionRow> rows;
    CompareSpec bad_col{"tissue", "a", "b"};
    CHECK_THROWS_AS(compare_groups(rows, bad_col), ConfigError);
    CompareSpec same_levels{"group", "x", "x"};
    CHECK_THROWS_AS(compare_groups(rows, same_levels), ConfigError);
}
