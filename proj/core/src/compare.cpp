#include "agepred/compare.hpp"

#include <algorithm>
#include <map>
#include <tuple>

#include "agepred/errors.hpp"
#include "agepred/stats.hpp"

namespace agepred {

std::string significance_stars(double p_adj) {
    if (p_adj < 0.001) return "***";
    if (p_adj < 0.01) return "**";
    if (p_adj < 0.05) return "*";
    return "ns";
}

CompareResult compare_groups(const std::vector<PredictionRow>& rows,
                             const CompareSpec& spec) {
    const bool contrast_on_group = spec.contrast_column == "group";
    if (!contrast_on_group && spec.contrast_column != "age_group") {
        throw ConfigError("contrast_column must be 'group' or 'age_group'");
    }
    if (spec.level_a.empty() || spec.level_b.empty() ||
        spec.level_a == spec.level_b) {
        throw ConfigError("contrast needs two distinct levels");
    }

    // Stratum key: model x tissue x sex (x age_group when it is not the
    // contrast itself).
    using Key = std::tuple<std::string, std::string, std::string, std::string>;
    std::map<Key, std::pair<std::vector<double>, std::vector<double>>> strata;
    for (const auto& r : rows) {
        const std::string& level = contrast_on_group ? r.group : r.age_group;
        Key key{r.tissue, r.sex, contrast_on_group ? r.age_group : std::string(),
                r.model};
        if (level == spec.level_a) {
            strata[key].first.push_back(r.predicted);
        } else if (level == spec.level_b) {
            strata[key].second.push_back(r.predicted);
        }
        // other levels are outside the contrast and ignored
    }

    CompareResult out;
    for (const auto& [key, groups] : strata) {
        const auto& [tissue, sex, age_group, model] = key;
        const auto& a = groups.first;
        const auto& b = groups.second;
        auto describe = [&] {
            std::string s = "tissue=" + tissue + " sex=" + sex;
            if (!age_group.empty()) s += " age=" + age_group;
            s += " model=" + model;
            return s;
        };
        if (a.size() < 2 || b.size() < 2) {
            out.warnings.push_back("skipped stratum missing a contrast group (" +
                                   describe() + ")");
            continue;
        }
        GroupComparison cmp;
        cmp.model = model;
        cmp.tissue = tissue;
        cmp.sex = sex;
        cmp.age_group = age_group;
        cmp.level_a = spec.level_a;
        cmp.level_b = spec.level_b;
        cmp.n_a = int(a.size());
        cmp.n_b = int(b.size());
        const WelchResult w = welch_t_test(a, b);
        cmp.t = w.t;
        cmp.df = w.df;
        cmp.p = w.p;
        out.rows.push_back(std::move(cmp));
    }

    // Adjust within each tissue x sex family, across models and the
    // remaining strata.
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> families;
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        families[{out.rows[i].tissue, out.rows[i].sex}].push_back(i);
    }
    for (const auto& [_, members] : families) {
        std::vector<double> p;
        p.reserve(members.size());
        for (auto i : members) p.push_back(out.rows[i].p);
        const auto adj = bh_adjust(p);
        for (std::size_t k = 0; k < members.size(); ++k) {
            out.rows[members[k]].p_adj = adj[k];
            out.rows[members[k]].stars = significance_stars(adj[k]);
        }
    }
    return out;
}

}  // namespace agepred
