#include "agepred/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "agepred/errors.hpp"
#include "agepred/hash.hpp"
#include "agepred/text.hpp"

namespace agepred {

namespace {

using json = nlohmann::ordered_json;

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);
    return in;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

char resolve_delim(Delimiter fmt, const std::string& header) {
    switch (fmt) {
        case Delimiter::Tab: return '\t';
        case Delimiter::Comma: return ',';
        case Delimiter::Auto: return sniff_delimiter(header);
    }
    return '\t';
}

}  // namespace

void CountMatrix::validate() const {
    if (counts.rows() != Eigen::Index(gene_ids.size()) ||
        counts.cols() != Eigen::Index(sample_ids.size())) {
        throw ShapeError("count matrix dimensions do not match id lists");
    }
    std::unordered_set<std::string> seen;
    for (const auto& g : gene_ids) {
        if (!seen.insert(g).second) throw DuplicateIdError("duplicate gene id: " + g);
    }
    seen.clear();
    for (const auto& s : sample_ids) {
        if (!seen.insert(s).second) throw DuplicateIdError("duplicate sample id: " + s);
    }
    if ((counts.array() < 0).any()) {
        throw ValueError("negative count in matrix");
    }
}

const SampleMeta& MetadataTable::require(const std::string& sample_id) const {
    auto it = by_sample.find(sample_id);
    if (it == by_sample.end()) {
        throw MetadataMismatchError("sample missing from metadata: " + sample_id);
    }
    return rows[it->second];
}

CountMatrix parse_counts(const std::string& path, Delimiter fmt) {
    auto in = open_or_throw(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file: " + path);
    strip_cr(line);
    const char delim = resolve_delim(fmt, line);

    auto header = split(line, delim);
    if (header.size() < 2) throw ParseError(path + ":1: header needs at least one sample column");

    CountMatrix cm;
    cm.sample_ids.assign(header.begin() + 1, header.end());
    const std::size_t n_samples = cm.sample_ids.size();

    std::vector<std::vector<std::int64_t>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        auto fields = split(line, delim);
        if (fields.size() != n_samples + 1) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected " + std::to_string(n_samples + 1) +
                             " fields, got " + std::to_string(fields.size()));
        }
        cm.gene_ids.push_back(fields[0]);
        auto& row = rows.emplace_back();
        row.reserve(n_samples);
        for (std::size_t j = 0; j < n_samples; ++j) {
            auto v = parse_int(fields[j + 1]);
            if (!v || *v < 0) {
                throw ValueError("non-integer or negative count at gene " +
                                 fields[0] + ", sample " + cm.sample_ids[j] +
                                 ": '" + fields[j + 1] + "'");
            }
            row.push_back(*v);
        }
    }
    if (rows.empty()) throw ParseError(path + ": no gene rows");

    cm.counts.resize(Eigen::Index(rows.size()), Eigen::Index(n_samples));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < n_samples; ++j) {
            cm.counts(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
        }
    }
    cm.validate();
    return cm;
}

MetadataTable parse_metadata(const std::string& path, Delimiter fmt) {
    auto in = open_or_throw(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file: " + path);
    strip_cr(line);
    const char delim = resolve_delim(fmt, line);

    auto header = split(line, delim);
    auto col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw MetadataMismatchError("metadata missing required column: " + name);
        }
        return std::size_t(it - header.begin());
    };
    const std::size_t c_id = col("sample_id");
    const std::size_t c_age = col("age");
    const std::size_t c_sex = col("sex");
    const std::size_t c_tissue = col("tissue");
    const std::size_t c_platform = col("platform");
    const std::size_t c_series = col("series_id");

    MetadataTable table;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        auto fields = split(line, delim);
        if (fields.size() != header.size()) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": field count does not match header");
        }
        SampleMeta row;
        row.sample_id = fields[c_id];
        auto age = parse_real(fields[c_age]);
        if (!age || !std::isfinite(*age) || *age < 0.0) {
            throw ValueError("invalid age for sample " + row.sample_id + ": '" +
                             fields[c_age] + "'");
        }
        row.age_months = *age;
        row.sex = fields[c_sex];
        row.tissue = fields[c_tissue];
        row.platform = fields[c_platform];
        row.series_id = fields[c_series];
        if (!table.by_sample.emplace(row.sample_id, table.rows.size()).second) {
            throw DuplicateIdError("duplicate sample in metadata: " + row.sample_id);
        }
        table.rows.push_back(std::move(row));
    }
    if (table.rows.empty()) throw ParseError(path + ": no metadata rows");
    return table;
}

std::unordered_map<std::string, std::int64_t> parse_gene_lengths(
    const std::string& path, Delimiter fmt) {
    auto in = open_or_throw(path);
    std::unordered_map<std::string, std::int64_t> lengths;
    std::string line;
    std::size_t line_no = 0;
    char delim = '\t';
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        if (first) {
            delim = resolve_delim(fmt, line);
            first = false;
            // Optional header.
            auto fields = split(line, delim);
            if (fields.size() == 2 && fields[0] == "gene_id") continue;
        }
        auto fields = split(line, delim);
        if (fields.size() != 2) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected gene_id and length_bp");
        }
        auto len = parse_int(fields[1]);
        if (!len || *len <= 0) {
            throw ValueError("invalid gene length for " + fields[0] + ": '" +
                             fields[1] + "'");
        }
        if (!lengths.emplace(fields[0], *len).second) {
            throw DuplicateIdError("duplicate gene in length table: " + fields[0]);
        }
    }
    return lengths;
}

std::vector<std::string> parse_allowlist(const std::string& path) {
    auto in = open_or_throw(path);
    std::vector<std::string> genes;
    std::string line;
    while (std::getline(in, line)) {
        strip_cr(line);
        if (!line.empty()) genes.push_back(line);
    }
    return genes;
}

CountMatrix restrict_to_allowlist(const CountMatrix& counts,
                                  const std::vector<std::string>& allowlist,
                                  std::vector<GeneRemoval>& removals) {
    std::unordered_set<std::string> allowed(allowlist.begin(), allowlist.end());
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < Eigen::Index(counts.gene_ids.size()); ++i) {
        if (allowed.count(counts.gene_ids[std::size_t(i)])) {
            keep.push_back(i);
        } else {
            removals.push_back({counts.gene_ids[std::size_t(i)], "allowlist"});
        }
    }
    CountMatrix out;
    out.sample_ids = counts.sample_ids;
    out.gene_ids.reserve(keep.size());
    out.counts.resize(Eigen::Index(keep.size()), counts.counts.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        out.gene_ids.push_back(counts.gene_ids[std::size_t(keep[r])]);
        out.counts.row(Eigen::Index(r)) = counts.counts.row(keep[r]);
    }
    for (const auto& g : out.gene_ids) {
        auto it = counts.gene_lengths.find(g);
        if (it != counts.gene_lengths.end()) out.gene_lengths.emplace(g, it->second);
    }
    return out;
}

GeneSet filter_genes(const CountMatrix& counts, const MetadataTable& meta,
                     const FilterParams& params) {
    counts.validate();
    for (const auto& s : counts.sample_ids) {
        if (!meta.contains(s)) {
            throw MetadataMismatchError("sample missing from metadata: " + s);
        }
    }

    // Group sample columns by tissue; every tissue satisfies its own
    // max(1, ceil(frac * N)) minimum by construction, so none is dropped.
    std::unordered_map<std::string, std::vector<Eigen::Index>> by_tissue;
    for (Eigen::Index j = 0; j < Eigen::Index(counts.sample_ids.size()); ++j) {
        by_tissue[meta.require(counts.sample_ids[std::size_t(j)]).tissue].push_back(j);
    }
    struct TissueGroup {
        std::vector<Eigen::Index> cols;
        std::int64_t required = 1;
    };
    std::vector<TissueGroup> groups;
    for (auto& [_, cols] : by_tissue) {
        TissueGroup g;
        g.required = std::max<std::int64_t>(
            1, std::int64_t(std::ceil(params.tissue_frac * double(cols.size()))));
        if (std::int64_t(cols.size()) < g.required) continue;  // vacuous, kept verbatim
        g.cols = std::move(cols);
        groups.push_back(std::move(g));
    }

    GeneSet out;
    out.length_filter_applied = !counts.gene_lengths.empty();
    for (Eigen::Index i = 0; i < Eigen::Index(counts.gene_ids.size()); ++i) {
        const auto& gene = counts.gene_ids[std::size_t(i)];
        if (counts.counts.row(i).sum() == 0) {
            out.removed.push_back({gene, "zero_total"});
            continue;
        }
        if (out.length_filter_applied) {
            auto it = counts.gene_lengths.find(gene);
            if (it != counts.gene_lengths.end() && it->second < params.min_len_bp) {
                out.removed.push_back({gene, "min_length"});
                continue;
            }
        }
        bool common = true;
        for (const auto& g : groups) {
            std::int64_t expressed_in = 0;
            for (Eigen::Index j : g.cols) {
                if (counts.counts(i, j) >= params.expr_count) ++expressed_in;
            }
            if (expressed_in < g.required) {
                common = false;
                break;
            }
        }
        if (!common) {
            out.removed.push_back({gene, "not_common"});
            continue;
        }
        out.gene_ids.push_back(gene);
    }
    std::sort(out.gene_ids.begin(), out.gene_ids.end());
    if (out.gene_ids.empty()) {
        throw EmptyGeneSetError("no gene passed the filters");
    }
    return out;
}

ExpressionMatrix cpm_log_transform(const CountMatrix& counts,
                                   const GeneSet& gene_set) {
    std::unordered_map<std::string, Eigen::Index> gene_row;
    for (Eigen::Index i = 0; i < Eigen::Index(counts.gene_ids.size()); ++i) {
        gene_row.emplace(counts.gene_ids[std::size_t(i)], i);
    }
    for (const auto& g : gene_set.gene_ids) {
        if (!gene_row.count(g)) {
            throw InvariantError("gene set not a subset of the count matrix: " + g);
        }
    }

    const Eigen::Index n_samples = counts.counts.cols();
    const Eigen::Index n_genes = Eigen::Index(gene_set.gene_ids.size());

    ExpressionMatrix out;
    out.gene_ids = gene_set.gene_ids;
    out.sample_ids = counts.sample_ids;
    out.values.resize(n_samples, n_genes);

    for (Eigen::Index s = 0; s < n_samples; ++s) {
        // Library size over all genes, before gene-set restriction.
        const double lib = double(counts.counts.col(s).sum());
        if (lib <= 0.0) {
            throw ZeroLibraryError("sample has zero library size: " +
                                   counts.sample_ids[std::size_t(s)]);
        }
        for (Eigen::Index g = 0; g < n_genes; ++g) {
            const Eigen::Index row = gene_row[gene_set.gene_ids[std::size_t(g)]];
            const double cpm = double(counts.counts(row, s)) / lib * 1e6;
            out.values(s, g) = std::log2(cpm + 1.0);
        }
    }
    return out;
}

PreprocessArtifact fit_standardizer(const ExpressionMatrix& train) {
    if (train.values.rows() == 0 || train.values.cols() == 0) {
        throw InvariantError("fit_standardizer: empty training matrix");
    }
    PreprocessArtifact art;
    art.gene_set.gene_ids = train.gene_ids;
    const Eigen::Index d = train.values.cols();
    const double n = double(train.values.rows());
    art.mean.resize(d);
    art.stddev.resize(d);
    art.degenerate_std.assign(std::size_t(d), false);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double m = train.values.col(j).mean();
        const double var = (train.values.col(j).array() - m).square().sum() / n;
        const double sd = std::sqrt(var);
        art.mean[j] = m;
        if (sd < 1e-12) {
            art.stddev[j] = 1.0;
            art.degenerate_std[std::size_t(j)] = true;
        } else {
            art.stddev[j] = sd;
        }
    }
    return art;
}

ExpressionMatrix apply_standardizer(const ExpressionMatrix& m,
                                    const PreprocessArtifact& art) {
    std::unordered_map<std::string, Eigen::Index> col_of;
    for (Eigen::Index j = 0; j < Eigen::Index(m.gene_ids.size()); ++j) {
        col_of.emplace(m.gene_ids[std::size_t(j)], j);
    }
    const Eigen::Index n = m.values.rows();
    const Eigen::Index d = Eigen::Index(art.gene_set.gene_ids.size());

    ExpressionMatrix out;
    out.gene_ids = art.gene_set.gene_ids;
    out.sample_ids = m.sample_ids;
    out.values = Eigen::MatrixXd::Zero(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        auto it = col_of.find(art.gene_set.gene_ids[std::size_t(j)]);
        if (it == col_of.end()) continue;  // absent gene stays exactly 0
        out.values.col(j) =
            (m.values.col(it->second).array() - art.mean[j]) / art.stddev[j];
    }
    return out;
}

std::string PreprocessArtifact::to_json() const {
    json j;
    j["transform_tag"] = transform_tag;
    j["gene_ids"] = gene_set.gene_ids;
    j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    j["std"] = std::vector<double>(stddev.data(), stddev.data() + stddev.size());
    j["degenerate_std"] = std::vector<bool>(degenerate_std.begin(), degenerate_std.end());
    j["length_filter_applied"] = gene_set.length_filter_applied;
    json removed = json::array();
    for (const auto& r : gene_set.removed) {
        removed.push_back({{"gene_id", r.gene_id}, {"filter", r.filter}});
    }
    j["removed"] = std::move(removed);
    return j.dump(2);
}

PreprocessArtifact PreprocessArtifact::from_json(const std::string& text) {
    json j = json::parse(text);
    PreprocessArtifact art;
    art.transform_tag = j.at("transform_tag").get<std::string>();
    if (art.transform_tag != "cpm_log2_zscore_v1") {
        throw ConfigError("unknown transform_tag: " + art.transform_tag);
    }
    art.gene_set.gene_ids = j.at("gene_ids").get<std::vector<std::string>>();
    auto mean = j.at("mean").get<std::vector<double>>();
    auto sd = j.at("std").get<std::vector<double>>();
    if (mean.size() != art.gene_set.gene_ids.size() || sd.size() != mean.size()) {
        throw ConfigError("artifact arrays do not match the gene list");
    }
    art.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), Eigen::Index(mean.size()));
    art.stddev = Eigen::Map<Eigen::VectorXd>(sd.data(), Eigen::Index(sd.size()));
    for (double s : sd) {
        if (!(s > 0.0)) throw ConfigError("artifact std must be positive");
    }
    art.degenerate_std = j.at("degenerate_std").get<std::vector<bool>>();
    art.gene_set.length_filter_applied = j.at("length_filter_applied").get<bool>();
    for (const auto& r : j.at("removed")) {
        art.gene_set.removed.push_back(
            {r.at("gene_id").get<std::string>(), r.at("filter").get<std::string>()});
    }
    return art;
}

std::string PreprocessArtifact::content_hash() const {
    return sha256_hex(to_json());
}

}  // namespace agepred
