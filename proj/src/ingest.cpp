#include "pricetree/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "pricetree/error.hpp"

namespace pricetree {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos)
            return out;
        start = comma + 1;
    }
}

} // namespace

NormalizationMethod parse_normalization(std::string_view name) {
    if (name == "rank")
        return NormalizationMethod::RankUniform;
    if (name == "minmax")
        return NormalizationMethod::MinMax;
    if (name == "identity")
        return NormalizationMethod::Identity;
    throw Error(ErrorKind::Config, "unknown normalization '" + std::string(name) +
                                       "' (expected rank, minmax or identity)");
}

std::string_view to_string(NormalizationMethod m) noexcept {
    switch (m) {
    case NormalizationMethod::RankUniform: return "rank";
    case NormalizationMethod::MinMax: return "minmax";
    case NormalizationMethod::Identity: return "identity";
    }
    return "rank";
}

std::vector<HierarchyRow> parse_hierarchy_csv(std::istream& in) {
    std::string line;
    std::size_t n = 0;
    bool header = false;
    while (!header && std::getline(in, line)) {
        ++n;
        std::string_view text = line;
        if (n == 1 && text.starts_with("\xEF\xBB\xBF"))
            text.remove_prefix(3);
        text = trim(text);
        if (text.empty() || text.front() == '#')
            continue;
        const auto cols = split(text);
        if (cols.size() != 3 || cols[0] != "node_id" || cols[1] != "parent_id" || cols[2] != "quality")
            throw ParseError(n, "expected header 'node_id,parent_id,quality'");
        header = true;
    }
    if (!header)
        throw ParseError(n, "missing header 'node_id,parent_id,quality'");

    std::vector<HierarchyRow> rows;
    std::unordered_map<std::string, std::size_t> seen;
    std::size_t root_line = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string_view text = trim(line);
        if (text.empty() || text.front() == '#')
            continue;
        const auto cols = split(text);
        if (cols.size() != 3)
            throw ParseError(n, "expected 3 fields, found " + std::to_string(cols.size()));
        HierarchyRow row;
        row.node_id = cols[0];
        row.parent_id = cols[1];
        row.line = n;
        if (row.node_id.empty())
            throw ParseError(n, "empty node_id");
        if (auto [it, fresh] = seen.emplace(row.node_id, n); !fresh)
            throw ParseError(n, "duplicate node_id '" + row.node_id + "' (first on line " +
                                    std::to_string(it->second) + ")");
        if (row.parent_id.empty()) {
            if (root_line)
                throw ParseError(n, "multiple roots: '" + row.node_id + "' and the root on line " +
                                        std::to_string(root_line));
            root_line = n;
        }
        if (!cols[2].empty()) {
            double q = 0.0;
            const char* end = cols[2].data() + cols[2].size();
            const auto [ptr, ec] = std::from_chars(cols[2].data(), end, q);
            if (ec != std::errc() || ptr != end || !std::isfinite(q))
                throw ParseError(n, "quality '" + std::string(cols[2]) + "' is not a real number");
            row.quality_raw = q;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<HierarchyRow> load_hierarchy_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    return parse_hierarchy_csv(in);
}

std::string format_hierarchy_csv(std::span<const HierarchyRow> rows) {
    std::ostringstream os;
    os << "node_id,parent_id,quality\n";
    char buf[32];
    for (const HierarchyRow& r : rows) {
        os << r.node_id << ',' << r.parent_id << ',';
        if (r.quality_raw) {
            std::snprintf(buf, sizeof buf, "%.17g", *r.quality_raw);
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

std::vector<double> rank_normalize(std::span<const double> raw) {
    const std::size_t n = raw.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return raw[a] < raw[b]; });
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && raw[order[j]] == raw[order[i]])
            ++j;
        // Positions i..j-1 share 1-based ranks i+1..j; their average is (i+j+1)/2.
        const double rank = static_cast<double>(i + j + 1) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            out[order[k]] = (rank - 0.5) / static_cast<double>(n);
        i = j;
    }
    return out;
}

std::vector<double> minmax_normalize(std::span<const double> raw) {
    std::vector<double> out(raw.size(), 0.5);
    if (raw.empty())
        return out;
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    if (*hi > *lo)
        for (std::size_t i = 0; i < raw.size(); ++i)
            out[i] = (raw[i] - *lo) / (*hi - *lo);
    return out;
}

std::vector<NodeSpec> to_tree_spec(std::span<const HierarchyRow> rows, NormalizationMethod method) {
    std::vector<double> raw;
    for (const HierarchyRow& r : rows)
        if (r.quality_raw)
            raw.push_back(*r.quality_raw);

    std::vector<double> q;
    switch (method) {
    case NormalizationMethod::RankUniform:
        q = rank_normalize(raw);
        break;
    case NormalizationMethod::MinMax:
        q = minmax_normalize(raw);
        break;
    case NormalizationMethod::Identity:
        q = raw;
        break;
    }

    std::vector<NodeSpec> specs;
    std::unordered_map<std::string, std::size_t> index;
    std::size_t leaf = 0;
    for (const HierarchyRow& r : rows) {
        if (r.quality_raw) {
            const double v = q[leaf++];
            if (method == NormalizationMethod::Identity && !(v >= 0.0 && v <= 1.0))
                throw Error(ErrorKind::Range, "line " + std::to_string(r.line) + ": quality " +
                                                  std::to_string(v) + " of '" + r.node_id +
                                                  "' is outside [0,1]");
            specs.push_back(make_leaf(r.node_id, v));
        } else {
            specs.push_back(make_selector(r.node_id, {}));
        }
        index.emplace(r.node_id, specs.size() - 1);
    }
    for (const HierarchyRow& r : rows) {
        if (r.parent_id.empty())
            continue;
        const auto it = index.find(r.parent_id);
        if (it == index.end())
            throw ValidationError(r.node_id, "unknown parent '" + r.parent_id + "'");
        specs[it->second].children.push_back(r.node_id);
    }
    build_tree(specs);
    return specs;
}

} // namespace pricetree
