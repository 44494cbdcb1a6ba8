#pragma once

// Hierarchy datasets in CSV form (node_id,parent_id,quality) and their
// conversion to tree specs.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pricetree/hierarchy.hpp"

namespace pricetree {

struct HierarchyRow {
    std::string node_id;
    std::string parent_id;              // empty for the root
    std::optional<double> quality_raw;  // empty for selectors
    std::size_t line = 0;               // 1-based source line

    friend bool operator==(const HierarchyRow&, const HierarchyRow&) = default;
};

enum class NormalizationMethod { RankUniform, MinMax, Identity };

NormalizationMethod parse_normalization(std::string_view name);
std::string_view to_string(NormalizationMethod m) noexcept;

// Throws ParseError (with the line) for a missing header, duplicate ids,
// unparseable qualities and a second root.
std::vector<HierarchyRow> parse_hierarchy_csv(std::istream& in);
std::vector<HierarchyRow> load_hierarchy_csv(const std::filesystem::path& path);
std::string format_hierarchy_csv(std::span<const HierarchyRow> rows);

// Midpoint ranks: rank r (1-based, ties averaged) of L values -> (r - 0.5)/L.
std::vector<double> rank_normalize(std::span<const double> raw);
// (x - min)/(max - min); all-equal input maps to 0.5.
std::vector<double> minmax_normalize(std::span<const double> raw);

// Leaf qualities are normalized together; the result passes build_tree.
// Identity throws Error(Range) for a quality outside [0,1].
std::vector<NodeSpec> to_tree_spec(std::span<const HierarchyRow> rows, NormalizationMethod method);

} // namespace pricetree
