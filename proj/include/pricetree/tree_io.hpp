#pragma once

// Tree spec files:
//   { "nodes": [ { "id": "...", "parent": "...", "kind": "selector"|"leaf",
//                  "quality": 0.9, "context_count": 1 }, ... ] }
// The root has no "parent". A selector's child order is the order in which
// its children appear in the array.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pricetree/hierarchy.hpp"

namespace pricetree {

std::vector<NodeSpec> parse_tree_spec(std::string_view json_text);
std::vector<NodeSpec> read_tree_spec(const std::filesystem::path& path);

std::string format_tree_spec(const std::vector<NodeSpec>& specs);
void write_tree_spec(const std::filesystem::path& path, const std::vector<NodeSpec>& specs);

} // namespace pricetree
