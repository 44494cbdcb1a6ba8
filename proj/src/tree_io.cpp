#include "pricetree/tree_io.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "pricetree/error.hpp"

namespace pricetree {

using nlohmann::json;

std::vector<NodeSpec> parse_tree_spec(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Parse, std::string("tree spec is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("nodes") || !doc["nodes"].is_array())
        throw Error(ErrorKind::Parse, "tree spec needs a top-level \"nodes\" array");

    std::vector<NodeSpec> specs;
    std::unordered_map<std::string, std::size_t> position;
    std::vector<std::string> parents;
    for (const json& row : doc["nodes"]) {
        if (!row.is_object() || !row.contains("id") || !row["id"].is_string())
            throw Error(ErrorKind::Parse, "node entry without a string \"id\": " + row.dump());
        NodeSpec s;
        s.id = row["id"].get<std::string>();
        const std::string kind = row.value("kind", std::string{});
        if (kind == "selector")
            s.kind = NodeKind::Selector;
        else if (kind == "leaf")
            s.kind = NodeKind::Leaf;
        else
            throw ValidationError(s.id, "kind must be \"selector\" or \"leaf\"");
        if (row.contains("quality")) {
            if (!row["quality"].is_number())
                throw ValidationError(s.id, "quality must be a number");
            s.quality = row["quality"].get<double>();
        }
        if (row.contains("context_count")) {
            if (!row["context_count"].is_number_integer() || row["context_count"].get<long long>() < 1)
                throw ValidationError(s.id, "context_count must be a positive integer");
            s.context_count = row["context_count"].get<std::size_t>();
        }
        parents.push_back(row.contains("parent") && !row["parent"].is_null()
                              ? row["parent"].get<std::string>()
                              : std::string{});
        if (!position.emplace(s.id, specs.size()).second)
            throw ValidationError(s.id, "duplicate id");
        specs.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (parents[i].empty())
            continue;
        auto it = position.find(parents[i]);
        if (it == position.end())
            throw ValidationError(specs[i].id, "unknown parent '" + parents[i] + "'");
        specs[it->second].children.push_back(specs[i].id);
    }
    return specs;
}

std::vector<NodeSpec> read_tree_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::Io, "cannot open tree spec '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_tree_spec(buf.str());
}

std::string format_tree_spec(const std::vector<NodeSpec>& specs) {
    std::unordered_map<std::string, std::string> parent_of;
    for (const NodeSpec& s : specs)
        for (const std::string& c : s.children)
            parent_of[c] = s.id;

    // Breadth-first from the root so that rows under each parent appear in
    // child-index order; anything unreachable is kept, after the rest.
    std::unordered_map<std::string, const NodeSpec*> by_id;
    for (const NodeSpec& s : specs)
        by_id.emplace(s.id, &s);
    std::vector<const NodeSpec*> ordered;
    std::unordered_map<const NodeSpec*, bool> emitted;
    for (const NodeSpec& s : specs) {
        if (parent_of.count(s.id) || emitted[&s])
            continue;
        std::size_t head = ordered.size();
        ordered.push_back(&s);
        emitted[&s] = true;
        for (; head < ordered.size(); ++head) {
            for (const std::string& c : ordered[head]->children) {
                auto it = by_id.find(c);
                if (it != by_id.end() && !emitted[it->second]) {
                    emitted[it->second] = true;
                    ordered.push_back(it->second);
                }
            }
        }
    }
    for (const NodeSpec& s : specs)
        if (!emitted[&s])
            ordered.push_back(&s);

    json nodes = json::array();
    for (const NodeSpec* sp : ordered) {
        const NodeSpec& s = *sp;
        json row;
        row["id"] = s.id;
        if (auto it = parent_of.find(s.id); it != parent_of.end())
            row["parent"] = it->second;
        row["kind"] = s.kind == NodeKind::Selector ? "selector" : "leaf";
        if (s.quality)
            row["quality"] = *s.quality;
        if (s.kind == NodeKind::Selector && s.context_count != 1)
            row["context_count"] = s.context_count;
        nodes.push_back(std::move(row));
    }
    return json{{"nodes", std::move(nodes)}}.dump(2) + "\n";
}

void write_tree_spec(const std::filesystem::path& path, const std::vector<NodeSpec>& specs) {
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorKind::Io, "cannot write tree spec '" + path.string() + "'");
    out << format_tree_spec(specs);
}

} // namespace pricetree
