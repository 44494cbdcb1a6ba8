#include "pricetree/hierarchy.hpp"

#include <algorithm>
#include <deque>
#include <string>

#include "pricetree/error.hpp"

namespace pricetree {

NodeSpec make_leaf(std::string id, double quality) {
    NodeSpec s;
    s.id = std::move(id);
    s.kind = NodeKind::Leaf;
    s.quality = quality;
    return s;
}

NodeSpec make_selector(std::string id, std::vector<std::string> children,
                       std::size_t context_count) {
    NodeSpec s;
    s.id = std::move(id);
    s.kind = NodeKind::Selector;
    s.children = std::move(children);
    s.context_count = context_count;
    return s;
}

std::span<const NodeIndex> Tree::children(NodeIndex i) const {
    const Node& n = nodes_.at(i);
    return std::span<const NodeIndex>(child_table_).subspan(n.first_child, n.child_count);
}

std::optional<NodeIndex> Tree::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

NodeIndex Tree::index_of(std::string_view id) const {
    if (auto i = find(id))
        return *i;
    throw ValidationError(std::string(id), "unknown node");
}

std::uint32_t Tree::context_of(NodeIndex selector, InputKey input) const {
    const Node& n = nodes_[selector];
    if (n.context_count <= 1)
        return 0;
    return static_cast<std::uint32_t>(mix64(n.key ^ mix64(input.context_seed)) %
                                      n.context_count);
}

std::span<double> Tree::weights(NodeIndex selector, std::uint32_t context) {
    const Node& n = nodes_[selector];
    return std::span<double>(weights_).subspan(n.weight_offset + std::size_t{context} * n.child_count,
                                               n.child_count);
}

std::span<const double> Tree::weights(NodeIndex selector, std::uint32_t context) const {
    const Node& n = nodes_[selector];
    return std::span<const double>(weights_).subspan(
        n.weight_offset + std::size_t{context} * n.child_count, n.child_count);
}

PriceVector Tree::price_vector(NodeIndex selector, std::uint32_t context) const {
    const Node& n = nodes_.at(selector);
    if (n.kind != NodeKind::Selector || context >= n.context_count)
        throw Error(ErrorKind::InvalidChild, "no price vector for node '" + n.id + "' context " +
                                                 std::to_string(context));
    auto w = weights(selector, context);
    return PriceVector(std::vector<double>(w.begin(), w.end()));
}

void Tree::set_weights(NodeIndex selector, std::uint32_t context, std::span<const double> w) {
    const Node& n = nodes_.at(selector);
    if (n.kind != NodeKind::Selector || context >= n.context_count || w.size() != n.child_count)
        throw Error(ErrorKind::InvalidArity, "weight shape mismatch for node '" + n.id + "'");
    std::copy(w.begin(), w.end(), weights(selector, context).begin());
}

std::uint32_t Tree::best_child(NodeIndex selector) const {
    auto kids = children(selector);
    std::uint32_t best = 0;
    for (std::uint32_t i = 1; i < kids.size(); ++i)
        if (subtree_best_[kids[i]] > subtree_best_[kids[best]])
            best = i;
    return best;
}

std::vector<NodeSpec> Tree::to_specs() const {
    std::vector<NodeSpec> out;
    out.reserve(nodes_.size());
    for (NodeIndex i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.kind == NodeKind::Leaf) {
            out.push_back(make_leaf(n.id, n.quality));
        } else {
            std::vector<std::string> kids;
            for (NodeIndex c : children(i))
                kids.push_back(nodes_[c].id);
            out.push_back(make_selector(n.id, std::move(kids), n.context_count));
        }
    }
    return out;
}

Tree build_tree(std::span<const NodeSpec> specs) {
    if (specs.empty())
        throw ValidationError("", "empty tree spec");

    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const NodeSpec& s = specs[i];
        if (s.id.empty())
            throw ValidationError(s.id, "empty node id");
        if (!by_id.emplace(s.id, i).second)
            throw ValidationError(s.id, "duplicate id");
    }

    std::vector<std::size_t> parent(specs.size(), specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const NodeSpec& s = specs[i];
        if (s.kind == NodeKind::Leaf) {
            if (!s.children.empty())
                throw ValidationError(s.id, "leaf has children");
            if (!s.quality)
                throw ValidationError(s.id, "leaf without quality");
            if (!(*s.quality >= 0.0 && *s.quality <= 1.0))
                throw ValidationError(s.id, "quality outside [0,1]");
            continue;
        }
        if (s.quality)
            throw ValidationError(s.id, "selector with a quality");
        if (s.children.size() < 2)
            throw ValidationError(s.id, "selector needs at least 2 children, has " +
                                            std::to_string(s.children.size()));
        if (s.context_count < 1)
            throw ValidationError(s.id, "context_count must be positive");
        for (const std::string& c : s.children) {
            auto it = by_id.find(c);
            if (it == by_id.end())
                throw ValidationError(s.id, "unknown child '" + c + "'");
            if (it->second == i)
                throw ValidationError(s.id, "node is its own child (cycle)");
            if (parent[it->second] != specs.size())
                throw ValidationError(c, "node has more than one parent");
            parent[it->second] = i;
        }
    }

    std::size_t root = specs.size();
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (parent[i] != specs.size())
            continue;
        if (root != specs.size())
            throw ValidationError(specs[i].id, "second parentless node (orphan or extra root; first root '" +
                                                   specs[root].id + "')");
        root = i;
    }
    if (root == specs.size())
        throw ValidationError(specs.front().id, "no root: every node has a parent (cycle)");

    Tree tree;
    tree.nodes_.reserve(specs.size());
    std::vector<std::size_t> order;  // tree index -> spec index
    order.reserve(specs.size());
    std::deque<std::pair<std::size_t, NodeIndex>> queue{{root, kNoNode}};
    while (!queue.empty()) {
        auto [si, parent_index] = queue.front();
        queue.pop_front();
        const NodeSpec& s = specs[si];
        const auto index = static_cast<NodeIndex>(tree.nodes_.size());
        Tree::Node n;
        n.id = s.id;
        n.kind = s.kind;
        n.parent = parent_index;
        n.depth = parent_index == kNoNode ? 0 : tree.nodes_[parent_index].depth + 1;
        n.key = hash_label(s.id);
        if (s.kind == NodeKind::Leaf) {
            n.quality = *s.quality;
            ++tree.leaf_count_;
        } else {
            n.child_count = static_cast<std::uint32_t>(s.children.size());
            n.context_count = static_cast<std::uint32_t>(s.context_count);
            n.weight_offset = tree.weights_.size();
            tree.weights_.resize(tree.weights_.size() + s.context_count * s.children.size(),
                                 1.0 / static_cast<double>(s.children.size()));
            for (const std::string& c : s.children)
                queue.emplace_back(by_id.at(c), index);
        }
        tree.depth_ = std::max(tree.depth_, n.depth);
        tree.index_.emplace(n.id, index);
        tree.nodes_.push_back(std::move(n));
        order.push_back(si);
    }
    if (tree.nodes_.size() != specs.size()) {
        for (std::size_t i = 0; i < specs.size(); ++i)
            if (!tree.index_.count(specs[i].id))
                throw ValidationError(specs[i].id, "unreachable from root (cycle)");
    }

    // Breadth-first order places each selector's children contiguously and
    // in spec order, so the child table is filled in one pass.
    NodeIndex next = 1;
    for (NodeIndex i = 0; i < tree.nodes_.size(); ++i) {
        Tree::Node& n = tree.nodes_[i];
        if (n.kind != NodeKind::Selector)
            continue;
        n.first_child = static_cast<std::uint32_t>(tree.child_table_.size());
        for (std::uint32_t c = 0; c < n.child_count; ++c)
            tree.child_table_.push_back(next++);
    }

    tree.subtree_best_.assign(tree.nodes_.size(), -1.0);
    for (NodeIndex i = static_cast<NodeIndex>(tree.nodes_.size()); i-- > 0;) {
        const Tree::Node& n = tree.nodes_[i];
        if (n.kind == NodeKind::Leaf) {
            tree.subtree_best_[i] = n.quality;
            // Reverse scan: >= keeps the earliest index on ties.
            if (tree.nodes_[tree.best_leaf_].kind != NodeKind::Leaf ||
                n.quality >= tree.nodes_[tree.best_leaf_].quality)
                tree.best_leaf_ = i;
        }
        if (n.parent != kNoNode)
            tree.subtree_best_[n.parent] = std::max(tree.subtree_best_[n.parent], tree.subtree_best_[i]);
    }
    return tree;
}

EtaSchedule::EtaSchedule(std::vector<double> by_depth, double fallback) : fallback_(fallback) {
    by_depth_.reserve(by_depth.size());
    for (double r : by_depth)
        by_depth_.emplace_back(r);
}

OutcomeModel OutcomeModel::threshold(double theta, double noise_halfwidth) {
    if (!(noise_halfwidth >= 0.0))
        throw Error(ErrorKind::Range, "noise half-width must be non-negative");
    OutcomeModel m;
    m.kind = Kind::Threshold;
    m.theta = theta;
    m.noise_halfwidth = noise_halfwidth;
    return m;
}

BinarySignal observe_outcome(double quality, Stream& rng, const OutcomeModel& model) {
    const double u = rng.uniform();
    if (model.kind == OutcomeModel::Kind::Bernoulli)
        return BinarySignal(u < quality);
    const double noisy = quality + model.noise_halfwidth * (2.0 * u - 1.0);
    return BinarySignal(noisy > model.theta);
}

RunStreams::RunStreams(const Tree& tree, std::uint64_t seed)
    : seed_(seed), outcome_(Stream::derive(seed, "outcome")) {
    nodes_.reserve(tree.node_count());
    for (NodeIndex i = 0; i < tree.node_count(); ++i)
        nodes_.push_back(node_stream(seed, tree, i));
}

std::size_t select_child(std::span<const double> w, double u, double epsilon) noexcept {
    const std::size_t n = w.size();
    if (epsilon > 0.0) {
        const double keep = 1.0 - epsilon;
        const double floor = epsilon / static_cast<double>(n);
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            acc += keep * w[i] + floor;
            if (u < acc)
                return i;
        }
        return n - 1;
    }
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (w[i] > 0.0)
            last_positive = i;
        acc += w[i];
        if (u < acc)
            return i;
    }
    // u landed in the rounding gap above the accumulated sum.
    return last_positive;
}

namespace {

void route_into(const Tree& tree, InputKey input, RunStreams& streams, double epsilon,
                std::vector<PathStep>& steps) {
    steps.clear();
    NodeIndex at = Tree::root();
    while (tree.node(at).kind == NodeKind::Selector) {
        PathStep step;
        step.selector = at;
        step.context = tree.context_of(at, input);
        const double u = streams.node(at).uniform();
        step.child_position =
            static_cast<std::uint32_t>(select_child(tree.weights(at, step.context), u, epsilon));
        step.child = tree.children(at)[step.child_position];
        steps.push_back(step);
        at = step.child;
    }
}

} // namespace

ActivePath route(const Tree& tree, InputKey input, RunStreams& streams, double epsilon) {
    ActivePath path;
    route_into(tree, input, streams, epsilon, path.steps);
    path.leaf = path.steps.back().child;
    return path;
}

const char* to_string(FeedbackMode mode) {
    return mode == FeedbackMode::Delta ? "delta" : "explicit";
}

void run_round(Tree& tree, InputKey input, RunStreams& streams, const RoundSettings& settings,
               FeedbackMode mode, RoundRecord& record) {
    record.input = input;
    record.mode = mode;
    route_into(tree, input, streams, settings.epsilon, record.path);
    record.leaf = record.path.back().child;
    record.outcome =
        observe_outcome(tree.node(record.leaf).quality, streams.outcome(), settings.outcome);

    // Root-down: each selector reads the delta its parent has already applied.
    BinarySignal signal = record.outcome;
    for (std::size_t i = 0; i < record.path.size(); ++i) {
        PathStep& step = record.path[i];
        if (i > 0 && mode == FeedbackMode::Delta)
            signal = derive_signal(record.path[i - 1].delta);
        step.signal = signal;
        step.delta = apply_update_inplace(tree.weights(step.selector, step.context),
                                          step.child_position, signal,
                                          settings.eta.at(tree.node(step.selector).depth));
    }
    record.leaf_signal = mode == FeedbackMode::Delta ? derive_signal(record.path.back().delta)
                                                     : record.outcome;
}

RoundRecord run_round_delta(Tree& tree, InputKey input, RunStreams& streams,
                            const RoundSettings& settings) {
    RoundRecord r;
    run_round(tree, input, streams, settings, FeedbackMode::Delta, r);
    return r;
}

RoundRecord run_round_explicit(Tree& tree, InputKey input, RunStreams& streams,
                               const RoundSettings& settings) {
    RoundRecord r;
    run_round(tree, input, streams, settings, FeedbackMode::Explicit, r);
    return r;
}

double leaf_selection_probability(const Tree& tree, std::string_view leaf, InputKey input) {
    const NodeIndex i = tree.index_of(leaf);
    if (tree.node(i).kind != NodeKind::Leaf)
        throw ValidationError(std::string(leaf), "not a leaf");
    return activity_rate(tree, leaf, input);
}

double activity_rate(const Tree& tree, std::string_view node, InputKey input) {
    NodeIndex at = tree.index_of(node);
    double p = 1.0;
    while (tree.node(at).parent != kNoNode) {
        const NodeIndex parent = tree.node(at).parent;
        const auto kids = tree.children(parent);
        const auto pos = static_cast<std::size_t>(std::find(kids.begin(), kids.end(), at) - kids.begin());
        p *= tree.weights(parent, tree.context_of(parent, input))[pos];
        at = parent;
    }
    return p;
}

} // namespace pricetree
