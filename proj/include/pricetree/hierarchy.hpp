#pragma once

// Hierarchies of selectors. Each selector keeps one price vector per
// operating context and routes a round to one of its children by sampling
// that vector; only the root sees the outcome. In delta mode every other
// selector on the active path recovers the outcome from the sign of the
// change its parent just made to its weight.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pricetree/mechanism.hpp"
#include "pricetree/random.hpp"

namespace pricetree {

enum class NodeKind { Selector, Leaf };

struct NodeSpec {
    std::string id;
    NodeKind kind = NodeKind::Leaf;
    std::vector<std::string> children;  // selectors only, in index order
    std::optional<double> quality;      // leaves only, in [0,1]
    std::size_t context_count = 1;      // selectors only

    friend bool operator==(const NodeSpec&, const NodeSpec&) = default;
};

NodeSpec make_leaf(std::string id, double quality);
NodeSpec make_selector(std::string id, std::vector<std::string> children,
                       std::size_t context_count = 1);

using NodeIndex = std::uint32_t;
inline constexpr NodeIndex kNoNode = std::numeric_limits<NodeIndex>::max();

struct InputKey {
    std::uint64_t context_seed = 0;

    friend bool operator==(InputKey, InputKey) = default;
};

class Tree {
public:
    struct Node {
        std::string id;
        NodeKind kind = NodeKind::Leaf;
        NodeIndex parent = kNoNode;
        std::uint32_t depth = 0;
        std::uint32_t first_child = 0;  // offset into the child table
        std::uint32_t child_count = 0;
        std::uint32_t context_count = 0;
        std::size_t weight_offset = 0;  // offset into the weight table
        double quality = 0.0;
        std::uint64_t key = 0;          // stable hash of id
    };

    // Nodes are stored breadth-first; the root is index 0.
    static constexpr NodeIndex root() noexcept { return 0; }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    const Node& node(NodeIndex i) const { return nodes_.at(i); }
    std::span<const NodeIndex> children(NodeIndex i) const;

    std::uint32_t depth() const noexcept { return depth_; }
    std::size_t leaf_count() const noexcept { return leaf_count_; }
    std::size_t selector_count() const noexcept { return nodes_.size() - leaf_count_; }

    std::optional<NodeIndex> find(std::string_view id) const;
    // Throws Error(Validation) for an unknown id.
    NodeIndex index_of(std::string_view id) const;

    // Context function: hash(node id, input) mod context_count.
    std::uint32_t context_of(NodeIndex selector, InputKey input) const;

    std::span<double> weights(NodeIndex selector, std::uint32_t context);
    std::span<const double> weights(NodeIndex selector, std::uint32_t context) const;
    PriceVector price_vector(NodeIndex selector, std::uint32_t context = 0) const;
    void set_weights(NodeIndex selector, std::uint32_t context, std::span<const double> w);

    // The full weight table, in node order then context order.
    std::span<const double> weight_table() const noexcept { return weights_; }

    // Leaf with the highest quality (first in node order on ties).
    NodeIndex best_leaf() const noexcept { return best_leaf_; }
    // Child position whose subtree holds the best leaf under `selector`.
    std::uint32_t best_child(NodeIndex selector) const;
    double subtree_best_quality(NodeIndex i) const { return subtree_best_.at(i); }

    std::vector<NodeSpec> to_specs() const;

private:
    friend Tree build_tree(std::span<const NodeSpec> specs);

    std::vector<Node> nodes_;
    std::vector<NodeIndex> child_table_;
    std::vector<double> weights_;
    std::vector<double> subtree_best_;
    std::unordered_map<std::string, NodeIndex> index_;
    std::uint32_t depth_ = 0;
    std::size_t leaf_count_ = 0;
    NodeIndex best_leaf_ = 0;
};

// Validates the specs (unique ids, a single root, no cycles or orphans,
// arity >= 2, leaf qualities in [0,1]) and initialises every price vector
// to uniform. Throws ValidationError naming the offending node.
Tree build_tree(std::span<const NodeSpec> specs);

// Per-depth update rate; depths past the table use the fallback.
class EtaSchedule {
public:
    explicit EtaSchedule(double rate = 0.1) : fallback_(rate) {}
    EtaSchedule(std::vector<double> by_depth, double fallback);

    UpdateRate at(std::uint32_t depth) const {
        return depth < by_depth_.size() ? by_depth_[depth] : fallback_;
    }
    const std::vector<UpdateRate>& by_depth() const noexcept { return by_depth_; }
    UpdateRate fallback() const noexcept { return fallback_; }

private:
    std::vector<UpdateRate> by_depth_;
    UpdateRate fallback_;
};

struct OutcomeModel {
    enum class Kind { Bernoulli, Threshold };

    Kind kind = Kind::Bernoulli;
    double theta = 0.5;            // Threshold only
    double noise_halfwidth = 0.0;  // Threshold only

    static OutcomeModel bernoulli() { return {}; }
    static OutcomeModel threshold(double theta, double noise_halfwidth);
};

// Bernoulli: 1 with probability q. Threshold: 1 iff q + U(-s, s) > theta.
// Consumes exactly one draw in either mode.
BinarySignal observe_outcome(double quality, Stream& rng, const OutcomeModel& model);

// Independent per-node routing streams plus the root's outcome stream, all
// derived from one run seed.
class RunStreams {
public:
    RunStreams(const Tree& tree, std::uint64_t seed);

    Stream& node(NodeIndex i) { return nodes_[i]; }
    Stream& outcome() noexcept { return outcome_; }
    std::uint64_t seed() const noexcept { return seed_; }

    static Stream node_stream(std::uint64_t seed, const Tree& tree, NodeIndex i) {
        return Stream::derive(seed, tree.node(i).key);
    }

private:
    std::uint64_t seed_;
    std::vector<Stream> nodes_;
    Stream outcome_;
};

// Samples index i with probability (1 - epsilon) * w_i + epsilon / N using
// the uniform draw u in [0,1).
std::size_t select_child(std::span<const double> w, double u, double epsilon) noexcept;

struct PathStep {
    NodeIndex selector = kNoNode;
    std::uint32_t context = 0;
    std::uint32_t child_position = 0;
    NodeIndex child = kNoNode;
    BinarySignal signal;  // signal the selector applied to its children
    WeightDelta delta;    // resulting change to the selected child's weight
};

struct ActivePath {
    std::vector<PathStep> steps;
    NodeIndex leaf = kNoNode;
};

// One draw from each visited selector's stream, root first.
ActivePath route(const Tree& tree, InputKey input, RunStreams& streams, double epsilon);

enum class FeedbackMode { Delta, Explicit };

const char* to_string(FeedbackMode mode);

struct RoundRecord {
    std::uint64_t round = 0;
    InputKey input;
    FeedbackMode mode = FeedbackMode::Delta;
    std::vector<PathStep> path;
    NodeIndex leaf = kNoNode;
    BinarySignal outcome;
    BinarySignal leaf_signal;  // what the leaf reads from its incoming delta
};

struct RoundSettings {
    EtaSchedule eta;
    double epsilon = 0.0;
    OutcomeModel outcome;
};

// Routes, observes the outcome at the root and updates the active path
// root-down. Reuses `record`'s storage so long runs do not allocate.
void run_round(Tree& tree, InputKey input, RunStreams& streams, const RoundSettings& settings,
               FeedbackMode mode, RoundRecord& record);

RoundRecord run_round_delta(Tree& tree, InputKey input, RunStreams& streams,
                            const RoundSettings& settings);
RoundRecord run_round_explicit(Tree& tree, InputKey input, RunStreams& streams,
                               const RoundSettings& settings);

// Product of the edge weights from the root down to `leaf`, each read in the
// context `input` selects at that node. Throws for an unknown or non-leaf id.
double leaf_selection_probability(const Tree& tree, std::string_view leaf, InputKey input = {});

// Probability that `node` is on the active path: product of its ancestors'
// edge weights; 1 for the root.
double activity_rate(const Tree& tree, std::string_view node, InputKey input = {});

} // namespace pricetree
