#pragma once

// Experiment harness: tree generators, input schedules, seeded runs in
// delta and/or explicit feedback mode, and the metrics derived from them
// (leaf-selection accuracy, fidelity audits, settling, equipoise).
//
// All randomness derives from the configured seeds. For a run seed s the
// tree shape/qualities come from substream (s, "tree"). Inputs come from
// (s', "inputs") and routing/outcomes from RunStreams(tree, s'), where s' = s
// except in uncoupled explicit mode, which uses a seed derived from s.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pricetree/hierarchy.hpp"

namespace pricetree {

struct QualitySampler {
    double low = 0.3;
    double high = 0.95;

    double operator()(Stream& rng) const { return low + (high - low) * rng.uniform(); }
};

struct ArityRange {
    std::size_t min = 2;
    std::size_t max = 10;
};

// Complete b-ary tree with b^depth leaves. Ids are "n<k>" breadth-first.
std::vector<NodeSpec> gen_uniform_tree(std::size_t branching, std::size_t depth, Stream& rng,
                                       QualitySampler sampler = {}, std::size_t context_count = 1);

// Every leaf at exactly `depth`; per-node arity drawn from `arity` and then
// nudged so each level hits a geometric quota ending at `leaf_target`.
// Throws Error(Range) when leaf_target is outside [min^depth, max^depth].
std::vector<NodeSpec> gen_heterogeneous_tree(ArityRange arity, std::size_t depth,
                                             std::size_t leaf_target, Stream& rng,
                                             QualitySampler sampler = {},
                                             std::size_t context_count = 1);

// A single selector over leaves with the given qualities.
std::vector<NodeSpec> star_tree(std::span<const double> qualities, std::size_t context_count = 1);

struct ScheduleSpec {
    enum class Kind { Iid, Block };

    Kind kind = Kind::Iid;
    std::size_t block_size = 1;  // Block only
    std::uint64_t universe = 1;  // number of distinct inputs
};

// Each input key repeats for block_size consecutive rounds before a fresh
// one is drawn; IID is the block size 1 case and produces the same stream.
class InputSchedule {
public:
    InputSchedule(ScheduleSpec spec, Stream rng);

    InputKey next();

private:
    std::uint64_t universe_;
    std::size_t block_;
    std::size_t left_ = 0;
    InputKey current_;
    Stream rng_;
};

std::vector<InputKey> block_schedule(std::uint64_t universe, std::size_t block_size,
                                     std::size_t total, Stream& rng);

struct TreeSource {
    enum class Kind { Uniform, Heterogeneous, Star, File };

    Kind kind = Kind::Uniform;
    std::size_t branching = 2;          // Uniform
    std::size_t depth = 3;              // Uniform, Heterogeneous
    ArityRange arity;                   // Heterogeneous
    std::size_t leaf_target = 475;      // Heterogeneous
    std::vector<double> qualities;      // Star
    std::filesystem::path path;         // File
    QualitySampler sampler;             // generated kinds
    std::size_t context_count = 1;      // generated kinds and Star
};

enum class ModeSelection { Delta, Explicit, Both };

struct SettlingSpec {
    double epsilon = 0.05;
    std::size_t window = 500;
};

struct ExperimentConfig {
    std::string name = "experiment";
    TreeSource tree;
    ModeSelection mode = ModeSelection::Delta;
    bool coupled = false;
    std::size_t rounds = 10000;
    std::vector<std::uint64_t> seeds{1};
    double eta = 0.1;
    std::vector<double> eta_by_depth;
    double epsilon = 0.0;
    OutcomeModel outcome;
    ScheduleSpec schedule;
    SettlingSpec settling;
    double accuracy_window = 0.2;   // trailing fraction of rounds scored
    std::size_t trace_depth = 1;    // selectors shallower than this are traced
    // accuracy, ratio, fidelity, settling, equipoise, active_rounds.
    // Empty: every metric the selected modes can produce.
    std::vector<std::string> metrics;
    std::size_t threads = 0;        // 0: hardware concurrency
    std::filesystem::path output;   // prefix for .csv / .json; empty: none

    // Throws Error(Config) naming the offending field.
    void validate() const;
};

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig read_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

// Snapshots of one selector's context-0 weights every `stride` rounds.
struct WeightTrace {
    NodeIndex selector = kNoNode;
    std::size_t stride = 1;
    std::size_t children = 0;
    std::vector<double> data;

    std::size_t size() const noexcept { return children ? data.size() / children : 0; }
    std::span<const double> snapshot(std::size_t i) const {
        return std::span<const double>(data).subspan(i * children, children);
    }
    void push(std::span<const double> w) { data.insert(data.end(), w.begin(), w.end()); }
};

// First round t such that across the window starting at t the argmax child
// is `best_child` at every snapshot and the mean max weight of the window's
// second half differs from its first half by less than epsilon.
// Returns nullopt when no such window exists (including a short trace).
std::optional<std::size_t> measure_settling(const WeightTrace& trace, std::uint32_t best_child,
                                            SettlingSpec spec);

// Mean over the trailing half of the trace of max_i w_i. Throws
// ValidationError for a leaf.
double equipoise_stat(const Tree& tree, NodeIndex node, const WeightTrace& trace);

struct AuditReport {
    std::uint64_t rounds = 0;
    std::uint64_t observations = 0;  // non-root active nodes, leaf included
    std::uint64_t mismatches = 0;
    std::vector<std::uint64_t> observations_by_depth;  // index = node depth
    std::vector<std::uint64_t> mismatches_by_depth;
};

// Compares every non-root active node's recorded signal with the round
// outcome. Throws Error(Mode) for explicit-mode records.
class FidelityAuditor {
public:
    void add(const RoundRecord& record);
    const AuditReport& report() const noexcept { return report_; }

private:
    AuditReport report_;
};

AuditReport fidelity_audit(std::span<const RoundRecord> records);

struct SelectorStats {
    std::string id;
    std::uint32_t depth = 0;
    std::uint32_t best_child = 0;
    std::uint64_t active_rounds = 0;
    double mean_max_weight = 0.0;         // trailing half, every round
    std::vector<double> mean_weights;     // trailing half, context 0
    std::optional<std::size_t> settling_round;
};

struct RunMetrics {
    std::uint64_t seed = 0;
    FeedbackMode mode = FeedbackMode::Delta;
    std::size_t rounds = 0;
    std::size_t leaves = 0;
    std::uint32_t depth = 0;
    double accuracy = 0.0;
    bool audited = false;
    AuditReport audit;
    std::vector<std::uint64_t> active_rounds;  // per node index
    std::vector<SelectorStats> traced;
    std::vector<WeightTrace> traces;
    std::uint64_t trajectory_digest = 0;
};

using RoundObserver = std::function<void(const Tree&, const RoundRecord&)>;

// One seed, one mode. The tree is built from `specs` fresh for the run.
RunMetrics run_single(const ExperimentConfig& config, const std::vector<NodeSpec>& specs,
                      std::uint64_t seed, FeedbackMode mode, const RoundObserver& observer = {});

// Tree specs a config produces for a seed.
std::vector<NodeSpec> specs_for_seed(const ExperimentConfig& config, std::uint64_t seed);

struct SeedResult {
    std::uint64_t seed = 0;
    std::optional<RunMetrics> delta;
    std::optional<RunMetrics> explicit_mode;
    std::optional<double> ratio;
};

struct Summary {
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation
    std::size_t count = 0;
};

Summary summarize(std::span<const double> values);

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<SeedResult> per_seed;  // in config seed order
    std::optional<Summary> delta_accuracy;
    std::optional<Summary> explicit_accuracy;
    std::optional<double> ratio;  // mean delta / mean explicit accuracy
    std::uint64_t mismatches = 0;
    std::uint64_t observations = 0;
};

// Seeds run in parallel; the result does not depend on thread count.
ExperimentResult run_experiment(const ExperimentConfig& config);

struct ModeComparisonRow {
    std::size_t branching = 0;
    std::size_t depth = 0;
    ExperimentResult result;
};

// Both modes on a grid of complete trees; the config's coupling flag decides
// whether the modes share random streams.
std::vector<ModeComparisonRow> compare_modes(
    const ExperimentConfig& base, std::span<const std::pair<std::size_t, std::size_t>> grid);

struct SweepRow {
    double rate = 0.0;
    std::size_t depth = 0;
    Summary accuracy;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::pair<std::size_t, double>> best_rate_by_depth;
};

// Delta-mode accuracy for each (rate, depth) on complete trees of the base
// config's branching factor. Throws Error(Config) for an empty rate list or
// a rate outside (0,1).
SweepResult sweep_eta(const ExperimentConfig& base, std::span<const double> rates,
                      std::span<const std::size_t> depths);

// CSV: fixed header, one row per seed per mode per cell.
inline constexpr int kFormatVersion = 1;
std::string csv_header();
std::string csv_rows(const ExperimentResult& result, std::string_view cell);
std::string summary_json(const ExperimentResult& result);
std::string comparison_json(const std::vector<ModeComparisonRow>& rows, const ExperimentConfig& base);
std::string sweep_json(const SweepResult& sweep, const ExperimentConfig& base);

// JSON-lines trace of round records (one object per round).
std::string trace_line(const Tree& tree, const RoundRecord& record);
RoundRecord parse_trace_line(std::string_view line, std::size_t line_number);
AuditReport audit_trace(std::istream& in);

} // namespace pricetree
