#include "pricetree/simlab.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "pricetree/error.hpp"
#include "pricetree/tree_io.hpp"

namespace pricetree {

using nlohmann::json;

// ---------------------------------------------------------------- generators

namespace {

std::string node_name(std::size_t k) { return "n" + std::to_string(k); }

NodeSpec selector_node(std::string id, std::size_t context_count) {
    return make_selector(std::move(id), {}, context_count);
}

// Builds a layered tree from per-level arity lists: arities[l][i] is the
// child count of the i-th node on level l.
std::vector<NodeSpec> layered_tree(const std::vector<std::vector<std::size_t>>& arities,
                                   Stream& rng, QualitySampler sampler,
                                   std::size_t context_count) {
    std::vector<NodeSpec> specs;
    specs.push_back(selector_node(node_name(0), context_count));
    std::size_t level_begin = 0;
    for (std::size_t level = 0; level < arities.size(); ++level) {
        const bool last = level + 1 == arities.size();
        const std::size_t level_size = arities[level].size();
        for (std::size_t i = 0; i < level_size; ++i) {
            for (std::size_t c = 0; c < arities[level][i]; ++c) {
                std::string id = node_name(specs.size());
                specs[level_begin + i].children.push_back(id);
                if (last)
                    specs.push_back(make_leaf(std::move(id), sampler(rng)));
                else
                    specs.push_back(selector_node(std::move(id), context_count));
            }
        }
        level_begin += level_size;
    }
    return specs;
}

} // namespace

std::vector<NodeSpec> gen_uniform_tree(std::size_t branching, std::size_t depth, Stream& rng,
                                       QualitySampler sampler, std::size_t context_count) {
    if (branching < 2)
        throw Error(ErrorKind::Range, "branching factor must be at least 2");
    if (depth < 1)
        throw Error(ErrorKind::Range, "depth must be at least 1");
    std::vector<std::vector<std::size_t>> arities;
    std::size_t width = 1;
    for (std::size_t d = 0; d < depth; ++d) {
        arities.emplace_back(width, branching);
        width *= branching;
    }
    return layered_tree(arities, rng, sampler, context_count);
}

std::vector<NodeSpec> gen_heterogeneous_tree(ArityRange arity, std::size_t depth,
                                             std::size_t leaf_target, Stream& rng,
                                             QualitySampler sampler, std::size_t context_count) {
    if (arity.min < 2 || arity.max < arity.min)
        throw Error(ErrorKind::Range, "arity range must satisfy 2 <= min <= max");
    if (depth < 1)
        throw Error(ErrorKind::Range, "depth must be at least 1");
    const double lo = std::pow(static_cast<double>(arity.min), static_cast<double>(depth));
    const double hi = std::pow(static_cast<double>(arity.max), static_cast<double>(depth));
    if (static_cast<double>(leaf_target) < lo || static_cast<double>(leaf_target) > hi)
        throw Error(ErrorKind::Range, "leaf target " + std::to_string(leaf_target) +
                                          " is infeasible for this arity range and depth");

    std::vector<std::vector<std::size_t>> arities;
    std::size_t width = 1;
    for (std::size_t level = 1; level <= depth; ++level) {
        const double quota = std::pow(static_cast<double>(leaf_target),
                                      static_cast<double>(level) / static_cast<double>(depth));
        const std::size_t want = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(quota)), width * arity.min, width * arity.max);

        std::vector<std::size_t> row(width);
        std::size_t total = 0;
        for (std::size_t& a : row) {
            a = arity.min + rng.below(arity.max - arity.min + 1);
            total += a;
        }
        while (total < want) {
            std::size_t& a = row[rng.below(width)];
            if (a < arity.max) {
                ++a;
                ++total;
            }
        }
        while (total > want) {
            std::size_t& a = row[rng.below(width)];
            if (a > arity.min) {
                --a;
                --total;
            }
        }
        arities.push_back(std::move(row));
        width = want;
    }
    return layered_tree(arities, rng, sampler, context_count);
}

std::vector<NodeSpec> star_tree(std::span<const double> qualities, std::size_t context_count) {
    std::vector<NodeSpec> specs;
    specs.push_back(selector_node("root", context_count));
    for (std::size_t i = 0; i < qualities.size(); ++i) {
        std::string id = "c" + std::to_string(i);
        specs[0].children.push_back(id);
        specs.push_back(make_leaf(std::move(id), qualities[i]));
    }
    return specs;
}

// ----------------------------------------------------------------- schedules

InputSchedule::InputSchedule(ScheduleSpec spec, Stream rng)
    : universe_(spec.universe),
      block_(spec.kind == ScheduleSpec::Kind::Iid ? 1 : spec.block_size),
      rng_(rng) {
    if (block_ < 1)
        throw Error(ErrorKind::Config, "block size must be at least 1");
}

InputKey InputSchedule::next() {
    if (universe_ <= 1)
        return {};
    if (left_ == 0) {
        current_.context_seed = rng_.below(universe_);
        left_ = block_;
    }
    --left_;
    return current_;
}

std::vector<InputKey> block_schedule(std::uint64_t universe, std::size_t block_size,
                                     std::size_t total, Stream& rng) {
    if (block_size < 1)
        throw Error(ErrorKind::Config, "block size must be at least 1");
    std::vector<InputKey> out(total);
    for (std::size_t t = 0; t < total; ++t) {
        if (universe <= 1)
            continue;
        out[t] = t % block_size == 0 ? InputKey{rng.below(universe)} : out[t - 1];
    }
    return out;
}

// -------------------------------------------------------------------- config

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw Error(ErrorKind::Config, "config field '" + field + "': " + why);
    };
    if (rounds < 1)
        fail("rounds", "must be at least 1");
    if (seeds.empty())
        fail("seeds", "must not be empty");
    if (!(eta > 0.0 && eta < 1.0))
        fail("eta", "must lie in (0,1)");
    for (double r : eta_by_depth)
        if (!(r > 0.0 && r < 1.0))
            fail("eta_by_depth", "every rate must lie in (0,1)");
    if (!(epsilon >= 0.0 && epsilon < 1.0))
        fail("epsilon", "must lie in [0,1)");
    if (schedule.kind == ScheduleSpec::Kind::Block && schedule.block_size < 1)
        fail("schedule.block_size", "must be at least 1");
    if (!(settling.epsilon > 0.0 && settling.epsilon < 1.0))
        fail("settling.epsilon", "must lie in (0,1)");
    if (settling.window < 1)
        fail("settling.window", "must be at least 1");
    if (!(accuracy_window > 0.0 && accuracy_window <= 1.0))
        fail("accuracy_window", "must lie in (0,1]");
    if (!(tree.sampler.low >= 0.0 && tree.sampler.low <= tree.sampler.high && tree.sampler.high <= 1.0))
        fail("tree.quality_low/high", "must satisfy 0 <= low <= high <= 1");
    if (tree.context_count < 1)
        fail("tree.context_count", "must be at least 1");
    if (tree.kind == TreeSource::Kind::Star && tree.qualities.size() < 2)
        fail("tree.qualities", "a star tree needs at least 2 qualities");
    if (tree.kind == TreeSource::Kind::File && tree.path.empty())
        fail("tree.path", "required for a file tree");
    for (const std::string& m : metrics) {
        if (m == "ratio" && mode != ModeSelection::Both)
            fail("metrics", "'ratio' needs mode 'both'");
        else if (m == "fidelity" && mode == ModeSelection::Explicit)
            fail("metrics", "'fidelity' needs a delta-mode run");
        else if (m != "accuracy" && m != "ratio" && m != "fidelity" && m != "settling" &&
                 m != "equipoise" && m != "active_rounds")
            fail("metrics", "unknown metric '" + m + "'");
    }
}

namespace {

const char* mode_name(ModeSelection m) {
    switch (m) {
    case ModeSelection::Delta: return "delta";
    case ModeSelection::Explicit: return "explicit";
    case ModeSelection::Both: return "both";
    }
    return "delta";
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
            throw Error(ErrorKind::Config, "unknown config field '" + where + it.key() + "'");
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key))
        return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, "config field '" + where + key + "': " + e.what());
    }
}

TreeSource parse_tree_source(const json& j) {
    if (!j.is_object())
        throw Error(ErrorKind::Config, "config field 'tree' must be an object");
    reject_unknown(j, {"kind", "branching", "depth", "arity_min", "arity_max", "leaves", "qualities",
                       "path", "quality_low", "quality_high", "context_count"},
                   "tree.");
    TreeSource t;
    std::string kind = "uniform";
    read_field(j, "kind", kind, "tree.");
    if (kind == "uniform")
        t.kind = TreeSource::Kind::Uniform;
    else if (kind == "heterogeneous")
        t.kind = TreeSource::Kind::Heterogeneous;
    else if (kind == "star")
        t.kind = TreeSource::Kind::Star;
    else if (kind == "file")
        t.kind = TreeSource::Kind::File;
    else
        throw Error(ErrorKind::Config, "config field 'tree.kind': unknown kind '" + kind + "'");
    read_field(j, "branching", t.branching, "tree.");
    read_field(j, "depth", t.depth, "tree.");
    read_field(j, "arity_min", t.arity.min, "tree.");
    read_field(j, "arity_max", t.arity.max, "tree.");
    read_field(j, "leaves", t.leaf_target, "tree.");
    read_field(j, "qualities", t.qualities, "tree.");
    std::string path;
    read_field(j, "path", path, "tree.");
    t.path = path;
    read_field(j, "quality_low", t.sampler.low, "tree.");
    read_field(j, "quality_high", t.sampler.high, "tree.");
    read_field(j, "context_count", t.context_count, "tree.");
    return t;
}

json tree_source_json(const TreeSource& t) {
    json j;
    switch (t.kind) {
    case TreeSource::Kind::Uniform:
        j = {{"kind", "uniform"}, {"branching", t.branching}, {"depth", t.depth}};
        break;
    case TreeSource::Kind::Heterogeneous:
        j = {{"kind", "heterogeneous"}, {"arity_min", t.arity.min}, {"arity_max", t.arity.max},
             {"depth", t.depth}, {"leaves", t.leaf_target}};
        break;
    case TreeSource::Kind::Star:
        j = {{"kind", "star"}, {"qualities", t.qualities}};
        break;
    case TreeSource::Kind::File:
        j = {{"kind", "file"}, {"path", t.path.string()}};
        break;
    }
    if (t.kind == TreeSource::Kind::Uniform || t.kind == TreeSource::Kind::Heterogeneous) {
        j["quality_low"] = t.sampler.low;
        j["quality_high"] = t.sampler.high;
    }
    j["context_count"] = t.context_count;
    return j;
}

json config_json(const ExperimentConfig& c) {
    json j;
    j["format_version"] = kFormatVersion;
    j["name"] = c.name;
    j["tree"] = tree_source_json(c.tree);
    j["mode"] = mode_name(c.mode);
    j["coupled"] = c.coupled;
    j["rounds"] = c.rounds;
    j["seeds"] = c.seeds;
    j["eta"] = c.eta;
    j["eta_by_depth"] = c.eta_by_depth;
    j["epsilon"] = c.epsilon;
    if (c.outcome.kind == OutcomeModel::Kind::Bernoulli)
        j["outcome"] = {{"kind", "bernoulli"}};
    else
        j["outcome"] = {{"kind", "threshold"}, {"theta", c.outcome.theta}, {"noise", c.outcome.noise_halfwidth}};
    j["schedule"] = {{"kind", c.schedule.kind == ScheduleSpec::Kind::Iid ? "iid" : "block"},
                     {"block_size", c.schedule.block_size},
                     {"universe", c.schedule.universe}};
    j["settling"] = {{"epsilon", c.settling.epsilon}, {"window", c.settling.window}};
    j["accuracy_window"] = c.accuracy_window;
    j["trace_depth"] = c.trace_depth;
    j["metrics"] = c.metrics;
    j["output"] = c.output.string();
    return j;
}

} // namespace

ExperimentConfig parse_config(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw Error(ErrorKind::Config, "config must be a JSON object");
    reject_unknown(j, {"format_version", "name", "tree", "mode", "coupled", "rounds", "seeds", "eta",
                       "eta_by_depth", "epsilon", "outcome", "schedule", "settling", "accuracy_window",
                       "trace_depth", "metrics", "threads", "output"},
                   "");
    ExperimentConfig c;
    int version = kFormatVersion;
    read_field(j, "format_version", version, "");
    if (version != kFormatVersion)
        throw Error(ErrorKind::Config, "unsupported format_version " + std::to_string(version));
    read_field(j, "name", c.name, "");
    if (j.contains("tree"))
        c.tree = parse_tree_source(j["tree"]);
    std::string mode = "delta";
    read_field(j, "mode", mode, "");
    if (mode == "delta")
        c.mode = ModeSelection::Delta;
    else if (mode == "explicit")
        c.mode = ModeSelection::Explicit;
    else if (mode == "both")
        c.mode = ModeSelection::Both;
    else
        throw Error(ErrorKind::Config, "config field 'mode': expected delta, explicit or both");
    read_field(j, "coupled", c.coupled, "");
    long long rounds = static_cast<long long>(c.rounds);
    read_field(j, "rounds", rounds, "");
    if (rounds < 1)
        throw Error(ErrorKind::Config, "config field 'rounds': must be at least 1");
    c.rounds = static_cast<std::size_t>(rounds);
    read_field(j, "seeds", c.seeds, "");
    read_field(j, "eta", c.eta, "");
    read_field(j, "eta_by_depth", c.eta_by_depth, "");
    read_field(j, "epsilon", c.epsilon, "");
    if (j.contains("outcome")) {
        const json& o = j["outcome"];
        reject_unknown(o, {"kind", "theta", "noise"}, "outcome.");
        std::string kind = "bernoulli";
        read_field(o, "kind", kind, "outcome.");
        if (kind == "bernoulli") {
            c.outcome = OutcomeModel::bernoulli();
        } else if (kind == "threshold") {
            double theta = 0.5, noise = 0.0;
            read_field(o, "theta", theta, "outcome.");
            read_field(o, "noise", noise, "outcome.");
            if (!(noise >= 0.0))
                throw Error(ErrorKind::Config, "config field 'outcome.noise': must be non-negative");
            c.outcome = OutcomeModel::threshold(theta, noise);
        } else {
            throw Error(ErrorKind::Config, "config field 'outcome.kind': expected bernoulli or threshold");
        }
    }
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        reject_unknown(s, {"kind", "block_size", "universe"}, "schedule.");
        std::string kind = "iid";
        read_field(s, "kind", kind, "schedule.");
        if (kind == "iid")
            c.schedule.kind = ScheduleSpec::Kind::Iid;
        else if (kind == "block")
            c.schedule.kind = ScheduleSpec::Kind::Block;
        else
            throw Error(ErrorKind::Config, "config field 'schedule.kind': expected iid or block");
        read_field(s, "block_size", c.schedule.block_size, "schedule.");
        read_field(s, "universe", c.schedule.universe, "schedule.");
    }
    if (j.contains("settling")) {
        const json& s = j["settling"];
        reject_unknown(s, {"epsilon", "window"}, "settling.");
        read_field(s, "epsilon", c.settling.epsilon, "settling.");
        read_field(s, "window", c.settling.window, "settling.");
    }
    read_field(j, "accuracy_window", c.accuracy_window, "");
    read_field(j, "trace_depth", c.trace_depth, "");
    read_field(j, "metrics", c.metrics, "");
    read_field(j, "threads", c.threads, "");
    std::string output;
    read_field(j, "output", output, "");
    c.output = output;
    c.validate();
    return c;
}

ExperimentConfig read_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::Io, "cannot open config '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    ExperimentConfig c = parse_config(buf.str());
    if (c.tree.kind == TreeSource::Kind::File && c.tree.path.is_relative())
        c.tree.path = path.parent_path() / c.tree.path;
    return c;
}

std::string config_to_json(const ExperimentConfig& config) { return config_json(config).dump(); }

// ------------------------------------------------------------------- metrics

std::optional<std::size_t> measure_settling(const WeightTrace& trace, std::uint32_t best_child,
                                            SettlingSpec spec) {
    const std::size_t n = trace.size();
    const std::size_t stride = std::max<std::size_t>(1, trace.stride);
    const std::size_t window = std::max<std::size_t>(1, (spec.window + stride - 1) / stride);
    if (n < window || trace.children == 0)
        return std::nullopt;

    // Prefix sums of "argmax is not the best child" and of the max weight.
    std::vector<std::size_t> bad(n + 1, 0);
    std::vector<double> top(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto w = trace.snapshot(i);
        const auto arg = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
        bad[i + 1] = bad[i] + (arg != best_child);
        top[i + 1] = top[i] + w[arg];
    }
    const std::size_t half = window / 2;
    for (std::size_t t = 0; t + window <= n; ++t) {
        if (bad[t + window] != bad[t])
            continue;
        double change = 0.0;
        if (half > 0) {
            const double first = (top[t + half] - top[t]) / static_cast<double>(half);
            const double second =
                (top[t + window] - top[t + half]) / static_cast<double>(window - half);
            change = std::abs(second - first);
        }
        if (change < spec.epsilon)
            return t * stride;
    }
    return std::nullopt;
}

double equipoise_stat(const Tree& tree, NodeIndex node, const WeightTrace& trace) {
    if (tree.node(node).kind != NodeKind::Selector)
        throw ValidationError(tree.node(node).id, "equipoise statistic needs a selector");
    const std::size_t n = trace.size();
    if (n == 0)
        throw Error(ErrorKind::Range, "empty weight trace");
    double total = 0.0;
    for (std::size_t i = n / 2; i < n; ++i) {
        const auto w = trace.snapshot(i);
        total += *std::max_element(w.begin(), w.end());
    }
    return total / static_cast<double>(n - n / 2);
}

void FidelityAuditor::add(const RoundRecord& record) {
    if (record.mode != FeedbackMode::Delta)
        throw Error(ErrorKind::Mode, "fidelity audit needs delta-mode records");
    const std::size_t depth = record.path.size();
    if (report_.observations_by_depth.size() <= depth) {
        report_.observations_by_depth.resize(depth + 1, 0);
        report_.mismatches_by_depth.resize(depth + 1, 0);
    }
    ++report_.rounds;
    auto observe = [&](std::size_t d, BinarySignal s) {
        ++report_.observations;
        ++report_.observations_by_depth[d];
        if (s != record.outcome) {
            ++report_.mismatches;
            ++report_.mismatches_by_depth[d];
        }
    };
    for (std::size_t i = 1; i < depth; ++i)
        observe(i, record.path[i].signal);
    observe(depth, record.leaf_signal);
}

AuditReport fidelity_audit(std::span<const RoundRecord> records) {
    FidelityAuditor auditor;
    for (const RoundRecord& r : records)
        auditor.add(r);
    return auditor.report();
}

// ---------------------------------------------------------------------- runs

std::vector<NodeSpec> specs_for_seed(const ExperimentConfig& config, std::uint64_t seed) {
    const TreeSource& t = config.tree;
    Stream rng = Stream::derive(seed, "tree");
    switch (t.kind) {
    case TreeSource::Kind::Uniform:
        return gen_uniform_tree(t.branching, t.depth, rng, t.sampler, t.context_count);
    case TreeSource::Kind::Heterogeneous:
        return gen_heterogeneous_tree(t.arity, t.depth, t.leaf_target, rng, t.sampler, t.context_count);
    case TreeSource::Kind::Star:
        return star_tree(t.qualities, t.context_count);
    case TreeSource::Kind::File:
        return read_tree_spec(t.path);
    }
    return {};
}

RunMetrics run_single(const ExperimentConfig& config, const std::vector<NodeSpec>& specs,
                      std::uint64_t seed, FeedbackMode mode, const RoundObserver& observer) {
    config.validate();
    Tree tree = build_tree(specs);
    const std::uint64_t stream_seed =
        mode == FeedbackMode::Explicit && !config.coupled ? mix64(seed ^ hash_label("explicit")) : seed;
    RunStreams streams(tree, stream_seed);
    InputSchedule inputs(config.schedule, Stream::derive(stream_seed, "inputs"));
    const RoundSettings settings{EtaSchedule(config.eta_by_depth, config.eta), config.epsilon,
                                 config.outcome};

    RunMetrics m;
    m.seed = seed;
    m.mode = mode;
    m.rounds = config.rounds;
    m.leaves = tree.leaf_count();
    m.depth = tree.depth();
    m.audited = mode == FeedbackMode::Delta;
    m.active_rounds.assign(tree.node_count(), 0);

    const std::size_t rounds = config.rounds;
    const auto scored = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(config.accuracy_window * static_cast<double>(rounds))));
    const std::size_t score_from = rounds - std::min(scored, rounds);
    const std::size_t half = rounds / 2;
    const std::size_t stride = std::max<std::size_t>(1, rounds / 10000);
    const NodeIndex best_leaf = tree.best_leaf();

    std::vector<NodeIndex> traced;
    for (NodeIndex i = 0; i < tree.node_count(); ++i)
        if (tree.node(i).kind == NodeKind::Selector && tree.node(i).depth < config.trace_depth)
            traced.push_back(i);
    std::vector<double> sum_max(traced.size(), 0.0);
    std::vector<std::vector<double>> sum_w(traced.size());
    m.traces.resize(traced.size());
    for (std::size_t j = 0; j < traced.size(); ++j) {
        sum_w[j].assign(tree.node(traced[j]).child_count, 0.0);
        m.traces[j].selector = traced[j];
        m.traces[j].stride = stride;
        m.traces[j].children = tree.node(traced[j]).child_count;
        m.traces[j].data.reserve((rounds / stride + 1) * m.traces[j].children);
    }

    FidelityAuditor auditor;
    RoundRecord record;
    std::uint64_t hits = 0;
    std::uint64_t digest = hash_label("trajectory");
    for (std::size_t t = 0; t < rounds; ++t) {
        run_round(tree, inputs.next(), streams, settings, mode, record);
        record.round = t;
        if (m.audited)
            auditor.add(record);
        for (const PathStep& s : record.path) {
            ++m.active_rounds[s.selector];
            for (double x : tree.weights(s.selector, s.context)) {
                std::uint64_t bits;
                std::memcpy(&bits, &x, sizeof bits);
                digest = mix64(digest ^ bits);
            }
        }
        ++m.active_rounds[record.leaf];
        if (t >= score_from && record.leaf == best_leaf)
            ++hits;
        for (std::size_t j = 0; j < traced.size(); ++j) {
            const auto w = tree.weights(traced[j], 0);
            if (t >= half) {
                sum_max[j] += *std::max_element(w.begin(), w.end());
                for (std::size_t i = 0; i < w.size(); ++i)
                    sum_w[j][i] += w[i];
            }
            if (t % stride == 0)
                m.traces[j].push(w);
        }
        if (observer)
            observer(tree, record);
    }

    m.accuracy = static_cast<double>(hits) / static_cast<double>(rounds - score_from);
    m.audit = auditor.report();
    m.trajectory_digest = digest;
    const auto trailing = static_cast<double>(rounds - half);
    for (std::size_t j = 0; j < traced.size(); ++j) {
        const NodeIndex sel = traced[j];
        SelectorStats st;
        st.id = tree.node(sel).id;
        st.depth = tree.node(sel).depth;
        st.best_child = tree.best_child(sel);
        st.active_rounds = m.active_rounds[sel];
        st.mean_max_weight = sum_max[j] / trailing;
        for (double s : sum_w[j])
            st.mean_weights.push_back(s / trailing);
        st.settling_round = measure_settling(m.traces[j], st.best_child, config.settling);
        m.traced.push_back(std::move(st));
    }
    return m;
}

Summary summarize(std::span<const double> values) {
    Summary s;
    s.count = values.size();
    if (values.empty())
        return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values)
            ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    ExperimentResult result;
    result.config = config;

    struct Job {
        std::size_t seed_index;
        FeedbackMode mode;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        if (config.mode != ModeSelection::Explicit)
            jobs.push_back({i, FeedbackMode::Delta});
        if (config.mode != ModeSelection::Delta)
            jobs.push_back({i, FeedbackMode::Explicit});
    }

    std::vector<std::vector<NodeSpec>> specs;
    specs.reserve(config.seeds.size());
    for (std::uint64_t seed : config.seeds)
        specs.push_back(specs_for_seed(config, seed));

    std::vector<std::optional<RunMetrics>> out(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < jobs.size(); k = next++) {
            try {
                const Job& job = jobs[k];
                out[k] = run_single(config, specs[job.seed_index], config.seeds[job.seed_index], job.mode);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    std::size_t threads = config.threads ? config.threads : std::thread::hardware_concurrency();
    threads = std::clamp<std::size_t>(threads, 1, jobs.size());
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < threads; ++i)
            pool.emplace_back(worker);
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    result.per_seed.resize(config.seeds.size());
    for (std::size_t i = 0; i < config.seeds.size(); ++i)
        result.per_seed[i].seed = config.seeds[i];
    std::vector<double> delta_acc, explicit_acc;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        SeedResult& sr = result.per_seed[jobs[k].seed_index];
        RunMetrics& m = *out[k];
        if (jobs[k].mode == FeedbackMode::Delta) {
            result.mismatches += m.audit.mismatches;
            result.observations += m.audit.observations;
            sr.delta = std::move(m);
        } else {
            sr.explicit_mode = std::move(m);
        }
    }
    for (SeedResult& sr : result.per_seed) {
        if (sr.delta)
            delta_acc.push_back(sr.delta->accuracy);
        if (sr.explicit_mode)
            explicit_acc.push_back(sr.explicit_mode->accuracy);
        if (sr.delta && sr.explicit_mode && sr.explicit_mode->accuracy > 0.0)
            sr.ratio = sr.delta->accuracy / sr.explicit_mode->accuracy;
    }
    if (!delta_acc.empty())
        result.delta_accuracy = summarize(delta_acc);
    if (!explicit_acc.empty())
        result.explicit_accuracy = summarize(explicit_acc);
    if (result.delta_accuracy && result.explicit_accuracy && result.explicit_accuracy->mean > 0.0)
        result.ratio = result.delta_accuracy->mean / result.explicit_accuracy->mean;
    return result;
}

std::vector<ModeComparisonRow> compare_modes(
    const ExperimentConfig& base, std::span<const std::pair<std::size_t, std::size_t>> grid) {
    std::vector<ModeComparisonRow> rows;
    for (auto [b, d] : grid) {
        ExperimentConfig c = base;
        c.tree.kind = TreeSource::Kind::Uniform;
        c.tree.branching = b;
        c.tree.depth = d;
        c.mode = ModeSelection::Both;
        rows.push_back({b, d, run_experiment(c)});
    }
    return rows;
}

SweepResult sweep_eta(const ExperimentConfig& base, std::span<const double> rates,
                      std::span<const std::size_t> depths) {
    if (rates.empty())
        throw Error(ErrorKind::Config, "sweep needs at least one rate");
    for (double r : rates)
        if (!(r > 0.0 && r < 1.0))
            throw Error(ErrorKind::Config, "sweep rate outside (0,1): " + std::to_string(r));
    SweepResult sweep;
    for (std::size_t d : depths) {
        double best_acc = -1.0, best_rate = rates.front();
        for (double r : rates) {
            ExperimentConfig c = base;
            c.tree.kind = TreeSource::Kind::Uniform;
            c.tree.depth = d;
            c.mode = ModeSelection::Delta;
            c.eta = r;
            c.eta_by_depth.clear();
            c.metrics = {"accuracy"};
            const ExperimentResult res = run_experiment(c);
            sweep.rows.push_back({r, d, *res.delta_accuracy});
            if (res.delta_accuracy->mean > best_acc) {
                best_acc = res.delta_accuracy->mean;
                best_rate = r;
            }
        }
        sweep.best_rate_by_depth.emplace_back(d, best_rate);
    }
    return sweep;
}

// -------------------------------------------------------------------- output

namespace {

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string hex(std::uint64_t x) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, x);
    return buf;
}

std::string csv_row(const ExperimentResult& r, std::string_view cell, const RunMetrics& m) {
    std::ostringstream os;
    os << kFormatVersion << ',' << r.config.name << ',' << cell << ',' << m.seed << ','
       << to_string(m.mode) << ',' << m.rounds << ',' << m.leaves << ',' << m.depth << ','
       << num(m.accuracy) << ',';
    if (m.audited)
        os << m.audit.mismatches << ',' << m.audit.observations << ',';
    else
        os << ",,";
    if (!m.traced.empty()) {
        const SelectorStats& root = m.traced.front();
        if (root.settling_round)
            os << *root.settling_round;
        else
            os << "not_settled";
        os << ',' << num(root.mean_max_weight) << ',' << num(root.mean_weights[root.best_child]) << ',';
    } else {
        os << ",,,";
    }
    os << hex(m.trajectory_digest) << '\n';
    return os.str();
}

json summary_json_value(const Summary& s) { return {{"mean", s.mean}, {"sd", s.sd}, {"count", s.count}}; }

bool wants(const ExperimentConfig& c, std::string_view metric) {
    if (c.metrics.empty()) {
        if (metric == "ratio")
            return c.mode == ModeSelection::Both;
        if (metric == "fidelity")
            return c.mode != ModeSelection::Explicit;
        return true;
    }
    return std::find(c.metrics.begin(), c.metrics.end(), metric) != c.metrics.end();
}

json run_json(const ExperimentConfig& c, const RunMetrics& m) {
    json j;
    j["seed"] = m.seed;
    j["mode"] = to_string(m.mode);
    j["accuracy"] = m.accuracy;
    j["trajectory_digest"] = hex(m.trajectory_digest);
    if (m.audited && wants(c, "fidelity")) {
        j["fidelity"] = {{"mismatches", m.audit.mismatches},
                         {"observations", m.audit.observations},
                         {"observations_by_depth", m.audit.observations_by_depth},
                         {"mismatches_by_depth", m.audit.mismatches_by_depth}};
    }
    if (wants(c, "settling") || wants(c, "equipoise")) {
        json sel = json::array();
        for (const SelectorStats& s : m.traced) {
            json row = {{"id", s.id}, {"depth", s.depth}, {"best_child", s.best_child},
                        {"active_rounds", s.active_rounds}};
            if (wants(c, "equipoise")) {
                row["mean_max_weight"] = s.mean_max_weight;
                row["mean_weights"] = s.mean_weights;
            }
            if (wants(c, "settling"))
                row["settling_round"] = s.settling_round ? json(*s.settling_round) : json("not_settled");
            sel.push_back(std::move(row));
        }
        j["selectors"] = std::move(sel);
    }
    if (wants(c, "active_rounds"))
        j["active_rounds"] = m.active_rounds;
    return j;
}

json result_json(const ExperimentResult& r) {
    json j;
    j["format_version"] = kFormatVersion;
    j["experiment"] = r.config.name;
    j["config"] = config_json(r.config);
    j["seeds"] = r.config.seeds;
    json agg;
    if (r.delta_accuracy)
        agg["delta_accuracy"] = summary_json_value(*r.delta_accuracy);
    if (r.explicit_accuracy)
        agg["explicit_accuracy"] = summary_json_value(*r.explicit_accuracy);
    if (r.delta_accuracy && r.explicit_accuracy)
        agg["ratio"] = r.ratio ? json(*r.ratio) : json("undefined");
    if (r.delta_accuracy && wants(r.config, "fidelity"))
        agg["fidelity"] = {{"mismatches", r.mismatches}, {"observations", r.observations}};
    j["aggregate"] = std::move(agg);
    json rows = json::array();
    for (const SeedResult& s : r.per_seed) {
        if (s.delta)
            rows.push_back(run_json(r.config, *s.delta));
        if (s.explicit_mode)
            rows.push_back(run_json(r.config, *s.explicit_mode));
    }
    j["per_seed"] = std::move(rows);
    return j;
}

} // namespace

std::string csv_header() {
    return "format_version,experiment,cell,seed,mode,rounds,leaves,depth,accuracy,mismatches,"
           "observations,root_settling_round,root_mean_max_weight,root_best_child_mean_weight,"
           "trajectory_digest\n";
}

std::string csv_rows(const ExperimentResult& result, std::string_view cell) {
    std::string out;
    for (const SeedResult& s : result.per_seed) {
        if (s.delta)
            out += csv_row(result, cell, *s.delta);
        if (s.explicit_mode)
            out += csv_row(result, cell, *s.explicit_mode);
    }
    return out;
}

std::string summary_json(const ExperimentResult& result) { return result_json(result).dump(2) + "\n"; }

std::string comparison_json(const std::vector<ModeComparisonRow>& rows, const ExperimentConfig& base) {
    json j;
    j["format_version"] = kFormatVersion;
    j["experiment"] = base.name;
    j["config"] = config_json(base);
    json cells = json::array();
    for (const ModeComparisonRow& row : rows) {
        json cell = {{"branching", row.branching}, {"depth", row.depth}};
        cell["delta_accuracy"] = summary_json_value(*row.result.delta_accuracy);
        cell["explicit_accuracy"] = summary_json_value(*row.result.explicit_accuracy);
        cell["ratio"] = row.result.ratio ? json(*row.result.ratio) : json("undefined");
        cells.push_back(std::move(cell));
    }
    j["cells"] = std::move(cells);
    return j.dump(2) + "\n";
}

std::string sweep_json(const SweepResult& sweep, const ExperimentConfig& base) {
    json j;
    j["format_version"] = kFormatVersion;
    j["experiment"] = base.name;
    j["config"] = config_json(base);
    json rows = json::array();
    for (const SweepRow& r : sweep.rows)
        rows.push_back({{"rate", r.rate}, {"depth", r.depth}, {"accuracy", summary_json_value(r.accuracy)}});
    j["rows"] = std::move(rows);
    json best = json::array();
    for (auto [d, rate] : sweep.best_rate_by_depth)
        best.push_back({{"depth", d}, {"rate", rate}});
    j["best_rate_by_depth"] = std::move(best);
    return j.dump(2) + "\n";
}

// --------------------------------------------------------------------- trace

std::string trace_line(const Tree& tree, const RoundRecord& record) {
    json path = json::array();
    for (const PathStep& s : record.path) {
        path.push_back({{"node", tree.node(s.selector).id},
                        {"context", s.context},
                        {"child", tree.node(s.child).id},
                        {"signal", s.signal.as_int()},
                        {"delta", s.delta.value}});
    }
    json j = {{"round", record.round},
              {"mode", to_string(record.mode)},
              {"input", record.input.context_seed},
              {"outcome", record.outcome.as_int()},
              {"leaf", tree.node(record.leaf).id},
              {"leaf_signal", record.leaf_signal.as_int()},
              {"path", std::move(path)}};
    return j.dump() + "\n";
}

RoundRecord parse_trace_line(std::string_view line, std::size_t line_number) {
    RoundRecord r;
    try {
        const json j = json::parse(line);
        const std::string mode = j.at("mode").get<std::string>();
        if (mode == "delta")
            r.mode = FeedbackMode::Delta;
        else if (mode == "explicit")
            r.mode = FeedbackMode::Explicit;
        else
            throw ParseError(line_number, "unknown mode '" + mode + "'");
        r.round = j.at("round").get<std::uint64_t>();
        r.input.context_seed = j.value("input", std::uint64_t{0});
        r.outcome = BinarySignal(j.at("outcome").get<int>() != 0);
        r.leaf_signal = BinarySignal(j.at("leaf_signal").get<int>() != 0);
        for (const json& s : j.at("path")) {
            PathStep step;
            step.context = s.value("context", 0u);
            step.signal = BinarySignal(s.at("signal").get<int>() != 0);
            step.delta.value = s.at("delta").get<double>();
            r.path.push_back(step);
        }
        if (r.path.empty())
            throw ParseError(line_number, "empty path");
    } catch (const json::exception& e) {
        throw ParseError(line_number, std::string("malformed trace record: ") + e.what());
    }
    return r;
}

AuditReport audit_trace(std::istream& in) {
    FidelityAuditor auditor;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        auditor.add(parse_trace_line(line, n));
    }
    return auditor.report();
}

} // namespace pricetree
