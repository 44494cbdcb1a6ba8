#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "doctest.h"
#include "pricetree/error.hpp"
#include "pricetree/simlab.hpp"
#include "pricetree/tree_io.hpp"
#include "support.hpp"

using namespace pricetree;

namespace {

std::size_t count_leaves(const std::vector<NodeSpec>& specs) {
    return static_cast<std::size_t>(std::count_if(specs.begin(), specs.end(),
                                                  [](const NodeSpec& s) { return s.kind == NodeKind::Leaf; }));
}

ExperimentConfig star_config(std::vector<double> p, std::size_t rounds, double eta) {
    ExperimentConfig c;
    c.tree.kind = TreeSource::Kind::Star;
    c.tree.qualities = std::move(p);
    c.rounds = rounds;
    c.eta = eta;
    c.threads = 1;
    return c;
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t n) {
    std::vector<std::uint64_t> s(n);
    for (std::size_t i = 0; i < n; ++i)
        s[i] = first + i;
    return s;
}

double median_settling(const ExperimentResult& r) {
    std::vector<double> v;
    for (const SeedResult& s : r.per_seed) {
        const auto& t = s.delta->traced.front().settling_round;
        v.push_back(t ? static_cast<double>(*t) : std::numeric_limits<double>::infinity());
    }
    std::sort(v.begin(), v.end());
    return (v[v.size() / 2] + v[(v.size() - 1) / 2]) / 2.0;
}

} // namespace

TEST_CASE("uniform tree generator") {
    Stream rng = Stream::derive(1, "gen");
    const auto big = gen_uniform_tree(2, 15, rng);
    CHECK(count_leaves(big) == 32768);
    CHECK(build_tree(big).leaf_count() == 32768);

    const auto t = gen_uniform_tree(3, 3, rng);
    CHECK(count_leaves(t) == 27);
    CHECK(t.size() - count_leaves(t) == 13);

    Stream a = Stream::derive(5, "tree"), b = Stream::derive(5, "tree");
    CHECK(gen_uniform_tree(3, 4, a) == gen_uniform_tree(3, 4, b));

    for (const NodeSpec& s : t)
        if (s.quality)
            CHECK((*s.quality >= 0.3 && *s.quality <= 0.95));
    CHECK_THROWS_AS(gen_uniform_tree(1, 3, rng), Error);
    CHECK_THROWS_AS(gen_uniform_tree(2, 0, rng), Error);
}

TEST_CASE("heterogeneous tree generator") {
    std::set<std::string> shapes;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Stream rng = Stream::derive(seed, "tree");
        const auto specs = gen_heterogeneous_tree({2, 10}, 4, 475, rng);
        const Tree tree = build_tree(specs);
        CHECK(tree.leaf_count() >= 430);
        CHECK(tree.leaf_count() <= 520);
        CHECK(tree.depth() == 4);
        for (NodeIndex i = 0; i < tree.node_count(); ++i) {
            const auto& n = tree.node(i);
            if (n.kind == NodeKind::Leaf) {
                CHECK(n.depth == 4);
            } else {
                CHECK(n.child_count >= 2);
                CHECK(n.child_count <= 10);
            }
        }
        shapes.insert(format_tree_spec(specs));
    }
    CHECK(shapes.size() == 10);

    Stream rng = Stream::derive(3, "tree");
    const auto binary = build_tree(gen_heterogeneous_tree({2, 2}, 4, 16, rng));
    CHECK(binary.leaf_count() == 16);
    CHECK(binary.selector_count() == 15);

    CHECK_THROWS_AS(gen_heterogeneous_tree({2, 10}, 2, 101, rng), Error);
    CHECK_THROWS_AS(gen_heterogeneous_tree({2, 10}, 4, 15, rng), Error);
    CHECK_THROWS_AS(gen_heterogeneous_tree({1, 10}, 4, 100, rng), Error);
}

TEST_CASE("block schedule") {
    Stream a = Stream::derive(9, "inputs");
    Stream b = a;
    const auto iid = block_schedule(1000, 1, 200, a);
    InputSchedule schedule({ScheduleSpec::Kind::Iid, 1, 1000}, b);
    for (const InputKey& k : iid)
        CHECK(k == schedule.next());

    Stream c = Stream::derive(9, "inputs");
    InputSchedule block1({ScheduleSpec::Kind::Block, 1, 1000}, c);
    for (const InputKey& k : iid)
        CHECK(k == block1.next());

    Stream rng = Stream::derive(2, "inputs");
    const auto blocks = block_schedule(1u << 30, 500, 1000, rng);
    std::size_t changes = 0;
    for (std::size_t t = 1; t < blocks.size(); ++t)
        changes += !(blocks[t] == blocks[t - 1]);
    CHECK(changes == 1);
    CHECK(!(blocks[0] == blocks[500]));

    for (const InputKey& k : block_schedule(16, 7, 300, rng))
        CHECK(k.context_seed < 16);
    CHECK_THROWS_AS(block_schedule(16, 0, 10, rng), Error);
}

TEST_CASE("config parsing") {
    const ExperimentConfig c = parse_config(R"({
        "name": "x", "tree": {"kind": "uniform", "branching": 3, "depth": 2},
        "mode": "both", "rounds": 500, "seeds": [4, 5], "eta": 0.2, "epsilon": 0.01,
        "outcome": {"kind": "threshold", "theta": 0.6, "noise": 0.1},
        "schedule": {"kind": "block", "block_size": 10, "universe": 32},
        "settling": {"epsilon": 0.1, "window": 50}, "metrics": ["accuracy", "ratio"]})");
    CHECK(c.tree.branching == 3);
    CHECK(c.mode == ModeSelection::Both);
    CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(c.outcome.kind == OutcomeModel::Kind::Threshold);
    CHECK(c.schedule.block_size == 10);
    CHECK(c.settling.window == 50);

    // The echoed config parses back to itself.
    CHECK(config_to_json(parse_config(config_to_json(c))) == config_to_json(c));

    auto config_error = [](const char* text, const char* needle) {
        try {
            parse_config(text);
            FAIL("accepted: " << text);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Config);
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    config_error(R"({"rounds": 0})", "rounds");
    config_error(R"({"seeds": []})", "seeds");
    config_error(R"({"roundz": 10})", "roundz");
    config_error(R"({"tree": {"kind": "star", "qualities": [0.5], "x": 1}})", "tree.x");
    config_error(R"({"metrics": ["ratio"]})", "metrics");
    config_error(R"({"mode": "explicit", "metrics": ["fidelity"]})", "metrics");
    config_error(R"({"schedule": {"kind": "block", "block_size": 0}})", "block_size");
    config_error(R"({"eta": 1.5})", "eta");
    config_error(R"({"rounds": "many"})", "rounds");
    config_error("{\n\"rounds\": 10,\n}", "line 3");
}

TEST_CASE("single-selector equilibrium from simulation") {
    ExperimentConfig c = star_config({0.9, 0.6}, 100000, 0.05);
    c.seeds = seed_range(1, 10);
    const ExperimentResult r = run_experiment(c);
    double mean_w1 = 0.0;
    for (const SeedResult& s : r.per_seed)
        mean_w1 += s.delta->traced.front().mean_weights[0];
    mean_w1 /= 10.0;
    CHECK(mean_w1 == doctest::Approx(0.8).epsilon(0.025));
    CHECK(std::abs(mean_w1 - 0.8) <= 0.02);

    ExperimentConfig bad = c;
    bad.rounds = 0;
    CHECK_THROWS_AS(run_experiment(bad), Error);
}

TEST_CASE("coupled modes give identical metrics") {
    ExperimentConfig c;
    c.tree.branching = 3;
    c.tree.depth = 3;
    c.mode = ModeSelection::Both;
    c.coupled = true;
    c.rounds = 5000;
    c.seeds = seed_range(1, 3);
    c.epsilon = 0.05;
    const ExperimentResult r = run_experiment(c);
    for (const SeedResult& s : r.per_seed) {
        CHECK(s.delta->trajectory_digest == s.explicit_mode->trajectory_digest);
        CHECK(s.delta->accuracy == s.explicit_mode->accuracy);
        CHECK(s.delta->active_rounds == s.explicit_mode->active_rounds);
        CHECK(s.delta->traces.front().data == s.explicit_mode->traces.front().data);
    }
    REQUIRE(r.ratio);
    CHECK(*r.ratio == 1.0);

    const std::pair<std::size_t, std::size_t> cell{2, 3};
    const auto rows = compare_modes(c, std::span(&cell, 1));
    REQUIRE(rows.front().result.ratio);
    CHECK(*rows.front().result.ratio == 1.0);

    c.coupled = false;
    const ExperimentResult u = run_experiment(c);
    CHECK(u.per_seed.front().delta->trajectory_digest != u.per_seed.front().explicit_mode->trajectory_digest);
}

TEST_CASE("results do not depend on thread count") {
    ExperimentConfig c;
    c.tree.kind = TreeSource::Kind::Heterogeneous;
    c.tree.arity = {2, 5};
    c.tree.depth = 3;
    c.tree.leaf_target = 40;
    c.mode = ModeSelection::Both;
    c.rounds = 3000;
    c.seeds = seed_range(10, 6);
    c.threads = 1;
    const ExperimentResult one = run_experiment(c);
    c.threads = 4;
    const ExperimentResult four = run_experiment(c);
    CHECK(csv_rows(one, "x") == csv_rows(four, "x"));
    CHECK(summary_json(one) == summary_json(four));
    CHECK(csv_rows(one, "x") == csv_rows(run_experiment(c), "x"));
}

TEST_CASE("settling measurement") {
    WeightTrace frozen{0, 1, 2, {}};
    for (int i = 0; i < 600; ++i)
        frozen.push(std::vector<double>{1.0, 0.0});
    CHECK(measure_settling(frozen, 0, {0.05, 500}) == std::optional<std::size_t>(0));
    CHECK_FALSE(measure_settling(frozen, 1, {0.05, 500}));
    CHECK_FALSE(measure_settling(frozen, 0, {0.05, 601}));

    // Wrong argmax for 100 snapshots, then a steady correct one.
    WeightTrace late{0, 3, 2, {}};
    for (int i = 0; i < 100; ++i)
        late.push(std::vector<double>{0.4, 0.6});
    for (int i = 0; i < 400; ++i)
        late.push(std::vector<double>{0.7, 0.3});
    CHECK(measure_settling(late, 0, {0.05, 300}) == std::optional<std::size_t>(300));

    // Correct argmax throughout but still climbing.
    WeightTrace climbing{0, 1, 2, {}};
    for (int i = 0; i < 1000; ++i) {
        const double w = 0.5 + 0.45 * std::min(1.0, i / 500.0) + 1e-9;
        climbing.push(std::vector<double>{w, 1.0 - w});
    }
    const auto t = measure_settling(climbing, 0, {0.05, 200});
    REQUIRE(t);
    CHECK(*t > 250);
    CHECK(*t <= 500);
}

TEST_CASE("settling speeds up with the quality gap; equal qualities never settle") {
    std::vector<double> medians;
    for (double p2 : {0.8, 0.6, 0.4}) {
        ExperimentConfig c = star_config({0.9, p2}, 20000, 0.1);
        c.seeds = seed_range(1, 10);
        medians.push_back(median_settling(run_experiment(c)));
    }
    CHECK(medians[1] < std::numeric_limits<double>::infinity());
    CHECK(medians[0] > medians[1]);
    CHECK(medians[1] > medians[2]);

    ExperimentConfig eq = star_config({0.7, 0.7}, 20000, 0.1);
    eq.seeds = seed_range(1, 10);
    for (const SeedResult& s : run_experiment(eq).per_seed)
        CHECK_FALSE(s.delta->traced.front().settling_round);
}

TEST_CASE("equipoise statistic") {
    const Tree star = build_tree(star_tree(std::vector<double>{0.5, 0.5, 0.5}));
    WeightTrace frozen{0, 1, 3, {}};
    for (int i = 0; i < 10; ++i)
        frozen.push(std::vector<double>{0.2, 0.5, 0.3});
    CHECK(equipoise_stat(star, 0, frozen) == 0.5);
    CHECK_THROWS_AS(equipoise_stat(star, 1, frozen), ValidationError);

    ExperimentConfig c = star_config({0.9, 0.6}, 100000, 0.05);
    c.seeds = seed_range(1, 4);
    const ExperimentResult r = run_experiment(c);
    const Tree tree = build_tree(specs_for_seed(c, 1));
    for (const SeedResult& s : r.per_seed) {
        const double stat = equipoise_stat(tree, 0, s.delta->traces.front());
        CHECK(std::abs(stat - 0.8) < 0.03);
        CHECK(std::abs(stat - s.delta->traced.front().mean_max_weight) < 0.01);
    }
}

TEST_CASE("fidelity audit") {
    ExperimentConfig c;
    c.tree.kind = TreeSource::Kind::Heterogeneous;
    c.tree.arity = {2, 10};
    c.tree.depth = 4;
    c.tree.leaf_target = 475;
    c.rounds = 20000;
    c.epsilon = 0.02;
    std::vector<RoundRecord> records;
    std::vector<std::string> lines;
    RunMetrics m = run_single(c, specs_for_seed(c, 3), 3, FeedbackMode::Delta,
                              [&](const Tree& tree, const RoundRecord& r) {
                                  records.push_back(r);
                                  if (lines.size() < 50)
                                      lines.push_back(trace_line(tree, r));
                              });
    CHECK(m.audit.mismatches == 0);
    CHECK(m.audit.observations == 4 * c.rounds);
    const AuditReport full = fidelity_audit(records);
    CHECK(full.mismatches == 0);
    CHECK(full.observations == m.audit.observations);
    CHECK(full.observations_by_depth[4] == c.rounds);

    records[123].path[2].signal.bit = !records[123].path[2].signal.bit;
    const AuditReport corrupted = fidelity_audit(records);
    CHECK(corrupted.mismatches == 1);
    CHECK(corrupted.mismatches_by_depth[2] == 1);

    std::vector<RoundRecord> exp(1);
    exp[0].mode = FeedbackMode::Explicit;
    try {
        fidelity_audit(exp);
        FAIL("explicit records accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Mode);
    }

    // JSON-lines trace round trip.
    std::string text;
    for (const std::string& l : lines)
        text += l;
    std::istringstream in(text);
    const AuditReport from_trace = audit_trace(in);
    CHECK(from_trace.rounds == 50);
    CHECK(from_trace.mismatches == 0);
    CHECK(from_trace.observations == 200);
    const RoundRecord back = parse_trace_line(lines[7], 8);
    CHECK(back.round == 7);
    CHECK(back.outcome == records[7].outcome);
    REQUIRE(back.path.size() == records[7].path.size());
    for (std::size_t i = 0; i < back.path.size(); ++i) {
        CHECK(back.path[i].signal == records[7].path[i].signal);
        CHECK(back.path[i].delta.value == records[7].path[i].delta.value);
    }

    std::istringstream bad(lines[0] + "{not json\n");
    try {
        audit_trace(bad);
        FAIL("malformed trace accepted");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("sweep over update rates") {
    ExperimentConfig c;
    c.rounds = 2000;
    c.seeds = seed_range(1, 2);
    const std::vector<double> one{0.1};
    const std::vector<std::size_t> depth{3};
    const SweepResult s = sweep_eta(c, one, depth);
    CHECK(s.rows.size() == 1);
    CHECK(s.best_rate_by_depth.front() == std::pair<std::size_t, double>{3, 0.1});
    CHECK_THROWS_AS(sweep_eta(c, std::vector<double>{}, depth), Error);
    CHECK_THROWS_AS(sweep_eta(c, std::vector<double>{1.0}, depth), Error);

    c.rounds = 20000;
    c.seeds = seed_range(1, 10);
    const SweepResult hot = sweep_eta(c, std::vector<double>{0.99}, std::vector<std::size_t>{9});
    CHECK(hot.rows.front().accuracy.mean > 1.0 / 512.0);
}

TEST_CASE("summary statistics and CSV layout") {
    const Summary s = summarize(std::vector<double>{1.0, 2.0, 3.0});
    CHECK(s.mean == 2.0);
    CHECK(s.sd == 1.0);
    CHECK(s.count == 3);
    CHECK(summarize(std::vector<double>{4.0}).sd == 0.0);

    ExperimentConfig c = star_config({0.9, 0.6}, 1000, 0.1);
    c.mode = ModeSelection::Both;
    c.seeds = seed_range(1, 3);
    const ExperimentResult r = run_experiment(c);
    const std::string rows = csv_rows(r, "cell");
    CHECK(std::count(rows.begin(), rows.end(), '\n') == 6);
    const auto columns = [](const std::string& line) { return std::count(line.begin(), line.end(), ','); };
    CHECK(columns(csv_header()) == columns(rows.substr(0, rows.find('\n') + 1)));
    CHECK(csv_header().rfind("format_version,", 0) == 0);
    CHECK(summary_json(r).find("\"format_version\": 1") != std::string::npos);
}
