#include "pricetree/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pricetree/equilibrium.hpp"
#include "pricetree/error.hpp"
#include "pricetree/ingest.hpp"
#include "pricetree/simlab.hpp"
#include "pricetree/tree_io.hpp"

namespace pricetree {

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct GlobalFlags {
    std::string config;
    std::uint64_t seed = 1;
    std::size_t seeds = 0;
    std::string out;
    std::string format;
    bool quiet = false;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* seeds_opt = nullptr;
};

struct RunFlags {
    long long rounds = 0;
    std::string mode;
    double eta = 0.0;
    double epsilon = 0.0;
    std::size_t block = 1;
    std::uint64_t contexts = 1;
    std::size_t threads = 0;
    bool coupled = false;
    CLI::Option* rounds_opt = nullptr;
    CLI::Option* mode_opt = nullptr;
    CLI::Option* eta_opt = nullptr;
    CLI::Option* epsilon_opt = nullptr;
    CLI::Option* block_opt = nullptr;
    CLI::Option* contexts_opt = nullptr;
    CLI::Option* threads_opt = nullptr;
    CLI::Option* coupled_opt = nullptr;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
    f.rounds_opt = app->add_option("--rounds", f.rounds, "Rounds per seed");
    f.mode_opt = app->add_option("--mode", f.mode, "Feedback mode")
                     ->check(CLI::IsMember({"delta", "explicit", "both"}));
    f.eta_opt = app->add_option("--eta", f.eta, "Update rate");
    f.epsilon_opt = app->add_option("--epsilon", f.epsilon, "Exploration mixing");
    f.block_opt = app->add_option("--block", f.block, "Input block size B");
    f.contexts_opt = app->add_option("--contexts", f.contexts, "Distinct inputs in the schedule");
    f.threads_opt = app->add_option("--threads", f.threads, "Worker threads (0: all cores)");
    f.coupled_opt = app->add_flag("--coupled", f.coupled, "Share random streams between modes");
}

// Flag overrides take precedence over the config file.
ExperimentConfig resolve_config(const GlobalFlags& g, const RunFlags& f) {
    ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : read_config(g.config);
    if (f.rounds_opt->count()) {
        if (f.rounds < 1)
            throw Error(ErrorKind::Config, "--rounds must be at least 1 (got " + std::to_string(f.rounds) + ")");
        c.rounds = static_cast<std::size_t>(f.rounds);
    }
    if (f.mode_opt->count())
        c.mode = f.mode == "delta" ? ModeSelection::Delta
               : f.mode == "explicit" ? ModeSelection::Explicit
                                      : ModeSelection::Both;
    if (f.eta_opt->count()) {
        c.eta = f.eta;
        c.eta_by_depth.clear();
    }
    if (f.epsilon_opt->count())
        c.epsilon = f.epsilon;
    if (f.block_opt->count()) {
        c.schedule.kind = f.block > 1 ? ScheduleSpec::Kind::Block : ScheduleSpec::Kind::Iid;
        c.schedule.block_size = f.block;
        if (f.block < 1)
            throw Error(ErrorKind::Config, "--block must be at least 1");
    }
    if (f.contexts_opt->count())
        c.schedule.universe = f.contexts;
    if (f.threads_opt->count())
        c.threads = f.threads;
    if (f.coupled_opt->count())
        c.coupled = f.coupled;
    if (g.seeds_opt->count()) {
        if (g.seeds < 1)
            throw Error(ErrorKind::Config, "--seeds must be at least 1");
        const std::uint64_t base = g.seed_opt->count() ? g.seed : 1;
        c.seeds.clear();
        for (std::size_t i = 0; i < g.seeds; ++i)
            c.seeds.push_back(base + i);
    } else if (g.seed_opt->count()) {
        c.seeds = {g.seed};
    }
    if (!g.out.empty())
        c.output = g.out;
    c.validate();
    return c;
}

std::string csv_document(const ExperimentConfig& c, const std::string& body) {
    return "# pricetree format_version=" + std::to_string(kFormatVersion) + "\n# config: " +
           config_to_json(c) + "\n" + csv_header() + body;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << text))
        throw std::runtime_error("cannot write '" + path.string() + "'");
}

// Writes PREFIX.csv and PREFIX.json when an output prefix is set, otherwise
// prints the requested format to stdout.
void emit(const ExperimentConfig& c, const std::string& format, const std::string& csv,
          const std::string& json_text, std::ostream& out) {
    if (!c.output.empty()) {
        std::filesystem::path csv_path = c.output, json_path = c.output;
        csv_path += ".csv";
        json_path += ".json";
        write_file(csv_path, csv);
        write_file(json_path, json_text);
        return;
    }
    out << (format == "json" ? json_text : csv);
}

class Progress {
public:
    Progress(std::ostream& err, bool quiet) : err_(err), quiet_(quiet) {}

    void note(const std::string& msg) {
        if (!quiet_)
            err_ << msg << std::endl;
    }
    void done() {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::ostringstream os;
        os << "done in " << std::fixed << std::setprecision(2) << s << " s";
        note(os.str());
    }

private:
    std::ostream& err_;
    bool quiet_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

int cmd_simulate(const GlobalFlags& g, const RunFlags& f, const std::string& trace_path,
                 std::ostream& out, std::ostream& err) {
    const ExperimentConfig c = resolve_config(g, f);
    Progress progress(err, g.quiet);
    progress.note("simulate: " + std::to_string(c.seeds.size()) + " seed(s) x " +
                  std::to_string(c.rounds) + " rounds");
    if (!trace_path.empty()) {
        std::ofstream trace(trace_path, std::ios::binary);
        if (!trace)
            throw std::runtime_error("cannot write '" + trace_path + "'");
        const FeedbackMode mode = c.mode == ModeSelection::Explicit ? FeedbackMode::Explicit : FeedbackMode::Delta;
        run_single(c, specs_for_seed(c, c.seeds.front()), c.seeds.front(), mode,
                   [&](const Tree& tree, const RoundRecord& r) { trace << trace_line(tree, r); });
        if (!trace)
            throw std::runtime_error("cannot write '" + trace_path + "'");
    }
    const ExperimentResult r = run_experiment(c);
    if (r.delta_accuracy)
        progress.note("delta accuracy " + std::to_string(r.delta_accuracy->mean));
    if (r.explicit_accuracy)
        progress.note("explicit accuracy " + std::to_string(r.explicit_accuracy->mean));
    progress.done();
    emit(c, g.format, csv_document(c, csv_rows(r, "-")), summary_json(r), out);
    return kOk;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_grid(const std::vector<std::string>& cells) {
    std::vector<std::pair<std::size_t, std::size_t>> grid;
    for (const std::string& cell : cells) {
        unsigned long b = 0, d = 0;
        char tail = 0;
        if (std::sscanf(cell.c_str(), "%lux%lu%c", &b, &d, &tail) != 2)
            throw Error(ErrorKind::Config, "grid cell '" + cell + "' is not of the form BxD");
        grid.emplace_back(b, d);
    }
    return grid;
}

int cmd_compare(const GlobalFlags& g, const RunFlags& f, const std::vector<std::string>& cells,
                std::ostream& out, std::ostream& err) {
    ExperimentConfig c = resolve_config(g, f);
    c.mode = ModeSelection::Both;
    const auto grid = parse_grid(cells);
    Progress progress(err, g.quiet);
    std::vector<ModeComparisonRow> rows;
    std::string body;
    for (auto cell : grid) {
        progress.note("compare-modes: b=" + std::to_string(cell.first) + " D=" + std::to_string(cell.second));
        auto row = compare_modes(c, std::span(&cell, 1)).front();
        progress.note(row.result.ratio ? "  ratio " + std::to_string(*row.result.ratio) : "  ratio undefined");
        body += csv_rows(row.result, "b" + std::to_string(cell.first) + "d" + std::to_string(cell.second));
        rows.push_back(std::move(row));
    }
    progress.done();
    emit(c, g.format, csv_document(c, body), comparison_json(rows, c), out);
    return kOk;
}

int cmd_sweep(const GlobalFlags& g, const RunFlags& f, const std::vector<double>& rates,
              const std::vector<std::size_t>& depths, std::ostream& out, std::ostream& err) {
    ExperimentConfig c = resolve_config(g, f);
    Progress progress(err, g.quiet);
    progress.note("sweep-eta: " + std::to_string(rates.size()) + " rate(s) x " +
                  std::to_string(depths.size()) + " depth(s)");
    const SweepResult s = sweep_eta(c, rates, depths);
    progress.done();
    std::ostringstream csv;
    csv << "# pricetree format_version=" << kFormatVersion << "\n# config: " << config_to_json(c) << "\n"
        << "format_version,experiment,rate,depth,mean_accuracy,sd_accuracy,seeds\n";
    for (const SweepRow& r : s.rows)
        csv << kFormatVersion << ',' << c.name << ',' << r.rate << ',' << r.depth << ','
            << std::setprecision(17) << r.accuracy.mean << ',' << r.accuracy.sd << ','
            << r.accuracy.count << std::setprecision(6) << '\n';
    emit(c, g.format, csv.str(), sweep_json(s, c), out);
    return kOk;
}

int cmd_equilibrium(const GlobalFlags& g, std::vector<double> p, double eta_value, std::ostream& out) {
    const UpdateRate eta(eta_value);
    for (double x : p)
        if (!(x >= 0.0 && x <= 1.0))
            throw Error(ErrorKind::Config, "quality " + std::to_string(x) + " is outside [0,1]");
    const QualityVector q = QualityVector::sorted(std::move(p));
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["qualities"] = std::vector<double>(q.values().begin(), q.values().end());
    j["eta"] = eta.value();

    EquilibriumSolution sol;
    try {
        sol = equilibrium_general(q);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::Degenerate)
            throw;
        j["verdict"] = "degenerate";
        j["detail"] = e.what();
    }
    if (!j.contains("verdict")) {
        j["verdict"] = sol.interior ? "interior" : "not interior";
        j["c"] = sol.c;
        if (sol.w_star) {
            j["w_star"] = sol.w_star->weights();
            const DriftVector d = expected_drift(sol.w_star->weights(), q, eta);
            j["max_abs_drift"] = d.max_abs();
            const JacobianMatrix jac = jacobian(q, eta);
            double residual = 0.0;
            for (std::size_t k = 0; k < jac.size(); ++k)
                residual = std::max(residual, std::abs(jac.column_sum(k) / eta.value() - sol.c));
            j["column_sum_residual"] = residual;
        }
        if (q.size() == 2 && q[0] > q[1]) {
            j["alpha"] = *sol.alpha;
            j["drift_slope"] = drift_slope_n2(q[0], q[1], eta);
            const EquilibriumCost cost = equilibrium_cost(q[0], q[1]);
            j["eq_cost"] = cost.absolute;
            j["eq_cost_fraction"] = cost.fractional;
        }
    }

    if (g.format == "json") {
        out << j.dump(2) << '\n';
        return kOk;
    }
    auto list = [](const std::vector<double>& v) {
        std::ostringstream os;
        os << std::setprecision(10);
        for (std::size_t i = 0; i < v.size(); ++i)
            os << (i ? " " : "") << v[i];
        return os.str();
    };
    out << std::setprecision(10);
    out << "qualities: " << list(j["qualities"].get<std::vector<double>>()) << '\n';
    out << "verdict: " << j["verdict"].get<std::string>() << '\n';
    if (j.contains("c"))
        out << "c: " << j["c"].get<double>() << '\n';
    if (j.contains("w_star"))
        out << "w*: " << list(j["w_star"].get<std::vector<double>>()) << '\n';
    if (j.contains("alpha"))
        out << "alpha: " << j["alpha"].get<double>() << '\n'
            << "drift slope: " << j["drift_slope"].get<double>() << '\n'
            << "c_eq: " << j["eq_cost"].get<double>() << " (fraction of p1: "
            << j["eq_cost_fraction"].get<double>() << ")\n";
    if (j.contains("max_abs_drift"))
        out << "max |drift(w*)|: " << j["max_abs_drift"].get<double>() << '\n'
            << "jacobian column-sum residual: " << j["column_sum_residual"].get<double>() << '\n';
    return kOk;
}

int cmd_audit(const GlobalFlags& g, const std::string& path, std::ostream& out) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::Io, "cannot open trace '" + path + "'");
    const AuditReport r = audit_trace(in);
    if (g.format == "json") {
        nlohmann::json j = {{"format_version", kFormatVersion},
                            {"rounds", r.rounds},
                            {"observations", r.observations},
                            {"mismatches", r.mismatches},
                            {"observations_by_depth", r.observations_by_depth},
                            {"mismatches_by_depth", r.mismatches_by_depth}};
        out << j.dump(2) << '\n';
    } else {
        out << r.mismatches << " mismatches / " << r.observations << " observations over " << r.rounds
            << " rounds\n";
        for (std::size_t d = 1; d < r.observations_by_depth.size(); ++d)
            if (r.observations_by_depth[d])
                out << "depth " << d << ": " << r.mismatches_by_depth[d] << " / "
                    << r.observations_by_depth[d] << '\n';
    }
    return r.mismatches == 0 ? kOk : kRuntime;
}

int cmd_ingest(const GlobalFlags& g, const std::string& path, const std::string& method,
               std::ostream& out, std::ostream& err) {
    const NormalizationMethod m = parse_normalization(method);
    const auto rows = load_hierarchy_csv(path);
    const auto specs = to_tree_spec(rows, m);
    const Tree tree = build_tree(specs);
    if (!g.quiet)
        err << "ingest: " << tree.node_count() << " nodes, " << tree.leaf_count() << " leaves, depth "
            << tree.depth() << '\n';
    const std::string text = format_tree_spec(specs);
    if (!g.out.empty())
        write_file(g.out, text);
    else
        out << text;
    return kOk;
}

// Unreadable inputs count as usage failures; write failures surface as
// std::runtime_error and map to a runtime failure.
bool usage_kind(ErrorKind k) {
    switch (k) {
    case ErrorKind::Config:
    case ErrorKind::Parse:
    case ErrorKind::Mode:
    case ErrorKind::Validation:
    case ErrorKind::InvalidRate:
    case ErrorKind::InvalidArity:
    case ErrorKind::Range:
    case ErrorKind::Io:
        return true;
    default:
        return false;
    }
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Price-vector routing trees: simulation, equilibrium analysis and audits", "pricetree"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags g;
    app.add_option("--config", g.config, "Experiment config (JSON)");
    g.seed_opt = app.add_option("--seed", g.seed, "Base seed");
    g.seeds_opt = app.add_option("--seeds", g.seeds, "Number of consecutive seeds starting at --seed");
    app.add_option("--out", g.out, "Output prefix (simulate/compare/sweep) or file (ingest)");
    app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json", "text"}));
    app.add_flag("--quiet,-q", g.quiet, "No progress on stderr");

    RunFlags sim_flags, cmp_flags, sweep_flags;
    std::string trace_path;
    auto* sim = app.add_subcommand("simulate", "Run an experiment config");
    add_run_flags(sim, sim_flags);
    sim->add_option("--trace", trace_path, "Write the first seed's round records as JSON lines");

    std::vector<std::string> grid{"2x3", "2x6"};
    auto* cmp = app.add_subcommand("compare-modes", "Delta vs explicit accuracy over a (b, D) grid");
    add_run_flags(cmp, cmp_flags);
    cmp->add_option("--grid", grid, "Cells BxD")->delimiter(',')->capture_default_str();

    std::vector<double> rates{0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5};
    std::vector<std::size_t> depths{3, 6, 9};
    auto* sweep = app.add_subcommand("sweep-eta", "Accuracy by update rate and depth");
    add_run_flags(sweep, sweep_flags);
    sweep->add_option("--rates", rates, "Update rates")->delimiter(',')->capture_default_str();
    sweep->add_option("--depths", depths, "Tree depths")->delimiter(',')->capture_default_str();

    std::vector<double> qualities;
    double eq_eta = 0.1;
    auto* eq = app.add_subcommand("equilibrium", "Closed-form equilibrium for qualities p1..pN");
    eq->add_option("qualities", qualities, "Leaf qualities")->required()->expected(2, -1);
    eq->add_option("--eta", eq_eta, "Update rate")->capture_default_str();

    std::string audit_path;
    auto* audit = app.add_subcommand("audit", "Fidelity audit of a delta-mode trace");
    audit->add_option("trace", audit_path, "JSON-lines trace")->required();

    std::string ingest_path, normalize = "rank";
    auto* ingest = app.add_subcommand("ingest", "Convert a hierarchy CSV to a tree spec");
    ingest->add_option("csv", ingest_path, "node_id,parent_id,quality file")->required();
    ingest->add_option("--normalize", normalize, "rank, minmax or identity")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (sim->parsed())
            return cmd_simulate(g, sim_flags, trace_path, out, err);
        if (cmp->parsed())
            return cmd_compare(g, cmp_flags, grid, out, err);
        if (sweep->parsed())
            return cmd_sweep(g, sweep_flags, rates, depths, out, err);
        if (eq->parsed())
            return cmd_equilibrium(g, qualities, eq_eta, out);
        if (audit->parsed())
            return cmd_audit(g, audit_path, out);
        if (ingest->parsed())
            return cmd_ingest(g, ingest_path, normalize, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return usage_kind(e.kind()) ? kUsage : kRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}

} // namespace pricetree
