// Command-line front door: scenario execution, game analysis, and the fee and
// size estimators, all with machine-readable JSON reports on stdout.
//
// Exit codes: 0 success, 1 demo assertion failure, 2 usage or config error.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "iotchan/consistency.hpp"
#include "iotchan/fixtures.hpp"
#include "iotchan/serde.hpp"

namespace {

using namespace iotchan;

std::string sha256_hex(ByteView data) {
    Digest32 d = sha256(data);
    return to_hex({d.data(), d.size()});
}

std::string sha256_hex(const std::string& s) {
    return sha256_hex(ByteView{reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

struct ReportPrinter {
    Json report;
    bool verbose = false;

    ReportPrinter(std::string command, const std::string& inputs) {
        report["command"] = std::move(command);
        report["inputs_digest"] = sha256_hex(inputs);
        report["results"] = Json::object();
        report["warnings"] = Json::array();
    }

    int emit(int code = 0) {
        std::cout << report.dump(2) << "\n";
        return code;
    }

    void note(const std::string& line) {
        if (verbose) std::cerr << line << "\n";
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

void apply_seed_override(ScenarioConfig& cfg, const std::string& seed_hex) {
    if (seed_hex.empty()) return;
    if (seed_hex.size() != 64) throw ConfigError("--seed must be 64 hex characters");
    Bytes seed = from_hex(seed_hex);
    Bytes a(seed), b(seed);
    a.push_back('a');
    b.push_back('b');
    cfg.seed_a = sha256({a.data(), a.size()});
    cfg.seed_b = sha256({b.data(), b.size()});
}

std::optional<ScenarioConfig> fixture_from_dir(const std::string& name) {
    const char* dir = std::getenv("IOTCHAN_FIXTURE_DIR");
    if (!dir || !*dir) return std::nullopt;
    std::string text = read_file(std::string(dir) + "/" + name);
    return serde::scenario_from_json(parse_json(text, name));
}

Json settled_json(const std::map<std::string, Satoshi>& settled) {
    Json j;
    for (const auto& [actor, value] : settled) j[actor] = value;
    j["publisher_pool_total"] = pool_total(settled, "publisher_");
    j["watchdog_pool_total"] = pool_total(settled, "watchdog_");
    return j;
}

Json scenario_results(const ScenarioConfig& cfg, const ScenarioTrace& trace) {
    Json r;
    r["outcome"] = trace.outcome;
    r["on_chain_channel_txs"] = trace.on_chain_channel_txs;
    r["final_height"] = trace.final_height;
    r["total_miner_fees"] = trace.total_fees;
    r["settled"] = settled_json(settle(cfg, trace));
    r["event_count"] = trace.events.size();
    r["trace_digest"] = sha256_hex(trace.to_jsonl());
    return r;
}

void write_trace(const ScenarioTrace& trace, const std::string& path) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << trace.to_jsonl();
}

struct HeightPair {
    std::int64_t breach = -1;
    std::int64_t resolve = -1;
};

HeightPair resolution_heights(const ScenarioTrace& trace) {
    HeightPair h;
    for (const TraceEvent& e : trace.events) {
        if (e.kind != "confirm") continue;
        const std::string label = e.data["label"].get<std::string>();
        if (label.rfind("commitment", 0) == 0) h.breach = e.data["height"].get<std::int64_t>();
        if (label.rfind("recovery", 0) == 0 || label.rfind("breach_remedy", 0) == 0 ||
            label == "csv_sweep")
            h.resolve = e.data["height"].get<std::int64_t>();
    }
    return h;
}

Json tree_check_json(const GameTree& tree, const GameConfig& cfg) {
    EquilibriumReport rep = equilibrium_check(tree, all_follow_profile(tree), cfg);
    Json j;
    j["all_follow_equilibrium"] = rep.is_equilibrium;
    Json outcome = Json::array();
    for (const Rational& v : rep.outcome) outcome.push_back(rational_string(v));
    j["all_follow_payoffs"] = outcome;
    Json devs = Json::array();
    for (const Deviation& d : rep.profitable_deviations) {
        Json dj;
        dj["player"] = player_name(d.player);
        dj["description"] = d.description;
        dj["gain"] = rational_string(d.gain);
        devs.push_back(dj);
    }
    j["profitable_deviations"] = devs;
    Json bi = Json::array();
    for (const Rational& v : backward_induction(tree)) bi.push_back(rational_string(v));
    j["backward_induction_payoffs"] = bi;
    return j;
}

int cmd_estimate_size(ReportPrinter& printer, std::int64_t inputs, std::int64_t outputs) {
    SizeEstimate est = estimate_size(inputs, outputs);
    printer.report["results"]["min"] = est.min_bytes;
    printer.report["results"]["max"] = est.max_bytes;
    return printer.emit();
}

int cmd_min_fees(ReportPrinter& printer, const GameConfig& cfg) {
    auto [sigma_min, gamma_min] = min_fees(cfg);
    Json& r = printer.report["results"];
    r["sigma1"] = rational_string(sigma_min);
    r["gamma1"] = rational_string(gamma_min);
    auto ceil_of = [](const Rational& v) {
        return (v.numerator() + v.denominator() - 1) / v.denominator();
    };
    r["sigma1_ceil"] = ceil_of(sigma_min);
    r["gamma1_ceil"] = ceil_of(gamma_min);
    r["sigma1_ok"] = Rational(cfg.sigma1) > sigma_min;
    r["gamma1_ok"] = Rational(cfg.gamma1) > gamma_min;
    return printer.emit();
}

int cmd_analyze_game(ReportPrinter& printer, const GameConfig& cfg) {
    PayoffMatrix matrix = payoff_matrix(cfg);
    Json& r = printer.report["results"];
    Json rows = Json::array();
    for (int row = 0; row < 3; ++row) {
        Json cols = Json::array();
        for (int col = 0; col < 3; ++col)
            cols.push_back({matrix.cell[row][col].ii, matrix.cell[row][col].i});
        rows.push_back(cols);
    }
    r["matrix"] = rows;
    r["matrix_rows"] = {"F", "D_1", "D_2"};
    r["matrix_cols"] = {"TX1", "TX2", "TX3"};
    Json eq = Json::array();
    for (auto [row, col] : matrix_equilibrium(matrix)) {
        if (row == 0 && col == 0)
            eq.push_back("all-follow");
        else
            eq.push_back(std::string(PayoffMatrix::row_names[row]) + "/" +
                         PayoffMatrix::col_names[col]);
    }
    r["equilibria"] = eq;

    GameTree p1 = build_tree_p1_first(cfg);
    GameTree p2 = build_tree_p2_first(cfg);
    Json trees;
    trees["p1_first"] = tree_check_json(p1, cfg);
    trees["p2_first"] = tree_check_json(p2, cfg);
    r["tree_checks"] = trees;

    auto [sigma_min, gamma_min] = min_fees(cfg);
    Json fees;
    fees["sigma1"] = rational_string(sigma_min);
    fees["gamma1"] = rational_string(gamma_min);
    r["min_fees"] = fees;

    for (const std::string& w : p1.warnings) printer.report["warnings"].push_back(w);
    for (const std::string& w : p2.warnings) printer.report["warnings"].push_back(w);
    return printer.emit();
}

int cmd_run_scenario(ReportPrinter& printer, const ScenarioConfig& cfg,
                     const std::string& trace_path) {
    ScenarioTrace trace = run_scenario(cfg);
    printer.report["results"] = scenario_results(cfg, trace);
    write_trace(trace, trace_path);
    printer.note("scenario settled: " + trace.outcome);
    return printer.emit();
}

int cmd_demo_honest(ReportPrinter& printer, ScenarioConfig cfg,
                    const std::string& trace_path) {
    ScenarioTrace trace = run_scenario(cfg);
    Json results = scenario_results(cfg, trace);
    const bool pass =
        trace.outcome == "mutual_close" && trace.on_chain_channel_txs == 2;
    results["expected_on_chain_channel_txs"] = 2;
    results["assertion"] = pass ? "pass" : "fail";
    printer.report["results"] = results;
    write_trace(trace, trace_path);
    printer.note("honest lifecycle: " + std::to_string(trace.on_chain_channel_txs) +
                 " on-chain channel transactions");
    return printer.emit(pass ? 0 : 1);
}

int cmd_demo_breach(ReportPrinter& printer, ScenarioConfig cfg,
                    const std::string& trace_path) {
    ScenarioTrace trace = run_scenario(cfg);
    auto settled = settle(cfg, trace);
    Json results = scenario_results(cfg, trace);
    HeightPair heights = resolution_heights(trace);

    GameConfig game = game_from_scenario(cfg);
    const Satoshi beta2 = game.tx2.beta;
    const Satoshi expected_device = cfg.params.capacity() - cfg.params.sigma1 -
                                    cfg.params.gamma1 - cfg.miner_fee;
    const bool pass = trace.outcome == "breach_recovered" && heights.breach >= 0 &&
                      heights.resolve >= 0 &&
                      heights.resolve < heights.breach + cfg.params.w &&
                      settled.at("device") == expected_device &&
                      settled.at("gateway") < beta2;
    results["breach_height"] = heights.breach;
    results["recovery_height"] = heights.resolve;
    results["window"] = cfg.params.w;
    results["device_expected"] = expected_device;
    results["gateway_bound"] = beta2;
    results["assertion"] = pass ? "pass" : "fail";
    printer.report["results"] = results;
    write_trace(trace, trace_path);
    printer.note("breach resolved at height " + std::to_string(heights.resolve));
    return printer.emit(pass ? 0 : 1);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"payment-channel simulator and game analyzer for chainless devices"};
    app.require_subcommand(1);

    std::string config_path, seed_hex, trace_path;
    std::int64_t horizon_override = 0;
    bool verbose = false;
    app.add_option("--config", config_path, "configuration file (alternative to positional)");
    app.add_option("--seed", seed_hex, "master seed override, 64 hex characters");
    app.add_option("--horizon", horizon_override, "scenario horizon override in blocks");
    app.add_option("--trace-out", trace_path, "write the event trace as JSON lines");
    app.add_flag("--verbose", verbose, "human-readable summary on stderr");

    std::string positional_config;
    auto* run = app.add_subcommand("run-scenario", "run a scenario configuration");
    run->add_option("config", positional_config, "scenario JSON file");
    auto* analyze = app.add_subcommand("analyze-game", "matrix, trees, and equilibrium report");
    analyze->add_option("config", positional_config, "game JSON file");
    auto* fees = app.add_subcommand("min-fees", "collusion-resistance fee bounds");
    fees->add_option("config", positional_config, "game JSON file");
    std::int64_t est_inputs = 0, est_outputs = 0;
    auto* est = app.add_subcommand("estimate-size", "transaction size range for i inputs, o outputs");
    est->add_option("inputs", est_inputs, "input count")->required();
    est->add_option("outputs", est_outputs, "output count")->required();
    auto* demo_honest = app.add_subcommand("demo-honest", "run the honest-lifecycle fixture");
    auto* demo_breach = app.add_subcommand("demo-breach", "run the breach-punishment fixture");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 2 : 0;
    }

    try {
        const std::string chosen =
            !positional_config.empty() ? positional_config : config_path;
        auto argv_echo = [&](const char* name) {
            std::string echo = name;
            if (!chosen.empty()) echo += " " + chosen;
            return echo;
        };

        if (*est) {
            ReportPrinter printer("estimate-size", std::to_string(est_inputs) + " " +
                                                       std::to_string(est_outputs));
            printer.verbose = verbose;
            try {
                return cmd_estimate_size(printer, est_inputs, est_outputs);
            } catch (const EstimateDomainError& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 2;
            }
        }
        if (*analyze || *fees) {
            if (chosen.empty()) {
                std::cerr << "error: a game config file is required\n";
                return 2;
            }
            std::string text = read_file(chosen);
            GameConfig cfg = serde::game_from_json(parse_json(text, chosen));
            ReportPrinter printer(argv_echo(*analyze ? "analyze-game" : "min-fees"), text);
            printer.verbose = verbose;
            return *analyze ? cmd_analyze_game(printer, cfg) : cmd_min_fees(printer, cfg);
        }
        if (*run) {
            if (chosen.empty()) {
                std::cerr << "error: a scenario config file is required\n";
                return 2;
            }
            std::string text = read_file(chosen);
            ScenarioConfig cfg = serde::scenario_from_json(parse_json(text, chosen));
            apply_seed_override(cfg, seed_hex);
            if (horizon_override > 0) cfg.horizon = horizon_override;
            cfg.validate();
            ReportPrinter printer(argv_echo("run-scenario"), text);
            printer.verbose = verbose;
            return cmd_run_scenario(printer, cfg, trace_path);
        }
        if (*demo_honest || *demo_breach) {
            const char* name = *demo_honest ? "honest.json" : "breach.json";
            ScenarioConfig cfg;
            if (auto from_dir = fixture_from_dir(name)) {
                cfg = *from_dir;
            } else {
                cfg = *demo_honest ? fixtures::honest() : fixtures::breach();
            }
            apply_seed_override(cfg, seed_hex);
            if (horizon_override > 0) cfg.horizon = horizon_override;
            cfg.validate();
            std::string echo = *demo_honest ? "demo-honest" : "demo-breach";
            ReportPrinter printer(echo, serde::scenario_to_json(cfg).dump());
            printer.verbose = verbose;
            return *demo_honest ? cmd_demo_honest(printer, cfg, trace_path)
                                : cmd_demo_breach(printer, cfg, trace_path);
        }
        std::cerr << "error: unknown subcommand\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const HorizonExceeded& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
