// Command-line front end: run, sweep, margins, validate.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "simo/simo.hpp"

namespace {

using simo::ExitCode;

/// Loads and parses a scenario file, printing every problem on failure.
std::optional<simo::ScenarioConfig> load(const std::string& path, int& status) {
    try {
        return simo::parse_config(simo::read_file(path));
    } catch (const simo::ConfigError& e) {
        for (const auto& p : e.problems()) std::cerr << path << ": " << p << '\n';
        status = simo::code(ExitCode::ConfigError);
    } catch (const simo::IoError& e) {
        std::cerr << e.what() << '\n';
        status = simo::code(ExitCode::ConfigError);
    }
    return std::nullopt;
}

/// "i_ref:v_in" pairs.
std::vector<simo::OperatingPoint> parse_points(const std::vector<std::string>& items) {
    std::vector<simo::OperatingPoint> out;
    for (const auto& s : items) {
        const auto colon = s.find(':');
        if (colon == std::string::npos) throw CLI::ValidationError("--point", "expected i_ref:v_in, got " + s);
        out.push_back({std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))});
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multiplexed SIMO LED driver simulator"};
    app.require_subcommand(1);
    int workers = 0;
    app.add_option("--workers", workers, std::string("Worker threads (default: $") + simo::kWorkersEnv +
                                             " or available parallelism)");

    std::string config, out, spec;
    simo::RunOptions run_opt;
    double duration = 0.0;

    auto* run = app.add_subcommand("run", "Simulate one scenario");
    run->add_option("--config", config, "Scenario JSON")->required();
    run->add_option("--out", out, "Output directory")->required();
    run->add_option("--duration", duration, "Horizon override (s)")->check(CLI::PositiveNumber);
    run->add_flag("--oracle", run_opt.oracle, "Use the fixed-step RK4 oracle (step T_C/100)");
    run->add_option("--decimate", run_opt.decimate, "Keep every n-th trace sample")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "One run per value of a parameter");
    sweep->add_option("--config", config, "Base scenario JSON")->required();
    sweep->add_option("--spec", spec, "Sweep spec JSON")->required();
    sweep->add_option("--out", out, "Output directory")->required();

    simo::MarginOptions margin_opt;
    std::vector<std::string> points;
    auto* margins = app.add_subcommand("margins", "Loop frequency response and phase margin");
    margins->add_option("--config", config, "Scenario JSON")->required();
    margins->add_option("--out", out, "Output directory")->required();
    margins->add_option("--point", points, "Operating point i_ref:v_in (repeatable)");
    margins->add_option("--f-min", margin_opt.f_min, "Lowest probe frequency (Hz)")->check(CLI::PositiveNumber);
    margins->add_option("--f-max", margin_opt.f_max, "Highest probe frequency (Hz)")->check(CLI::PositiveNumber);
    margins->add_option("--per-decade", margin_opt.per_decade, "Probe frequencies per decade")
        ->check(CLI::PositiveNumber);

    auto* validate = app.add_subcommand("validate", "Build and check the switching schedule only");
    validate->add_option("--config", config, "Scenario JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : simo::code(ExitCode::ConfigError);
    }

    int status = 0;
    const auto cfg = load(config, status);
    if (!cfg) return status;
    const unsigned n_workers = simo::worker_count(workers);

    if (*run) {
        if (duration > 0.0) run_opt.duration = duration;
        return simo::code(simo::run_scenario(*cfg, out, run_opt));
    }
    if (*sweep) {
        simo::SweepSpec s;
        try {
            s = simo::parse_sweep_spec(simo::read_file(spec));
        } catch (const simo::ConfigError& e) {
            for (const auto& p : e.problems()) std::cerr << spec << ": " << p << '\n';
            return simo::code(ExitCode::ConfigError);
        } catch (const simo::IoError& e) {
            std::cerr << e.what() << '\n';
            return simo::code(ExitCode::ConfigError);
        }
        return simo::code(simo::sweep_to_directory(*cfg, s, out, n_workers));
    }
    if (*margins) {
        std::vector<simo::OperatingPoint> ops;
        try {
            ops = points.empty() ? simo::default_points(cfg->scenario) : parse_points(points);
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return simo::code(ExitCode::ConfigError);
        }
        if (!(margin_opt.f_min < margin_opt.f_max)) {
            std::cerr << "config error: --f-min must be below --f-max\n";
            return simo::code(ExitCode::ConfigError);
        }
        return simo::code(simo::margins_to_directory(*cfg, ops, margin_opt, out, n_workers));
    }
    return simo::code(simo::validate_config(*cfg, std::cout));
}
