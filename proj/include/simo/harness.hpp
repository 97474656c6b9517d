#pragma once

// Run, sweep and margin campaigns writing CSV and text outputs.
//
// Every output directory gets config.resolved.json, the fully resolved
// scenario that regenerates it.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "simo/config.hpp"
#include "simo/metrics.hpp"
#include "simo/simulator.hpp"

namespace simo {

namespace fs = std::filesystem;

enum class ExitCode : int { Ok = 0, ConfigError = 1, ScheduleViolation = 2, Divergence = 3, IoError = 4 };

inline int code(ExitCode c) { return static_cast<int>(c); }

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Environment variable holding the default worker count.
inline constexpr const char* kWorkersEnv = "SIMO_WORKERS";

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

/// Writes through a callback, failing loudly on any stream error.
template <class F>
void write_file(const fs::path& p, F&& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    body(out);
    out.flush();
    if (!out) throw IoError("write failed for " + p.string());
}

/// Worker count: explicit value if > 0, else the environment, else hardware.
inline unsigned worker_count(int requested = 0) {
    if (requested > 0) return static_cast<unsigned>(requested);
    if (const char* env = std::getenv(kWorkersEnv)) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs job(i) for i in [0, n) on up to `workers` threads. The first
/// exception thrown by any job is rethrown after all threads finish.
template <class Job>
void parallel_for(std::size_t n, unsigned workers, Job&& job) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex m;
    auto loop = [&] {
        for (std::size_t i; (i = next++) < n;) {
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(m);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const unsigned t = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    if (t <= 1) {
        loop();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned j = 0; j < t; ++j) pool.emplace_back(loop);
    }
    if (failure) std::rethrow_exception(failure);
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + '"';
}

inline void write_csv_row(std::ostream& os, const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << csv_field(row[j]);
    os << '\n';
}

// ---------------------------------------------------------------------------
// Single run.

struct RunOptions {
    std::optional<double> duration;
    /// Use the fixed-step oracle with step T_C/100.
    bool oracle = false;
    /// Keep every n-th uniform trace sample.
    int decimate = 1;
};

inline ScenarioConfig apply_run_options(ScenarioConfig cfg, const RunOptions& opt) {
    if (opt.duration) cfg.scenario.duration = *opt.duration;
    if (opt.oracle && cfg.scenario.engine.oracle_step == 0.0) cfg.scenario.engine.oracle_step = cfg.scenario.params.t_c() / 100.0;
    if (opt.decimate > 1) cfg.scenario.engine.decimation = opt.decimate;
    return cfg;
}

/// Simulates one configuration into `out`: config.resolved.json,
/// schedule.csv, trace.csv, metrics.txt and metrics.csv. A schedule
/// violation writes the schedule and its violation list only; a divergence
/// still writes the partial trace and metrics.
inline ExitCode run_scenario(const ScenarioConfig& base, const fs::path& out, const RunOptions& opt = {},
                             std::ostream& log = std::cerr) {
    ScenarioConfig cfg;
    try {
        cfg = apply_run_options(base, opt);
        if (auto p = cfg.scenario.problems(); !p.empty()) throw ConfigError(p);
    } catch (const ConfigError& e) {
        for (const auto& p : e.problems()) log << "config error: " << p << '\n';
        return ExitCode::ConfigError;
    }
    const Scenario& sc = cfg.scenario;
    try {
        ensure_directory(out);
        write_file(out / "config.resolved.json", [&](std::ostream& os) { os << emit_config(cfg); });

        SwitchSchedule sched;
        try {
            sched = build_schedule(sc.cmd, sc.params);
        } catch (const ScheduleError& e) {
            log << "schedule violation: " << e.what() << '\n';
            return ExitCode::ScheduleViolation;
        }
        write_file(out / "schedule.csv", [&](std::ostream& os) { write_schedule_csv(os, sched); });
        if (auto rep = validate_schedule(sched, sc.cmd, sc.params); !rep.ok()) {
            write_file(out / "violations.txt", [&](std::ostream& os) { os << rep; });
            log << rep;
            return ExitCode::ScheduleViolation;
        }

        const Trace tr = simulate(sc);
        write_file(out / "trace.csv", [&](std::ostream& os) { write_trace_csv(os, tr); });
        const auto rep = compute_metrics(tr, sc, cfg.metrics);
        write_file(out / "metrics.txt", [&](std::ostream& os) { write_report(os, rep); });
        write_file(out / "metrics.csv", [&](std::ostream& os) {
            write_csv_row(os, report_columns(sc.n_strings()));
            write_csv_row(os, report_values(rep));
        });
        if (tr.diverged()) {
            log << "divergence: " << tr.diagnostic << '\n';
            return ExitCode::Divergence;
        }
        return ExitCode::Ok;
    } catch (const IoError& e) {
        log << "i/o error: " << e.what() << '\n';
        return ExitCode::IoError;
    }
}

/// Builds and checks the schedule only.
inline ExitCode validate_config(const ScenarioConfig& cfg, std::ostream& os) {
    try {
        const auto sched = build_schedule(cfg.scenario.cmd, cfg.scenario.params);
        const auto rep = validate_schedule(sched, cfg.scenario.cmd, cfg.scenario.params);
        os << rep;
        if (!rep.ok()) return ExitCode::ScheduleViolation;
        os << "hyperperiod_ns=" << sched.hyperperiod << '\n';
        for (std::size_t k = 0; k < sched.strings.size(); ++k) {
            os << "string" << k + 1 << ".dimming_frequency_hz=" << sched.strings[k].f_d << '\n';
        }
        return ExitCode::Ok;
    } catch (const ScheduleError& e) {
        os << "schedule violation: " << e.what() << '\n';
        return ExitCode::ScheduleViolation;
    }
}

// ---------------------------------------------------------------------------
// Sweeps.

/// Selected report columns for a sweep. Names match either a global column
/// ("efficiency") or a per-string column without its "sK_" prefix
/// ("overshoot_pct"), which selects it for every string.
inline std::vector<std::size_t> sweep_column_indices(const SweepSpec& spec, std::size_t n_strings) {
    const auto all = report_columns(n_strings);
    std::vector<std::size_t> idx;
    if (spec.metrics.empty()) {
        for (std::size_t j = 0; j < all.size(); ++j) idx.push_back(j);
        return idx;
    }
    std::vector<std::string> unknown;
    for (const auto& name : spec.metrics) {
        bool found = false;
        for (std::size_t j = 0; j < all.size(); ++j) {
            const auto& c = all[j];
            const auto us = c.find('_');
            const bool per_string = c.size() > 1 && c[0] == 's' && std::isdigit(static_cast<unsigned char>(c[1]));
            if (c == name || (per_string && us != std::string::npos && c.substr(us + 1) == name)) {
                idx.push_back(j);
                found = true;
            }
        }
        if (!found) unknown.push_back("metrics: unknown column '" + name + "'");
    }
    if (!unknown.empty()) throw ConfigError(unknown);
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

struct SweepTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// One row per value, in the spec's order. Failed runs fill the metric
/// columns with empty fields and record the reason.
inline SweepTable run_sweep(const ScenarioConfig& base, const SweepSpec& spec, unsigned workers) {
    const std::size_t n = base.scenario.n_strings();
    const auto idx = sweep_column_indices(spec, n);
    const auto all = report_columns(n);
    SweepTable table;
    table.header.push_back(parameter_name(spec.parameter));
    table.header.push_back("run_status");
    for (std::size_t j : idx) table.header.push_back(all[j]);
    table.header.push_back("diagnostic");
    table.rows.resize(spec.values.size());

    parallel_for(spec.values.size(), workers, [&](std::size_t i) {
        auto& row = table.rows[i];
        row.push_back(value_label(spec.values[i]));
        try {
            Scenario sc = apply_sweep_value(base.scenario, spec.parameter, spec.values[i]);
            if (spec.duration) sc.duration = *spec.duration;
            sc.engine.sample_rate = 0.0;  // metrics come from period records
            if (sc.n_strings() != n) throw ModelError("sweep value changes the string count");
            const Trace tr = simulate(sc);
            const auto vals = report_values(compute_metrics(tr, sc, base.metrics));
            row.push_back(tr.diverged() ? "diverged" : "ok");
            for (std::size_t j : idx) row.push_back(vals[j]);
            row.push_back(tr.diagnostic);
        } catch (const std::exception& e) {
            row.resize(1);
            row.push_back("error");
            row.resize(table.header.size() - 1);
            row.push_back(e.what());
        }
    });
    return table;
}

inline ExitCode sweep_to_directory(const ScenarioConfig& base, const SweepSpec& spec, const fs::path& out,
                                   unsigned workers, std::ostream& log = std::cerr) {
    try {
        ensure_directory(out);
        write_file(out / "config.resolved.json", [&](std::ostream& os) { os << emit_config(base); });
        const auto table = run_sweep(base, spec, workers);
        write_file(out / "sweep.csv", [&](std::ostream& os) {
            write_csv_row(os, table.header);
            for (const auto& r : table.rows) write_csv_row(os, r);
        });
        return ExitCode::Ok;
    } catch (const ConfigError& e) {
        for (const auto& p : e.problems()) log << "config error: " << p << '\n';
        return ExitCode::ConfigError;
    } catch (const IoError& e) {
        log << "i/o error: " << e.what() << '\n';
        return ExitCode::IoError;
    }
}

// ---------------------------------------------------------------------------
// Loop margins.

struct OperatingPoint {
    double i_ref = 0.35;
    double v_in = 7.8;
};

struct MarginOptions {
    double f_min = 50.0;
    double f_max = 1000.0;
    int per_decade = 20;
    /// Time simulated before probing so the loop sits at its operating point.
    double warm_up = 0.1;
    ProbeOptions probe;
};

struct MarginResult {
    OperatingPoint point;
    double duty = 0.0;
    FrequencyResponse response;
};

/// Loop response of string 1 at one operating point. Probe frequencies run
/// concurrently, each on its own copy of the warmed-up engine.
inline MarginResult measure_margin(const Scenario& base, OperatingPoint op, const MarginOptions& opt, unsigned workers) {
    const Scenario sc = margin_scenario(base, op.i_ref, op.v_in);
    EngineLoop loop(sc, opt.warm_up);
    const auto freqs = log_frequencies(opt.f_min, opt.f_max, opt.per_decade);
    MarginResult res{op, loop.operating_duty(), {}};
    res.response.points.resize(freqs.size());
    parallel_for(freqs.size(), workers, [&](std::size_t i) {
        res.response.points[i] = loop_frequency_response(loop, {freqs[i]}, opt.probe).points.front();
    });
    locate_crossover(res.response);
    return res;
}

/// Default operating points: the configured one and a tenth of its current
/// on a supply one volt higher.
inline std::vector<OperatingPoint> default_points(const Scenario& sc) {
    const double i = sc.strings.front().i_ref;
    return {{i, sc.params.v_in}, {i / 10.0, sc.params.v_in + 1.0}};
}

inline ExitCode margins_to_directory(const ScenarioConfig& cfg, const std::vector<OperatingPoint>& points,
                                     const MarginOptions& opt, const fs::path& out, unsigned workers,
                                     std::ostream& log = std::cerr) {
    try {
        ensure_directory(out);
        write_file(out / "config.resolved.json", [&](std::ostream& os) { os << emit_config(cfg); });
        std::vector<MarginResult> results;
        for (const auto& op : points) results.push_back(measure_margin(cfg.scenario, op, opt, workers));
        write_file(out / "response.csv", [&](std::ostream& os) {
            os.precision(10);
            os << "i_ref_A,v_in_V,frequency_hz,gain_db,phase_deg\n";
            for (const auto& r : results) {
                for (const auto& p : r.response.points) {
                    os << r.point.i_ref << ',' << r.point.v_in << ',' << p.frequency << ',' << p.gain_db << ','
                       << p.phase_deg << '\n';
                }
            }
        });
        write_file(out / "margins.csv", [&](std::ostream& os) {
            os.precision(10);
            os << "i_ref_A,v_in_V,duty,crossover_hz,phase_margin_deg\n";
            for (const auto& r : results) {
                os << r.point.i_ref << ',' << r.point.v_in << ',' << r.duty << ',';
                if (r.response.crossover) os << *r.response.crossover;
                os << ',';
                if (r.response.phase_margin) os << *r.response.phase_margin;
                os << '\n';
            }
        });
        return ExitCode::Ok;
    } catch (const MetricsError& e) {
        log << "divergence: " << e.what() << '\n';
        return ExitCode::Divergence;
    } catch (const ScheduleError& e) {
        log << "schedule violation: " << e.what() << '\n';
        return ExitCode::ScheduleViolation;
    } catch (const IoError& e) {
        log << "i/o error: " << e.what() << '\n';
        return ExitCode::IoError;
    }
}

}  // namespace simo
