// Acceptance run: one PASS/FAIL line per criterion with the measured figures,
// on stdout and, when a path is given, in that file too. Exit status is 0 when
// every check ran, whatever the verdicts, and 2 when a check could not run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "simo/simo.hpp"

#ifndef SIMO_PRESET_DIR
#define SIMO_PRESET_DIR "presets"
#endif

using namespace simo;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

ScenarioConfig preset(const std::string& name) {
    return parse_config(read_file(fs::path(SIMO_PRESET_DIR) / (name + ".json")));
}

Scenario fast(Scenario sc) {
    sc.engine.sample_rate = 0.0;
    return sc;
}

struct Run {
    Trace trace;
    MetricsReport report;
};

Run run(const Scenario& sc, const MetricsOptions& opt = {}) {
    Run r;
    r.trace = simulate(fast(sc));
    r.report = compute_metrics(r.trace, sc, opt);
    return r;
}

std::vector<Run> run_all(const std::vector<Scenario>& scs) {
    std::vector<Run> out(scs.size());
    parallel_for(scs.size(), worker_count(), [&](std::size_t i) { out[i] = run(scs[i]); });
    return out;
}

bool settled(const MetricsReport& r) {
    if (r.diverged) return false;
    for (const auto& s : r.strings) {
        if (!s.settling.settled()) return false;
    }
    return true;
}

// Worst string: latest settling, largest excursions.
double worst_settling(const MetricsReport& r) {
    double t = 0.0;
    for (const auto& s : r.strings) t = std::max(t, s.settling.settling_time.value_or(INFINITY));
    return t;
}
double worst_overshoot(const MetricsReport& r) {
    double v = 0.0;
    for (const auto& s : r.strings) v = std::max(v, s.settling.overshoot);
    return v;
}
double worst_undershoot(const MetricsReport& r) {
    double v = 0.0;
    for (const auto& s : r.strings) v = std::max(v, s.settling.undershoot);
    return v;
}

std::string settling_label(const MetricsReport& r) {
    if (r.diverged) return "diverged";
    const double t = worst_settling(r);
    return std::isfinite(t) ? fmt("%.4g s", t) : std::string("not settled");
}

std::string join(const std::vector<double>& v, const char* f) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : "/") + fmt(f, x);
    return s;
}

// ---------------------------------------------------------------------------

Verdict frequency_law() {
    const double f = 1800.0;
    const std::vector<std::pair<double, double>> cases{{0.0, f / 3},  {0.05, f / 3}, {0.10, f / 3}, {0.149, f / 3},
                                                       {0.15, f / 2}, {0.2, f / 2},  {0.299, f / 2}, {0.3, f},
                                                       {0.5, f},      {0.9, f},      {1.0, f}};
    int exact = 0;
    for (const auto& [d, want] : cases) exact += dimming_frequency(d, f) == want ? 1 : 0;
    return {exact == static_cast<int>(cases.size()), fmt("%d/%zu ratios exact", exact, cases.size())};
}

Verdict cross_engine() {
    Scenario sc = fast(preset("table2").scenario);
    sc.duration = 1.0 / sc.cmd.f_main;
    const double h = sc.params.t_c() / 100.0;

    // Per phase: both flows from the same state over each segment the
    // closed-form engine actually visits.
    auto eng = make_engine(sc);
    AnalyticFlow a;
    a.bind(eng.context());
    const Rk4Flow r(h);
    std::map<PhaseKind, double> worst;
    std::size_t segments = 0;
    while (eng.time() < sc.duration) {
        const FlowState x0 = eng.flow_state();
        Mode m = eng.mode();
        m.conduct = 0;
        for (std::size_t k = 0; k < sc.n_strings(); ++k) {
            if (((m.on >> k) & 1u) && x0.v[k] >= sc.strings[k].v_f) m.conduct |= 1u << k;
        }
        const double t0 = eng.time();
        eng.step(sc.duration);
        const double dt = eng.time() - t0;
        if (dt <= 0.0) continue;
        const auto xa = a.peek(eng.context(), x0, m, dt);
        const auto xr = r.peek(eng.context(), x0, m, dt);
        double e = std::abs(xa.i_l - xr.i_l) / std::max(std::abs(xr.i_l), 1e-12);
        for (std::size_t k = 0; k < sc.n_strings(); ++k) e = std::max(e, std::abs(xa.v[k] - xr.v[k]) / std::abs(xr.v[k]));
        worst[m.phase] = std::max(worst[m.phase], e);
        ++segments;
    }
    double per_phase = 0.0;
    std::string phases;
    for (const auto& [ph, e] : worst) {
        per_phase = std::max(per_phase, e);
        phases += fmt(" %s=%.2e", std::string(to_string(ph)).c_str(), e);
    }

    auto ea = make_engine(sc);
    auto eo = make_oracle(sc, h);
    ea.run_until(sc.duration);
    eo.run_until(sc.duration);
    const auto sa = ea.state();
    const auto so = eo.state();
    double end = std::abs(sa.i_l - so.i_l) / std::abs(so.i_l);
    for (std::size_t k = 0; k < sc.n_strings(); ++k) end = std::max(end, std::abs(sa.v_c[k] - so.v_c[k]) / std::abs(so.v_c[k]));

    return {per_phase <= 1e-6 && end <= 1e-4,
            fmt("%zu segments, per-phase max %.2e (%s ), end-to-end %.2e", segments, per_phase, phases.c_str() + 1,
                end)};
}

Verdict energy_conservation() {
    std::mt19937_64 rng(20240611);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Scenario> scs;
    for (int n = 0; n < 20; ++n) {
        Scenario sc;
        for (auto& d : sc.cmd.ratios) d = 0.05 + 0.95 * u(rng);
        sc.params.l = 4e-6 + 10e-6 * u(rng);
        sc.params.v_in = 7.0 + 2.0 * u(rng);
        for (auto& s : sc.strings) s.c_out = 1e-3 + 3e-3 * u(rng);
        sc.k_gain = 400.0 + 600.0 * u(rng);
        sc.duration = 0.4;
        scs.push_back(fast(sc));
    }
    std::vector<double> worst(scs.size(), 0.0);
    std::vector<std::size_t> periods(scs.size(), 0);
    parallel_for(scs.size(), worker_count(), [&](std::size_t i) {
        const Trace tr = simulate(scs[i]);
        for (const auto& p : tr.periods) {
            if (p.t0 < 0.75 * tr.horizon) continue;
            worst[i] = std::max(worst[i], std::abs(p.residual()) / p.source_energy * 100.0);
            ++periods[i];
        }
    });
    const double w = *std::max_element(worst.begin(), worst.end());
    std::size_t total = 0;
    for (auto p : periods) total += p;
    const bool all_measured = std::all_of(periods.begin(), periods.end(), [](std::size_t p) { return p > 0; });
    return {all_measured && w <= 0.1, fmt("20 scenarios, %zu steady periods, worst residual %.2e %% of source energy",
                                          total, w)};
}

Verdict stability_vs_gain() {
    const Scenario base = preset("stability").scenario;
    const std::vector<double> gains{400, 700, 1000, 6000};
    std::vector<Scenario> scs;
    for (double k : gains) {
        Scenario sc = base;
        sc.k_gain = k;
        scs.push_back(sc);
    }
    const auto runs = run_all(scs);
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < gains.size(); ++i) {
        const auto& r = runs[i].report;
        const bool expect_diverge = gains[i] > 5000;
        ok = ok && (expect_diverge ? r.diverged : settled(r));
        detail += fmt("%sK=%g %s", i ? ", " : "", gains[i], settling_label(r).c_str());
    }
    return {ok, detail};
}

Verdict settling_targets() {
    auto scenario = [](double ratio, double f, double horizon) {
        Scenario sc;
        sc.cmd.ratios.assign(3, ratio);
        sc.cmd.forced_frequency.assign(3, f);
        sc.duration = horizon;
        return sc;
    };
    const auto runs = run_all({scenario(0.25, 1800, 4.0), scenario(0.12, 900, 3.0), scenario(0.12, 1800, 3.0),
                               scenario(0.12, 600, 3.0)});
    const auto& r25 = runs[0].report;
    const auto& r900 = runs[1].report;
    const auto& r1800 = runs[2].report;
    const auto& r600 = runs[3].report;
    const double t25 = worst_settling(r25), t900 = worst_settling(r900);
    const bool a = settled(r25) && std::abs(t25 - 2.62) <= 0.3 * 2.62;
    const bool b = settled(r900) && std::abs(t900 - 0.606) <= 0.3 * 0.606;
    const bool c = !settled(r1800);
    const bool d = settled(r600) && worst_undershoot(r600) < worst_undershoot(r900);
    return {a && b && c && d,
            fmt("25%%@1.8k %s [%s]; 12%%@900 %s [%s]; 12%%@1.8k %s [%s]; 12%%@600 %s, undershoot %.3f%% vs %.3f%% at 900 [%s]",
                settling_label(r25).c_str(), a ? "ok" : "miss", settling_label(r900).c_str(), b ? "ok" : "miss",
                settling_label(r1800).c_str(), c ? "ok" : "miss", settling_label(r600).c_str(),
                worst_undershoot(r600), worst_undershoot(r900), d ? "ok" : "miss")};
}

Verdict steady_regulation() {
    const auto t2 = preset("table2");
    const auto t3 = preset("table3");
    const auto runs = run_all({t2.scenario, t3.scenario});
    double imb2 = 0, dev2 = 0, imb3 = 0;
    for (const auto& s : runs[0].report.strings) {
        imb2 = std::max(imb2, std::abs(s.imbalance));
        dev2 = std::max(dev2, std::abs(s.deviation));
    }
    for (const auto& s : runs[1].report.strings) imb3 = std::max(imb3, std::abs(s.imbalance));
    const auto rep = validate_schedule(build_schedule(t3.scenario.cmd, t3.scenario.params), t3.scenario.cmd,
                                       t3.scenario.params);
    const bool ok = !runs[0].report.diverged && !runs[1].report.diverged && imb2 < 1.0 && dev2 <= 2.5 && rep.ok() &&
                    imb3 < 1.0;
    return {ok, fmt("uniform 95%%: max|imbalance| %.3g%%, max|deviation| %.3g%%; 90/23/4%%: %zu violations, "
                    "max|imbalance| %.3g%%",
                    imb2, dev2, rep.violations.size(), imb3)};
}

Verdict sweep_trends() {
    const Scenario base = preset("table2").scenario;
    std::vector<Scenario> scs;
    for (double l : {3e-6, 7.4e-6, 15e-6}) scs.push_back(apply_sweep_value(base, SweepParameter::Inductance, l));
    for (double c : {1e-3, 2e-3, 4e-3}) scs.push_back(apply_sweep_value(base, SweepParameter::Capacitance, c));
    const Scenario eff = preset("fig28").scenario;
    std::vector<double> ratios;
    for (int j = 1; j <= 10; ++j) ratios.push_back(j / 10.0);
    for (double d : ratios) scs.push_back(apply_sweep_value(eff, SweepParameter::Ratios, d));
    const Scenario low = preset("fig28_20pct").scenario;
    scs.push_back(low);
    scs.push_back(apply_sweep_value(low, SweepParameter::FrequencyMode, 1800.0));
    const auto runs = run_all(scs);

    std::vector<double> l_os, l_ts, c_os, effs;
    for (int j = 0; j < 3; ++j) {
        l_os.push_back(worst_overshoot(runs[j].report));
        l_ts.push_back(worst_settling(runs[j].report));
        c_os.push_back(worst_overshoot(runs[3 + j].report));
    }
    for (std::size_t j = 0; j < ratios.size(); ++j) effs.push_back(runs[6 + j].report.efficiency);
    const double var20 = runs[16].report.efficiency, fixed20 = runs[17].report.efficiency;

    const bool l_ok = l_os[1] <= l_os[0] && l_os[2] <= l_os[1] && l_ts[1] >= l_ts[0] && l_ts[2] >= l_ts[1];
    const bool c_ok = c_os[1] <= c_os[0] && c_os[2] <= c_os[1];
    const auto peak = static_cast<std::size_t>(std::max_element(effs.begin(), effs.end()) - effs.begin());
    const bool peak_ok = ratios[peak] >= 0.65 - 1e-9 && ratios[peak] <= 0.95 + 1e-9;
    const bool gain_ok = (var20 - fixed20) * 100.0 > 0.5;
    return {l_ok && c_ok && peak_ok && gain_ok,
            fmt("L 3/7.4/15uH overshoot %s%% settling %s s [%s]; C 1/2/4mF overshoot %s%% [%s]; "
                "efficiency by ratio %s peaks at %.0f%% [%s]; 20%% variable %.4f vs 1.8k %.4f (%+.2f pts) [%s]",
                join(l_os, "%.2f").c_str(), join(l_ts, "%.4f").c_str(), l_ok ? "ok" : "miss",
                join(c_os, "%.2f").c_str(), c_ok ? "ok" : "miss", join(effs, "%.3f").c_str(), ratios[peak] * 100.0,
                peak_ok ? "ok" : "miss", var20, fixed20, (var20 - fixed20) * 100.0, gain_ok ? "ok" : "miss")};
}

Verdict phase_margin() {
    const Scenario base;
    const auto points = default_points(base);
    const MarginOptions opt;
    const auto nominal = measure_margin(base, points[0], opt, worker_count());
    const auto light = measure_margin(base, points[1], opt, worker_count());
    const auto pm = nominal.response.phase_margin;
    const auto pl = light.response.phase_margin;
    const bool ok = pm && pl && *pm >= 60.0 && *pm <= 100.0 && *pm > *pl;
    auto show = [](const MarginResult& r) {
        if (!r.response.phase_margin) return std::string("no crossover");
        return fmt("%.1f deg at %.0f Hz", *r.response.phase_margin, *r.response.crossover);
    };
    return {ok, fmt("350 mA/7.8 V %s; 35 mA/8.8 V %s", show(nominal).c_str(), show(light).c_str())};
}

Verdict ripple() {
    const auto r = run(preset("table3").scenario);
    double worst = 0.0;
    std::vector<double> each;
    for (const auto& s : r.report.strings) {
        each.push_back(s.ripple_pp);
        worst = std::max(worst, s.ripple_pp);
    }
    return {!r.report.diverged && worst <= 1.7, fmt("peak-to-peak %s V, worst %.4f V", join(each, "%.4f").c_str(), worst)};
}

Verdict schedule_properties() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const ConverterParams p;
    const Nanos dead = to_nanos(p.dead_time);
    int invalid = 0, on_time_mismatch = 0, dead_time_short = 0;
    Nanos min_gap = std::numeric_limits<Nanos>::max();
    for (int n = 0; n < 1000; ++n) {
        DimmingCommand cmd;
        for (auto& d : cmd.ratios) {
            const double x = u(rng);
            d = x < 0.05 ? 0.0 : x > 0.95 ? 1.0 : u(rng);
        }
        const auto s = build_schedule(cmd, p);
        if (!validate_schedule(s, cmd, p).ok()) ++invalid;

        // Charge windows of all strings around the circle.
        std::vector<std::pair<Interval, std::size_t>> charge;
        for (std::size_t k = 0; k < s.n_strings(); ++k) {
            Nanos on = 0;
            for (const auto& iv : s.high_intervals({SwitchKind::Dim, static_cast<int>(k)})) on += iv.length();
            const double want = cmd.ratios[k] * static_cast<double>(s.hyperperiod);
            const double periods = static_cast<double>(s.hyperperiod / std::max<Nanos>(s.strings[k].period, 1));
            if (std::abs(static_cast<double>(on) - want) > periods + 1.0) ++on_time_mismatch;
            for (const auto& iv : s.high_intervals({SwitchKind::Charge, static_cast<int>(k)})) charge.push_back({iv, k});
        }
        std::sort(charge.begin(), charge.end(), [](const auto& a, const auto& b) { return a.first.begin < b.first.begin; });
        for (std::size_t j = 0; j < charge.size(); ++j) {
            const auto& a = charge[j];
            const auto& b = charge[(j + 1) % charge.size()];
            if (a.second == b.second) continue;
            Nanos gap = b.first.begin - a.first.end;
            if (j + 1 == charge.size()) gap += s.hyperperiod;
            min_gap = std::min(min_gap, gap);
            if (gap < dead) ++dead_time_short;
        }
    }
    return {invalid == 0 && on_time_mismatch == 0 && dead_time_short == 0,
            fmt("1000 vectors: %d invalid, %d on-time mismatches, %d dead-time shortfalls, min gap %.3f us", invalid,
                on_time_mismatch, dead_time_short, to_seconds(min_gap) * 1e6)};
}

}  // namespace

int main(int argc, char** argv) {
    std::ofstream report;
    if (argc > 1) report.open(argv[1]);
    const std::vector<std::pair<const char*, std::function<Verdict()>>> checks{
        {"variable-frequency law", frequency_law},
        {"cross-engine equivalence", cross_engine},
        {"energy conservation", energy_conservation},
        {"stability vs gain", stability_vs_gain},
        {"settling-time targets", settling_targets},
        {"steady-state regulation", steady_regulation},
        {"sweep trends", sweep_trends},
        {"frequency response", phase_margin},
        {"ripple", ripple},
        {"schedule properties", schedule_properties},
    };
    int passed = 0, errors = 0;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = checks[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
            ++errors;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        passed += v.pass ? 1 : 0;
        const auto line = fmt("criterion %2zu %s  %s: ", i + 1, v.pass ? "PASS" : "FAIL", checks[i].first) + v.detail +
                          fmt(" (%.1f s)", secs);
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        if (report) report << line << '\n' << std::flush;
    }
    const auto summary = fmt("acceptance: %d/%zu passed", passed, checks.size());
    std::printf("%s\n", summary.c_str());
    if (report) report << summary << '\n';
    return errors > 0 ? 2 : 0;
}
