#pragma once

// Figures of merit derived from traces: on-time current balance, efficiency,
// string power split, transient metrics and the measured loop response.

#include <algorithm>
#include <cmath>
#include <complex>
#include <concepts>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "simo/simulator.hpp"

namespace simo {

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// (I_n - I_avg) / I_avg in percent, I_avg the plain mean of the inputs.
inline std::vector<double> current_imbalance(const std::vector<double>& avg_currents) {
    if (avg_currents.empty()) throw MetricsError("current imbalance needs at least one string");
    double mean = 0.0;
    for (double i : avg_currents) mean += i;
    mean /= static_cast<double>(avg_currents.size());
    if (mean == 0.0) throw MetricsError("current imbalance undefined: all average currents are zero");
    std::vector<double> out;
    out.reserve(avg_currents.size());
    for (double i : avg_currents) out.push_back((i - mean) / mean * 100.0);
    return out;
}

/// (I_n - i_ref) / i_ref in percent.
inline double current_deviation(double avg_current, double i_ref) {
    if (!(i_ref > 0.0)) throw MetricsError("current deviation needs i_ref > 0");
    return (avg_current - i_ref) / i_ref * 100.0;
}

struct PowerSplit {
    double p_led = 0.0;
    double p_cs = 0.0;
    double p_swg = 0.0;

    double total() const { return p_led + p_cs + p_swg; }
};

/// Settling band and steady-state window used when reducing a trace.
struct MetricsOptions {
    double band = 0.02;
    /// Fraction of the horizon, counted from the end, treated as steady state.
    double steady_fraction = 0.25;

    bool operator==(const MetricsOptions&) const = default;
};

struct SeriesPoint {
    double t = 0.0;
    double value = 0.0;
};

struct SettlingMetrics {
    /// Empty when the series is still outside the band at its last sample.
    std::optional<double> settling_time;
    double overshoot = 0.0;   // %
    double undershoot = 0.0;  // %
    double steady_error = 0.0;  // %

    bool settled() const { return settling_time.has_value(); }
};

/// Transient metrics of a series against a target.
///
/// Settling time is measured from the first sample to the instant the series
/// last enters the +-band around target (linear interpolation between the
/// bracketing samples). Overshoot is the largest excursion beyond target in
/// the direction of approach; undershoot the largest excursion back below
/// target after the series first reached it, or the final shortfall if it
/// never did. Steady-state error is the mean of the last quarter of samples.
inline SettlingMetrics settling_metrics(const std::vector<SeriesPoint>& series, double target, double band = 0.02) {
    if (series.empty()) throw MetricsError("settling metrics need a non-empty series");
    if (target == 0.0) throw MetricsError("settling metrics need a non-zero target");
    const double tol = std::abs(target) * band;
    const double t0 = series.front().t;
    auto outside = [&](double v) { return std::abs(v - target) > tol; };

    SettlingMetrics m;
    if (!outside(series.back().value)) {
        std::size_t last_out = series.size();
        for (std::size_t j = series.size(); j-- > 0;) {
            if (outside(series[j].value)) {
                last_out = j;
                break;
            }
        }
        if (last_out == series.size()) {
            m.settling_time = 0.0;
        } else {
            const auto& a = series[last_out];
            const auto& b = series[last_out + 1];
            const double edge = a.value > target ? target + tol : target - tol;
            const double f = (b.value == a.value) ? 1.0 : (edge - a.value) / (b.value - a.value);
            m.settling_time = a.t + std::clamp(f, 0.0, 1.0) * (b.t - a.t) - t0;
        }
    }

    // Direction of approach: from below when the series starts under target.
    const double sign = (series.front().value <= target) == (target > 0.0) ? 1.0 : -1.0;
    const double scale = std::abs(target);
    double peak = 0.0;
    for (const auto& p : series) peak = std::max(peak, sign * (p.value - target));
    m.overshoot = peak / scale * 100.0;

    std::size_t reach = series.size();
    for (std::size_t j = 0; j < series.size(); ++j) {
        if (sign * (series[j].value - target) >= 0.0) {
            reach = j;
            break;
        }
    }
    double dip = 0.0;
    if (reach == series.size()) {
        dip = sign * (target - series.back().value);
    } else {
        for (std::size_t j = reach; j < series.size(); ++j) dip = std::max(dip, sign * (target - series[j].value));
    }
    m.undershoot = std::max(0.0, dip) / scale * 100.0;

    const std::size_t tail = std::max<std::size_t>(1, series.size() / 4);
    double mean = 0.0;
    for (std::size_t j = series.size() - tail; j < series.size(); ++j) mean += series[j].value;
    mean /= static_cast<double>(tail);
    m.steady_error = (mean - target) / scale * 100.0;
    return m;
}

/// Dimming-period averaged bus voltage of one string, stamped at period ends,
/// with the initial state as the first point.
inline std::vector<SeriesPoint> averaged_bus_voltage(const Trace& tr, std::size_t k, double v0) {
    std::vector<SeriesPoint> s;
    s.push_back({0.0, v0});
    for (const auto& p : tr.periods) s.push_back({p.t1, p.strings.at(k).mean_vc});
    return s;
}

/// Dimming-period averaged on-time LED current of one string.
inline std::vector<SeriesPoint> averaged_on_current(const Trace& tr, std::size_t k) {
    std::vector<SeriesPoint> s;
    s.push_back({0.0, 0.0});
    for (const auto& p : tr.periods) s.push_back({p.t1, p.strings.at(k).mean_on_current()});
    return s;
}

/// Sums of period records over a window.
struct WindowTotals {
    double duration = 0.0;
    double source_energy = 0.0;
    double source_square = 0.0;
    double stored_change = 0.0;
    double residual = 0.0;
    std::size_t periods = 0;
    std::vector<StringPeriodStats> strings;  // integrals summed, extremes combined
};

inline WindowTotals window_totals(const Trace& tr, double t_from) {
    WindowTotals w;
    w.strings.resize(tr.n_strings);
    for (auto& s : w.strings) {
        s.i_on_min = std::numeric_limits<double>::infinity();
        s.i_on_max = -std::numeric_limits<double>::infinity();
    }
    for (const auto& p : tr.periods) {
        if (p.t0 < t_from) continue;
        ++w.periods;
        w.duration += p.duration();
        w.source_energy += p.source_energy;
        w.source_square += p.source_square;
        w.stored_change += p.stored_change();
        w.residual += p.residual();
        for (std::size_t k = 0; k < tr.n_strings; ++k) {
            auto& a = w.strings[k];
            const auto& b = p.strings[k];
            a.mean_vc += b.mean_vc * p.duration();
            a.on_time += b.on_time;
            a.led_charge += b.led_charge;
            a.led_square += b.led_square;
            a.on_v_square += b.on_v_square;
            a.power += b.power;
            a.forward_energy += b.forward_energy;
            a.resistive_energy += b.resistive_energy;
            a.ripple_pp = std::max(a.ripple_pp, b.ripple_pp);
            a.i_on_min = std::min(a.i_on_min, b.i_on_min);
            a.i_on_max = std::max(a.i_on_max, b.i_on_max);
            a.duty = b.duty;
        }
    }
    for (auto& s : w.strings) {
        if (w.duration > 0.0) s.mean_vc /= w.duration;
        if (!std::isfinite(s.i_on_min)) s.i_on_min = s.i_on_max = 0.0;
    }
    return w;
}

/// Ratio of summed string RMS products to source RMS product over the window.
inline double rms_efficiency(const WindowTotals& w, double v_in) {
    if (w.duration <= 0.0) throw MetricsError("efficiency needs a non-empty window");
    const double i_in = std::sqrt(w.source_square / w.duration);
    double out = 0.0;
    for (const auto& s : w.strings) out += std::sqrt(s.on_v_square / w.duration) * std::sqrt(s.led_square / w.duration);
    if (out == 0.0) return 0.0;
    if (v_in * i_in <= 0.0) throw MetricsError("efficiency undefined: zero input power");
    return out / (v_in * i_in);
}

/// String power over source energy net of storage change.
inline double audit_efficiency(const WindowTotals& w) {
    double out = 0.0;
    for (const auto& s : w.strings) out += s.power;
    if (out == 0.0) return 0.0;
    const double in = w.source_energy - w.stored_change;
    if (in <= 0.0) throw MetricsError("efficiency undefined: zero input energy");
    return out / in;
}

/// LED, sense resistor and dimming switch shares of one string's power,
/// averaged over its on-time.
inline PowerSplit power_breakdown(const StringPeriodStats& s, const LedStringModel& model) {
    PowerSplit p;
    if (s.on_time <= 0.0) return p;
    const double r_sw = model.r_led - model.r_sense;
    p.p_cs = model.r_sense * s.led_square / s.on_time;
    p.p_swg = r_sw * s.led_square / s.on_time;
    p.p_led = s.forward_energy / s.on_time;
    return p;
}

struct StringMetrics {
    double avg_on_current = 0.0;
    double imbalance = 0.0;
    double deviation = 0.0;
    double rms_current = 0.0;
    double rms_voltage = 0.0;
    double ripple_pp = 0.0;
    double mean_vc = 0.0;
    double duty = 0.0;
    SettlingMetrics settling;
    PowerSplit power;
};

struct MetricsReport {
    std::vector<StringMetrics> strings;
    double efficiency = 0.0;
    double audit_efficiency = 0.0;
    double energy_residual = 0.0;  // % of source energy over the window
    double window_start = 0.0;
    double horizon = 0.0;
    bool diverged = false;
    std::string diagnostic;
};

/// Reference current of every string once all reference steps have applied.
inline std::vector<double> final_references(const Scenario& sc) {
    std::vector<double> r;
    for (const auto& s : sc.strings) r.push_back(s.i_ref);
    auto steps = sc.reference_steps;
    std::stable_sort(steps.begin(), steps.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    for (const auto& st : steps) {
        if (st.time > sc.duration) break;
        for (std::size_t k = 0; k < r.size(); ++k) {
            if (st.string < 0 || static_cast<std::size_t>(st.string) == k) r[k] = st.i_ref;
        }
    }
    return r;
}

inline MetricsReport compute_metrics(const Trace& tr, const Scenario& sc, const MetricsOptions& opt = {}) {
    MetricsReport rep;
    rep.horizon = tr.horizon;
    rep.diverged = tr.diverged();
    rep.diagnostic = tr.diagnostic;
    rep.window_start = tr.horizon * (1.0 - opt.steady_fraction);
    const auto w = window_totals(tr, rep.window_start);
    const auto refs = final_references(sc);
    const std::size_t n = tr.n_strings;
    rep.strings.resize(n);
    std::vector<double> avg(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& s = w.strings[k];
        auto& m = rep.strings[k];
        m.avg_on_current = s.on_time > 0.0 ? s.led_charge / s.on_time : 0.0;
        avg[k] = m.avg_on_current;
        m.deviation = current_deviation(m.avg_on_current, refs[k]);
        if (w.duration > 0.0) {
            m.rms_current = std::sqrt(s.led_square / w.duration);
            m.rms_voltage = std::sqrt(s.on_v_square / w.duration);
        }
        m.ripple_pp = s.ripple_pp;
        m.mean_vc = s.mean_vc;
        m.duty = s.duty;
        m.power = power_breakdown(s, sc.strings[k]);
        LedStringModel target = sc.strings[k];
        target.i_ref = refs[k];
        const double v0 = sc.initial.v_c.value_or(sc.params.v_in);
        m.settling = settling_metrics(averaged_bus_voltage(tr, k, v0), reference_voltage(target), opt.band);
        // A run cut short by the divergence check never counts as settled.
        if (rep.diverged) m.settling.settling_time.reset();
    }
    if (w.periods > 0) {
        if (std::any_of(avg.begin(), avg.end(), [](double a) { return a != 0.0; })) {
            const auto imb = current_imbalance(avg);
            for (std::size_t k = 0; k < n; ++k) rep.strings[k].imbalance = imb[k];
        }
        rep.efficiency = w.source_square > 0.0 ? rms_efficiency(w, sc.params.v_in) : 0.0;
        rep.audit_efficiency = w.source_energy > 0.0 ? audit_efficiency(w) : 0.0;
        rep.energy_residual = w.source_energy > 0.0 ? w.residual / w.source_energy * 100.0 : 0.0;
    }
    return rep;
}

/// Flat key=value report.
inline void write_report(std::ostream& os, const MetricsReport& r) {
    const auto prec = os.precision(10);
    os << "status=" << (r.diverged ? "diverged" : "ok") << '\n';
    if (r.diverged) os << "diagnostic=" << r.diagnostic << '\n';
    os << "horizon_s=" << r.horizon << '\n';
    os << "window_start_s=" << r.window_start << '\n';
    os << "efficiency=" << r.efficiency << '\n';
    os << "audit_efficiency=" << r.audit_efficiency << '\n';
    os << "energy_residual_pct=" << r.energy_residual << '\n';
    for (std::size_t k = 0; k < r.strings.size(); ++k) {
        const auto& s = r.strings[k];
        const std::string p = "string" + std::to_string(k + 1) + ".";
        os << p << "avg_on_current_A=" << s.avg_on_current << '\n';
        os << p << "imbalance_pct=" << s.imbalance << '\n';
        os << p << "deviation_pct=" << s.deviation << '\n';
        os << p << "rms_current_A=" << s.rms_current << '\n';
        os << p << "rms_voltage_V=" << s.rms_voltage << '\n';
        os << p << "ripple_pp_V=" << s.ripple_pp << '\n';
        os << p << "mean_vc_V=" << s.mean_vc << '\n';
        os << p << "duty=" << s.duty << '\n';
        if (s.settling.settled()) {
            os << p << "settling_s=" << *s.settling.settling_time << '\n';
        } else {
            os << p << "settling_s=not settled within horizon\n";
        }
        os << p << "overshoot_pct=" << s.settling.overshoot << '\n';
        os << p << "undershoot_pct=" << s.settling.undershoot << '\n';
        os << p << "steady_error_pct=" << s.settling.steady_error << '\n';
        os << p << "p_led_W=" << s.power.p_led << '\n';
        os << p << "p_cs_W=" << s.power.p_cs << '\n';
        os << p << "p_swg_W=" << s.power.p_swg << '\n';
    }
    os.precision(prec);
}

/// CSV columns of a report, in order. Per-string columns repeat for each string.
inline std::vector<std::string> report_columns(std::size_t n_strings) {
    std::vector<std::string> c{"status", "efficiency", "audit_efficiency", "energy_residual_pct"};
    for (std::size_t k = 1; k <= n_strings; ++k) {
        for (const char* f : {"avg_on_current_A", "imbalance_pct", "deviation_pct", "rms_current_A", "rms_voltage_V",
                              "ripple_pp_V", "mean_vc_V", "settling_s", "overshoot_pct", "undershoot_pct", "p_led_W",
                              "p_cs_W", "p_swg_W"}) {
            c.push_back("s" + std::to_string(k) + "_" + f);
        }
    }
    return c;
}

inline std::vector<std::string> report_values(const MetricsReport& r) {
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(10);
        os << v;
        return os.str();
    };
    std::vector<std::string> v{r.diverged ? "diverged" : "ok", num(r.efficiency), num(r.audit_efficiency),
                               num(r.energy_residual)};
    for (const auto& s : r.strings) {
        for (double x : {s.avg_on_current, s.imbalance, s.deviation, s.rms_current, s.rms_voltage, s.ripple_pp,
                         s.mean_vc}) {
            v.push_back(num(x));
        }
        v.push_back(s.settling.settled() ? num(*s.settling.settling_time) : "not settled");
        for (double x : {s.settling.overshoot, s.settling.undershoot, s.power.p_led, s.power.p_cs, s.power.p_swg}) {
            v.push_back(num(x));
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// Loop frequency response by duty injection.

struct ProbeSample {
    double t = 0.0;
    double y = 0.0;  // controller output (duty command)
    double u = 0.0;  // applied duty: command plus injection
};

struct FrequencyPoint {
    double frequency = 0.0;
    double gain_db = 0.0;
    double phase_deg = 0.0;
};

struct FrequencyResponse {
    std::vector<FrequencyPoint> points;
    std::optional<double> crossover;
    std::optional<double> phase_margin;
};

struct ProbeOptions {
    /// Injection amplitude as a fraction of the operating duty.
    double amplitude = 0.01;
    int settle_cycles = 50;
    int measure_cycles = 10;
};

/// A loop that can be probed: `operating_duty()` and
/// `probe(f, amplitude, settle_cycles, measure_cycles)` returning the samples of
/// the measurement cycles.
template <class L>
concept ProbeLoop = requires(L& l, double f, double a, int c) {
    { l.operating_duty() } -> std::convertible_to<double>;
    { l.probe(f, a, c, c) } -> std::same_as<std::vector<ProbeSample>>;
    { l.max_probe_frequency() } -> std::convertible_to<double>;
};

inline void locate_crossover(FrequencyResponse& fr);

/// Open-loop response -Y/U at each probe frequency, demodulated over whole
/// cycles, plus crossover and phase margin by log-linear interpolation.
template <ProbeLoop L>
FrequencyResponse loop_frequency_response(L& loop, const std::vector<double>& frequencies, const ProbeOptions& opt = {}) {
    FrequencyResponse fr;
    const double amp = opt.amplitude * loop.operating_duty();
    if (!(amp > 0.0)) throw MetricsError("probe amplitude is zero at this operating point");
    for (double f : frequencies) {
        if (!(f > 0.0) || f > loop.max_probe_frequency()) {
            throw MetricsError("probe frequency " + std::to_string(f) + " Hz outside (0, f_c/10]");
        }
        const auto samples = loop.probe(f, amp, opt.settle_cycles, opt.measure_cycles);
        if (samples.size() < 8) throw MetricsError("demodulation did not converge: too few samples");
        const double w = 2.0 * std::numbers::pi * f;
        double my = 0.0, mu = 0.0;
        for (const auto& s : samples) {
            my += s.y;
            mu += s.u;
        }
        my /= static_cast<double>(samples.size());
        mu /= static_cast<double>(samples.size());
        std::complex<double> y{}, u{};
        for (const auto& s : samples) {
            const auto e = std::polar(1.0, -w * s.t);
            y += (s.y - my) * e;
            u += (s.u - mu) * e;
        }
        if (std::abs(u) == 0.0) throw MetricsError("demodulation did not converge: no injected component");
        const auto h = -y / u;
        double phase = std::arg(h) * 180.0 / std::numbers::pi;
        if (phase > 0.0) phase -= 360.0;
        fr.points.push_back({f, 20.0 * std::log10(std::abs(h)), phase});
    }
    locate_crossover(fr);
    return fr;
}

/// First 0 dB crossing of the (frequency-ordered) points and the phase
/// margin there, by log-linear interpolation.
inline void locate_crossover(FrequencyResponse& fr) {
    fr.crossover.reset();
    fr.phase_margin.reset();
    for (std::size_t j = 1; j < fr.points.size(); ++j) {
        const auto& a = fr.points[j - 1];
        const auto& b = fr.points[j];
        if ((a.gain_db >= 0.0) != (b.gain_db >= 0.0)) {
            const double s = a.gain_db / (a.gain_db - b.gain_db);
            const double lf = std::log(a.frequency) + s * (std::log(b.frequency) - std::log(a.frequency));
            fr.crossover = std::exp(lf);
            fr.phase_margin = 180.0 + a.phase_deg + s * (b.phase_deg - a.phase_deg);
            break;
        }
    }
}

/// `per_decade` log-spaced frequencies covering [lo, hi].
inline std::vector<double> log_frequencies(double lo, double hi, int per_decade = 20) {
    std::vector<double> f;
    const int n = static_cast<int>(std::ceil(std::log10(hi / lo) * per_decade));
    for (int j = 0; j <= n; ++j) f.push_back(lo * std::pow(10.0, static_cast<double>(j) / per_decade));
    return f;
}

/// Engine adapter: warms the scenario up once, then probes copies of the
/// warmed engine so every frequency starts from the same operating point.
class EngineLoop {
public:
    EngineLoop(const Scenario& sc, double warm_up, std::size_t string = 0)
        : engine_(make_engine(quiet(sc))), string_(string) {
        engine_.run_until(warm_up);
        if (engine_.diverged()) throw MetricsError("operating point unstable: " + engine_.trace().diagnostic);
        duty_ = engine_.controller().strings.at(string_).duty;
        f_c_ = sc.params.f_c;
    }

    double operating_duty() const { return duty_; }
    double max_probe_frequency() const { return f_c_ / 10.0; }

    std::vector<ProbeSample> probe(double f, double amp, int settle, int measure) const {
        Engine e = engine_;
        const double t0 = e.time();
        const double w = 2.0 * std::numbers::pi * f;
        const double t_meas = t0 + settle / f;
        const double t_end = t_meas + measure / f;
        std::vector<ProbeSample> out;
        const std::size_t k = string_;
        e.duty_perturbation = [&](double t, std::size_t s, double duty) {
            if (s != k) return 0.0;
            const double x = amp * std::sin(w * (t - t0));
            if (t >= t_meas && t < t_end) out.push_back({t - t0, duty, duty + x});
            return x;
        };
        e.run_until(t_end);
        if (e.diverged()) throw MetricsError("loop diverged while probing " + std::to_string(f) + " Hz");
        return out;
    }

private:
    static Scenario quiet(Scenario sc) {
        sc.engine.sample_rate = 0.0;
        sc.engine.record_events = false;
        sc.engine.sample_events = false;
        sc.engine.saturation_limit = 0.0;
        return sc;
    }

    Engine engine_;
    std::size_t string_;
    double duty_ = 0.0;
    double f_c_ = 0.0;
};

/// The base scenario moved to one operating point: every string at i_ref,
/// the given supply, buses starting at their regulated voltage.
inline Scenario margin_scenario(const Scenario& base, double i_ref, double v_in) {
    Scenario sc = base;
    sc.params.v_in = v_in;
    for (auto& s : sc.strings) s.i_ref = i_ref;
    sc.reference_steps.clear();
    sc.initial.v_c = reference_voltage(sc.strings.front());
    return sc;
}

}  // namespace simo
