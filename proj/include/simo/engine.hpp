#pragma once

// Event-driven hybrid simulation of the multiplexed driver.
//
// The discrete part (gate schedule, PWM edges, controller updates,
// reference steps) is shared. The continuous part is a Flow policy:
//   AnalyticFlow  closed-form phase solutions, state events by bisection
//   Rk4Flow       classical fixed-step RK4 on the same piecewise ODEs,
//                 the verification oracle
// Between two consecutive events the mode is frozen, so each flow only has
// to solve a linear time-invariant system over one segment.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "simo/circuit.hpp"
#include "simo/control.hpp"
#include "simo/schedule.hpp"

namespace simo {

inline constexpr std::size_t kMaxStrings = 16;

struct ReferenceStep {
    double time = 0.0;
    /// 0-based string index; -1 applies to every string.
    int string = -1;
    double i_ref = 0.0;

    bool operator==(const ReferenceStep&) const = default;
};

struct EngineOptions {
    /// Uniform trace sampling rate (Hz); 0 disables uniform samples.
    double sample_rate = 4e6;
    /// Keep every n-th uniform sample.
    int decimation = 1;
    /// Also record a sample at every event instant.
    bool sample_events = false;
    bool record_events = false;
    std::size_t max_event_log = 200000;
    /// Crossing time tolerance for state events (s).
    double event_tolerance = 1e-12;
    /// Divergence bounds. Exceeding either aborts the run as unstable.
    double v_limit = 30.0;
    double i_limit = 100.0;
    /// A loop whose duty command keeps hitting a clamp in every dimming
    /// period for this long has lost regulation and is reported as unstable
    /// (s, 0 = off).
    double saturation_limit = 0.25;
    /// Run the fixed-step oracle instead of the closed-form engine (step in s, 0 = off).
    double oracle_step = 0.0;

    bool operator==(const EngineOptions&) const = default;
};

struct InitialState {
    /// Unset values default to v_in (bus pre-charged through the diode path)
    /// and i_dc (PCCM floor).
    std::optional<double> v_c;
    std::optional<double> i_l;
    double duty = 0.5;

    bool operator==(const InitialState&) const = default;
};

struct Scenario {
    ConverterParams params;
    std::vector<LedStringModel> strings{LedStringModel{1}, LedStringModel{2}, LedStringModel{3}};
    DimmingCommand cmd;
    double k_gain = 700.0;
    double duration = 1.5;
    InitialState initial;
    EngineOptions engine;
    std::vector<ReferenceStep> reference_steps;

    std::size_t n_strings() const { return strings.size(); }

    bool operator==(const Scenario&) const = default;

    std::vector<std::string> problems() const {
        auto out = params.problems(cmd.f_main);
        for (const auto& s : strings) {
            auto p = s.problems();
            out.insert(out.end(), p.begin(), p.end());
        }
        auto c = cmd.problems();
        out.insert(out.end(), c.begin(), c.end());
        if (strings.size() != cmd.ratios.size()) {
            out.emplace_back("number of strings and dimming ratios differ");
        }
        if (!(duration >= 0.0) || !std::isfinite(duration)) out.emplace_back("duration must be >= 0");
        if (!std::isfinite(k_gain) || k_gain < 0.0) out.emplace_back("k_gain must be >= 0");
        if (engine.sample_rate < 0.0 || engine.sample_rate > 10.0 * params.f_c) {
            out.emplace_back("sample rate must lie in [0, 10 f_c]");
        }
        if (engine.decimation < 1) out.emplace_back("decimation must be >= 1");
        if (engine.oracle_step < 0.0) out.emplace_back("oracle step must be >= 0");
        if (!(engine.saturation_limit >= 0.0)) out.emplace_back("saturation limit must be >= 0");
        if (!(engine.event_tolerance > 0.0)) out.emplace_back("event tolerance must be > 0");
        if (engine.oracle_step > 0.0 && engine.oracle_step > params.t_c() / 50.0) {
            out.emplace_back("oracle step must not exceed T_C/50");
        }
        if (initial.v_c && (!std::isfinite(*initial.v_c) || *initial.v_c < 0.0)) {
            out.emplace_back("initial v_c must be >= 0");
        }
        if (initial.i_l && (!std::isfinite(*initial.i_l) || *initial.i_l < 0.0)) {
            out.emplace_back("initial i_l must be >= 0");
        }
        if (!(initial.duty >= 0.0 && initial.duty <= 1.0)) out.emplace_back("initial duty must lie in [0,1]");
        for (const auto& r : reference_steps) {
            if (r.string >= static_cast<int>(strings.size()) || r.string < -1) {
                out.emplace_back("reference step names an unknown string");
            }
            if (!(r.i_ref > 0.0) || !(r.time >= 0.0)) out.emplace_back("reference step needs time >= 0 and i_ref > 0");
        }
        return out;
    }
};

/// Continuous state: inductor current and every output capacitor.
struct FlowState {
    double i_l = 0.0;
    std::array<double, kMaxStrings> v{};
};

struct Mode {
    PhaseKind phase = PhaseKind::Freewheel;
    int target = -1;           // string receiving the transfer current
    std::uint32_t on = 0;      // dimming gates
    std::uint32_t conduct = 0; // strings whose LED branch conducts this segment

    bool source_connected() const {
        return phase == PhaseKind::InductorCharge || phase == PhaseKind::Transfer;
    }
};

/// Integrated quantities over a segment. Global slots first, then one block
/// per string.
struct Integrals {
    enum Global : std::size_t { SourceEnergy, SourceCharge, SourceSquare, ConverterLoss, kGlobals };
    enum PerString : std::size_t { Error, VoltageTime, LedCharge, LedSquare, OnVoltageSquare, Power, ForwardEnergy,
                                   ResistiveEnergy, kPerString };
    static constexpr std::size_t kSlots = kGlobals + kPerString * kMaxStrings;

    std::array<double, kSlots> a{};

    static constexpr std::size_t at(std::size_t k, PerString p) { return kGlobals + k * kPerString + p; }
    double& operator()(std::size_t k, PerString p) { return a[at(k, p)]; }
    double operator()(std::size_t k, PerString p) const { return a[at(k, p)]; }
    double& operator[](Global g) { return a[g]; }
    double operator[](Global g) const { return a[g]; }

    static std::size_t used(std::size_t n) { return kGlobals + kPerString * n; }
};

/// Everything a flow needs that does not change within a segment.
struct FlowContext {
    ConverterParams params;
    std::vector<LedStringModel> strings;
    std::array<double, kMaxStrings> v_ref{};
};

namespace detail {

/// Integrands at one instant. Shared by both flows; the energy audit checks
/// these against the stored-energy change of each flow's trajectory.
inline void integrands(const FlowContext& ctx, const Mode& m, const FlowState& x, std::array<double, Integrals::kSlots>& out) {
    const auto& p = ctx.params;
    const std::size_t n = ctx.strings.size();
    const double i = x.i_l;
    double r = p.r_fw;
    if (m.phase == PhaseKind::InductorCharge) r = p.r_a();
    if (m.phase == PhaseKind::Transfer) r = p.r_b();
    const bool src = m.source_connected();
    out[Integrals::SourceEnergy] = src ? p.v_in * i : 0.0;
    out[Integrals::SourceCharge] = src ? i : 0.0;
    out[Integrals::SourceSquare] = src ? i * i : 0.0;
    out[Integrals::ConverterLoss] = r * i * i;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& s = ctx.strings[k];
        const double v = x.v[k];
        const bool on = (m.on >> k) & 1u;
        const bool cond = (m.conduct >> k) & 1u;
        const double il = cond ? (v - s.v_f) / s.r_led : 0.0;
        out[Integrals::at(k, Integrals::Error)] = on ? v - ctx.v_ref[k] : 0.0;
        out[Integrals::at(k, Integrals::VoltageTime)] = v;
        out[Integrals::at(k, Integrals::LedCharge)] = il;
        out[Integrals::at(k, Integrals::LedSquare)] = il * il;
        out[Integrals::at(k, Integrals::OnVoltageSquare)] = on ? v * v : 0.0;
        out[Integrals::at(k, Integrals::Power)] = v * il;
        out[Integrals::at(k, Integrals::ForwardEnergy)] = s.v_f * il;
        out[Integrals::at(k, Integrals::ResistiveEnergy)] = s.r_led * il * il;
    }
}

}  // namespace detail

enum class Crossing { None, PccmFloor, LedConduction };

struct Advance {
    FlowState x;
    double elapsed = 0.0;
    Crossing crossing = Crossing::None;
};

/// Closed-form flow.
class AnalyticFlow {
public:
    /// Caches the per-string transfer solutions. Called once the context is final.
    void bind(const FlowContext& ctx) {
        loaded_.clear();
        unloaded_.clear();
        for (const auto& s : ctx.strings) {
            loaded_.emplace_back(ctx.params, s, true);
            unloaded_.emplace_back(ctx.params, s, false);
        }
    }

    FlowState peek(const FlowContext& ctx, const FlowState& x0, const Mode& m, double dt) const {
        const auto& p = ctx.params;
        FlowState x = x0;
        const std::size_t n = ctx.strings.size();
        switch (m.phase) {
            case PhaseKind::InductorCharge: x.i_l = inductor_charge_fast(p, x0.i_l, dt); break;
            case PhaseKind::Freewheel:
                x.i_l = p.r_fw == 0.0 ? x0.i_l : x0.i_l * std::exp(-dt * p.r_fw / p.l);
                break;
            case PhaseKind::Transfer: {
                const auto r = transfer(m).at(x0.v[m.target], x0.i_l, dt);
                x.i_l = r.i_l;
                x.v[m.target] = r.v_c;
                break;
            }
            case PhaseKind::CapacitorDischarge: break;
        }
        for (std::size_t k = 0; k < n; ++k) {
            if (static_cast<int>(k) == m.target && m.phase == PhaseKind::Transfer) continue;
            if ((m.conduct >> k) & 1u) {
                const auto& s = ctx.strings[k];
                x.v[k] = s.v_f + (x0.v[k] - s.v_f) * std::exp(-dt / s.tau());
            }
        }
        return x;
    }

    /// Advances by dt or to the first state event, accumulating integrals by
    /// composite Simpson on the closed-form trajectory.
    Advance advance(const FlowContext& ctx, const FlowState& x0, const Mode& m, double dt, Integrals& acc,
                    double tol) const {
        Advance out;
        out.elapsed = dt;
        if (m.phase == PhaseKind::Transfer) {
            if (auto c = crossing(ctx, x0, m, dt, tol)) {
                out.elapsed = c->first;
                out.crossing = c->second;
            }
        }
        out.x = peek(ctx, x0, m, out.elapsed);
        accumulate(ctx, x0, out.x, m, out.elapsed, acc);
        return out;
    }

private:
    const TransferSolution& transfer(const Mode& m) const {
        const bool cond = (m.conduct >> m.target) & 1u;
        return cond ? loaded_[m.target] : unloaded_[m.target];
    }

    static double inductor_charge_fast(const ConverterParams& p, double i0, double dt) {
        const double r_a = p.r_a();
        if (r_a == 0.0) return i0 + p.v_in / p.l * dt;
        const double i_inf = p.v_in / r_a;
        return i0 + (i_inf - i0) * -std::expm1(-dt * r_a / p.l);
    }

    std::optional<std::pair<double, Crossing>> crossing(const FlowContext& ctx, const FlowState& x0, const Mode& m,
                                                         double dt, double tol) const {
        const auto& sol = transfer(m);
        const double v0 = x0.v[m.target];
        const double i0 = x0.i_l;
        const double i_dc = ctx.params.i_dc;
        const double v_f = ctx.strings[m.target].v_f;
        const bool cond = (m.conduct >> m.target) & 1u;

        // Event functions, positive before the event.
        auto floor_fn = [&](double t) { return sol.at(v0, i0, t).i_l - i_dc; };
        auto led_fn = [&](double t) { return v_f - sol.at(v0, i0, t).v_c; };

        std::optional<std::pair<double, Crossing>> best;
        auto scan = [&](auto&& fn, Crossing kind) {
            if (fn(0.0) <= 0.0) {
                best = std::pair{0.0, kind};
                return;
            }
            constexpr int kSamples = 4;
            double lo = 0.0;
            for (int j = 1; j <= kSamples; ++j) {
                const double hi = dt * j / kSamples;
                if (fn(hi) <= 0.0) {
                    double a = lo, b = hi;
                    while (b - a > tol) {
                        const double mid = 0.5 * (a + b);
                        if (fn(mid) > 0.0) a = mid; else b = mid;
                    }
                    // The floor lands on the side still above i_dc, conduction on
                    // the side where the LED already conducts.
                    const double at = kind == Crossing::PccmFloor ? a : b;
                    if (!best || at < best->first) best = std::pair{at, kind};
                    return;
                }
                lo = hi;
            }
        };
        scan(floor_fn, Crossing::PccmFloor);
        if (!cond) scan(led_fn, Crossing::LedConduction);
        return best;
    }

    void accumulate(const FlowContext& ctx, const FlowState& x0, const FlowState& x1, const Mode& m, double dt,
                    Integrals& acc) const {
        if (dt <= 0.0) return;
        constexpr double kMaxPanel = 5e-6;
        const int panels = std::max(1, static_cast<int>(std::ceil(dt / kMaxPanel)));
        const double h = dt / panels;
        const std::size_t used = Integrals::used(ctx.strings.size());
        std::array<double, Integrals::kSlots> f{};
        auto add = [&](const FlowState& x, double w) {
            detail::integrands(ctx, m, x, f);
            for (std::size_t j = 0; j < used; ++j) acc.a[j] += w * f[j];
        };
        add(x0, h / 6.0);
        for (int p = 0; p < panels; ++p) {
            add(peek(ctx, x0, m, (p + 0.5) * h), 4.0 * h / 6.0);
            if (p + 1 < panels) add(peek(ctx, x0, m, (p + 1) * h), 2.0 * h / 6.0);
        }
        add(x1, h / 6.0);
    }

    std::vector<TransferSolution> loaded_;
    std::vector<TransferSolution> unloaded_;
};

/// Fixed-step classical RK4 on the piecewise ODEs. Integrals ride along as
/// extra states, state events are located by sign change and bisection on
/// the step length.
class Rk4Flow {
public:
    explicit Rk4Flow(double step) : step_(step) {
        if (!(step > 0.0)) throw ModelError("oracle step must be > 0");
    }

    void bind(const FlowContext&) {}

    FlowState peek(const FlowContext& ctx, const FlowState& x0, const Mode& m, double dt) const {
        Integrals scratch;
        FlowState x = x0;
        double left = dt;
        while (left > 0.0) {
            const double h = std::min(step_, left);
            x = rk4(ctx, x, m, h, scratch);
            left -= h;
        }
        return x;
    }

    Advance advance(const FlowContext& ctx, const FlowState& x0, const Mode& m, double dt, Integrals& acc,
                    double tol) const {
        Advance out;
        FlowState x = x0;
        double t = 0.0;
        if (auto c = event_value(ctx, x, m); c.kind != Crossing::None && c.value <= 0.0) {
            out.x = x;
            out.elapsed = 0.0;
            out.crossing = c.kind;
            return out;
        }
        while (dt - t > 0.0) {
            const double h = std::min(step_, dt - t);
            Integrals step_acc;
            FlowState next = rk4(ctx, x, m, h, step_acc);
            Crossing ev = Crossing::None;
            double a_best = h;
            for (Crossing kind : fired(ctx, next, m)) {
                // Shrink the step until the event bracket is below tolerance.
                double a = 0.0, b = h;
                while (b - a > tol) {
                    const double mid = 0.5 * (a + b);
                    Integrals dummy;
                    if (value_of(ctx, rk4(ctx, x, m, mid, dummy), m, kind) > 0.0) a = mid; else b = mid;
                }
                const double at = kind == Crossing::PccmFloor ? a : b;
                if (ev == Crossing::None || at < a_best) {
                    ev = kind;
                    a_best = at;
                }
            }
            if (ev != Crossing::None) {
                Integrals part;
                const FlowState at = a_best > 0.0 ? rk4(ctx, x, m, a_best, part) : x;
                for (std::size_t j = 0; j < Integrals::kSlots; ++j) acc.a[j] += part.a[j];
                out.x = at;
                out.elapsed = t + a_best;
                out.crossing = ev;
                return out;
            }
            for (std::size_t j = 0; j < Integrals::kSlots; ++j) acc.a[j] += step_acc.a[j];
            x = next;
            t += h;
        }
        out.x = x;
        out.elapsed = dt;
        return out;
    }

private:
    struct EventValue {
        Crossing kind = Crossing::None;
        double value = 1.0;
    };

    static double value_of(const FlowContext& ctx, const FlowState& x, const Mode& m, Crossing kind) {
        if (kind == Crossing::PccmFloor) return x.i_l - ctx.params.i_dc;
        return ctx.strings[m.target].v_f - x.v[m.target];
    }

    static EventValue event_value(const FlowContext& ctx, const FlowState& x, const Mode& m) {
        if (m.phase != PhaseKind::Transfer) return {};
        const double floor = value_of(ctx, x, m, Crossing::PccmFloor);
        if (floor <= 0.0) return {Crossing::PccmFloor, floor};
        if (!((m.conduct >> m.target) & 1u)) {
            const double led = value_of(ctx, x, m, Crossing::LedConduction);
            if (led <= 0.0) return {Crossing::LedConduction, led};
        }
        return {};
    }

    static std::vector<Crossing> fired(const FlowContext& ctx, const FlowState& x, const Mode& m) {
        std::vector<Crossing> out;
        if (m.phase != PhaseKind::Transfer) return out;
        if (value_of(ctx, x, m, Crossing::PccmFloor) <= 0.0) out.push_back(Crossing::PccmFloor);
        if (!((m.conduct >> m.target) & 1u) && value_of(ctx, x, m, Crossing::LedConduction) <= 0.0) {
            out.push_back(Crossing::LedConduction);
        }
        return out;
    }

    struct Deriv {
        FlowState dx;
        std::array<double, Integrals::kSlots> f;
    };

    static void rhs(const FlowContext& ctx, const FlowState& x, const Mode& m, Deriv& d) {
        const auto& p = ctx.params;
        const std::size_t n = ctx.strings.size();
        switch (m.phase) {
            case PhaseKind::InductorCharge: d.dx.i_l = (p.v_in - p.r_a() * x.i_l) / p.l; break;
            case PhaseKind::Transfer: d.dx.i_l = (p.v_in - p.r_b() * x.i_l - x.v[m.target]) / p.l; break;
            default: d.dx.i_l = -p.r_fw * x.i_l / p.l; break;
        }
        for (std::size_t k = 0; k < n; ++k) {
            const auto& s = ctx.strings[k];
            const double g = ((m.conduct >> k) & 1u) ? 1.0 / s.r_led : 0.0;
            double in = 0.0;
            if (m.phase == PhaseKind::Transfer && static_cast<int>(k) == m.target) in = x.i_l;
            d.dx.v[k] = (in - g * (x.v[k] - s.v_f)) / s.c_out;
        }
        detail::integrands(ctx, m, x, d.f);
    }

    static FlowState rk4(const FlowContext& ctx, const FlowState& x, const Mode& m, double h, Integrals& acc) {
        const std::size_t n = ctx.strings.size();
        const std::size_t used = Integrals::used(n);
        Deriv k1, k2, k3, k4;
        auto shifted = [&](const Deriv& d, double s) {
            FlowState y = x;
            y.i_l += s * d.dx.i_l;
            for (std::size_t k = 0; k < n; ++k) y.v[k] += s * d.dx.v[k];
            return y;
        };
        rhs(ctx, x, m, k1);
        rhs(ctx, shifted(k1, 0.5 * h), m, k2);
        rhs(ctx, shifted(k2, 0.5 * h), m, k3);
        rhs(ctx, shifted(k3, h), m, k4);
        FlowState y = x;
        y.i_l += h / 6.0 * (k1.dx.i_l + 2.0 * k2.dx.i_l + 2.0 * k3.dx.i_l + k4.dx.i_l);
        for (std::size_t k = 0; k < n; ++k) {
            y.v[k] += h / 6.0 * (k1.dx.v[k] + 2.0 * k2.dx.v[k] + 2.0 * k3.dx.v[k] + k4.dx.v[k]);
        }
        for (std::size_t j = 0; j < used; ++j) {
            acc.a[j] += h / 6.0 * (k1.f[j] + 2.0 * k2.f[j] + 2.0 * k3.f[j] + k4.f[j]);
        }
        return y;
    }

    double step_;
};

}  // namespace simo
