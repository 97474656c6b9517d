#pragma once

// Hybrid driver shared by the closed-form engine and the RK4 oracle.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "simo/circuit.hpp"
#include "simo/control.hpp"
#include "simo/engine.hpp"
#include "simo/schedule.hpp"

namespace simo {

/// Gate bits in trace samples.
namespace gate {
inline constexpr std::uint64_t kMain = 1ull << 0;
inline constexpr std::uint64_t kFreewheel = 1ull << 1;
inline constexpr std::uint64_t kBoostEnable = 1ull << 2;
inline constexpr std::uint64_t charge(std::size_t k) { return 1ull << (3 + k); }
inline constexpr std::uint64_t dim(std::size_t k) { return 1ull << (3 + kMaxStrings + k); }
}  // namespace gate

/// Event kinds, OR-ed when several coincide.
namespace event {
inline constexpr std::uint32_t kGateChange = 1u << 0;
inline constexpr std::uint32_t kPwmRise = 1u << 1;
inline constexpr std::uint32_t kPwmFall = 1u << 2;
inline constexpr std::uint32_t kControllerUpdate = 1u << 3;
inline constexpr std::uint32_t kPccmFloor = 1u << 4;
inline constexpr std::uint32_t kLedConduction = 1u << 5;
inline constexpr std::uint32_t kReferenceStep = 1u << 6;
inline constexpr std::uint32_t kHorizon = 1u << 7;
inline constexpr std::uint32_t kHyperperiod = 1u << 8;
}  // namespace event

struct EventRecord {
    double t = 0.0;
    std::uint32_t kinds = 0;
};

struct SimState {
    double t = 0.0;
    double i_l = 0.0;
    std::vector<double> v_c;
    PhaseKind phase = PhaseKind::Freewheel;
    std::uint64_t gates = 0;
    ControllerState ctrl;
};

struct StringPeriodStats {
    double mean_vc = 0.0;
    double de_c = 0.0;
    double on_time = 0.0;
    double led_charge = 0.0;   // integral of i_led
    double led_square = 0.0;   // integral of i_led^2
    double on_v_square = 0.0;  // integral of v_c^2 while the gate is on
    double power = 0.0;        // integral of v_c i_led
    double forward_energy = 0.0;
    double resistive_energy = 0.0;
    double ripple_pp = 0.0;    // largest peak-to-peak bus swing inside one charge window
    double i_on_min = 0.0;
    double i_on_max = 0.0;
    double duty = 0.0;

    double mean_on_current() const { return on_time > 0.0 ? led_charge / on_time : 0.0; }
};

/// Per-hyperperiod aggregates. Hyperperiods are multiples of every string's
/// dimming period, so these are dimming-period averages.
struct PeriodRecord {
    double t0 = 0.0;
    double t1 = 0.0;
    double source_energy = 0.0;
    double source_charge = 0.0;
    double source_square = 0.0;
    double converter_loss = 0.0;
    double de_l = 0.0;
    std::vector<StringPeriodStats> strings;

    double duration() const { return t1 - t0; }
    double stored_change() const {
        double e = de_l;
        for (const auto& s : strings) e += s.de_c;
        return e;
    }
    double dissipated() const {
        double e = converter_loss;
        for (const auto& s : strings) e += s.forward_energy + s.resistive_energy;
        return e;
    }
    /// Source energy not accounted for by storage, resistive loss and LED forward drop.
    double residual() const { return source_energy - stored_change() - dissipated(); }
};

enum class RunStatus { Completed, Diverged };

struct Trace {
    std::size_t n_strings = 0;
    double horizon = 0.0;
    RunStatus status = RunStatus::Completed;
    std::string diagnostic;

    std::vector<double> t;
    std::vector<double> i_l;
    std::vector<std::vector<double>> v_c;
    std::vector<std::vector<double>> i_led;
    std::vector<double> duty;
    std::vector<PhaseKind> phase;
    std::vector<std::uint64_t> gates;

    std::vector<EventRecord> events;
    std::vector<PeriodRecord> periods;

    /// Extremes seen at controller updates.
    std::vector<double> duty_lo;
    std::vector<double> duty_hi;
    /// Largest current increase inside any freewheel segment (should be <= 0).
    double freewheel_rise = 0.0;
    double min_i_l = std::numeric_limits<double>::infinity();
    std::size_t segments = 0;

    std::size_t size() const { return t.size(); }
    bool diverged() const { return status == RunStatus::Diverged; }
};

/// Trace export. Columns depend only on the string count.
inline void write_trace_csv(std::ostream& os, const Trace& tr) {
    const std::size_t n = tr.n_strings;
    os << "t_s,i_L_A";
    for (std::size_t k = 0; k < n; ++k) os << ",v_c" << k + 1 << "_V";
    for (std::size_t k = 0; k < n; ++k) os << ",i_led" << k + 1 << "_A";
    os << ",duty,phase,q1,qf,boost_en";
    for (std::size_t k = 0; k < n; ++k) os << ",charge" << k + 1;
    for (std::size_t k = 0; k < n; ++k) os << ",dim" << k + 1;
    os << '\n';
    const auto prec = os.precision(17);
    for (std::size_t j = 0; j < tr.size(); ++j) {
        const auto g = tr.gates[j];
        os << tr.t[j] << ',' << tr.i_l[j];
        for (std::size_t k = 0; k < n; ++k) os << ',' << tr.v_c[k][j];
        for (std::size_t k = 0; k < n; ++k) os << ',' << tr.i_led[k][j];
        os << ',' << tr.duty[j] << ',' << to_string(tr.phase[j]) << ',' << ((g & gate::kMain) ? 1 : 0) << ','
           << ((g & gate::kFreewheel) ? 1 : 0) << ',' << ((g & gate::kBoostEnable) ? 1 : 0);
        for (std::size_t k = 0; k < n; ++k) os << ',' << ((g & gate::charge(k)) ? 1 : 0);
        for (std::size_t k = 0; k < n; ++k) os << ',' << ((g & gate::dim(k)) ? 1 : 0);
        os << '\n';
    }
    os.precision(prec);
}

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Earliest t in [0, window] at which the transfer-phase inductor current
/// falls to i_dc, located by bracketing and bisection.
inline std::optional<double> detect_pccm_crossing(const ConverterParams& p, const LedStringModel& s, double v_c0,
                                                  double i_l0, double window, double tol = 1e-12) {
    if (i_l0 <= p.i_dc) return 0.0;
    const TransferSolution sol(p, s, v_c0 >= s.v_f);
    auto f = [&](double t) { return sol.at(v_c0, i_l0, t).i_l - p.i_dc; };
    constexpr int kBrackets = 64;
    double lo = 0.0;
    for (int j = 1; j <= kBrackets; ++j) {
        const double hi = window * j / kBrackets;
        if (f(hi) <= 0.0) {
            double a = lo, b = hi;
            while (b - a > tol) {
                const double mid = 0.5 * (a + b);
                if (f(mid) > 0.0) a = mid; else b = mid;
            }
            return a;
        }
        lo = hi;
    }
    return std::nullopt;
}

template <class Flow>
class HybridEngine {
public:
    /// Added to the duty command at every PWM rising edge; receives
    /// (t, string, commanded duty).
    std::function<double(double, std::size_t, double)> duty_perturbation;
    /// Called after every controller update with (t, string, duty).
    std::function<void(double, std::size_t, double)> on_update;

    HybridEngine(const Scenario& sc, Flow flow) : sc_(sc), flow_(std::move(flow)) {
        if (auto p = sc.problems(); !p.empty()) throw ModelError(p.front());
        sched_ = build_schedule(sc.cmd, sc.params);
        if (auto rep = validate_schedule(sched_, sc.cmd, sc.params); !rep.ok()) {
            std::ostringstream os;
            os << rep;
            throw ScheduleError("schedule violation: " + os.str());
        }
        n_ = sc.strings.size();
        ctx_.params = sc.params;
        ctx_.strings = sc.strings;
        for (std::size_t k = 0; k < n_; ++k) ctx_.v_ref[k] = reference_voltage(sc.strings[k]);
        flow_.bind(ctx_);
        build_ticks();

        x_.i_l = sc.initial.i_l.value_or(sc.params.i_dc);
        for (std::size_t k = 0; k < n_; ++k) x_.v[k] = sc.initial.v_c.value_or(sc.params.v_in);
        ctrl_ = ControllerState::initial(n_, sc.params, sc.k_gain, sc.initial.duty);
        refs_ = sc.reference_steps;
        std::stable_sort(refs_.begin(), refs_.end(),
                         [](const ReferenceStep& a, const ReferenceStep& b) { return a.time < b.time; });

        trace_.n_strings = n_;
        trace_.v_c.resize(n_);
        trace_.i_led.resize(n_);
        trace_.duty_lo.resize(n_);
        trace_.duty_hi.resize(n_);
        for (std::size_t k = 0; k < n_; ++k) trace_.duty_lo[k] = trace_.duty_hi[k] = ctrl_.strings[k].duty;
        sample_dt_ = sc.engine.sample_rate > 0.0 ? 1.0 / sc.engine.sample_rate : 0.0;
        ripple_lo_.assign(n_, 0.0);
        ripple_hi_.assign(n_, 0.0);
        begin_period();

        process_tick(0);
        tick_ = 1;
        record_sample_now();
    }

    const SwitchSchedule& schedule() const { return sched_; }
    const Scenario& scenario() const { return sc_; }
    double time() const { return t_; }
    const ControllerState& controller() const { return ctrl_; }
    const Trace& trace() const { return trace_; }
    /// Current continuous state, mode and flow context, for cross-checking flows.
    const FlowState& flow_state() const { return x_; }
    const Mode& mode() const { return mode_; }
    const FlowContext& context() const { return ctx_; }
    Trace take_trace() { return std::move(trace_); }

    SimState state() const {
        SimState s;
        s.t = t_;
        s.i_l = x_.i_l;
        s.v_c.assign(x_.v.begin(), x_.v.begin() + n_);
        s.phase = mode_.phase;
        s.gates = gates();
        s.ctrl = ctrl_;
        return s;
    }

    /// Advances to the next event (or the horizon) and applies it.
    EventRecord step(double horizon) {
        const double t_tick = tick_time();
        const double t_ref = ref_idx_ < refs_.size() ? refs_[ref_idx_].time : kInf;
        double t_next = std::min({t_tick, pwm_fall_, t_ref, horizon});
        if (t_next < t_) t_next = t_;

        refresh_conduction();
        Integrals seg;
        const FlowState x0 = x_;
        const Mode m0 = mode_;
        const double t0 = t_;
        const Advance adv = flow_.advance(ctx_, x0, m0, t_next - t0, seg, sc_.engine.event_tolerance);
        x_ = adv.x;
        t_ = adv.crossing == Crossing::None ? t_next : t0 + adv.elapsed;
        ++trace_.segments;

        emit_samples(x0, m0, t0, t_);
        absorb(seg, m0, x0, t_ - t0);
        check_divergence();

        EventRecord rec{t_, 0};
        if (adv.crossing == Crossing::PccmFloor) {
            mode_.phase = PhaseKind::Freewheel;
            rec.kinds |= event::kPccmFloor;
        } else if (adv.crossing == Crossing::LedConduction) {
            rec.kinds |= event::kLedConduction;
        } else {
            if (t_ == pwm_fall_) {
                pwm_fall();
                rec.kinds |= event::kPwmFall;
            }
            if (t_ == t_tick) {
                rec.kinds |= process_tick(tick_);
                if (++tick_ == ticks_.size()) {
                    tick_ = 0;
                    ++hyper_;
                }
            }
            while (ref_idx_ < refs_.size() && refs_[ref_idx_].time <= t_) {
                apply_reference(refs_[ref_idx_++]);
                rec.kinds |= event::kReferenceStep;
            }
            if (t_ == horizon) rec.kinds |= event::kHorizon;
        }
        if (sc_.engine.record_events && trace_.events.size() < sc_.engine.max_event_log) trace_.events.push_back(rec);
        if (sc_.engine.sample_events) record_sample_now();
        return rec;
    }

    /// Runs to t_end. Divergence ends the run early with a diagnostic.
    void run_until(double t_end) {
        try {
            while (t_ < t_end) step(t_end);
        } catch (const DivergenceError& e) {
            trace_.status = RunStatus::Diverged;
            trace_.diagnostic = e.what();
        }
        trace_.horizon = t_;
    }

    bool diverged() const { return trace_.status == RunStatus::Diverged; }

private:
    static constexpr double kInf = std::numeric_limits<double>::infinity();

    struct Tick {
        Nanos t = 0;
        std::uint32_t update = 0;
        int pwm = -1;
        std::uint32_t charge = 0;
        std::uint32_t dim = 0;
        bool gate_change = false;
    };

    void build_ticks() {
        const Nanos h = sched_.hyperperiod;
        const Nanos tc = sched_.boost_period;
        std::map<Nanos, Tick> m;
        auto at = [&](Nanos t) -> Tick& {
            t = ((t % h) + h) % h;
            auto& tk = m[t];
            tk.t = t;
            return tk;
        };
        for (const auto& e : sched_.events) at(e.time).gate_change = true;
        for (std::size_t k = 0; k < n_; ++k) {
            for (const auto& iv : sched_.high_intervals({SwitchKind::Charge, static_cast<int>(k)})) {
                for (Nanos t = iv.begin; t < iv.end; t += tc) at(t).pwm = static_cast<int>(k);
            }
            for (const auto& iv : sched_.high_intervals({SwitchKind::Dim, static_cast<int>(k)})) {
                for (Nanos t = iv.begin + tc; t < iv.end; t += tc) at(t).update |= 1u << k;
                at(iv.end).update |= 1u << k;
            }
        }
        ticks_.clear();
        for (auto& [t, tk] : m) ticks_.push_back(tk);
        // Gate levels valid from each tick to the next.
        std::size_t e = 0;
        std::uint32_t charge = 0, dim = 0;
        for (auto& tk : ticks_) {
            while (e < sched_.events.size() && sched_.events[e].time <= tk.t) {
                const auto& ev = sched_.events[e++];
                const std::uint32_t bit = 1u << ev.sw.channel;
                if (ev.sw.kind == SwitchKind::Charge) charge = ev.level ? (charge | bit) : (charge & ~bit);
                if (ev.sw.kind == SwitchKind::Dim) dim = ev.level ? (dim | bit) : (dim & ~bit);
            }
            tk.charge = charge;
            tk.dim = dim;
            if (charge & (charge - 1)) throw ScheduleError("two charge selectors high at once");
        }
    }

    double tick_time() const {
        return to_seconds(hyper_ * sched_.hyperperiod + ticks_[tick_].t);
    }

    std::uint64_t gates() const {
        std::uint64_t g = 0;
        if (mode_.phase == PhaseKind::InductorCharge) g |= gate::kMain;
        if (mode_.phase == PhaseKind::Freewheel) g |= gate::kFreewheel;
        if (charging_ >= 0) g |= gate::kBoostEnable | gate::charge(static_cast<std::size_t>(charging_));
        for (std::size_t k = 0; k < n_; ++k) {
            if ((mode_.on >> k) & 1u) g |= gate::dim(k);
        }
        return g;
    }

    void refresh_conduction() {
        std::uint32_t c = 0;
        for (std::size_t k = 0; k < n_; ++k) {
            if (((mode_.on >> k) & 1u) && x_.v[k] >= ctx_.strings[k].v_f) c |= 1u << k;
        }
        mode_.conduct = c;
    }

    std::uint32_t process_tick(std::size_t idx) {
        const Tick& tk = ticks_[idx];
        std::uint32_t kinds = 0;
        if (idx == 0) {
            if (hyper_ > 0 || t_ > 0.0) close_period();
            kinds |= event::kHyperperiod;
        }
        for (std::size_t k = 0; k < n_; ++k) {
            if (!((tk.update >> k) & 1u)) continue;
            const double err = err_[k];
            err_[k] = 0.0;
            ctrl_ = integrator_update(std::move(ctrl_), k, ctx_.strings[k], err);
            const double d = ctrl_.strings[k].duty;
            if (d <= ctrl_.duty_min || d >= ctrl_.duty_max) clamped_ = true;
            trace_.duty_lo[k] = std::min(trace_.duty_lo[k], d);
            trace_.duty_hi[k] = std::max(trace_.duty_hi[k], d);
            if (on_update) on_update(t_, k, d);
            kinds |= event::kControllerUpdate;
        }
        if (tk.gate_change) kinds |= event::kGateChange;
        for (std::size_t k = 0; k < n_; ++k) ctrl_.strings[k].enabled = (tk.dim >> k) & 1u;
        mode_.on = tk.dim;
        const int charging = tk.charge ? std::countr_zero(tk.charge) : -1;
        if (charging != charging_) {
            if (charging_ >= 0) close_ripple(static_cast<std::size_t>(charging_));
            charging_ = charging;
            if (charging_ >= 0) open_ripple(static_cast<std::size_t>(charging_));
            if (charging_ < 0) {
                mode_.phase = PhaseKind::Freewheel;
                pwm_fall_ = kInf;
            }
            mode_.target = charging_;
        }
        if (tk.pwm >= 0 && tk.pwm == charging_) {
            double duty = ctrl_.strings[static_cast<std::size_t>(charging_)].duty;
            if (duty_perturbation) {
                duty += duty_perturbation(t_, static_cast<std::size_t>(charging_), duty);
                duty = std::clamp(duty, ctrl_.duty_min, ctrl_.duty_max);
            }
            kinds |= event::kPwmRise;
            if (duty > 0.0) {
                mode_.phase = PhaseKind::InductorCharge;
                pwm_fall_ = t_ + duty * to_seconds(sched_.boost_period);
            } else {
                mode_.phase = PhaseKind::InductorCharge;
                pwm_fall();
            }
        }
        return kinds;
    }

    void pwm_fall() {
        pwm_fall_ = kInf;
        if (mode_.phase != PhaseKind::InductorCharge || charging_ < 0) return;
        const auto& p = ctx_.params;
        const double v = x_.v[static_cast<std::size_t>(charging_)];
        const bool rising = p.v_in - p.r_b() * x_.i_l - v > 0.0;
        mode_.phase = (x_.i_l > p.i_dc || rising) ? PhaseKind::Transfer : PhaseKind::Freewheel;
        mode_.target = charging_;
    }

    void apply_reference(const ReferenceStep& r) {
        for (std::size_t k = 0; k < n_; ++k) {
            if (r.string >= 0 && static_cast<std::size_t>(r.string) != k) continue;
            ctx_.strings[k].i_ref = r.i_ref;
            ctx_.v_ref[k] = reference_voltage(ctx_.strings[k]);
        }
    }

    void absorb(const Integrals& seg, const Mode& m, const FlowState& x0, double dt) {
        for (std::size_t j = 0; j < Integrals::used(n_); ++j) period_.a[j] += seg.a[j];
        for (std::size_t k = 0; k < n_; ++k) {
            err_[k] += seg(k, Integrals::Error);
            if ((m.on >> k) & 1u) {
                on_time_[k] += dt;
                const auto& s = ctx_.strings[k];
                for (double v : {x0.v[k], x_.v[k]}) {
                    const double i = led_current(s, v, true);
                    i_on_min_[k] = std::min(i_on_min_[k], i);
                    i_on_max_[k] = std::max(i_on_max_[k], i);
                }
            }
        }
        if (charging_ >= 0 || m.target >= 0) {
            const std::size_t k = static_cast<std::size_t>(charging_ >= 0 ? charging_ : m.target);
            if (ripple_open_) {
                ripple_lo_[k] = std::min(ripple_lo_[k], x_.v[k]);
                ripple_hi_[k] = std::max(ripple_hi_[k], x_.v[k]);
            }
        }
        if (m.phase == PhaseKind::Freewheel) {
            trace_.freewheel_rise = std::max(trace_.freewheel_rise, x_.i_l - x0.i_l);
        }
        trace_.min_i_l = std::min(trace_.min_i_l, x_.i_l);
    }

    void open_ripple(std::size_t k) {
        ripple_open_ = true;
        ripple_lo_[k] = ripple_hi_[k] = x_.v[k];
    }

    void close_ripple(std::size_t k) {
        if (!ripple_open_) return;
        ripple_open_ = false;
        ripple_pp_[k] = std::max(ripple_pp_[k], ripple_hi_[k] - ripple_lo_[k]);
    }

    void begin_period() {
        period_ = Integrals{};
        period_t0_ = t_;
        period_x0_ = x_;
        on_time_.fill(0.0);
        ripple_pp_.fill(0.0);
        i_on_min_.fill(kInf);
        i_on_max_.fill(-kInf);
    }

    void close_period() {
        PeriodRecord r;
        r.t0 = period_t0_;
        r.t1 = t_;
        r.source_energy = period_[Integrals::SourceEnergy];
        r.source_charge = period_[Integrals::SourceCharge];
        r.source_square = period_[Integrals::SourceSquare];
        r.converter_loss = period_[Integrals::ConverterLoss];
        const double l = ctx_.params.l;
        r.de_l = 0.5 * l * (x_.i_l * x_.i_l - period_x0_.i_l * period_x0_.i_l);
        const double dur = r.duration();
        for (std::size_t k = 0; k < n_; ++k) {
            StringPeriodStats s;
            const double c = ctx_.strings[k].c_out;
            s.mean_vc = dur > 0.0 ? period_(k, Integrals::VoltageTime) / dur : x_.v[k];
            s.de_c = 0.5 * c * (x_.v[k] * x_.v[k] - period_x0_.v[k] * period_x0_.v[k]);
            s.on_time = on_time_[k];
            s.led_charge = period_(k, Integrals::LedCharge);
            s.led_square = period_(k, Integrals::LedSquare);
            s.on_v_square = period_(k, Integrals::OnVoltageSquare);
            s.power = period_(k, Integrals::Power);
            s.forward_energy = period_(k, Integrals::ForwardEnergy);
            s.resistive_energy = period_(k, Integrals::ResistiveEnergy);
            s.ripple_pp = ripple_pp_[k];
            s.i_on_min = std::isfinite(i_on_min_[k]) ? i_on_min_[k] : 0.0;
            s.i_on_max = std::isfinite(i_on_max_[k]) ? i_on_max_[k] : 0.0;
            s.duty = ctrl_.strings[k].duty;
            r.strings.push_back(s);
        }
        trace_.periods.push_back(std::move(r));
        begin_period();

        if (!clamped_) saturated_since_ = t_;
        clamped_ = false;
        const double limit = sc_.engine.saturation_limit;
        if (limit > 0.0 && t_ - saturated_since_ >= limit) {
            std::ostringstream os;
            os << "instability at t = " << t_ << " s: duty command pinned to its clamp in every dimming period since t = "
               << saturated_since_ << " s";
            throw DivergenceError(os.str());
        }
    }

    void check_divergence() {
        const auto& o = sc_.engine;
        auto fail = [&](const std::string& what) {
            std::ostringstream os;
            os << "instability at t = " << t_ << " s: " << what;
            throw DivergenceError(os.str());
        };
        if (!std::isfinite(x_.i_l)) fail("non-finite inductor current");
        if (x_.i_l > o.i_limit) fail("inductor current above " + std::to_string(o.i_limit) + " A");
        for (std::size_t k = 0; k < n_; ++k) {
            if (!std::isfinite(x_.v[k])) fail("non-finite bus voltage");
            if (x_.v[k] > o.v_limit) fail("bus voltage " + std::to_string(k + 1) + " above " + std::to_string(o.v_limit) + " V");
        }
    }

    void record(const FlowState& x, double t, const Mode& m) {
        trace_.t.push_back(t);
        trace_.i_l.push_back(x.i_l);
        for (std::size_t k = 0; k < n_; ++k) {
            trace_.v_c[k].push_back(x.v[k]);
            trace_.i_led[k].push_back(led_current(ctx_.strings[k], x.v[k], (m.on >> k) & 1u));
        }
        trace_.duty.push_back(charging_ >= 0 ? ctrl_.strings[static_cast<std::size_t>(charging_)].duty : 0.0);
        trace_.phase.push_back(m.phase);
        trace_.gates.push_back(gates());
    }

    void record_sample_now() {
        if (!trace_.t.empty() && trace_.t.back() == t_) return;
        record(x_, t_, mode_);
    }

    void emit_samples(const FlowState& x0, const Mode& m, double t0, double t1) {
        if (sample_dt_ <= 0.0) return;
        const auto dec = static_cast<std::uint64_t>(sc_.engine.decimation);
        while (true) {
            const double ts = static_cast<double>(next_sample_) * sample_dt_;
            if (ts > t1) break;
            if (ts > t0) {
                if (next_sample_ % dec == 0) record(ts == t1 ? x_ : flow_.peek(ctx_, x0, m, ts - t0), ts, m);
            }
            next_sample_ += dec;
        }
    }

    Scenario sc_;
    Flow flow_;
    FlowContext ctx_;
    SwitchSchedule sched_;
    std::vector<Tick> ticks_;
    std::size_t n_ = 0;

    FlowState x_;
    Mode mode_;
    ControllerState ctrl_;
    double t_ = 0.0;
    double pwm_fall_ = kInf;
    int charging_ = -1;
    std::size_t tick_ = 0;
    std::int64_t hyper_ = 0;
    std::vector<ReferenceStep> refs_;
    std::size_t ref_idx_ = 0;

    std::array<double, kMaxStrings> err_{};
    Integrals period_;
    double period_t0_ = 0.0;
    FlowState period_x0_;
    std::array<double, kMaxStrings> on_time_{};
    std::array<double, kMaxStrings> ripple_pp_{};
    std::array<double, kMaxStrings> i_on_min_{};
    std::array<double, kMaxStrings> i_on_max_{};
    std::vector<double> ripple_lo_, ripple_hi_;
    bool ripple_open_ = false;
    bool clamped_ = false;
    double saturated_since_ = 0.0;

    double sample_dt_ = 0.0;
    std::uint64_t next_sample_ = 0;
    Trace trace_;
};

using Engine = HybridEngine<AnalyticFlow>;
using OracleEngine = HybridEngine<Rk4Flow>;

inline Engine make_engine(const Scenario& sc) { return Engine(sc, AnalyticFlow{}); }
inline OracleEngine make_oracle(const Scenario& sc, double step) { return OracleEngine(sc, Rk4Flow(step)); }

/// Fixed-step oracle run of the same scenario.
inline Trace oracle_integrate(const Scenario& sc, double step) {
    auto eng = make_oracle(sc, step);
    eng.run_until(sc.duration);
    return eng.take_trace();
}

/// Runs the scenario to its horizon. Uses the oracle when the scenario asks for it.
inline Trace simulate(const Scenario& sc) {
    if (sc.engine.oracle_step > 0.0) return oracle_integrate(sc, sc.engine.oracle_step);
    auto eng = make_engine(sc);
    eng.run_until(sc.duration);
    return eng.take_trace();
}

}  // namespace simo
