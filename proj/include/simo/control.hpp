#pragma once

// Synchronous integral control, one loop per string.
//
// Each boost period the duty command moves against the integrated bus
// voltage error:  D' = D - (K / R_led) * integral(V_C - V_C,ss) dt.
// The integrator only runs while its string's dimming gate is high, and
// integration is conditional: whatever would push the duty past its clamp
// is dropped instead of accumulated.
//
// Integrating the voltage error with gain K/R_led is the same law as
// integrating the LED current error (V_C - V_F)/R_led - i_ref with gain K.

#include <algorithm>
#include <cmath>
#include <vector>

#include "simo/circuit.hpp"
#include "simo/schedule.hpp"

namespace simo {

struct StringController {
    double duty = 0.5;
    /// Applied error integral (V s).
    double acc = 0.0;
    bool enabled = false;

    bool operator==(const StringController&) const = default;
};

struct ControllerState {
    std::vector<StringController> strings;
    double k_gain = 700.0;
    double t_c = 2.5e-6;
    double duty_min = 0.0;
    double duty_max = 0.95;

    static ControllerState initial(std::size_t n, const ConverterParams& p, double k_gain, double duty0) {
        ControllerState s;
        s.strings.assign(n, StringController{std::clamp(duty0, p.duty_min, p.duty_max), 0.0, false});
        s.k_gain = k_gain;
        s.t_c = p.t_c();
        s.duty_min = p.duty_min;
        s.duty_max = p.duty_max;
        return s;
    }

    bool operator==(const ControllerState&) const = default;
};

/// Regulated bus voltage that yields i_ref through the string.
inline double reference_voltage(const LedStringModel& s) { return s.i_ref * s.r_led + s.v_f; }

/// One integrator step for string `k` given the error integral over the
/// enabled part of the last boost period. Disabled strings hold.
inline ControllerState integrator_update(ControllerState state, std::size_t k, const LedStringModel& s,
                                         double error_integral) {
    auto& c = state.strings.at(k);
    if (!c.enabled) return state;
    const double gain = state.k_gain / s.r_led;
    const double proposed = c.duty - gain * error_integral;
    const double clamped = std::clamp(proposed, state.duty_min, state.duty_max);
    if (clamped == proposed) {
        c.acc += error_integral;
    } else {
        // Only the part that moved the duty is integrated.
        c.acc += (c.duty - clamped) / gain;
    }
    c.duty = clamped;
    return state;
}

/// Main-switch level at absolute time t: PWM at f_c with the charging
/// string's duty, aligned to the start of its charge window; off when no
/// channel is being charged.
inline bool boost_gate(const ControllerState& states, const SwitchSchedule& schedule, double t) {
    const Nanos t_ns = static_cast<Nanos>(std::floor(t * kNanosPerSecond));
    const auto active = schedule.active_charge(t_ns);
    if (!active) return false;
    const double duty = states.strings.at(active->string).duty;
    const double since = t - to_seconds(active->window_start);
    const double tc = to_seconds(schedule.boost_period);
    const double phase = since - std::floor(since / tc) * tc;
    return phase < duty * tc;
}

}  // namespace simo
