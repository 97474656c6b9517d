#pragma once

// Electrical domain types and closed-form phase solutions of the
// single-inductor multiple-output boost LED driver.
//
// The converter is piecewise linear. Each inductor-side phase has an exact
// solution:
//   InductorCharge  L di/dt + R_a i = V_in
//   Transfer        coupled L / C / LED-string second-order system
//   Freewheel       L di/dt + r_fw i = 0
// and every conducting LED string not being charged discharges its output
// capacitor through (V_F, R_led).

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace simo {

class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require_finite(std::string_view what, double value) {
    if (!std::isfinite(value)) {
        throw ModelError(std::string(what) + " must be finite");
    }
}

}  // namespace detail

/// Shared boost stage. Resistances are lumped per current loop:
/// R_a = r_l + r_q1 (main switch on), R_b = r_l + r_q2 (transfer path),
/// r_fw is the whole freewheel loop.
struct ConverterParams {
    double v_in = 7.8;
    double l = 7.4e-6;
    double r_l = 0.05;
    double r_q1 = 0.05;
    double r_q2 = 0.05;
    double r_fw = 0.05;
    double f_c = 400e3;
    double i_dc = 1.5;
    double duty_min = 0.0;
    double duty_max = 0.95;
    double dead_time = 16e-6;

    double r_a() const { return r_l + r_q1; }
    double r_b() const { return r_l + r_q2; }
    double t_c() const { return 1.0 / f_c; }

    bool operator==(const ConverterParams&) const = default;

    /// Every violated invariant, in declaration order. Empty when valid.
    /// `f_main` enables the dead-time vs. slot-length check.
    std::vector<std::string> problems(double f_main = 0.0) const {
        std::vector<std::string> out;
        auto finite_pos = [&](const char* name, double v) {
            if (!std::isfinite(v) || v <= 0.0) out.push_back(std::string(name) + " must be > 0");
        };
        auto finite_nonneg = [&](const char* name, double v) {
            if (!std::isfinite(v) || v < 0.0) out.push_back(std::string(name) + " must be >= 0");
        };
        finite_pos("v_in", v_in);
        finite_pos("l", l);
        finite_pos("f_c", f_c);
        finite_nonneg("r_l", r_l);
        finite_nonneg("r_q1", r_q1);
        finite_nonneg("r_q2", r_q2);
        finite_nonneg("r_fw", r_fw);
        finite_nonneg("i_dc", i_dc);
        finite_nonneg("dead_time", dead_time);
        if (!(duty_min >= 0.0 && duty_min < duty_max && duty_max <= 1.0)) {
            out.push_back("duty clamp must satisfy 0 <= duty_min < duty_max <= 1");
        }
        if (f_main > 0.0 && dead_time >= 1.0 / (3.0 * f_main)) {
            out.push_back("dead_time must be shorter than 1/(3*f_main)");
        }
        return out;
    }
};

/// One LED channel: string forward voltage, total series resistance
/// (sense resistor + dimming switch + dynamic resistance), output capacitor.
struct LedStringModel {
    int id = 1;
    double v_f = 11.23;
    double r_led = 0.2;
    double r_sense = 0.1;
    double c_out = 2000e-6;
    double i_ref = 0.35;

    double tau() const { return c_out * r_led; }

    bool operator==(const LedStringModel&) const = default;

    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        const std::string tag = "string " + std::to_string(id) + ": ";
        auto finite_pos = [&](const char* name, double v) {
            if (!std::isfinite(v) || v <= 0.0) out.push_back(tag + name + " must be > 0");
        };
        finite_pos("v_f", v_f);
        finite_pos("r_led", r_led);
        finite_pos("c_out", c_out);
        finite_pos("i_ref", i_ref);
        if (!std::isfinite(r_sense) || r_sense < 0.0 || r_sense > r_led) {
            out.push_back(tag + "r_sense must lie in [0, r_led]");
        }
        return out;
    }

    /// Boost operation needs the regulated bus above the source.
    bool boost_meaningful(double v_in) const { return v_f + i_ref * r_led > v_in; }
};

enum class PhaseKind { InductorCharge, Transfer, Freewheel, CapacitorDischarge };

inline std::string_view to_string(PhaseKind p) {
    switch (p) {
        case PhaseKind::InductorCharge: return "charge";
        case PhaseKind::Transfer: return "transfer";
        case PhaseKind::Freewheel: return "freewheel";
        case PhaseKind::CapacitorDischarge: return "discharge";
    }
    return "?";
}

enum class Damping { Overdamped, CriticallyDamped, Underdamped };

inline std::string_view to_string(Damping d) {
    switch (d) {
        case Damping::Overdamped: return "overdamped";
        case Damping::CriticallyDamped: return "critically-damped";
        case Damping::Underdamped: return "underdamped";
    }
    return "?";
}

/// Roots of s^2 + a1 s + a0. Real roots in (root1, root2) with root1 >= root2
/// for the overdamped case; otherwise -alpha +/- j omega_d.
struct DampingClass {
    Damping kind = Damping::Overdamped;
    double root1 = 0.0;
    double root2 = 0.0;
    double alpha = 0.0;
    double omega_d = 0.0;
};

/// Relative band around zero discriminant treated as critical damping.
inline constexpr double kCriticalBand = 1e-9;

/// Solves y'' + a1 y' + a0 y = 0 from (y(0), y'(0)).
///
/// Written in the shifted form y = e^{-a1 t/2} [y0 C(t) + (y1 + a1 y0 / 2) S(t)]
/// with C = cosh/cos and S = sinh/sin divided by the half root spread, so the
/// three damping branches agree continuously at the critical boundary.
class SecondOrder {
public:
    SecondOrder() = default;
    SecondOrder(double a1, double a0) : a1_(a1), a0_(a0) {
        mean_ = -0.5 * a1;
        const double disc = a1 * a1 - 4.0 * a0;
        const double scale = std::max(a1 * a1, std::abs(4.0 * a0));
        if (std::abs(disc) <= kCriticalBand * scale) {
            kind_ = Damping::CriticallyDamped;
        } else if (disc > 0.0) {
            kind_ = Damping::Overdamped;
            spread_ = 0.5 * std::sqrt(disc);
        } else {
            kind_ = Damping::Underdamped;
            spread_ = 0.5 * std::sqrt(-disc);
        }
    }

    Damping kind() const { return kind_; }

    DampingClass classify() const {
        DampingClass c;
        c.kind = kind_;
        switch (kind_) {
            case Damping::Overdamped:
                c.root1 = mean_ + spread_;
                c.root2 = mean_ - spread_;
                break;
            case Damping::CriticallyDamped:
                c.root1 = c.root2 = mean_;
                break;
            case Damping::Underdamped:
                c.alpha = -mean_;
                c.omega_d = spread_;
                break;
        }
        return c;
    }

    struct Value {
        double y;
        double dy;
    };

    Value at(double y0, double y1, double t) const {
        // e^{mean t} * {C, S, C', S'} where C' and S' are time derivatives
        // of the bracketed basis functions.
        double ec = 0.0, es = 0.0, ecd = 0.0, esd = 0.0;
        switch (kind_) {
            case Damping::Overdamped: {
                const double e_hi = std::exp((mean_ + spread_) * t);
                const double e_lo = std::exp((mean_ - spread_) * t);
                ec = 0.5 * (e_hi + e_lo);
                // e^{mean t} sinh(d t)/d == e_lo * expm1(2 d t)/(2 d)
                es = e_lo * std::expm1(2.0 * spread_ * t) / (2.0 * spread_);
                ecd = 0.5 * spread_ * (e_hi - e_lo);
                esd = ec;
                break;
            }
            case Damping::CriticallyDamped: {
                const double e = std::exp(mean_ * t);
                ec = e;
                es = e * t;
                ecd = 0.0;
                esd = e;
                break;
            }
            case Damping::Underdamped: {
                const double e = std::exp(mean_ * t);
                const double c = std::cos(spread_ * t);
                const double s = std::sin(spread_ * t);
                ec = e * c;
                es = e * s / spread_;
                ecd = -e * spread_ * s;
                esd = e * c;
                break;
            }
        }
        const double b = y1 - mean_ * y0;
        const double y = y0 * ec + b * es;
        // d/dt[e^{mt} f] = m e^{mt} f + e^{mt} f'
        const double dy = mean_ * y + y0 * ecd + b * esd;
        return {y, dy};
    }

private:
    double a1_ = 0.0;
    double a0_ = 0.0;
    double mean_ = 0.0;
    double spread_ = 0.0;
    Damping kind_ = Damping::Overdamped;
};

/// Capacitor voltage and inductor current.
struct VcIl {
    double v_c;
    double i_l;
};

/// Transfer phase: the inductor discharges into the selected channel.
///
///   L di/dt = V_in - R_b i - v
///   C dv/dt = i - g (v - V_F)
///
/// with g = 1/R_led while the LED string conducts and g = 0 when the bus is
/// below V_F (the string is then an open circuit).
class TransferSolution {
public:
    TransferSolution(const ConverterParams& p, const LedStringModel& s, bool conducting = true)
        : v_in_(p.v_in), l_(p.l), r_b_(p.r_b()), c_(s.c_out), v_f_(s.v_f),
          g_(conducting ? 1.0 / s.r_led : 0.0) {
        const double a1 = r_b_ / l_ + g_ / c_;
        const double a0 = (1.0 + g_ * r_b_) / (l_ * c_);
        poly_ = SecondOrder(a1, a0);
        v_eq_ = (v_in_ + r_b_ * g_ * v_f_) / (1.0 + r_b_ * g_);
        i_eq_ = g_ * (v_eq_ - v_f_);
    }

    double v_equilibrium() const { return v_eq_; }
    double i_equilibrium() const { return i_eq_; }
    const SecondOrder& characteristic() const { return poly_; }

    /// Initial slopes of the capacitor voltage and inductor current.
    double dv0(double v0, double i0) const { return (i0 - g_ * (v0 - v_f_)) / c_; }
    double di0(double v0, double i0) const { return (v_in_ - r_b_ * i0 - v0) / l_; }

    VcIl at(double v0, double i0, double t) const {
        const auto v = poly_.at(v0 - v_eq_, dv0(v0, i0), t);
        const auto i = poly_.at(i0 - i_eq_, di0(v0, i0), t);
        return {v_eq_ + v.y, i_eq_ + i.y};
    }

    /// Includes time derivatives, for node-equation checks.
    struct Full {
        double v_c, dv_c, i_l, di_l;
    };
    Full full(double v0, double i0, double t) const {
        const auto v = poly_.at(v0 - v_eq_, dv0(v0, i0), t);
        const auto i = poly_.at(i0 - i_eq_, di0(v0, i0), t);
        return {v_eq_ + v.y, v.dy, i_eq_ + i.y, i.dy};
    }

private:
    double v_in_, l_, r_b_, c_, v_f_, g_;
    SecondOrder poly_;
    double v_eq_ = 0.0;
    double i_eq_ = 0.0;
};

/// Main switch on: L di/dt + R_a i = V_in.
inline double inductor_charge(const ConverterParams& p, double i_l0, double t) {
    detail::require_finite("i_l0", i_l0);
    detail::require_finite("t", t);
    const double r_a = p.r_a();
    if (r_a == 0.0) return i_l0 + p.v_in / p.l * t;
    const double i_inf = p.v_in / r_a;
    return i_l0 + (i_inf - i_l0) * -std::expm1(-t * r_a / p.l);
}

/// LED string fed by its capacitor alone. A bus at or below V_F cannot
/// drive the string, so the capacitor then holds its charge.
inline double capacitor_discharge(const LedStringModel& s, double v_c0, double t) {
    detail::require_finite("v_c0", v_c0);
    detail::require_finite("t", t);
    if (v_c0 <= s.v_f) return v_c0;
    return s.v_f + (v_c0 - s.v_f) * std::exp(-t / s.tau());
}

/// Coupled transfer-phase solution with the LED conducting.
inline VcIl transfer_phase(const ConverterParams& p, const LedStringModel& s, double v_c0,
                           double i_l0, double t) {
    detail::require_finite("v_c0", v_c0);
    detail::require_finite("i_l0", i_l0);
    detail::require_finite("t", t);
    return TransferSolution(p, s, true).at(v_c0, i_l0, t);
}

/// Inductor shorted by the freewheel switch.
inline double freewheel_decay(const ConverterParams& p, double i_l0, double t) {
    detail::require_finite("i_l0", i_l0);
    detail::require_finite("t", t);
    if (p.r_fw == 0.0) return i_l0;
    return i_l0 * std::exp(-t * p.r_fw / p.l);
}

/// Algebraic LED branch read-out; the string never conducts backwards.
inline double led_current(const LedStringModel& s, double v_c, bool on) {
    if (!on) return 0.0;
    return std::max(0.0, (v_c - s.v_f) / s.r_led);
}

inline DampingClass classify_damping(const ConverterParams& p, const LedStringModel& s) {
    return TransferSolution(p, s, true).characteristic().classify();
}

}  // namespace simo
