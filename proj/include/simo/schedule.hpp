#pragma once

// Time-multiplexed gate schedule.
//
// One main dimming period is split into N equal charging slots, one per
// string. A string dimmed at f_main/m charges in the first of its m main
// periods only, inside its own slot. All times live on an integer
// nanosecond grid so a schedule is exactly periodic in its hyperperiod.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "simo/circuit.hpp"

namespace simo {

using Nanos = std::int64_t;

inline constexpr double kNanosPerSecond = 1e9;

inline Nanos to_nanos(double seconds) { return static_cast<Nanos>(std::llround(seconds * kNanosPerSecond)); }
inline double to_seconds(Nanos ns) { return static_cast<double>(ns) / kNanosPerSecond; }

class ScheduleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FrequencyMode { Variable, Fixed };

/// Charging duty is frozen above this dimming ratio when dead time is in use.
inline constexpr double kChargeHoldRatio = 0.97;
/// Below this ratio a reduced-frequency string charges for its whole on-time.
inline constexpr double kFullOnChargeRatio = 0.11;

struct DimmingCommand {
    std::vector<double> ratios{0.95, 0.95, 0.95};
    double f_main = 1800.0;
    FrequencyMode mode = FrequencyMode::Variable;
    /// Per string; 0 selects the frequency from the dimming ratio.
    std::vector<double> forced_frequency;

    std::size_t n_strings() const { return ratios.size(); }

    double forced(std::size_t k) const { return k < forced_frequency.size() ? forced_frequency[k] : 0.0; }

    bool operator==(const DimmingCommand&) const = default;

    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        if (ratios.empty()) out.emplace_back("at least one string is required");
        if (ratios.size() > 16) out.emplace_back("at most 16 strings are supported");
        for (std::size_t k = 0; k < ratios.size(); ++k) {
            const double d = ratios[k];
            if (!std::isfinite(d) || d < 0.0 || d > 1.0) {
                out.push_back("string " + std::to_string(k + 1) + ": dimming ratio out of [0,1]");
            }
        }
        if (!std::isfinite(f_main) || f_main <= 0.0) out.emplace_back("f_main must be > 0");
        if (forced_frequency.size() > ratios.size()) {
            out.emplace_back("more forced frequencies than strings");
        }
        for (std::size_t k = 0; k < forced_frequency.size(); ++k) {
            const double f = forced_frequency[k];
            if (!std::isfinite(f) || f < 0.0) {
                out.push_back("string " + std::to_string(k + 1) + ": forced frequency must be >= 0");
            }
        }
        return out;
    }
};

/// Dimming frequency as a function of the dimming ratio.
inline double dimming_frequency(double d, double f_main) {
    if (!std::isfinite(d) || d < 0.0 || d > 1.0) throw ScheduleError("dimming ratio out of [0,1]");
    if (!(f_main > 0.0)) throw ScheduleError("f_main must be > 0");
    if (d >= 0.3) return f_main;
    if (d >= 0.15) return f_main / 2.0;
    return f_main / 3.0;
}

/// Number of main periods in one dimming period of a string dimmed at f_d.
inline int frequency_divisor(double f_d, double f_main) {
    const double m = f_main / f_d;
    const double rounded = std::round(m);
    if (!(rounded >= 1.0) || std::abs(m - rounded) > 1e-9 * rounded) {
        throw ScheduleError("main dimming frequency " + std::to_string(f_main) +
                            " Hz is not divisible by string frequency " + std::to_string(f_d) + " Hz");
    }
    return static_cast<int>(rounded);
}

/// Charging-interval length in seconds for a string with `divisor` main
/// periods per dimming period and N = `n_strings` slots of length
/// 1/(N f_main).
inline double charging_interval(double d, double f_main, double dead_time, int divisor,
                                int n_strings = 3) {
    if (!std::isfinite(d) || d < 0.0 || d > 1.0) throw ScheduleError("dimming ratio out of [0,1]");
    if (d == 0.0) return 0.0;
    const double slot = 1.0 / (n_strings * f_main);
    const double period = divisor / f_main;
    const double on_time = d * period;
    const double cap = slot - dead_time;
    if (divisor == 1) {
        const double held = dead_time > 0.0 ? std::min(d, kChargeHoldRatio) : d;
        return std::min({held * slot, cap, on_time});
    }
    // Reduced frequency: the longest charge that still fits the slot. Below
    // kFullOnChargeRatio the on-time is the binding term, so the charge
    // covers the whole on-window.
    return std::min(cap, on_time);
}

/// Charging interval under the ratio-selected frequency (three slots).
inline double charging_interval(double d, double f_main, double dead_time) {
    if (d == 0.0) return 0.0;
    return charging_interval(d, f_main, dead_time, frequency_divisor(dimming_frequency(d, f_main), f_main), 3);
}

struct StringSchedule {
    double ratio = 0.0;
    double f_d = 0.0;
    int divisor = 1;
    Nanos period = 0;
    Nanos slot_start = 0;
    Nanos charge_len = 0;
    Nanos on_start = 0;
    Nanos on_len = 0;

    bool enabled() const { return on_len > 0; }
};

enum class SwitchKind { BoostEnable, Freewheel, Charge, Dim };

struct SwitchId {
    SwitchKind kind = SwitchKind::BoostEnable;
    int channel = 0;  // 0-based string index for Charge/Dim

    auto operator<=>(const SwitchId&) const = default;

    std::string name() const {
        switch (kind) {
            case SwitchKind::BoostEnable: return "boost_en";
            case SwitchKind::Freewheel: return "freewheel";
            case SwitchKind::Charge: return "charge" + std::to_string(channel + 1);
            case SwitchKind::Dim: return "dim" + std::to_string(channel + 1);
        }
        return "?";
    }
};

struct GateEvent {
    Nanos time = 0;
    SwitchId sw;
    bool level = false;

    bool operator==(const GateEvent&) const = default;
};

/// Half-open high interval [begin, end); end may exceed the hyperperiod when
/// the interval wraps.
struct Interval {
    Nanos begin = 0;
    Nanos end = 0;
    Nanos length() const { return end - begin; }
};

struct SwitchSchedule {
    Nanos hyperperiod = 0;
    Nanos slot = 0;
    Nanos main_period = 0;
    Nanos dead_time = 0;
    Nanos boost_period = 0;
    double f_main = 0.0;
    std::vector<StringSchedule> strings;
    /// Sorted by (time, switch). Every switch has an event at t = 0 giving its
    /// initial level; later events are level changes.
    std::vector<GateEvent> events;

    std::size_t n_strings() const { return strings.size(); }

    std::vector<SwitchId> switches() const {
        std::vector<SwitchId> out{{SwitchKind::BoostEnable, 0}, {SwitchKind::Freewheel, 0}};
        for (std::size_t k = 0; k < strings.size(); ++k) {
            out.push_back({SwitchKind::Charge, static_cast<int>(k)});
        }
        for (std::size_t k = 0; k < strings.size(); ++k) {
            out.push_back({SwitchKind::Dim, static_cast<int>(k)});
        }
        return out;
    }

    /// Gate level at absolute time t (periodic extension).
    bool level_at(SwitchId sw, Nanos t) const {
        const Nanos local = ((t % hyperperiod) + hyperperiod) % hyperperiod;
        bool level = false;
        for (const auto& e : events) {
            if (e.time > local) break;
            if (e.sw == sw) level = e.level;
        }
        return level;
    }

    /// High intervals of one switch within [0, hyperperiod), wrap merged.
    std::vector<Interval> high_intervals(SwitchId sw) const {
        std::vector<Interval> out;
        std::optional<Nanos> open;
        for (const auto& e : events) {
            if (!(e.sw == sw)) continue;
            if (e.level && !open) open = e.time;
            if (!e.level && open) {
                if (e.time > *open) out.push_back({*open, e.time});
                open.reset();
            }
        }
        if (open) {
            if (!out.empty() && out.front().begin == 0) {
                const Nanos tail = out.front().end;
                out.erase(out.begin());
                out.push_back({*open, hyperperiod + tail});
            } else {
                out.push_back({*open, hyperperiod});
            }
        }
        return out;
    }

    /// Charge window containing absolute time t, if any.
    struct ActiveCharge {
        std::size_t string;
        Nanos window_start;
        Nanos window_end;
    };
    std::optional<ActiveCharge> active_charge(Nanos t) const {
        const Nanos base = (t / hyperperiod) * hyperperiod;
        for (std::size_t k = 0; k < strings.size(); ++k) {
            for (const auto& iv : high_intervals({SwitchKind::Charge, static_cast<int>(k)})) {
                for (Nanos shift : {base - hyperperiod, base}) {
                    const Nanos b = iv.begin + shift;
                    const Nanos e = iv.end + shift;
                    if (t >= b && t < e) return ActiveCharge{k, b, e};
                }
            }
        }
        return std::nullopt;
    }
};

namespace detail {

inline std::vector<Interval> merge(std::vector<Interval> v) {
    std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
    std::vector<Interval> out;
    for (const auto& iv : v) {
        if (iv.length() <= 0) continue;
        if (!out.empty() && iv.begin <= out.back().end) {
            out.back().end = std::max(out.back().end, iv.end);
        } else {
            out.push_back(iv);
        }
    }
    return out;
}

/// Folds intervals into [0, h), splitting any that wrap.
inline std::vector<Interval> fold(const std::vector<Interval>& in, Nanos h) {
    std::vector<Interval> out;
    for (auto iv : in) {
        if (iv.length() <= 0) continue;
        if (iv.length() >= h) {
            out.push_back({0, h});
            continue;
        }
        const Nanos b = ((iv.begin % h) + h) % h;
        const Nanos e = b + iv.length();
        if (e <= h) {
            out.push_back({b, e});
        } else {
            out.push_back({b, h});
            out.push_back({0, e - h});
        }
    }
    return merge(std::move(out));
}

inline void emit(std::vector<GateEvent>& events, SwitchId sw, const std::vector<Interval>& high, Nanos h) {
    const bool initial = !high.empty() && high.front().begin == 0;
    events.push_back({0, sw, initial});
    for (const auto& iv : high) {
        if (iv.begin > 0) events.push_back({iv.begin, sw, true});
        if (iv.end < h) events.push_back({iv.end, sw, false});
    }
}

inline std::vector<Interval> complement(const std::vector<Interval>& high, Nanos h) {
    std::vector<Interval> out;
    Nanos cursor = 0;
    for (const auto& iv : high) {
        if (iv.begin > cursor) out.push_back({cursor, iv.begin});
        cursor = std::max(cursor, iv.end);
    }
    if (cursor < h) out.push_back({cursor, h});
    return out;
}

}  // namespace detail

/// Builds the gate schedule for all strings. Throws ScheduleError when a
/// charging interval cannot fit its slot or a forced frequency does not
/// divide the main frequency.
inline SwitchSchedule build_schedule(const DimmingCommand& cmd, const ConverterParams& params) {
    if (auto p = cmd.problems(); !p.empty()) throw ScheduleError(p.front());
    const int n = static_cast<int>(cmd.n_strings());

    SwitchSchedule s;
    s.f_main = cmd.f_main;
    s.slot = static_cast<Nanos>(std::llround(kNanosPerSecond / (n * cmd.f_main)));
    s.main_period = s.slot * n;
    s.dead_time = to_nanos(params.dead_time);
    s.boost_period = to_nanos(params.t_c());
    if (s.slot <= s.dead_time) throw ScheduleError("dead time does not fit a charging slot");
    if (s.boost_period <= 0) throw ScheduleError("boost period below the 1 ns grid");

    const double f_main_q = 1.0 / to_seconds(s.main_period);

    Nanos hyper = s.main_period;
    for (int k = 0; k < n; ++k) {
        StringSchedule ss;
        const double d = cmd.ratios[k];
        ss.ratio = d;
        if (cmd.forced(k) > 0.0) {
            ss.divisor = frequency_divisor(cmd.forced(k), cmd.f_main);
        } else if (cmd.mode == FrequencyMode::Variable) {
            ss.divisor = frequency_divisor(dimming_frequency(d, cmd.f_main), cmd.f_main);
        } else {
            ss.divisor = 1;
        }
        ss.f_d = cmd.f_main / ss.divisor;
        ss.period = s.main_period * ss.divisor;
        ss.slot_start = s.slot * k;
        ss.on_start = ss.slot_start;
        ss.on_len = static_cast<Nanos>(std::llround(d * static_cast<double>(ss.period)));
        if (d > 0.0) {
            const double charge =
                charging_interval(d, f_main_q, to_seconds(s.dead_time), ss.divisor, n) * (1.0 + 1e-12);
            ss.charge_len = std::min({static_cast<Nanos>(std::floor(charge * kNanosPerSecond)),
                                      s.slot - s.dead_time, ss.on_len});
            if (ss.charge_len <= 0) {
                throw ScheduleError("string " + std::to_string(k + 1) +
                                    ": charging interval does not fit its slot after dead time");
            }
            hyper = std::lcm(hyper, ss.period);
        } else {
            ss.on_len = 0;
            ss.charge_len = 0;
        }
        s.strings.push_back(ss);
    }
    s.hyperperiod = hyper;

    std::vector<Interval> all_charge;
    std::vector<GateEvent> events;
    std::vector<std::vector<Interval>> charge(n), dim(n);
    for (int k = 0; k < n; ++k) {
        const auto& ss = s.strings[k];
        if (!ss.enabled()) continue;
        std::vector<Interval> c, d;
        for (Nanos base = 0; base < hyper; base += ss.period) {
            c.push_back({base + ss.slot_start, base + ss.slot_start + ss.charge_len});
            d.push_back({base + ss.on_start, base + ss.on_start + ss.on_len});
        }
        charge[k] = detail::fold(c, hyper);
        dim[k] = detail::fold(d, hyper);
        all_charge.insert(all_charge.end(), charge[k].begin(), charge[k].end());
    }
    const auto boost = detail::merge(all_charge);
    detail::emit(events, {SwitchKind::BoostEnable, 0}, boost, hyper);
    detail::emit(events, {SwitchKind::Freewheel, 0}, detail::complement(boost, hyper), hyper);
    for (int k = 0; k < n; ++k) detail::emit(events, {SwitchKind::Charge, k}, charge[k], hyper);
    for (int k = 0; k < n; ++k) detail::emit(events, {SwitchKind::Dim, k}, dim[k], hyper);

    std::stable_sort(events.begin(), events.end(), [](const GateEvent& a, const GateEvent& b) {
        if (a.time != b.time) return a.time < b.time;
        return a.sw < b.sw;
    });
    s.events = std::move(events);
    return s;
}

struct Violation {
    std::string rule;
    std::string first;
    std::string second;
    Nanos time = 0;
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::size_t count(const std::string& rule) const {
        return static_cast<std::size_t>(std::count_if(violations.begin(), violations.end(),
                                                      [&](const Violation& v) { return v.rule == rule; }));
    }
};

inline std::ostream& operator<<(std::ostream& os, const ValidationReport& r) {
    if (r.ok()) return os << "schedule ok\n";
    for (const auto& v : r.violations) {
        os << v.rule << " at " << v.time << " ns: " << v.first;
        if (!v.second.empty()) os << " / " << v.second;
        if (!v.detail.empty()) os << " (" << v.detail << ")";
        os << '\n';
    }
    return os;
}

/// Checks the schedule invariants. Intervals are recovered from the event
/// list, so hand-edited schedules are checked on what they actually contain.
inline ValidationReport validate_schedule(const SwitchSchedule& s, const DimmingCommand& cmd,
                                          const ConverterParams& params) {
    ValidationReport report;
    auto add = [&](std::string rule, std::string a, std::string b, Nanos t, std::string detail = {}) {
        report.violations.push_back({std::move(rule), std::move(a), std::move(b), t, std::move(detail)});
    };
    const Nanos h = s.hyperperiod;
    const Nanos dead = std::max(s.dead_time, to_nanos(params.dead_time));
    if (h <= 0) {
        add("hyperperiod", "schedule", "", 0, "non-positive hyperperiod");
        return report;
    }

    for (std::size_t i = 0; i < s.events.size(); ++i) {
        const auto& e = s.events[i];
        if (e.time < 0 || e.time >= h) add("range", e.sw.name(), "", e.time, "event outside [0, hyperperiod)");
        if (i > 0) {
            const auto& p = s.events[i - 1];
            if (e.time < p.time || (e.time == p.time && !(p.sw < e.sw))) {
                add("order", p.sw.name(), e.sw.name(), e.time, "events not sorted");
            }
        }
    }

    const std::size_t n = s.n_strings();
    for (std::size_t k = 0; k < n; ++k) {
        const auto& ss = s.strings[k];
        const std::string name = "string" + std::to_string(k + 1);
        if (ss.f_d > 0.0) {
            const double m = s.f_main / ss.f_d;
            if (std::abs(m - std::round(m)) > 1e-9 * std::max(1.0, m) || std::round(m) < 1.0) {
                add("divisibility", name, "", 0,
                    std::to_string(ss.f_d) + " Hz does not divide " + std::to_string(s.f_main) + " Hz");
            }
        }
        // A disabled string has no events, so its period need not tile the hyperperiod.
        if (ss.enabled() && ss.period > 0 && h % ss.period != 0) {
            add("divisibility", name, "", 0, "hyperperiod is not a multiple of the dimming period");
        }
        if (ss.charge_len > s.slot - s.dead_time) {
            add("slot_fit", name, "", ss.slot_start, "charging interval longer than slot minus dead time");
        }
    }

    // Charge selectors of distinct strings: no overlap, dead time between.
    std::vector<std::vector<Interval>> charge(n), dim(n);
    for (std::size_t k = 0; k < n; ++k) {
        charge[k] = s.high_intervals({SwitchKind::Charge, static_cast<int>(k)});
        dim[k] = s.high_intervals({SwitchKind::Dim, static_cast<int>(k)});
    }
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            for (const auto& x : charge[a]) {
                for (const auto& y0 : charge[b]) {
                    for (Nanos shift : {-h, Nanos{0}, h}) {
                        const Interval y{y0.begin + shift, y0.end + shift};
                        const Nanos overlap = std::min(x.end, y.end) - std::max(x.begin, y.begin);
                        const std::string na = "charge" + std::to_string(a + 1);
                        const std::string nb = "charge" + std::to_string(b + 1);
                        if (overlap > 0) {
                            add("overlap", na, nb, std::max(x.begin, y.begin) % h,
                                std::to_string(overlap) + " ns overlap");
                        } else {
                            const Nanos gap = -overlap;
                            if (gap < dead) {
                                add("dead_time", na, nb, std::min(x.end, y.end) % h,
                                    "gap " + std::to_string(gap) + " ns < " + std::to_string(dead) + " ns");
                            }
                        }
                    }
                }
            }
        }
    }

    // Every charge window lies inside the same string's LED on-window.
    for (std::size_t k = 0; k < n; ++k) {
        for (const auto& c : charge[k]) {
            bool inside = false;
            for (const auto& d : dim[k]) {
                for (Nanos shift : {-h, Nanos{0}, h}) {
                    if (c.begin >= d.begin + shift && c.end <= d.end + shift) inside = true;
                }
            }
            if (!inside) {
                add("containment", "charge" + std::to_string(k + 1), "dim" + std::to_string(k + 1), c.begin % h,
                    "charge window not inside the LED on-window");
            }
        }
    }

    // Aggregate on-time per string equals d * hyperperiod within the grid quantum.
    for (std::size_t k = 0; k < n && k < cmd.ratios.size(); ++k) {
        Nanos on = 0;
        for (const auto& d : dim[k]) on += d.length();
        const double expected = cmd.ratios[k] * static_cast<double>(h);
        const Nanos reps = s.strings[k].period > 0 ? h / s.strings[k].period : 1;
        if (std::abs(static_cast<double>(on) - expected) > static_cast<double>(reps)) {
            add("on_time", "dim" + std::to_string(k + 1), "", 0,
                std::to_string(on) + " ns on vs " + std::to_string(expected) + " ns expected");
        }
    }
    return report;
}

/// Schedule export: `time_ns,switch,level`, one row per event.
inline void write_schedule_csv(std::ostream& os, const SwitchSchedule& s) {
    os << "time_ns,switch,level\n";
    for (const auto& e : s.events) os << e.time << ',' << e.sw.name() << ',' << (e.level ? 1 : 0) << '\n';
}

}  // namespace simo
