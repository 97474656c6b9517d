#pragma once

// JSON scenario and sweep files.
//
// Every block and key is optional; missing values take the documented
// defaults. Unknown keys, wrong types and semantic violations are collected
// and reported together.
//
// {
//   "converter": {"v_in", "l", "r_l", "r_q1", "r_q2", "r_fw", "f_c", "i_dc",
//                 "duty_min", "duty_max", "dead_time"},
//   "strings":   [{"v_f", "r_led", "r_sense", "c_out", "i_ref"}, ...],
//   "dimming":   {"ratios": [..], "f_main", "mode": "variable" | "fixed",
//                 "forced_frequency": [..]},
//   "control":   {"k_gain"},
//   "initial":   {"v_c", "i_l", "duty"},
//   "engine":    {"duration", "sample_rate", "decimation", "sample_events",
//                 "record_events", "max_event_log", "event_tolerance",
//                 "v_limit", "i_limit", "saturation_limit", "oracle_step"},
//   "metrics":   {"band", "steady_fraction"},
//   "reference_steps": [{"time", "string", "i_ref"}, ...]
// }
//
// "string" in a reference step is 1-based; omit it to step every string.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "simo/engine.hpp"
#include "simo/metrics.hpp"

namespace simo {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : std::runtime_error(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s;
        for (const auto& x : p) {
            if (!s.empty()) s += "; ";
            s += x;
        }
        return s;
    }

    std::vector<std::string> problems_;
};

struct ScenarioConfig {
    Scenario scenario;
    MetricsOptions metrics;

    bool operator==(const ScenarioConfig&) const = default;
};

namespace detail {

/// Parses text, turning syntax errors into "line L, column C: ..." messages.
inline Json parse_json(const std::string& text) {
    try {
        return Json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const Json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < end; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string what = e.what();
        if (auto p = what.find("syntax error"); p != std::string::npos) what = what.substr(p);
        throw ConfigError({"line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + what});
    }
}

/// Reads one object, recording type errors and unknown keys under a dotted path.
class Reader {
public:
    Reader(const Json& j, std::string path, std::vector<std::string>& errors)
        : j_(j), path_(std::move(path)), errors_(errors) {
        if (!j_.is_object()) errors_.push_back(where() + "expected an object");
    }

    ~Reader() = default;
    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    bool ok() const { return j_.is_object(); }

    void number(const char* key, double& out) {
        if (const Json* v = get(key)) {
            if (v->is_number()) out = v->get<double>();
            else errors_.push_back(where(key) + "expected a number");
        }
    }

    void integer(const char* key, int& out) {
        if (const Json* v = get(key)) {
            if (v->is_number_integer()) out = v->get<int>();
            else errors_.push_back(where(key) + "expected an integer");
        }
    }

    void count(const char* key, std::size_t& out) {
        if (const Json* v = get(key)) {
            if (v->is_number_unsigned()) out = v->get<std::size_t>();
            else errors_.push_back(where(key) + "expected a non-negative integer");
        }
    }

    void boolean(const char* key, bool& out) {
        if (const Json* v = get(key)) {
            if (v->is_boolean()) out = v->get<bool>();
            else errors_.push_back(where(key) + "expected true or false");
        }
    }

    void optional_number(const char* key, std::optional<double>& out) {
        if (const Json* v = get(key)) {
            if (v->is_null()) out.reset();
            else if (v->is_number()) out = v->get<double>();
            else errors_.push_back(where(key) + "expected a number or null");
        }
    }

    void numbers(const char* key, std::vector<double>& out) {
        if (const Json* v = get(key)) {
            if (!v->is_array()) {
                errors_.push_back(where(key) + "expected an array of numbers");
                return;
            }
            std::vector<double> tmp;
            for (const auto& x : *v) {
                if (!x.is_number()) {
                    errors_.push_back(where(key) + "expected an array of numbers");
                    return;
                }
                tmp.push_back(x.get<double>());
            }
            out = std::move(tmp);
        }
    }

    const Json* get(const char* key) {
        seen_.insert(key);
        if (!j_.is_object()) return nullptr;
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    /// Reports keys never asked for.
    void finish() {
        if (!j_.is_object()) return;
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) errors_.push_back("unknown key '" + prefix() + it.key() + "'");
        }
    }

    std::string where(const std::string& key = {}) const { return prefix() + key + (key.empty() ? "" : ": "); }

private:
    std::string prefix() const { return path_.empty() ? std::string{} : path_ + "."; }

    const Json& j_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

inline const char* mode_name(FrequencyMode m) { return m == FrequencyMode::Fixed ? "fixed" : "variable"; }

inline std::optional<FrequencyMode> parse_mode(const std::string& s) {
    if (s == "variable") return FrequencyMode::Variable;
    if (s == "fixed") return FrequencyMode::Fixed;
    return std::nullopt;
}

}  // namespace detail

/// Scenario from a parsed JSON document. Throws ConfigError listing every problem.
inline ScenarioConfig config_from_json(const Json& doc) {
    std::vector<std::string> errors;
    ScenarioConfig cfg;
    Scenario& sc = cfg.scenario;
    detail::Reader top(doc, "", errors);
    if (!top.ok()) throw ConfigError(errors);

    if (const Json* j = top.get("converter")) {
        detail::Reader r(*j, "converter", errors);
        auto& p = sc.params;
        r.number("v_in", p.v_in);
        r.number("l", p.l);
        r.number("r_l", p.r_l);
        r.number("r_q1", p.r_q1);
        r.number("r_q2", p.r_q2);
        r.number("r_fw", p.r_fw);
        r.number("f_c", p.f_c);
        r.number("i_dc", p.i_dc);
        r.number("duty_min", p.duty_min);
        r.number("duty_max", p.duty_max);
        r.number("dead_time", p.dead_time);
        r.finish();
    }

    bool have_ratios = false;
    if (const Json* j = top.get("dimming")) {
        detail::Reader r(*j, "dimming", errors);
        have_ratios = r.ok() && j->contains("ratios");
        r.numbers("ratios", sc.cmd.ratios);
        r.number("f_main", sc.cmd.f_main);
        if (const Json* m = r.get("mode")) {
            auto mode = m->is_string() ? detail::parse_mode(m->get<std::string>()) : std::nullopt;
            if (mode) sc.cmd.mode = *mode;
            else errors.push_back("dimming.mode: expected \"variable\" or \"fixed\"");
        }
        r.numbers("forced_frequency", sc.cmd.forced_frequency);
        r.finish();
    }

    if (const Json* j = top.get("strings")) {
        if (!j->is_array() || j->empty()) {
            errors.push_back("strings: expected a non-empty array of objects");
        } else {
            sc.strings.clear();
            for (std::size_t k = 0; k < j->size(); ++k) {
                LedStringModel s{static_cast<int>(k + 1)};
                detail::Reader r((*j)[k], "strings[" + std::to_string(k) + "]", errors);
                r.number("v_f", s.v_f);
                r.number("r_led", s.r_led);
                r.number("r_sense", s.r_sense);
                r.number("c_out", s.c_out);
                r.number("i_ref", s.i_ref);
                r.finish();
                sc.strings.push_back(s);
            }
        }
    } else if (have_ratios && !sc.cmd.ratios.empty()) {
        sc.strings.clear();
        for (std::size_t k = 0; k < sc.cmd.ratios.size(); ++k) sc.strings.push_back(LedStringModel{static_cast<int>(k + 1)});
    }
    if (!have_ratios) sc.cmd.ratios.assign(sc.strings.size(), DimmingCommand{}.ratios.front());

    if (const Json* j = top.get("control")) {
        detail::Reader r(*j, "control", errors);
        r.number("k_gain", sc.k_gain);
        r.finish();
    }
    if (const Json* j = top.get("initial")) {
        detail::Reader r(*j, "initial", errors);
        r.optional_number("v_c", sc.initial.v_c);
        r.optional_number("i_l", sc.initial.i_l);
        r.number("duty", sc.initial.duty);
        r.finish();
    }
    if (const Json* j = top.get("engine")) {
        detail::Reader r(*j, "engine", errors);
        auto& e = sc.engine;
        r.number("duration", sc.duration);
        r.number("sample_rate", e.sample_rate);
        r.integer("decimation", e.decimation);
        r.boolean("sample_events", e.sample_events);
        r.boolean("record_events", e.record_events);
        r.count("max_event_log", e.max_event_log);
        r.number("event_tolerance", e.event_tolerance);
        r.number("v_limit", e.v_limit);
        r.number("i_limit", e.i_limit);
        r.number("saturation_limit", e.saturation_limit);
        r.number("oracle_step", e.oracle_step);
        r.finish();
    }
    if (const Json* j = top.get("metrics")) {
        detail::Reader r(*j, "metrics", errors);
        r.number("band", cfg.metrics.band);
        r.number("steady_fraction", cfg.metrics.steady_fraction);
        r.finish();
    }
    if (const Json* j = top.get("reference_steps")) {
        if (!j->is_array()) {
            errors.push_back("reference_steps: expected an array of objects");
        } else {
            for (std::size_t k = 0; k < j->size(); ++k) {
                ReferenceStep st;
                detail::Reader r((*j)[k], "reference_steps[" + std::to_string(k) + "]", errors);
                r.number("time", st.time);
                r.number("i_ref", st.i_ref);
                int string = 0;
                r.integer("string", string);
                st.string = string - 1;
                r.finish();
                sc.reference_steps.push_back(st);
            }
        }
    }
    top.finish();

    if (errors.empty()) {
        auto semantic = sc.problems();
        errors.insert(errors.end(), semantic.begin(), semantic.end());
        if (!(cfg.metrics.band > 0.0 && cfg.metrics.band < 1.0)) errors.emplace_back("metrics.band must lie in (0,1)");
        if (!(cfg.metrics.steady_fraction > 0.0 && cfg.metrics.steady_fraction <= 1.0)) {
            errors.emplace_back("metrics.steady_fraction must lie in (0,1]");
        }
    }
    if (!errors.empty()) throw ConfigError(errors);
    return cfg;
}

inline ScenarioConfig parse_config(const std::string& text) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return config_from_json(Json::object());
    return config_from_json(detail::parse_json(text));
}

/// Fully resolved configuration; parsing it gives back the same scenario.
inline Json to_json(const ScenarioConfig& cfg) {
    const Scenario& sc = cfg.scenario;
    const auto& p = sc.params;
    Json j;
    j["converter"] = {{"v_in", p.v_in},         {"l", p.l},       {"r_l", p.r_l},
                      {"r_q1", p.r_q1},         {"r_q2", p.r_q2}, {"r_fw", p.r_fw},
                      {"f_c", p.f_c},           {"i_dc", p.i_dc}, {"duty_min", p.duty_min},
                      {"duty_max", p.duty_max}, {"dead_time", p.dead_time}};
    j["strings"] = Json::array();
    for (const auto& s : sc.strings) {
        j["strings"].push_back(
            {{"v_f", s.v_f}, {"r_led", s.r_led}, {"r_sense", s.r_sense}, {"c_out", s.c_out}, {"i_ref", s.i_ref}});
    }
    j["dimming"] = {{"ratios", sc.cmd.ratios},
                    {"f_main", sc.cmd.f_main},
                    {"mode", detail::mode_name(sc.cmd.mode)},
                    {"forced_frequency", sc.cmd.forced_frequency}};
    j["control"] = {{"k_gain", sc.k_gain}};
    j["initial"] = {{"v_c", sc.initial.v_c ? Json(*sc.initial.v_c) : Json(nullptr)},
                    {"i_l", sc.initial.i_l ? Json(*sc.initial.i_l) : Json(nullptr)},
                    {"duty", sc.initial.duty}};
    const auto& e = sc.engine;
    j["engine"] = {{"duration", sc.duration},
                   {"sample_rate", e.sample_rate},
                   {"decimation", e.decimation},
                   {"sample_events", e.sample_events},
                   {"record_events", e.record_events},
                   {"max_event_log", e.max_event_log},
                   {"event_tolerance", e.event_tolerance},
                   {"v_limit", e.v_limit},
                   {"i_limit", e.i_limit},
                   {"saturation_limit", e.saturation_limit},
                   {"oracle_step", e.oracle_step}};
    j["metrics"] = {{"band", cfg.metrics.band}, {"steady_fraction", cfg.metrics.steady_fraction}};
    j["reference_steps"] = Json::array();
    for (const auto& st : sc.reference_steps) {
        Json s = {{"time", st.time}, {"i_ref", st.i_ref}};
        if (st.string >= 0) s["string"] = st.string + 1;
        j["reference_steps"].push_back(s);
    }
    return j;
}

inline std::string emit_config(const ScenarioConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Sweeps.

enum class SweepParameter { Inductance, Capacitance, Gain, Ratios, FrequencyMode, FloorCurrent, InputVoltage, Reference };

/// One swept value: a number, a ratio vector or a mode name. A number given
/// for frequency_mode forces that dimming frequency (Hz) on every string.
using SweepValue = std::variant<double, std::vector<double>, FrequencyMode>;

struct SweepSpec {
    SweepParameter parameter = SweepParameter::Gain;
    std::vector<SweepValue> values;
    /// Report columns to keep, without the per-string prefix; empty keeps all.
    std::vector<std::string> metrics;
    /// Optional horizon override for every run.
    std::optional<double> duration;
};

inline const char* parameter_name(SweepParameter p) {
    switch (p) {
        case SweepParameter::Inductance: return "l";
        case SweepParameter::Capacitance: return "c_out";
        case SweepParameter::Gain: return "k_gain";
        case SweepParameter::Ratios: return "ratios";
        case SweepParameter::FrequencyMode: return "frequency_mode";
        case SweepParameter::FloorCurrent: return "i_dc";
        case SweepParameter::InputVoltage: return "v_in";
        case SweepParameter::Reference: return "i_ref";
    }
    return "";
}

inline std::string value_label(const SweepValue& v) {
    std::ostringstream os;
    os.precision(10);
    if (const auto* d = std::get_if<double>(&v)) {
        os << *d;
    } else if (const auto* r = std::get_if<std::vector<double>>(&v)) {
        for (std::size_t k = 0; k < r->size(); ++k) os << (k ? ";" : "") << (*r)[k];
    } else {
        os << detail::mode_name(std::get<FrequencyMode>(v));
    }
    return os.str();
}

/// The base scenario with one sweep value applied. Uniform ratio values
/// (a single number) apply to every string.
inline Scenario apply_sweep_value(Scenario sc, SweepParameter p, const SweepValue& v) {
    auto num = [&]() { return std::get<double>(v); };
    switch (p) {
        case SweepParameter::Inductance: sc.params.l = num(); break;
        case SweepParameter::Capacitance:
            for (auto& s : sc.strings) s.c_out = num();
            break;
        case SweepParameter::Gain: sc.k_gain = num(); break;
        case SweepParameter::Ratios:
            if (const auto* d = std::get_if<double>(&v)) sc.cmd.ratios.assign(sc.strings.size(), *d);
            else sc.cmd.ratios = std::get<std::vector<double>>(v);
            break;
        case SweepParameter::FrequencyMode:
            if (const auto* f = std::get_if<double>(&v)) {
                sc.cmd.forced_frequency.assign(sc.strings.size(), *f);
            } else {
                sc.cmd.mode = std::get<FrequencyMode>(v);
                sc.cmd.forced_frequency.clear();
            }
            break;
        case SweepParameter::FloorCurrent: sc.params.i_dc = num(); break;
        case SweepParameter::InputVoltage: sc.params.v_in = num(); break;
        case SweepParameter::Reference:
            for (auto& s : sc.strings) s.i_ref = num();
            break;
    }
    return sc;
}

inline SweepSpec parse_sweep_spec(const std::string& text) {
    const Json doc = detail::parse_json(text);
    std::vector<std::string> errors;
    SweepSpec spec;
    detail::Reader top(doc, "", errors);
    if (!top.ok()) throw ConfigError(errors);

    static const std::vector<std::pair<std::string, SweepParameter>> kNames{
        {"l", SweepParameter::Inductance},         {"c_out", SweepParameter::Capacitance},
        {"k_gain", SweepParameter::Gain},          {"ratios", SweepParameter::Ratios},
        {"frequency_mode", SweepParameter::FrequencyMode}, {"i_dc", SweepParameter::FloorCurrent},
        {"v_in", SweepParameter::InputVoltage},    {"i_ref", SweepParameter::Reference}};
    bool have_parameter = false;
    if (const Json* j = top.get("parameter"); j && j->is_string()) {
        for (const auto& [name, p] : kNames) {
            if (name == j->get<std::string>()) {
                spec.parameter = p;
                have_parameter = true;
            }
        }
        if (!have_parameter) errors.push_back("parameter: unknown knob '" + j->get<std::string>() + "'");
    } else {
        errors.emplace_back("parameter: required, one of l, c_out, k_gain, ratios, frequency_mode, i_dc, v_in, i_ref");
    }

    if (const Json* j = top.get("values"); j && j->is_array()) {
        for (const auto& x : *j) {
            if (!have_parameter) break;
            if (spec.parameter == SweepParameter::FrequencyMode) {
                auto m = x.is_string() ? detail::parse_mode(x.get<std::string>()) : std::nullopt;
                if (m) spec.values.emplace_back(*m);
                else if (x.is_number() && x.get<double>() > 0.0) spec.values.emplace_back(x.get<double>());
                else errors.emplace_back("values: expected \"variable\", \"fixed\" or a frequency in Hz");
            } else if (spec.parameter == SweepParameter::Ratios && x.is_array()) {
                std::vector<double> r;
                for (const auto& y : x) {
                    if (y.is_number()) r.push_back(y.get<double>());
                    else errors.emplace_back("values: ratio vectors must hold numbers");
                }
                spec.values.emplace_back(std::move(r));
            } else if (x.is_number()) {
                spec.values.emplace_back(x.get<double>());
            } else {
                errors.emplace_back("values: expected numbers");
            }
        }
        if (spec.values.size() < 2 && errors.empty()) errors.emplace_back("values: a sweep needs at least 2 values");
    } else {
        errors.emplace_back("values: required array");
    }
    if (const Json* j = top.get("metrics")) {
        if (!j->is_array()) {
            errors.emplace_back("metrics: expected an array of column names");
        } else {
            for (const auto& x : *j) {
                if (x.is_string()) spec.metrics.push_back(x.get<std::string>());
                else errors.emplace_back("metrics: expected column names");
            }
        }
    }
    if (const Json* j = top.get("duration")) {
        if (j->is_number() && j->get<double>() > 0.0) spec.duration = j->get<double>();
        else errors.emplace_back("duration: expected a positive number");
    }
    top.finish();
    if (!errors.empty()) throw ConfigError(errors);
    return spec;
}

}  // namespace simo
