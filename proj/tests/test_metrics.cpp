#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "simo/metrics.hpp"

using namespace simo;

TEST(CurrentImbalance, MeasuredExamples) {
    const auto a = current_imbalance({0.344, 0.344, 0.343});
    EXPECT_NEAR(a[0], 0.097, 0.01);
    EXPECT_NEAR(a[1], 0.097, 0.01);
    EXPECT_NEAR(a[2], -0.194, 0.01);
    const auto b = current_imbalance({0.346, 0.350, 0.351});
    EXPECT_NEAR(b[0], -0.86, 0.01);
    EXPECT_NEAR(b[1], 0.29, 0.01);
    EXPECT_NEAR(b[2], 0.57, 0.01);
}

TEST(CurrentImbalance, SumsToZeroAndRejectsDegenerateInput) {
    const auto v = current_imbalance({0.1, 0.7, 0.25, 0.33});
    double sum = 0.0;
    for (double x : v) sum += x;
    EXPECT_NEAR(sum, 0.0, 1e-12);
    EXPECT_THROW(current_imbalance({}), MetricsError);
    EXPECT_THROW(current_imbalance({0.0, 0.0}), MetricsError);
}

TEST(CurrentDeviation, Examples) {
    EXPECT_NEAR(current_deviation(0.344, 0.35), -1.714, 1e-3);
    EXPECT_NEAR(current_deviation(0.35, 0.35), 0.0, 1e-12);
    EXPECT_NEAR(current_deviation(0.351, 0.35), 0.286, 1e-3);
    EXPECT_THROW(current_deviation(0.3, 0.0), MetricsError);
}

TEST(PowerBreakdown, SenseResistorAtReference) {
    // Constant 0.35 A for 1 ms of on-time.
    LedStringModel m;
    StringPeriodStats s;
    s.on_time = 1e-3;
    s.led_charge = 0.35 * 1e-3;
    s.led_square = 0.35 * 0.35 * 1e-3;
    s.forward_energy = m.v_f * s.led_charge;
    s.power = (m.v_f + 0.35 * m.r_led) * s.led_charge;
    const auto p = power_breakdown(s, m);
    EXPECT_NEAR(p.p_cs, 12.25e-3, 1e-12);
    EXPECT_NEAR(p.p_swg, 12.25e-3, 1e-12);
    EXPECT_NEAR(p.p_led, 11.23 * 0.35, 1e-12);
    EXPECT_NEAR(p.total(), s.power / s.on_time, 1e-12);
}

TEST(PowerBreakdown, OffStringIsZero) {
    const auto p = power_breakdown(StringPeriodStats{}, LedStringModel{});
    EXPECT_EQ(p.total(), 0.0);
}

TEST(Settling, ConstantSeriesSettlesImmediately) {
    std::vector<SeriesPoint> s;
    for (int j = 0; j < 10; ++j) s.push_back({j * 0.1, 2.0});
    const auto m = settling_metrics(s, 2.0);
    ASSERT_TRUE(m.settled());
    EXPECT_EQ(*m.settling_time, 0.0);
    EXPECT_EQ(m.overshoot, 0.0);
    EXPECT_EQ(m.undershoot, 0.0);
}

TEST(Settling, FirstOrderApproach) {
    // 1 - exp(-t/tau) enters the 2 % band at tau ln 50.
    const double tau = 0.01;
    std::vector<SeriesPoint> s;
    for (int j = 0; j <= 20000; ++j) {
        const double t = j * 1e-5;
        s.push_back({t, 1.0 - std::exp(-t / tau)});
    }
    const auto m = settling_metrics(s, 1.0);
    ASSERT_TRUE(m.settled());
    EXPECT_NEAR(*m.settling_time, tau * std::log(50.0), 1e-6);
    EXPECT_EQ(m.overshoot, 0.0);
    // Never reached: undershoot is the final shortfall.
    EXPECT_NEAR(m.undershoot, 100.0 * std::exp(-0.2 / tau), 1e-12);
}

TEST(Settling, ShiftAndScaleInvariance) {
    std::vector<SeriesPoint> a, b;
    for (int j = 0; j <= 4000; ++j) {
        const double t = j * 1e-4;
        const double v = 1.0 - std::exp(-t / 0.02) * std::cos(300.0 * t);
        a.push_back({t, v});
        b.push_back({t + 3.0, 5.0 * v});
    }
    const auto ma = settling_metrics(a, 1.0);
    const auto mb = settling_metrics(b, 5.0);
    ASSERT_TRUE(ma.settled());
    ASSERT_TRUE(mb.settled());
    EXPECT_NEAR(*ma.settling_time, *mb.settling_time, 1e-9);
    EXPECT_NEAR(ma.overshoot, mb.overshoot, 1e-9);
    EXPECT_NEAR(ma.undershoot, mb.undershoot, 1e-9);
    EXPECT_GT(ma.overshoot, 0.0);
}

TEST(Settling, NeverSettles) {
    std::vector<SeriesPoint> s{{0.0, 0.0}, {1.0, 0.5}, {2.0, 0.9}};
    EXPECT_FALSE(settling_metrics(s, 1.0).settled());
    EXPECT_THROW(settling_metrics({}, 1.0), MetricsError);
}

namespace {

// Loop gain w0/s: unity gain at w0 and a constant -90 degrees.
struct IntegratorLoop {
    double w0 = 2.0 * std::numbers::pi * 100.0;
    double operating_duty() const { return 0.5; }
    double max_probe_frequency() const { return 40e3; }
    std::vector<ProbeSample> probe(double f, double amp, int, int cycles) const {
        const double w = 2.0 * std::numbers::pi * f;
        std::vector<ProbeSample> out;
        const int n = 200 * cycles;
        for (int j = 0; j < n; ++j) {
            const double t = j / (200.0 * f);
            out.push_back({t, amp * w0 / w * std::cos(w * t), amp * std::sin(w * t)});
        }
        return out;
    }
};

}  // namespace

TEST(FrequencyResponse, PureIntegrator) {
    IntegratorLoop loop;
    const auto fr = loop_frequency_response(loop, log_frequencies(10.0, 1000.0, 10));
    for (const auto& p : fr.points) {
        EXPECT_NEAR(p.phase_deg, -90.0, 1e-6);
        EXPECT_NEAR(p.gain_db, 20.0 * std::log10(100.0 / p.frequency), 1e-6);
    }
    ASSERT_TRUE(fr.crossover.has_value());
    EXPECT_NEAR(*fr.crossover, 100.0, 1e-6);
    EXPECT_NEAR(*fr.phase_margin, 90.0, 1e-6);
}

TEST(FrequencyResponse, RejectsProbeAboveTenthOfSwitching) {
    IntegratorLoop loop;
    EXPECT_THROW(loop_frequency_response(loop, {50e3}), MetricsError);
}

TEST(LogFrequencies, CoversRange) {
    const auto f = log_frequencies(50.0, 1000.0, 20);
    EXPECT_DOUBLE_EQ(f.front(), 50.0);
    EXPECT_GE(f.back(), 1000.0 * (1 - 1e-12));
    for (std::size_t j = 1; j < f.size(); ++j) EXPECT_NEAR(f[j] / f[j - 1], std::pow(10.0, 0.05), 1e-12);
}

TEST(Efficiency, AgreesWithAuditForConstantSourceCurrent) {
    // Both definitions coincide when the source current and the string
    // voltage and current are constant and storage does not change.
    WindowTotals w;
    w.duration = 1e-3;
    const double i_in = 1.2, v_in = 7.8;
    w.source_energy = v_in * i_in * w.duration;
    w.source_square = i_in * i_in * w.duration;
    for (int k = 0; k < 3; ++k) {
        StringPeriodStats s;
        const double v = 11.3, i = 0.8;
        s.on_time = w.duration;
        s.on_v_square = v * v * w.duration;
        s.led_square = i * i * w.duration;
        s.led_charge = i * w.duration;
        s.power = v * i * w.duration;
        w.strings.push_back(s);
    }
    const double expected = 3 * 11.3 * 0.8 / (7.8 * 1.2);
    EXPECT_NEAR(rms_efficiency(w, v_in), expected, 1e-12);
    EXPECT_NEAR(audit_efficiency(w), expected, 1e-12);
}

TEST(Efficiency, AllStringsOffIsZero) {
    WindowTotals w;
    w.duration = 1e-3;
    w.source_square = 1e-3;
    w.source_energy = 7.8e-3;
    w.strings.resize(3);
    EXPECT_EQ(rms_efficiency(w, 7.8), 0.0);
    EXPECT_EQ(audit_efficiency(w), 0.0);
    EXPECT_THROW(rms_efficiency(WindowTotals{}, 7.8), MetricsError);
}

TEST(ComputeMetrics, SimulatedRunIsConsistent) {
    Scenario sc;
    sc.cmd.ratios = {0.9, 0.23, 0.04};
    sc.duration = 0.4;
    sc.engine.sample_rate = 0.0;
    const auto tr = simulate(sc);
    const auto rep = compute_metrics(tr, sc);
    ASSERT_FALSE(rep.diverged);
    EXPECT_LT(std::abs(rep.energy_residual), 0.1);
    EXPECT_GT(rep.efficiency, 0.0);
    EXPECT_LT(rep.efficiency, 1.0);
    EXPECT_LT(rep.audit_efficiency, 1.0);
    double imb = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& s = rep.strings[k];
        imb += s.imbalance;
        EXPECT_NEAR(s.avg_on_current, 0.35, 0.01 * 0.35);
        EXPECT_NEAR(s.deviation, current_deviation(s.avg_on_current, 0.35), 1e-12);
        // Gated by the dimming switch, so it scales with the root of the ratio.
        EXPECT_NEAR(s.rms_voltage, s.mean_vc * std::sqrt(sc.cmd.ratios[k]), 0.01 * s.rms_voltage);
    }
    EXPECT_NEAR(imb, 0.0, 1e-9);
    EXPECT_EQ(report_values(rep).size(), report_columns(3).size());
}

TEST(ComputeMetrics, ReportColumnsAreStable) {
    const auto c = report_columns(2);
    ASSERT_EQ(c.size(), 4u + 2u * 13u);
    EXPECT_EQ(c[0], "status");
    EXPECT_EQ(c[1], "efficiency");
    EXPECT_EQ(c[4], "s1_avg_on_current_A");
    EXPECT_EQ(c.back(), "s2_p_swg_W");
}
