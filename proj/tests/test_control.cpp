#include <gtest/gtest.h>

#include "simo/control.hpp"

using namespace simo;

namespace {

ControllerState enabled_state(double duty = 0.5, double k = 700.0) {
    ConverterParams p;
    auto s = ControllerState::initial(1, p, k, duty);
    s.strings[0].enabled = true;
    return s;
}

}  // namespace

TEST(ReferenceVoltage, Examples) {
    LedStringModel s;
    s.i_ref = 0.35;
    EXPECT_NEAR(reference_voltage(s), 11.30, 1e-12);
    s.i_ref = 0.0;
    EXPECT_DOUBLE_EQ(reference_voltage(s), s.v_f);
    s.i_ref = 0.035;
    EXPECT_NEAR(reference_voltage(s), 11.237, 1e-12);
}

TEST(IntegratorUpdate, ZeroErrorIsAFixedPoint) {
    LedStringModel s;
    auto st = enabled_state(0.42);
    for (int j = 0; j < 1000; ++j) st = integrator_update(st, 0, s, 0.0);
    EXPECT_EQ(st.strings[0].duty, 0.42);
    EXPECT_EQ(st.strings[0].acc, 0.0);
}

TEST(IntegratorUpdate, GainAndSign) {
    LedStringModel s;
    const auto st = integrator_update(enabled_state(0.5), 0, s, 0.1 * 2.5e-6);
    EXPECT_NEAR(st.strings[0].duty, 0.5 - 8.75e-4, 1e-15);
    EXPECT_NEAR(st.strings[0].acc, 2.5e-7, 1e-20);
    const auto up = integrator_update(enabled_state(0.5), 0, s, -0.1 * 2.5e-6);
    EXPECT_NEAR(up.strings[0].duty, 0.5 + 8.75e-4, 1e-15);
}

TEST(IntegratorUpdate, ClampFreezesAccumulator) {
    LedStringModel s;
    auto st = enabled_state(0.0);
    st = integrator_update(st, 0, s, 1e-6);
    EXPECT_EQ(st.strings[0].duty, st.duty_min);
    EXPECT_EQ(st.strings[0].acc, 0.0);

    auto hi = enabled_state(0.95);
    hi = integrator_update(hi, 0, s, -1e-3);
    EXPECT_EQ(hi.strings[0].duty, hi.duty_max);
    EXPECT_EQ(hi.strings[0].acc, 0.0);
}

TEST(IntegratorUpdate, PartialClampIntegratesOnlyTheUsedPart) {
    LedStringModel s;
    auto st = enabled_state(0.949);
    const double gain = st.k_gain / s.r_led;
    st = integrator_update(st, 0, s, -1e-5);
    EXPECT_EQ(st.strings[0].duty, 0.95);
    EXPECT_NEAR(st.strings[0].acc, -0.001 / gain, 1e-15);
}

TEST(IntegratorUpdate, DisabledStringHolds) {
    LedStringModel s;
    auto st = enabled_state(0.3);
    st.strings[0].enabled = false;
    const auto before = st;
    st = integrator_update(st, 0, s, 5e-6);
    EXPECT_EQ(st, before);
}

TEST(IntegratorUpdate, PersistentErrorDrivesDutyMonotonically) {
    LedStringModel s;
    auto st = enabled_state(0.5);
    double prev = st.strings[0].duty;
    for (int j = 0; j < 2000; ++j) {
        st = integrator_update(st, 0, s, 1e-6);
        const double d = st.strings[0].duty;
        if (prev > st.duty_min) EXPECT_LT(d, prev);
        EXPECT_GE(d, st.duty_min);
        prev = d;
    }
    EXPECT_EQ(prev, st.duty_min);
    for (int j = 0; j < 4000; ++j) {
        st = integrator_update(st, 0, s, -1e-6);
        const double d = st.strings[0].duty;
        if (prev < st.duty_max) EXPECT_GT(d, prev);
        EXPECT_LE(d, st.duty_max);
        prev = d;
    }
    EXPECT_EQ(prev, st.duty_max);
}

TEST(BoostGate, FollowsTheChargingStringsDuty) {
    ConverterParams p;
    DimmingCommand cmd;
    cmd.ratios = {0.9, 0.9, 0.9};
    const auto sched = build_schedule(cmd, p);
    auto st = ControllerState::initial(3, p, 700.0, 0.5);
    st.strings[1].duty = 0.4;
    const double t0 = to_seconds(sched.strings[1].slot_start) + 10 * p.t_c();
    int high = 0, total = 400;
    for (int j = 0; j < total; ++j) high += boost_gate(st, sched, t0 + (j + 0.5) / total * p.t_c()) ? 1 : 0;
    EXPECT_EQ(high, 160);
}

TEST(BoostGate, OffInDeadTime) {
    ConverterParams p;
    DimmingCommand cmd;
    cmd.ratios = {0.9, 0.9, 0.9};
    const auto sched = build_schedule(cmd, p);
    const auto st = ControllerState::initial(3, p, 700.0, 0.95);
    const Nanos gap = sched.strings[0].slot_start + sched.strings[0].charge_len + 100;
    EXPECT_FALSE(boost_gate(st, sched, to_seconds(gap)));
}

TEST(BoostGate, MinimumWidthPulse) {
    ConverterParams p;
    p.duty_min = 0.028;
    DimmingCommand cmd;
    cmd.ratios = {0.9, 0.9, 0.9};
    const auto sched = build_schedule(cmd, p);
    const auto st = ControllerState::initial(3, p, 700.0, 0.0);
    EXPECT_EQ(st.strings[0].duty, 0.028);
    EXPECT_TRUE(boost_gate(st, sched, 0.02 * p.t_c()));
    EXPECT_FALSE(boost_gate(st, sched, 0.03 * p.t_c()));
}
