#include <gtest/gtest.h>

#include <sstream>

#include "trap/dynamics.hpp"

using namespace trap;

namespace {

DriveParams no_drive() {
    DriveParams d;
    d.v_ac_amplitude = 0.0;
    return d;
}

VoltageState central(double v) {
    VoltageState s;
    s.central = v;
    return s;
}

// Per-particle drive used for sweeps that must cross the null before ejection.
DriveParams sweep_drive(double gamma) {
    const double beta = stokes_drag() / sphere_mass();
    const double w = 2.0 * std::numbers::pi * 60.0;
    const double f = w * w / (w * w + beta * beta);
    return DriveParams::from_rms(std::max(963.0, 963.0 * 2.1e-3 / (std::abs(gamma) * std::sqrt(f))));
}

double balance_voltage(const TrapModel& m, double gamma) {
    const double y = find_ac_null(m.geometry()).y_null;
    return standard_gravity / (std::abs(gamma) * std::abs(m.dc_rail().gradient(m.geometry().center_x(), y).y));
}

}  // namespace

TEST(Step, FreeFall) {
    SimConfig cfg;
    cfg.drag = 0.0;
    const double y0 = 20e-3;
    Simulator sim(TrapModel(default_geometry(), no_drive()), {Particle::with_gamma(0, -1e-3, {1.6e-3, y0, 0.0})}, cfg);
    sim.run_for(10e-3);
    const double t = sim.time();
    const double want = y0 - 0.5 * standard_gravity * t * t;
    EXPECT_NEAR(sim.particles()[0].r[1], want, 1e-8 * want);
}

TEST(Step, DragDecaysVelocityExponentially) {
    SimConfig cfg;
    Particle p = Particle::with_gamma(0, -1e-3, {1.6e-3, 20e-3, 0.0});
    p.v = {0.01, 0.0, -0.02};
    Simulator sim(TrapModel(default_geometry(), no_drive()), {p}, cfg);
    sim.run_for(5e-3);
    const double decay = std::exp(-cfg.drag / p.m * sim.time());
    EXPECT_NEAR(sim.particles()[0].v[0], 0.01 * decay, 1e-6 * 0.01 * decay);
    EXPECT_NEAR(sim.particles()[0].v[2], -0.02 * decay, 1e-6 * 0.02 * decay);
}

TEST(Step, HarmonicWellPeriod) {
    // quadratic potential phi = kappa z^2 / 2, i.e. E_z = -kappa z, plus a uniform E_y holding off gravity
    SimConfig cfg;
    cfg.drag = 0.0;
    const double kappa = 2e6;  // V/m^2
    Particle p = Particle::with_gamma(0, 2e-3, {1.6e-3, 20e-3, 1e-3});
    Simulator sim(TrapModel(default_geometry(), no_drive()), {p}, cfg);
    sim.set_external_field([&](const Vec3d& r) { return Vec3d{0.0, standard_gravity / p.gamma(), -kappa * r[2]}; });
    const double period = 2.0 * std::numbers::pi * std::sqrt(p.m / (p.q * kappa));
    // find successive upward zero crossings of z
    std::vector<double> crossings;
    double prev = sim.particles()[0].r[2];
    while (crossings.size() < 3 && sim.time() < 5.0 * period) {
        sim.step();
        const double z = sim.particles()[0].r[2];
        if (prev < 0.0 && z >= 0.0) crossings.push_back(sim.time() - sim.config().dt * z / (z - prev));
        prev = z;
    }
    ASSERT_EQ(crossings.size(), 3u);
    EXPECT_NEAR((crossings[2] - crossings[0]) / 2.0, period, 1e-3 * period);
}

TEST(Step, EnergyConservedWithoutDragOrDrive) {
    SimConfig cfg;
    cfg.drag = 0.0;
    const TrapModel m(default_geometry(), no_drive());
    const VoltageState v = central(-100.0);
    Particle p = Particle::with_gamma(0, -2.1e-3, {1.6e-3, 5e-3, 0.0});
    Simulator sim(m, {p}, cfg, v);
    auto energy = [&](const Particle& q) {
        const double ke = 0.5 * q.m * (q.v[0] * q.v[0] + q.v[1] * q.v[1] + q.v[2] * q.v[2]);
        return ke + q.m * standard_gravity * q.r[1] + q.q * m.static_potential(v, q.r[0], q.r[1], q.r[2]);
    };
    const double e0 = energy(sim.particles()[0]);
    for (int k = 0; k < 10000; ++k) sim.step();
    ASSERT_TRUE(sim.particles()[0].active);
    EXPECT_LT(std::abs(energy(sim.particles()[0]) - e0), 1e-4 * std::abs(e0));
}

TEST(Step, DivergenceIsDetected) {
    SimConfig cfg;
    Particle p = Particle::with_gamma(0, -1e300, {1.6e-3, 4e-3, 0.0});
    Simulator sim(TrapModel(default_geometry()), {p}, cfg, central(-100.0));
    EXPECT_THROW(sim.run_for(1e-3), physics_divergence);
}

TEST(Step, ConfigValidation) {
    SimConfig cfg;
    cfg.dt = 1e-3;  // more than period / 100 at 60 Hz
    EXPECT_THROW(Simulator(TrapModel(default_geometry()), {Particle::with_gamma(0, -1e-3, {0, 1e-3, 0})}, cfg),
                 invalid_input);
    EXPECT_THROW(Simulator(TrapModel(default_geometry()), {Particle::with_gamma(0, -1e-3, {0, 0.0, 0})}, SimConfig{}),
                 invalid_input);
}

TEST(Settle, MatchesDampedStaticEquilibrium) {
    const TrapModel m(default_geometry());
    const SimConfig cfg;
    for (double gamma : {-5e-3, -2.1e-3, -1e-3})
        for (double v : {0.0, -40.0}) {
            const auto p = Particle::with_gamma(0, gamma, {1.6e-3, 4e-3, 0.0});
            const auto r = settle_particle(m, p, central(v), cfg);
            ASSERT_TRUE(r.settled);
            const auto eq = find_equilibrium_height(m, central(v), p.body(cfg.drag));
            EXPECT_NEAR(r.y_mean, eq.y_min, 0.02 * eq.y_min) << gamma << ' ' << v;
        }
}

TEST(Settle, MicromotionVanishesAtNullBalance) {
    const double gamma = -2.1e-3;
    const TrapModel m(default_geometry(), sweep_drive(gamma));
    const double vb = balance_voltage(m, gamma);
    const double y_null = find_ac_null(m.geometry()).y_null;
    const auto p = Particle::with_gamma(0, gamma, {1.6e-3, y_null, 0.0});
    const auto at = settle_particle(m, p, central(-vb));
    const auto lo = settle_particle(m, p, central(-vb + 40.0));
    const auto hi = settle_particle(m, p, central(-vb - 40.0));
    ASSERT_TRUE(at.settled && lo.settled && hi.settled);
    EXPECT_LT(at.alpha, 0.01 * lo.alpha);
    EXPECT_LT(at.alpha, 0.01 * hi.alpha);
    EXPECT_NEAR(at.y_mean, y_null, 2e-5);
}

TEST(Settle, MicromotionGrowsWithDistanceFromNull) {
    const double gamma = -2.1e-3;
    const TrapModel m(default_geometry(), sweep_drive(gamma));
    const double y_null = find_ac_null(m.geometry()).y_null;
    const double vb = balance_voltage(m, gamma);
    std::vector<std::pair<double, double>> pts;
    for (double dv : {0.0, 10.0, 20.0, 30.0, 40.0}) {
        const auto r = settle_particle(m, Particle::with_gamma(0, gamma, {1.6e-3, 4.5e-3, 0.0}), central(-vb + dv));
        pts.push_back({std::abs(r.y_mean - y_null), r.alpha});
    }
    for (std::size_t i = 1; i < pts.size(); ++i) {
        EXPECT_GT(pts[i].first, pts[i - 1].first);
        EXPECT_GT(pts[i].second, pts[i - 1].second);
    }
}

TEST(Settle, TimeStepConvergence) {
    const TrapModel m(default_geometry());
    const auto p = Particle::with_gamma(0, -2.1e-3, {1.6e-3, 4e-3, 0.0});
    SimConfig a, b;
    b.dt = a.dt / 2.0;
    const auto ra = settle_particle(m, p, central(-60.0), a);
    const auto rb = settle_particle(m, p, central(-60.0), b);
    EXPECT_LT(std::abs(ra.y_mean - rb.y_mean), 1e-3 * rb.y_mean);
}

TEST(Settle, OverdampedStepResponse) {
    const TrapModel m(default_geometry());
    SimConfig cfg;
    Simulator sim(m, {Particle::with_gamma(0, -2.1e-3, {1.6e-3, 4e-3, 0.0})}, cfg, central(-20.0));
    const auto before = settle(sim);
    sim.set_voltages(central(-80.0));
    const int steps = static_cast<int>(std::lround(m.drive().period() / cfg.dt));
    double peak = before.y_mean;
    for (int k = 0; k < 60; ++k) {
        double ys = 0;
        for (int s = 0; s < steps; ++s) {
            sim.step();
            ys += sim.particles()[0].r[1];
        }
        peak = std::max(peak, ys / steps);
    }
    const auto after = settle(sim);
    const double step = after.y_mean - before.y_mean;
    ASSERT_GT(step, 0.0);
    EXPECT_LT(peak - after.y_mean, 0.05 * step);
}

TEST(Sweep, SingleStepGivesSingleRow) {
    const TrapModel m(default_geometry());
    const auto r = voltage_sweep_experiment(m, Particle::with_gamma(0, -2.1e-3, {1.6e-3, 4e-3, 0.0}), {{-50.0, 2.0}});
    EXPECT_EQ(r.series.size(), 1u);
    EXPECT_FALSE(r.ejection_voltage);
    EXPECT_THROW(voltage_sweep_experiment(m, Particle::with_gamma(0, -2.1e-3, {1.6e-3, 4e-3, 0.0}), {}), invalid_input);
}

TEST(Sweep, EjectsAndRecoversGamma) {
    const double gamma = -2.1e-3;
    const TrapModel m(default_geometry(), sweep_drive(gamma));
    SimConfig cfg;
    cfg.seed = 3;
    const auto r =
        voltage_sweep_experiment(m, Particle::with_gamma(0, gamma, {1.6e-3, 4e-3, 0.0}), linear_sweep(-40, -200, -5), cfg);
    ASSERT_TRUE(r.ejection_voltage.has_value());
    EXPECT_GT(r.series.size(), 10u);
    const double y_null = find_ac_null(m.geometry()).y_null;
    for (std::size_t i = 1; i < r.series.size(); ++i) {
        if (r.series[i].y < y_null) {
            EXPECT_GT(r.series[i].y, r.series[i - 1].y);
        }
    }
    auto s = r.series;
    for (auto& pt : s) pt.sigma_y = 5e-5;
    HeightFitOptions o;
    o.drag_rate = cfg.drag / sphere_mass();
    const auto e = fit_gamma_height_curve(s, m, {}, o);
    EXPECT_NEAR(e.gamma, gamma, 0.05 * std::abs(gamma));
    const auto mm = micromotion_minimum(r.series);
    EXPECT_NEAR(mm.v_vertex, -balance_voltage(m, gamma), 5.0);
}

TEST(Multi, TwoChargesSitSymmetricallyInAxialWell) {
    const TrapModel m(default_geometry());
    VoltageState v = central(-60.0);
    v.endcap = -244.0;
    v.segments = {-495.0, -259.0, -0.01, -259.0, -495.0};
    SimConfig cfg;
    cfg.enable_coulomb = true;
    cfg.duration = 3.0;
    std::vector<Particle> ps{Particle::with_gamma(0, -2.1e-3, {1.6e-3, 4.2e-3, -2e-3}),
                             Particle::with_gamma(1, -2.1e-3, {1.6e-3, 4.2e-3, 2e-3})};
    const auto tr = simulate_multi(m, ps, {}, cfg, v);
    const auto& last = tr.samples.back();
    EXPECT_NEAR(last.r[0][2], -last.r[1][2], 1e-6);
    EXPECT_GT(last.r[1][2] - last.r[0][2], 1e-3);  // held apart by Coulomb repulsion
    EXPECT_NEAR(last.r[0][1], last.r[1][1], 1e-7);
}

TEST(Multi, CollisionEventAndRosterLimit) {
    const TrapModel m(default_geometry(), no_drive());
    SimConfig cfg;
    cfg.duration = 1e-3;
    std::vector<Particle> ps{Particle::with_gamma(0, -1e-3, {1.6e-3, 10e-3, 0.0}),
                             Particle::with_gamma(1, -1e-3, {1.6e-3, 10e-3, 20e-6})};
    const auto tr = simulate_multi(m, ps, {}, cfg);
    const bool hit = std::any_of(tr.events.begin(), tr.events.end(), [](const auto& e) { return e.kind == "collision"; });
    EXPECT_TRUE(hit);
    std::vector<Particle> many(17, ps[0]);
    EXPECT_THROW(simulate_multi(m, many, {}, cfg), invalid_input);
}

TEST(Multi, RelayDelayShiftsSegmentChanges) {
    const TrapModel m(default_geometry());
    VoltageSchedule s;
    s.add(0.0, "central", -60.0);
    s.add(0.01, "C", -495.0);
    s.add(0.01, "endcap", -244.0);
    SimConfig cfg;
    cfg.duration = 0.05;
    const auto tr = simulate_multi(m, {Particle::with_gamma(0, -2.1e-3, {1.6e-3, 4e-3, 0.0})}, s, cfg);
    double t_c = -1, t_end = -1;
    for (const auto& e : tr.events) {
        if (e.kind != "voltage_change") continue;
        if (e.detail.rfind("C=", 0) == 0) t_c = e.t;
        if (e.detail.rfind("endcap=", 0) == 0) t_end = e.t;
    }
    EXPECT_DOUBLE_EQ(t_end, 0.01);
    EXPECT_DOUBLE_EQ(t_c, 0.01 + s.relay_delay);
}

TEST(Multi, Deterministic) {
    const TrapModel m(default_geometry());
    SimConfig cfg;
    cfg.seed = 99;
    cfg.duration = 0.2;
    cfg.enable_coulomb = true;
    std::vector<Particle> ps{Particle::with_gamma(0, -2.1e-3, {1.6e-3, 4e-3, -1e-3}),
                             Particle::with_gamma(1, -1.7e-3, {1.7e-3, 4.4e-3, 1e-3})};
    auto run = [&] {
        std::ostringstream os;
        write_trajectory_csv(os, simulate_multi(m, ps, {}, cfg, central(-70.0)));
        return os.str();
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.substr(0, 11), "t,id,x,y,z\n");
}

TEST(Schedule, JsonForms) {
    const auto s = nlohmann::json::parse(R"([[0, "central", -100], {"t_s": 0.5, "target": "A", "value_V": -495}])")
                       .get<VoltageSchedule>();
    ASSERT_EQ(s.entries.size(), 2u);
    EXPECT_EQ(s.entries[1].target, "A");
    EXPECT_DOUBLE_EQ(s.effective_time(s.entries[1]), 0.5 + 4.2e-3);
    EXPECT_THROW(nlohmann::json::parse(R"([[1, "central", -1], [0, "central", -2]])").get<VoltageSchedule>(),
                 invalid_input);
    EXPECT_THROW(nlohmann::json::parse(R"([[0, "Q", -1]])").get<VoltageSchedule>(), invalid_input);
}
