#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "trap/field_analysis.hpp"

using namespace trap;

namespace {

// |grad phi_AC|^2 from central differences of the potential, not the closed-form gradient.
double fd_grad_sq(const TrapGeometry& g, double x, double y) {
    const double h = 1e-8;
    const double gx = (ac_potential_2d(g, x + h, y) - ac_potential_2d(g, x - h, y)) / (2 * h);
    const double gy = (ac_potential_2d(g, x, y + h) - ac_potential_2d(g, x, y - h)) / (2 * h);
    return gx * gx + gy * gy;
}

TrapGeometry scaled(TrapGeometry g, double k) {
    for (double* f : {&g.a, &g.b, &g.c, &g.gap_central_ac, &g.gap_ac_segment, &g.gap_segment_segment, &g.seg_width_z,
                      &g.seg_depth_x, &g.rail_length_z})
        *f *= k;
    g.endcap_rects = g.outer_slot_endcaps();
    return g;
}

VoltageState central(double v) {
    VoltageState s;
    s.central = v;
    return s;
}

}  // namespace

TEST(Null, DefaultGeometryAt475mm) {
    const auto n = find_ac_null(default_geometry());
    EXPECT_NEAR(n.y_null, 4.75e-3, 1e-7);
    EXPECT_DOUBLE_EQ(n.x, 1.6e-3);
    EXPECT_LT(n.grad_sq, 1e-12 * n.grad_sq_max);
}

TEST(Null, CalibrationReproducesShippedGap) {
    TrapGeometry g;
    const auto c = calibrate_gaps_for_null(g, 4.75e-3);
    EXPECT_NEAR(c.gap_central_ac, default_calibrated_gap, 1e-12);
    EXPECT_EQ(c.gap_ac_segment, c.gap_central_ac);
}

TEST(Null, ZeroGapMatchesGridScan) {
    TrapGeometry g;
    const auto n = find_ac_null(g);
    double best_y = 0, best = 1e300;
    for (double y = 1e-3; y < 20e-3; y += 1e-6) {
        const double v = fd_grad_sq(g, g.center_x(), y);
        if (v < best) best = v, best_y = y;
    }
    EXPECT_NEAR(n.y_null, best_y, 1e-6);
}

TEST(Null, ScalesWithGeometry) {
    const TrapGeometry g = default_geometry();
    const double y0 = find_ac_null(g).y_null;
    for (double k : {0.5, 2.0, 3.0}) EXPECT_NEAR(find_ac_null(scaled(g, k)).y_null, k * y0, 2e-7 * k);
}

TEST(Null, StaysInBandUnderGapTolerance) {
    const TrapGeometry g0 = default_geometry();
    for (double f1 : {0.8, 1.0, 1.2})
        for (double f2 : {0.8, 1.0, 1.2}) {
            TrapGeometry g = g0;
            g.gap_central_ac *= f1;
            g.gap_ac_segment *= f2;
            EXPECT_NEAR(find_ac_null(g).y_null, 4.75e-3, 0.17e-3) << f1 << ' ' << f2;
        }
}

TEST(Null, RejectsAsymmetricLayout) {
    TrapGeometry g = default_geometry();
    g.c = 3e-3;
    EXPECT_THROW(find_ac_null(g), invalid_input);
}

TEST(Equilibrium, NullBalanceAt209V) {
    const TrapModel m(default_geometry());
    const double y_null = find_ac_null(m.geometry()).y_null;
    const ChargedBody p{-1.08e-3 * 1e-11, 1e-11};
    // balance voltage from the force condition, then the equilibrium there
    const double gy = std::abs(m.dc_rail().gradient(m.geometry().center_x(), y_null).y);
    const double v_bal = standard_gravity / (1.08e-3 * gy);
    EXPECT_NEAR(v_bal, 209.0, 0.05 * 209.0);
    const auto eq = find_equilibrium_height(m, central(-v_bal), p);
    // vertical well only: at 963 V RMS this particle is not laterally confined
    ASSERT_TRUE(eq.found);
    EXPECT_GT(eq.curvature, 0.0);
    EXPECT_NEAR(eq.y_min, y_null, 1e-5);
    // at the nominal 209 V as well
    EXPECT_NEAR(find_equilibrium_height(m, central(-209.0), p).y_min, y_null, 0.01 * y_null);
}

TEST(Equilibrium, MatchesFineGridArgmin) {
    const TrapModel m(default_geometry());
    const ChargedBody p{-2.1e-3 * 1.3e-11, 1.3e-11};
    for (double v : {-40.0, -90.0, -130.0}) {
        const auto eq = find_equilibrium_height(m, central(v), p);
        ASSERT_TRUE(eq.found);
        auto u = [&](double y) { return m.energy(central(v), p, 1.6e-3, y, 0.0); };
        // coarse 10 um scan for the first local minimum, then a 0.1 um scan around it
        double y_c = 0;
        for (double y = 1e-4 + 1e-5; y < 30e-3; y += 1e-5)
            if (u(y) < u(y - 1e-5) && u(y) < u(y + 1e-5)) {
                y_c = y;
                break;
            }
        double best_y = y_c, best = u(y_c);
        for (double y = y_c - 2e-5; y <= y_c + 2e-5; y += 1e-7)
            if (u(y) < best) best = u(y), best_y = y;
        EXPECT_NEAR(eq.y_min, best_y, 1.5e-7) << v;
    }
}

TEST(Equilibrium, ArgminInvariantUnderPositiveRescaling) {
    const TrapModel m(default_geometry());
    const ChargedBody p{-2.1e-3 * 1.3e-11, 1.3e-11};
    const double y0 = find_equilibrium_height(m, central(-100.0), p).y_min;
    for (double k : {1e-3, 7.0, 1e4}) {
        const ChargedBody pk{k * p.q, k * p.m};
        EXPECT_NEAR(find_equilibrium_height(m, central(-100.0), pk).y_min, y0, 1e-12);
    }
}

TEST(Equilibrium, GravityHoldsParticleBelowNullUntilBalance) {
    const TrapModel m(default_geometry());
    const double y_null = find_ac_null(m.geometry()).y_null;
    for (double gamma : {-5e-3, -2.1e-3, -1.08e-3}) {
        const ChargedBody p{gamma, 1.0};
        const double gy = std::abs(m.dc_rail().gradient(m.geometry().center_x(), y_null).y);
        const double v_bal = standard_gravity / (std::abs(gamma) * gy);
        double prev = 0.0;
        for (double f = 0.0; f < 0.999; f += 0.1) {
            const auto eq = find_equilibrium_height(m, central(-f * v_bal), p);
            ASSERT_TRUE(eq.found);
            EXPECT_LT(eq.y_min, y_null);
            EXPECT_GT(eq.y_min, prev);
            prev = eq.y_min;
        }
    }
}

TEST(Equilibrium, WellVanishesInEjectionBand) {
    // gamma = -2.1e-3 at 963 V RMS: lateral confinement is lost between 130 and 190 V
    const TrapModel m(default_geometry());
    const ChargedBody p{-2.1e-3, 1.0};
    double v_ej = 0.0;
    for (double v = 120.0; v <= 190.0; v += 0.5)
        if (!find_equilibrium_height(m, central(-v), p).stable) {
            v_ej = v;
            break;
        }
    EXPECT_GE(v_ej, 130.0);
    EXPECT_LE(v_ej, 190.0);
}

TEST(Equilibrium, RejectsNeutralParticle) {
    const TrapModel m(default_geometry());
    EXPECT_THROW(find_equilibrium_height(m, {}, {0.0, 1.0}), invalid_input);
}

TEST(HeightFit, NoiselessSeriesIsRecoveredExactly) {
    const TrapModel m(default_geometry());
    const double gamma = -1.5e-3;
    HeightVoltageSeries s;
    for (double v = -40; v >= -140; v -= 10) {
        const auto eq = find_equilibrium_height(m, central(v), {gamma, 1.0});
        s.push_back({v, eq.y_min, 5e-5, 0, 0});
    }
    const auto e = fit_gamma_height_curve(s, m);
    EXPECT_NEAR(e.gamma, gamma, 1e-6 * std::abs(gamma));
    EXPECT_LT(e.chi2_reduced, 1e-6);
    EXPECT_GT(e.sigma, 0.0);
    EXPECT_EQ(e.method, GammaMethod::height_fit);
}

TEST(HeightFit, NoisySeriesWithinThreeSigma) {
    const TrapModel m(default_geometry());
    const double gamma = -1.5e-3;
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> noise(0.0, 5e-5);
    int within = 0;
    for (int trial = 0; trial < 5; ++trial) {
        HeightVoltageSeries s;
        for (double v = -40; v >= -140; v -= 10) {
            const auto eq = find_equilibrium_height(m, central(v), {gamma, 1.0});
            s.push_back({v, eq.y_min + noise(rng), 5e-5, 0, 0});
        }
        const auto e = fit_gamma_height_curve(s, m);
        if (std::abs(e.gamma - gamma) <= 3.0 * e.sigma) ++within;
        EXPECT_GT(e.chi2_reduced, 0.05);
        EXPECT_LT(e.chi2_reduced, 5.0);
    }
    EXPECT_GE(within, 4);
}

TEST(HeightFit, RejectsBadSeries) {
    const TrapModel m(default_geometry());
    HeightVoltageSeries two{{-50, 4e-3, 5e-5, 0, 0}, {-60, 4.1e-3, 5e-5, 0, 0}};
    EXPECT_THROW(fit_gamma_height_curve(two, m), invalid_input);
    HeightVoltageSeries same{{-50, 4e-3, 5e-5, 0, 0}, {-50, 4.1e-3, 5e-5, 0, 0}, {-50, 4.0e-3, 5e-5, 0, 0}};
    EXPECT_THROW(fit_gamma_height_curve(same, m), invalid_input);
    HeightVoltageSeries zero{{-50, 4e-3, 0, 0, 0}, {-60, 4.1e-3, 5e-5, 0, 0}, {-70, 4.2e-3, 5e-5, 0, 0}};
    EXPECT_THROW(fit_gamma_height_curve(zero, m), invalid_input);
}

TEST(NullBalance, LinearInVoltage) {
    const TrapGeometry g = default_geometry();
    const auto a = gamma_from_null_balance(4.64e-3, -120.0, g);
    const auto b = gamma_from_null_balance(4.64e-3, -240.0, g);
    EXPECT_NEAR(b.gamma, 0.5 * a.gamma, 1e-15);
    EXPECT_LT(a.gamma, 0.0);
    EXPECT_EQ(a.method, GammaMethod::null_balance);
}

TEST(NullBalance, EnsembleAnchor) {
    // 4.64 mm and 120(30) V bracket the ensemble mean of -2.1e-3 C/kg
    const TrapGeometry g = default_geometry();
    const auto mid = gamma_from_null_balance(4.64e-3, -120.0, g);
    EXPECT_LT(gamma_from_null_balance(4.64e-3, -90.0, g).gamma, -2.1e-3);
    EXPECT_GT(gamma_from_null_balance(4.64e-3, -150.0, g).gamma, -2.1e-3);
    EXPECT_NEAR(mid.gamma, -2.1e-3, 0.5e-3);
}

TEST(NullBalance, MatchesEquilibriumForceBalance) {
    const TrapModel m(default_geometry());
    const double gamma = -2.1e-3;
    const double y_null = find_ac_null(m.geometry()).y_null;
    const double gy = std::abs(m.dc_rail().gradient(1.6e-3, y_null).y);
    const double v = -standard_gravity / (std::abs(gamma) * gy);
    const auto eq = find_equilibrium_height(m, central(v), {gamma, 1.0});
    EXPECT_NEAR(gamma_from_null_balance(eq.y_min, v, m.geometry()).gamma, gamma, 1e-6 * std::abs(gamma));
}

TEST(NullBalance, PropagatesUncertainty) {
    const TrapGeometry g = default_geometry();
    const auto e = gamma_from_null_balance(4.75e-3, -110.0, g, 0.1e-3, 5.0);
    const double h = 1e-7;
    const double dgdy = (gamma_from_null_balance(4.75e-3 + h, -110.0, g).gamma -
                         gamma_from_null_balance(4.75e-3 - h, -110.0, g).gamma) / (2 * h);
    const double dgdv = (gamma_from_null_balance(4.75e-3, -110.0 + 1e-4, g).gamma -
                         gamma_from_null_balance(4.75e-3, -110.0 - 1e-4, g).gamma) / 2e-4;
    EXPECT_NEAR(e.sigma, std::hypot(dgdy * 0.1e-3, dgdv * 5.0), 1e-6 * e.sigma);
    EXPECT_THROW(gamma_from_null_balance(4.75e-3, 0.0, g), invalid_input);
    EXPECT_THROW(gamma_from_null_balance(0.0, -100.0, g), invalid_input);
}

TEST(Micromotion, SymmetricVertexIsExact) {
    HeightVoltageSeries s;
    for (double v = -80; v >= -140; v -= 5) s.push_back({v, 4e-3 + 1e-6 * -v, 0, 0.01e-3 * std::abs(v + 112.5), 0});
    const auto mm = micromotion_minimum(s);
    EXPECT_NEAR(mm.v_vertex, -112.5, 1e-6);
    EXPECT_TRUE(mm.v_at_min == -110.0 || mm.v_at_min == -115.0);
    EXPECT_NEAR(mm.y_vertex, 4e-3 + 112.5e-6, 1e-10);
}

TEST(Micromotion, PicksMinimalRow) {
    HeightVoltageSeries s{{-90, 4.2e-3, 0, 0.30e-3, 0}, {-100, 4.4e-3, 0, 0.12e-3, 0}, {-110, 4.6e-3, 0, 0.03e-3, 0},
                          {-120, 4.8e-3, 0, 0.10e-3, 0}, {-130, 5.0e-3, 0, 0.25e-3, 0}};
    const auto mm = micromotion_minimum(s);
    EXPECT_EQ(mm.index, 2u);
    EXPECT_EQ(mm.v_at_min, -110.0);
    EXPECT_EQ(mm.y_at_min, 4.6e-3);
}

TEST(Micromotion, MonotoneSeriesSignalsNoCrossing) {
    HeightVoltageSeries s{{-90, 4.2e-3, 0, 0.30e-3, 0}, {-100, 4.4e-3, 0, 0.2e-3, 0}, {-110, 4.6e-3, 0, 0.1e-3, 0}};
    EXPECT_THROW(micromotion_minimum(s), std::runtime_error);
}

TEST(ChiSquared, AnalyticCases) {
    HeightVoltageSeries s{{-1, 1.0, 0.5, 0, 0}, {-2, 2.0, 0.25, 0, 0}, {-3, 3.0, 1.0, 0, 0}, {-4, 4.0, 2.0, 0, 0}};
    std::vector<double> f{1.0, 2.0, 3.0, 4.0};
    EXPECT_EQ(reduced_chi_squared(f, s), 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) f[i] = s[i].y + s[i].sigma_y;
    EXPECT_DOUBLE_EQ(reduced_chi_squared(f, s), 4.0 / 3.0);
    // hand-computed: residuals/sigma = 0.2, -0.4, 1.0, 0.25 -> 1.2225 / 3
    f = {0.9, 2.1, 2.0, 3.5};
    EXPECT_NEAR(reduced_chi_squared(f, s), (0.04 + 0.16 + 1.0 + 0.0625) / 3.0, 1e-15);
    s[1].sigma_y = 0.0;
    EXPECT_THROW(reduced_chi_squared(f, s), invalid_input);
}

TEST(SeriesCsv, RoundTripAndErrors) {
    HeightVoltageSeries s{{-90, 4.2e-3, 5e-5, 0.3e-3, 1e-5}, {-100, 4.4e-3, 5e-5, 0.1e-3, 1e-5}};
    std::stringstream ss;
    write_series_csv(ss, s);
    const auto back = read_series_csv(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_NEAR(back[1].y, 4.4e-3, 1e-15);
    EXPECT_NEAR(back[0].alpha, 0.3e-3, 1e-15);
    std::stringstream bad("voltage_V,height_mm\n-90,4.2\n");
    EXPECT_THROW(read_series_csv(bad), invalid_input);
    std::stringstream garbled("voltage_V,height_mm,sigma_height_mm,micromotion_mm,sigma_micromotion_mm\n-90,x,1,1,1\n");
    EXPECT_THROW(read_series_csv(garbled), invalid_input);
}
