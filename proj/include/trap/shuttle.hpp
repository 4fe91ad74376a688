#pragma once

// Segment voltage patterns, axial potential profiles and the shuttling /
// splitting experiments.

#include <array>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "dynamics.hpp"

namespace trap {

enum class Level { high, low, off };

struct LevelVoltages {
    double high = -495.0;
    double low = -259.0;
    double off = -0.01;
    double at(Level l) const { return l == Level::high ? high : l == Level::low ? low : off; }
    void validate() const {
        if (!(std::abs(high) > std::abs(low) && std::abs(low) > std::abs(off)))
            throw invalid_input("level voltages must satisfy |high| > |low| > |off|");
    }
};

struct SegmentPattern {
    std::string name;
    std::array<Level, 5> levels{Level::off, Level::off, Level::off, Level::off, Level::off};  // A..E
    double endcap = -244.0;
    LevelVoltages values{};

    VoltageState apply(VoltageState v) const {
        for (int i = 0; i < 5; ++i) v.segments[i] = values.at(levels[i]);
        v.endcap = endcap;
        return v;
    }
    /// A<->E, B<->D swapped.
    SegmentPattern mirrored() const {
        SegmentPattern m = *this;
        for (int i = 0; i < 5; ++i) m.levels[i] = levels[4 - i];
        m.name = name + "-mirrored";
        return m;
    }
};

namespace detail {
inline SegmentPattern make_pattern(std::string name, std::array<Level, 5> l) {
    SegmentPattern p;
    p.name = std::move(name);
    p.levels = l;
    return p;
}
}  // namespace detail

inline SegmentPattern pattern_center_C() {
    using enum Level;
    return detail::make_pattern("center-C", {high, low, off, low, high});
}
inline SegmentPattern pattern_center_D() {
    using enum Level;
    return detail::make_pattern("center-D", {high, high, low, off, low});
}
inline SegmentPattern pattern_split() {
    using enum Level;
    return detail::make_pattern("split", {low, off, high, off, low});
}
inline SegmentPattern pattern_all_off() {
    using enum Level;
    return detail::make_pattern("all-off", {off, off, off, off, off});
}

inline SegmentPattern pattern_by_name(const std::string& name) {
    if (name == "center-C") return pattern_center_C();
    if (name == "center-D") return pattern_center_D();
    if (name == "split") return pattern_split();
    if (name == "all-off") return pattern_all_off();
    throw invalid_input("unknown pattern '" + name + "'");
}

/// Schedule entries switching every segment (and the endcaps) to the pattern at t.
inline void add_pattern(VoltageSchedule& s, double t, const SegmentPattern& p) {
    p.values.validate();
    for (int i = 0; i < 5; ++i) s.add(t, std::string(1, static_cast<char>('A' + i)), p.values.at(p.levels[i]));
    s.add(t, "endcap", p.endcap);
}

inline std::string level_name(Level l) { return l == Level::high ? "high" : l == Level::low ? "low" : "off"; }

inline void to_json(nlohmann::json& j, const SegmentPattern& p) {
    j = {{"name", p.name},
         {"endcap", p.endcap},
         {"values", {{"high", p.values.high}, {"low", p.values.low}, {"off", p.values.off}}},
         {"levels", nlohmann::json::object()}};
    for (int i = 0; i < 5; ++i) j["levels"][std::string(1, static_cast<char>('A' + i))] = level_name(p.levels[i]);
}
inline void from_json(const nlohmann::json& j, SegmentPattern& p) {
    p = j.contains("name") && !j.contains("levels") ? pattern_by_name(j.at("name").get<std::string>()) : SegmentPattern{};
    if (j.contains("name")) p.name = j.at("name").get<std::string>();
    if (j.contains("endcap")) p.endcap = j.at("endcap").get<double>();
    if (j.contains("values")) {
        const auto& v = j.at("values");
        if (v.contains("high")) p.values.high = v.at("high").get<double>();
        if (v.contains("low")) p.values.low = v.at("low").get<double>();
        if (v.contains("off")) p.values.off = v.at("off").get<double>();
    }
    if (j.contains("levels")) {
        const auto& l = j.at("levels");
        for (int i = 0; i < 5; ++i) {
            const std::string key(1, static_cast<char>('A' + i));
            if (!l.contains(key)) throw invalid_input("pattern missing segment " + key);
            const auto s = l.at(key).get<std::string>();
            if (s == "high") p.levels[i] = Level::high;
            else if (s == "low") p.levels[i] = Level::low;
            else if (s == "off") p.levels[i] = Level::off;
            else throw invalid_input("unknown level '" + s + "'");
        }
    }
    p.values.validate();
}

// ---------------------------------------------------------------------------
// Axial profile

struct AxialProfile {
    double y = 0.0;  // m, sampling height
    std::vector<double> z;        // m
    std::vector<double> u_per_q;  // V (J/C)
    std::vector<double> minima;   // m, local minima of U = q (U/q)
};

/// U/q along z at x = a/2 and the AC-null height. For a negative charge the
/// minima of U are the maxima of U/q.
inline AxialProfile axial_profile(const SegmentPattern& pattern, const TrapModel& model, double gamma,
                                  double step = 0.1e-3, VoltageState base = {}) {
    if (!(step > 0.0) || step > 0.1e-3 + 1e-15) throw invalid_input("profile step must be in (0, 0.1 mm]");
    if (gamma == 0.0) throw invalid_input("profile needs gamma != 0");
    const VoltageState v = pattern.apply(base);
    const TrapGeometry& g = model.geometry();
    AxialProfile p;
    p.y = find_ac_null(g).y_null;
    const double half = 0.5 * g.rail_length_z;
    const auto n = static_cast<int>(std::floor(2.0 * half / step + 1e-9));
    const ChargedBody body{gamma, 1.0};
    for (int k = 0; k <= n; ++k) {
        const double z = -half + k * step;
        p.z.push_back(z);
        p.u_per_q.push_back(model.energy(v, body, g.center_x(), p.y, z) / gamma);
    }
    const double s = gamma > 0.0 ? 1.0 : -1.0;
    for (std::size_t i = 1; i + 1 < p.z.size(); ++i) {
        const double a = s * p.u_per_q[i - 1], b = s * p.u_per_q[i], c = s * p.u_per_q[i + 1];
        if (b < a && b < c) {
            // vertex of the parabola through the three samples
            const double den = a - 2.0 * b + c;
            const double off = den > 0.0 ? 0.5 * (a - c) / den : 0.0;
            p.minima.push_back(p.z[i] + off * step);
        }
    }
    return p;
}

inline void write_profile_csv(std::ostream& out, const AxialProfile& p) {
    out << "z_mm,U_per_q\n";
    out.precision(12);
    for (std::size_t i = 0; i < p.z.size(); ++i) out << p.z[i] * 1e3 << ',' << p.u_per_q[i] << '\n';
}

// ---------------------------------------------------------------------------
// Experiments

struct ShuttleConfig {
    SimConfig sim{};
    SettleOptions settle{.tolerance = 1e-6, .window_periods = 5, .measure_periods = 5, .min_time = 0.2, .max_time = 20.0};
    double central_v = 0.0;  // V, grounded
    double relay_delay = 4.2e-3;
    double split_dwell = 0.5;  // s, all-off stage before the split pattern
    LevelVoltages levels{};
    double endcap_v = -244.0;
};

struct ShuttleResult {
    double distance = 0.0;  // m, z_final - z_initial
    double z_initial = 0.0;
    double z_final = 0.0;
    bool ejected = false;
    Trajectory trajectory;
};

namespace detail {
inline SegmentPattern configured(SegmentPattern p, const ShuttleConfig& c) {
    p.values = c.levels;
    p.endcap = c.endcap_v;
    return p;
}
inline void settle_recording(Simulator& sim, Trajectory& tr, const SettleOptions& opt, std::vector<SettleResult>* out) {
    auto r = settle_all(sim, opt);
    sim.record(tr);
    if (out) *out = std::move(r);
}
inline void run_recording(Simulator& sim, Trajectory& tr, double seconds) { sim.run_for(seconds, &tr); }
}  // namespace detail

/// Settles the particle under `from`, switches to `to` (through the relays)
/// and re-settles. Distance is the change of the settled axial position.
inline ShuttleResult run_shuttle_experiment(const TrapModel& model, Particle p, const ShuttleConfig& cfg = {},
                                            const SegmentPattern& from = pattern_center_C(),
                                            const SegmentPattern& to = pattern_center_D()) {
    VoltageState v;
    v.central = cfg.central_v;
    v = detail::configured(from, cfg).apply(v);
    Simulator sim(model, {p}, cfg.sim, v);
    ShuttleResult res;
    sim.record(res.trajectory);
    std::vector<SettleResult> s0, s1;
    detail::settle_recording(sim, res.trajectory, cfg.settle, &s0);
    if (s0[0].ejected) {
        res.ejected = true;
        res.trajectory.events = sim.events();
        return res;
    }
    res.z_initial = s0[0].z_mean;
    VoltageSchedule sch;
    sch.relay_delay = cfg.relay_delay;
    add_pattern(sch, 0.0, detail::configured(to, cfg));
    for (const auto& e : sch.entries) sim.schedule_change(sim.time() + sch.effective_time(e), e.target, e.value);
    // watch the transfer at full sample rate, then settle
    detail::run_recording(sim, res.trajectory, 0.5);
    detail::settle_recording(sim, res.trajectory, cfg.settle, &s1);
    res.trajectory.events = sim.events();
    if (s1[0].ejected) {
        res.ejected = true;
        return res;
    }
    res.z_final = s1[0].z_mean;
    res.distance = res.z_final - res.z_initial;
    return res;
}

struct SplitResult {
    double d1 = 0.0;  // m, final z of the first particle relative to the initial well center
    double d2 = 0.0;
    bool split_failed = false;
    bool ejected = false;
    double well_center = 0.0;  // m, initial (center-C) minimum
    Trajectory trajectory;
};

/// center-C -> all-off (dwell) -> split. Displacements are measured from the
/// center-C profile minimum; the particle ending at smaller z is reported as d1.
inline SplitResult run_split_experiment(const TrapModel& model, std::vector<Particle> ps, ShuttleConfig cfg = {}) {
    if (ps.size() != 2) throw invalid_input("split experiment takes two particles");
    cfg.sim.enable_coulomb = true;
    VoltageState v;
    v.central = cfg.central_v;
    v = detail::configured(pattern_center_C(), cfg).apply(v);
    SplitResult res;
    const auto prof = axial_profile(detail::configured(pattern_center_C(), cfg), model, ps[0].gamma(), 0.1e-3, v);
    res.well_center = prof.minima.empty() ? 0.0 : prof.minima.front();
    Simulator sim(model, ps, cfg.sim, v);
    sim.record(res.trajectory);
    std::vector<SettleResult> s0, s1;
    detail::settle_recording(sim, res.trajectory, cfg.settle, &s0);
    VoltageSchedule sch;
    sch.relay_delay = cfg.relay_delay;
    add_pattern(sch, 0.0, detail::configured(pattern_all_off(), cfg));
    add_pattern(sch, cfg.split_dwell, detail::configured(pattern_split(), cfg));
    const double t0 = sim.time();
    for (const auto& e : sch.entries) sim.schedule_change(t0 + sch.effective_time(e), e.target, e.value);
    detail::run_recording(sim, res.trajectory, cfg.split_dwell + 0.5);
    detail::settle_recording(sim, res.trajectory, cfg.settle, &s1);
    res.trajectory.events = sim.events();
    if (s1[0].ejected || s1[1].ejected) {
        res.ejected = true;
        return res;
    }
    double a = s1[0].z_mean - res.well_center, b = s1[1].z_mean - res.well_center;
    if (a > b) std::swap(a, b);
    res.d1 = a;
    res.d2 = b;
    if ((a < 0.0) == (b < 0.0)) {
        res.split_failed = true;
        res.trajectory.events.push_back({sim.time(), "split_failure", -1, "both particles in the same well"});
    }
    return res;
}

}  // namespace trap
