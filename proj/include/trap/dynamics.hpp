#pragma once

// Time-dependent equations of motion: fixed-step RK4 for one or more
// charged particles with Stokes drag, gravity and optional Coulomb
// interaction. Voltages change as steps at scheduled times.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "field_analysis.hpp"

namespace trap {

using Vec3d = std::array<double, 3>;

inline constexpr double air_viscosity = 1.81e-5;      // Pa s
inline constexpr double default_particle_radius = 14.6e-6;  // m
inline constexpr double default_particle_density = 1000.0;  // kg/m^3

inline double stokes_drag(double radius = default_particle_radius, double viscosity = air_viscosity) {
    return 6.0 * std::numbers::pi * viscosity * radius;
}
inline double sphere_mass(double radius = default_particle_radius, double density = default_particle_density) {
    return density * 4.0 / 3.0 * std::numbers::pi * radius * radius * radius;
}

struct Particle {
    int id = 0;
    double q = 0.0;  // C
    double m = sphere_mass();
    Vec3d r{};  // m
    Vec3d v{};  // m/s
    bool active = true;

    double gamma() const { return q / m; }
    ChargedBody body(double drag = 0.0) const { return {q, m, drag}; }
    static Particle with_gamma(int id, double gamma, Vec3d r, double m = sphere_mass()) {
        Particle p;
        p.id = id;
        p.m = m;
        p.q = gamma * m;
        p.r = r;
        return p;
    }
};

struct SimConfig {
    double dt = 1.0 / (60.0 * 500.0);  // s
    double drag = stokes_drag();         // kg/s
    bool enable_coulomb = false;
    double duration = 1.0;  // s
    std::uint64_t seed = 0;
    int sample_stride = 50;  // steps between stored trajectory samples
    double collision_radius = 15e-6;
    double lateral_limit = 10e-3;  // |x - a/2| beyond which a particle counts as ejected
    double height_cap = height_search_cap;

    void validate(const DriveParams& d) const {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw invalid_input("dt must be > 0");
        if (dt > d.period() / 100.0 * (1.0 + 1e-12)) throw invalid_input("dt must be <= AC period / 100");
        if (!(drag >= 0.0)) throw invalid_input("drag must be >= 0");
        if (sample_stride < 1) throw invalid_input("sample_stride must be >= 1");
    }
};

struct SimEvent {
    double t = 0.0;
    std::string kind;  // ejection, collision, voltage_change, settled, drive_change
    int particle = -1;
    std::string detail;
};

struct TrajectorySample {
    double t = 0.0;
    std::vector<Vec3d> r;  // one per particle, in roster order
};

struct Trajectory {
    std::vector<int> ids;
    std::vector<TrajectorySample> samples;
    std::vector<SimEvent> events;
};

/// One timed voltage change. target: "central", "endcap" or a segment label
/// "A".."E". Segment changes go through relays and take effect relay_delay
/// after t.
struct ScheduleEntry {
    double t = 0.0;  // s
    std::string target;
    double value = 0.0;  // V
};

struct VoltageSchedule {
    std::vector<ScheduleEntry> entries;
    double relay_delay = 4.2e-3;  // s

    static bool is_relay_target(const std::string& target) { return VoltageState::segment_index(target) >= 0; }
    double effective_time(const ScheduleEntry& e) const { return e.t + (is_relay_target(e.target) ? relay_delay : 0.0); }
    void add(double t, const std::string& target, double value) { entries.push_back({t, target, value}); }
    void validate() const {
        if (!(relay_delay >= 0.0)) throw invalid_input("relay_delay must be >= 0");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            if (!(e.t >= 0.0)) throw invalid_input("schedule times must be >= 0");
            if (i > 0 && e.t < entries[i - 1].t) throw invalid_input("schedule times must be nondecreasing");
            if (e.target != "central" && e.target != "endcap" && !is_relay_target(e.target))
                throw invalid_input("unknown schedule target '" + e.target + "'");
            if (!std::isfinite(e.value)) throw invalid_input("schedule voltage must be finite");
        }
    }
};

inline void apply_entry(VoltageState& v, const std::string& target, double value) {
    if (target == "central") v.central = value;
    else if (target == "endcap") v.endcap = value;
    else {
        const int idx = VoltageState::segment_index(target);
        if (idx < 0) throw invalid_input("unknown voltage target '" + target + "'");
        v.segments[idx] = value;
    }
}

inline void to_json(nlohmann::json& j, const VoltageSchedule& s) {
    j = nlohmann::json::object();
    j["relay_delay_s"] = s.relay_delay;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : s.entries) j["entries"].push_back({{"t_s", e.t}, {"target", e.target}, {"value_V", e.value}});
}
/// Accepts {"relay_delay_s":..,"entries":[..]} or a bare list of entries.
inline void from_json(const nlohmann::json& j, VoltageSchedule& s) {
    s = VoltageSchedule{};
    const nlohmann::json* list = &j;
    if (j.is_object()) {
        if (j.contains("relay_delay_s")) s.relay_delay = j.at("relay_delay_s").get<double>();
        list = &j.at("entries");
    }
    for (const auto& e : *list) {
        if (e.is_array()) s.add(e.at(0).get<double>(), e.at(1).get<std::string>(), e.at(2).get<double>());
        else s.add(e.at("t_s").get<double>(), e.at("target").get<std::string>(), e.at("value_V").get<double>());
    }
    s.validate();
}

/// One simulation instance. Single-threaded; owns its particles.
class Simulator {
public:
    Simulator(TrapModel model, std::vector<Particle> particles, SimConfig cfg, VoltageState voltages = {})
        : model_(std::move(model)), drive_(model_.drive()), cfg_(cfg), voltages_(voltages),
          particles_(std::move(particles)) {
        cfg_.validate(drive_);
        for (const auto& p : particles_) {
            if (!(p.m > 0.0)) throw invalid_input("particle mass must be > 0");
            if (!(p.r[1] > 0.0)) throw invalid_input("particle must start above the electrode plane");
        }
    }

    double time() const { return static_cast<double>(step_count_) * cfg_.dt; }
    std::uint64_t step_count() const { return step_count_; }
    const SimConfig& config() const { return cfg_; }
    const TrapModel& model() const { return model_; }
    const DriveParams& drive() const { return drive_; }
    const VoltageState& voltages() const { return voltages_; }
    const std::vector<Particle>& particles() const { return particles_; }
    std::vector<Particle>& particles() { return particles_; }
    const std::vector<SimEvent>& events() const { return events_; }

    void set_voltages(const VoltageState& v, const std::string& why = "") {
        voltages_ = v;
        log({time(), "voltage_change", -1, why});
    }
    /// Voltage step on one target, applied at the first step boundary at or after t.
    void schedule_change(double t, const std::string& target, double value) {
        VoltageState probe;
        apply_entry(probe, target, value);  // validates the target
        pending_.push_back({t, target, value});
        std::stable_sort(pending_.begin(), pending_.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    }
    /// Queues every entry at its effective (relay-delayed) time.
    void schedule(const VoltageSchedule& s) {
        s.validate();
        for (const auto& e : s.entries) schedule_change(s.effective_time(e), e.target, e.value);
    }
    bool has_pending() const { return !pending_.empty(); }
    /// Static field added to the trap's, E(r) in V/m. Used for test fixtures.
    void set_external_field(std::function<Vec3d(const Vec3d&)> e) { external_field_ = std::move(e); }
    void set_drive(const DriveParams& d) {
        d.validate();
        cfg_.validate(d);
        drive_ = d;
        log({time(), "drive_change", -1, "v_ac_rms=" + std::to_string(d.v_ac_rms())});
    }
    void add_particle(const Particle& p) {
        if (!(p.r[1] > 0.0)) throw invalid_input("particle must start above the electrode plane");
        particles_.push_back(p);
    }

    /// Acceleration of particle i at position r, velocity v, time t, given all positions.
    Vec3d acceleration(std::size_t i, const Vec3d& r, const Vec3d& v, double t, const std::vector<Vec3d>& all_r) const {
        const Particle& p = particles_[i];
        const auto gs = model_.static_gradient(voltages_, r[0], r[1], r[2]);
        const auto ga = model_.ac_gradient(r[0], r[1]);
        const double vac = drive_.v_ac_amplitude * std::cos(drive_.omega * t);
        const double g = p.q / p.m;
        const double beta = cfg_.drag / p.m;
        Vec3d a{-g * (gs.x + vac * ga.x) - beta * v[0], -g * (gs.y + vac * ga.y) - standard_gravity - beta * v[1],
                -g * gs.z - beta * v[2]};
        if (external_field_) {
            const Vec3d e = external_field_(r);
            for (int d = 0; d < 3; ++d) a[d] += g * e[d];
        }
        if (cfg_.enable_coulomb)
            for (std::size_t j = 0; j < particles_.size(); ++j) {
                if (j == i || !particles_[j].active) continue;
                const double dx = r[0] - all_r[j][0], dy = r[1] - all_r[j][1], dz = r[2] - all_r[j][2];
                const double d2 = dx * dx + dy * dy + dz * dz;
                if (d2 == 0.0) continue;
                const double f = coulomb_constant * p.q * particles_[j].q / (d2 * std::sqrt(d2)) / p.m;
                a[0] += f * dx;
                a[1] += f * dy;
                a[2] += f * dz;
            }
        return a;
    }

    /// One RK4 step of all active particles.
    void step() {
        apply_pending();
        const double t = time(), h = cfg_.dt;
        const std::size_t n = particles_.size();
        std::vector<Vec3d> r0(n), v0(n), rs(n), vs(n);
        std::vector<Vec3d> kr[4], kv[4];
        for (auto& k : kr) k.resize(n);
        for (auto& k : kv) k.resize(n);
        for (std::size_t i = 0; i < n; ++i) r0[i] = particles_[i].r, v0[i] = particles_[i].v;
        std::vector<char> hit_plane(n, 0);

        auto stage = [&](int s, double ts, const std::vector<Vec3d>& r, const std::vector<Vec3d>& v) {
            for (std::size_t i = 0; i < n; ++i) {
                if (!particles_[i].active) continue;
                kr[s][i] = v[i];
                if (!(r[i][1] > 0.0)) {
                    hit_plane[i] = 1;
                    kv[s][i] = {0.0, -standard_gravity, 0.0};
                } else {
                    kv[s][i] = acceleration(i, r[i], v[i], ts, r);
                }
            }
        };
        auto advance = [&](int s, double c) {
            for (std::size_t i = 0; i < n; ++i)
                for (int d = 0; d < 3; ++d) {
                    rs[i][d] = r0[i][d] + c * h * kr[s][i][d];
                    vs[i][d] = v0[i][d] + c * h * kv[s][i][d];
                }
        };
        stage(0, t, r0, v0);
        advance(0, 0.5);
        stage(1, t + 0.5 * h, rs, vs);
        advance(1, 0.5);
        stage(2, t + 0.5 * h, rs, vs);
        advance(2, 1.0);
        stage(3, t + h, rs, vs);
        for (std::size_t i = 0; i < n; ++i) {
            Particle& p = particles_[i];
            if (!p.active) continue;
            for (int d = 0; d < 3; ++d) {
                p.r[d] = r0[i][d] + h / 6.0 * (kr[0][i][d] + 2.0 * kr[1][i][d] + 2.0 * kr[2][i][d] + kr[3][i][d]);
                p.v[d] = v0[i][d] + h / 6.0 * (kv[0][i][d] + 2.0 * kv[1][i][d] + 2.0 * kv[2][i][d] + kv[3][i][d]);
                if (!std::isfinite(p.r[d]) || !std::isfinite(p.v[d])) {
                    std::ostringstream os;
                    os << "non-finite state for particle " << p.id << " at t=" << t + h;
                    throw physics_divergence(os.str());
                }
            }
        }
        ++step_count_;
        const double tn = time();
        const double xc = model_.geometry().center_x();
        const double zmax = 0.5 * model_.geometry().rail_length_z;
        for (std::size_t i = 0; i < n; ++i) {
            Particle& p = particles_[i];
            if (!p.active) continue;
            std::string why;
            if (hit_plane[i] || p.r[1] <= 0.0) why = "hit electrode plane";
            else if (p.r[1] > cfg_.height_cap) why = "above height cap";
            else if (std::abs(p.r[0] - xc) > cfg_.lateral_limit) why = "lateral escape";
            else if (std::abs(p.r[2]) > zmax) why = "axial escape";
            if (!why.empty()) {
                p.active = false;
                log({tn, "ejection", p.id, why});
            }
        }
        if (n > 1) check_collisions(tn);
    }

    void run_for(double seconds, Trajectory* traj = nullptr) {
        const auto steps = static_cast<std::uint64_t>(std::llround(seconds / cfg_.dt));
        for (std::uint64_t k = 0; k < steps; ++k) {
            step();
            if (traj && step_count_ % static_cast<std::uint64_t>(cfg_.sample_stride) == 0) record(*traj);
        }
    }

    void record(Trajectory& traj) const {
        if (traj.ids.empty())
            for (const auto& p : particles_) traj.ids.push_back(p.id);
        TrajectorySample s;
        s.t = time();
        for (const auto& p : particles_) s.r.push_back(p.r);
        traj.samples.push_back(std::move(s));
    }

    void log(SimEvent e) { events_.push_back(std::move(e)); }

private:
    struct Pending {
        double t;
        std::string target;
        double value;
    };

    void apply_pending() {
        const double now = time();
        std::size_t k = 0;
        while (k < pending_.size() && pending_[k].t <= now + 0.5 * cfg_.dt) {
            const auto& p = pending_[k];
            apply_entry(voltages_, p.target, p.value);
            std::ostringstream os;
            os << p.target << '=' << p.value;
            log({p.t, "voltage_change", -1, os.str()});
            ++k;
        }
        pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(k));
    }

    void check_collisions(double t) {
        const double lim = 2.0 * cfg_.collision_radius;
        for (std::size_t i = 0; i < particles_.size(); ++i)
            for (std::size_t j = i + 1; j < particles_.size(); ++j) {
                if (!particles_[i].active || !particles_[j].active) continue;
                const auto& a = particles_[i].r;
                const auto& b = particles_[j].r;
                const double d = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                                           (a[2] - b[2]) * (a[2] - b[2]));
                const auto key = std::make_pair(particles_[i].id, particles_[j].id);
                const bool close = d < lim;
                if (close && !in_contact_[key])
                    log({t, "collision", particles_[i].id, "with " + std::to_string(particles_[j].id)});
                in_contact_[key] = close;
            }
    }

    TrapModel model_;
    DriveParams drive_;
    SimConfig cfg_;
    VoltageState voltages_;
    std::vector<Particle> particles_;
    std::vector<Pending> pending_;
    std::vector<SimEvent> events_;
    std::map<std::pair<int, int>, bool> in_contact_;
    std::function<Vec3d(const Vec3d&)> external_field_;
    std::uint64_t step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Settling and sweeps (single particle)

struct SettleOptions {
    double tolerance = 1e-6;   // m, change of the 5-period window average
    int window_periods = 5;
    int measure_periods = 5;
    double min_time = 0.0;     // s, integrate at least this long
    double max_time = 10.0;    // s
};

struct SettleResult {
    bool settled = false;
    bool ejected = false;
    double y_mean = 0.0;  // m, mean over whole AC periods
    double x_mean = 0.0;
    double z_mean = 0.0;
    double alpha = 0.0;   // m, peak-to-peak y within one AC period, averaged
    double t = 0.0;       // simulation time at the end
};

namespace detail {

struct PeriodStats {
    Vec3d mean;
    double y_pp;
};

/// Runs one AC period; per-particle period means and peak-to-peak y.
inline std::vector<PeriodStats> run_one_period(Simulator& sim, int steps) {
    const std::size_t n = sim.particles().size();
    std::vector<PeriodStats> st(n, PeriodStats{{0.0, 0.0, 0.0}, 0.0});
    std::vector<double> ymin(n, 1e300), ymax(n, -1e300);
    for (int k = 0; k < steps; ++k) {
        sim.step();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = sim.particles()[i];
            for (int d = 0; d < 3; ++d) st[i].mean[d] += p.r[d];
            ymin[i] = std::min(ymin[i], p.r[1]);
            ymax[i] = std::max(ymax[i], p.r[1]);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) st[i].mean[d] /= steps;
        st[i].y_pp = ymax[i] - ymin[i];
    }
    return st;
}

}  // namespace detail

/// Integrates until every active particle's period-averaged position stops
/// moving (change of the window average below tolerance), then measures mean
/// position and micromotion over whole AC periods. Ejection is reported, not
/// thrown. One result per particle, roster order.
inline std::vector<SettleResult> settle_all(Simulator& sim, const SettleOptions& opt = {}) {
    const std::size_t n = sim.particles().size();
    std::vector<SettleResult> res(n);
    const int steps = std::max(1, static_cast<int>(std::lround(sim.drive().period() / sim.config().dt)));
    const double t_start = sim.time();
    std::vector<std::vector<detail::PeriodStats>> hist;
    const int w = opt.window_periods;
    auto all_lost = [&] {
        return std::none_of(sim.particles().begin(), sim.particles().end(), [](const auto& p) { return p.active; });
    };
    bool settled = false;
    while (true) {
        hist.push_back(detail::run_one_period(sim, steps));
        if (all_lost()) break;
        const double elapsed = sim.time() - t_start;
        if (static_cast<int>(hist.size()) >= 2 * w && elapsed >= opt.min_time) {
            const int h = static_cast<int>(hist.size());
            double worst = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!sim.particles()[i].active) continue;
                double d2 = 0.0;
                for (int d = 0; d < 3; ++d) {
                    double a = 0.0, b = 0.0;
                    for (int k = 0; k < w; ++k) {
                        a += hist[h - w + k][i].mean[d];
                        b += hist[h - 2 * w + k][i].mean[d];
                    }
                    d2 += (a - b) * (a - b) / (w * w);
                }
                worst = std::max(worst, std::sqrt(d2));
            }
            if (worst < opt.tolerance) {
                settled = true;
                break;
            }
        }
        if (elapsed >= opt.max_time) break;
    }
    std::vector<Vec3d> sum(n, Vec3d{0.0, 0.0, 0.0});
    std::vector<double> pp(n, 0.0);
    if (!all_lost())
        for (int k = 0; k < opt.measure_periods; ++k) {
            const auto st = detail::run_one_period(sim, steps);
            for (std::size_t i = 0; i < n; ++i) {
                for (int d = 0; d < 3; ++d) sum[i][d] += st[i].mean[d];
                pp[i] += st[i].y_pp;
            }
        }
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = res[i];
        r.t = sim.time();
        r.ejected = !sim.particles()[i].active;
        r.settled = settled && !r.ejected;
        if (r.ejected) continue;
        r.x_mean = sum[i][0] / opt.measure_periods;
        r.y_mean = sum[i][1] / opt.measure_periods;
        r.z_mean = sum[i][2] / opt.measure_periods;
        r.alpha = pp[i] / opt.measure_periods;
        if (r.settled) sim.log({r.t, "settled", sim.particles()[i].id, ""});
    }
    return res;
}

/// Single-particle form of settle_all.
inline SettleResult settle(Simulator& sim, std::size_t idx = 0, const SettleOptions& opt = {}) {
    return settle_all(sim, opt).at(idx);
}

/// Settles a single particle under fixed voltages from its current state.
inline SettleResult settle_particle(const TrapModel& model, const Particle& p, const VoltageState& v,
                                    const SimConfig& cfg = {}, const SettleOptions& opt = {}) {
    Simulator sim(model, {p}, cfg, v);
    return settle(sim, 0, opt);
}

struct SweepStep {
    double v_central;  // V
    double hold_s;     // s, upper bound on the time spent at this voltage
};

/// Linear ramp of the central voltage, e.g. -40 -> -200 V in -5 V steps.
inline std::vector<SweepStep> linear_sweep(double v_start, double v_stop, double v_step, double hold_s = 5.0) {
    if (v_step == 0.0 || (v_stop - v_start) * v_step < 0.0) throw invalid_input("sweep step has the wrong sign");
    std::vector<SweepStep> out;
    const int n = static_cast<int>(std::floor((v_stop - v_start) / v_step + 1e-9));
    for (int k = 0; k <= n; ++k) out.push_back({v_start + k * v_step, hold_s});
    return out;
}

struct SweepOptions {
    double lateral_jitter = 10e-6;  // m, std dev of the x kick applied at each voltage step
    double min_hold = 0.5;          // s, time spent at a step before settling can end it
    SettleOptions settle{};
    VoltageState base{};            // non-central voltages held during the sweep
    // Optional measurement after each settle (e.g. camera frames). It may
    // overwrite y/alpha and their sigmas; returning false means the particle
    // was not seen and ends the sweep like an ejection.
    std::function<bool(Simulator&, HeightVoltagePoint&)> observe;
};

struct SweepResult {
    HeightVoltageSeries series;
    std::optional<double> ejection_voltage;  // V, central voltage at which the particle was lost
    std::vector<SimEvent> events;
};

/// Steps the central voltage through the sweep, recording the settled height
/// and micromotion at each step; stops at ejection. Measurement sigmas are
/// left at zero for the caller (vision or a noise model) to fill.
inline SweepResult voltage_sweep_experiment(const TrapModel& model, Particle p, const std::vector<SweepStep>& sweep,
                                            const SimConfig& cfg = {}, const SweepOptions& opt = {}) {
    if (sweep.empty()) throw invalid_input("sweep must be nonempty");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> jitter(0.0, opt.lateral_jitter);
    VoltageState v = opt.base;
    v.central = sweep.front().v_central;
    Simulator sim(model, {p}, cfg, v);
    SweepResult out;
    for (const auto& st : sweep) {
        v.central = st.v_central;
        sim.set_voltages(v, "central=" + std::to_string(st.v_central));
        sim.particles()[0].r[0] += jitter(rng);
        SettleOptions so = opt.settle;
        so.min_time = std::min(opt.min_hold, st.hold_s);
        so.max_time = st.hold_s;
        const auto r = settle(sim, 0, so);
        if (r.ejected) {
            out.ejection_voltage = st.v_central;
            break;
        }
        HeightVoltagePoint pt{st.v_central, r.y_mean, 0.0, r.alpha, 0.0};
        if (opt.observe && !opt.observe(sim, pt)) {
            out.ejection_voltage = st.v_central;
            break;
        }
        out.series.push_back(pt);
    }
    out.events = sim.events();
    return out;
}

// ---------------------------------------------------------------------------
// Multi-particle runs

inline constexpr std::size_t max_particles = 16;

/// Integrates all particles for cfg.duration while applying the schedule
/// (segment changes delayed by the relay). Voltages before the first entry
/// are `initial`.
inline Trajectory simulate_multi(const TrapModel& model, const std::vector<Particle>& particles,
                                 const VoltageSchedule& schedule, const SimConfig& cfg,
                                 const VoltageState& initial = {}) {
    if (particles.empty() || particles.size() > max_particles) throw invalid_input("simulate_multi takes 1..16 particles");
    Simulator sim(model, particles, cfg, initial);
    sim.schedule(schedule);
    Trajectory tr;
    sim.record(tr);
    sim.run_for(cfg.duration, &tr);
    tr.events = sim.events();
    return tr;
}

// ---------------------------------------------------------------------------
// Export

inline void write_trajectory_csv(std::ostream& out, const Trajectory& tr) {
    out << "t,id,x,y,z\n";
    out.precision(12);
    for (const auto& s : tr.samples)
        for (std::size_t i = 0; i < s.r.size(); ++i)
            out << s.t << ',' << tr.ids[i] << ',' << s.r[i][0] << ',' << s.r[i][1] << ',' << s.r[i][2] << '\n';
}

inline void to_json(nlohmann::json& j, const SimEvent& e) {
    j = {{"t", e.t}, {"kind", e.kind}, {"particle", e.particle}, {"detail", e.detail}};
}

inline nlohmann::json events_json(const std::vector<SimEvent>& ev) { return nlohmann::json(ev); }

inline void to_json(nlohmann::json& j, const SimConfig& c) {
    j = {{"dt", c.dt},
         {"drag", c.drag},
         {"enable_coulomb", c.enable_coulomb},
         {"duration", c.duration},
         {"seed", c.seed},
         {"sample_stride", c.sample_stride},
         {"collision_radius", c.collision_radius},
         {"lateral_limit", c.lateral_limit}};
}
inline void from_json(const nlohmann::json& j, SimConfig& c) {
    c = SimConfig{};
    if (j.contains("dt")) c.dt = j.at("dt").get<double>();
    if (j.contains("drag")) c.drag = j.at("drag").get<double>();
    if (j.contains("enable_coulomb")) c.enable_coulomb = j.at("enable_coulomb").get<bool>();
    if (j.contains("duration")) c.duration = j.at("duration").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("sample_stride")) c.sample_stride = j.at("sample_stride").get<int>();
    if (j.contains("collision_radius")) c.collision_radius = j.at("collision_radius").get<double>();
    if (j.contains("lateral_limit")) c.lateral_limit = j.at("lateral_limit").get<double>();
}

}  // namespace trap
