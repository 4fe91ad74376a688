#pragma once

// Live lab session: a running simulation steered by commands, periodic state
// messages, JSON-lines session logs with per-line CRC, deterministic replay,
// and a threaded runner that paces the session against the wall clock.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <future>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <boost/crc.hpp>

#include "shuttle.hpp"

namespace trap {

inline constexpr int protocol_version = 1;

/// Variac setting (V RMS) to AC rail amplitude (V RMS) through the step-up
/// transformer: piecewise linear through (0,0), (3,12), (20,963), (123,1140).
inline double variac_to_ac_rms(double variac_rms) {
    static constexpr std::array<std::array<double, 2>, 4> pts{{{0, 0}, {3, 12}, {20, 963}, {123, 1140}}};
    if (variac_rms <= 0.0) return 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (variac_rms <= pts[i][0])
            return pts[i - 1][1] + (variac_rms - pts[i - 1][0]) * (pts[i][1] - pts[i - 1][1]) / (pts[i][0] - pts[i - 1][0]);
    return pts.back()[1];
}

struct ServiceLimits {
    double central_min = -300.0, central_max = 0.0;
    double variac_min = 0.0, variac_max = 123.0;
    double endcap_min = -244.1, endcap_max = 0.0;
    double speed_min = 0.1, speed_max = 100.0;
    int max_load = 16;
};

struct SessionConfig {
    TrapGeometry geometry = default_geometry();
    SimConfig sim = [] {
        SimConfig c;
        c.enable_coulomb = true;
        return c;
    }();
    double variac_rms = 20.0;
    double central_v = 0.0;
    double endcap_v = -244.0;
    double relay_delay = 4.2e-3;
    double gamma_min = -5e-3, gamma_max = -5e-4;  // C/kg, load_particles default range
    LevelVoltages levels{};
    std::uint64_t seed = 0;
    ServiceLimits limits{};
};

inline void to_json(nlohmann::json& j, const SessionConfig& c) {
    j = {{"geometry", c.geometry}, {"sim", c.sim}, {"variac_rms", c.variac_rms}, {"central_v", c.central_v},
         {"endcap_v", c.endcap_v}, {"relay_delay_s", c.relay_delay}, {"gamma_min", c.gamma_min},
         {"gamma_max", c.gamma_max}, {"seed", c.seed},
         {"levels", {{"high", c.levels.high}, {"low", c.levels.low}, {"off", c.levels.off}}}};
}
inline void from_json(const nlohmann::json& j, SessionConfig& c) {
    c = SessionConfig{};
    if (j.contains("geometry")) c.geometry = j.at("geometry").get<TrapGeometry>();
    if (j.contains("sim")) c.sim = j.at("sim").get<SimConfig>();
    c.variac_rms = j.value("variac_rms", c.variac_rms);
    c.central_v = j.value("central_v", c.central_v);
    c.endcap_v = j.value("endcap_v", c.endcap_v);
    c.relay_delay = j.value("relay_delay_s", c.relay_delay);
    c.gamma_min = j.value("gamma_min", c.gamma_min);
    c.gamma_max = j.value("gamma_max", c.gamma_max);
    c.seed = j.value("seed", c.seed);
    if (j.contains("levels")) {
        const auto& l = j.at("levels");
        c.levels.high = l.value("high", c.levels.high);
        c.levels.low = l.value("low", c.levels.low);
        c.levels.off = l.value("off", c.levels.off);
    }
    c.levels.validate();
}

/// Typed command failure; code is one of range, bad_command, busy, state.
struct CommandError : invalid_input {
    std::string code;
    CommandError(std::string c, const std::string& what) : invalid_input(what), code(std::move(c)) {}
};

enum class Mode { idle, loading, running };

inline const char* mode_name(Mode m) { return m == Mode::idle ? "idle" : m == Mode::loading ? "loading" : "running"; }

// ---------------------------------------------------------------------------
// Session log

inline std::string crc32_hex(const std::string& s) {
    boost::crc_32_type crc;
    crc.process_bytes(s.data(), s.size());
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", crc.checksum());
    return buf;
}

/// Line = JSON object with a "crc" member over the object's dump without it.
inline std::string log_line(nlohmann::json obj) {
    obj.erase("crc");
    obj["crc"] = crc32_hex(obj.dump());
    return obj.dump();
}

struct LogError : invalid_input {
    std::size_t line;
    LogError(std::size_t l, const std::string& what) : invalid_input("log line " + std::to_string(l) + ": " + what), line(l) {}
};

/// Parses and verifies one log line (1-based number for errors).
inline nlohmann::json parse_log_line(const std::string& text, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        throw LogError(line_no, "not valid JSON (truncated?)");
    }
    if (!j.is_object() || !j.contains("crc") || !j.at("crc").is_string()) throw LogError(line_no, "missing checksum");
    const std::string crc = j.at("crc").get<std::string>();
    j.erase("crc");
    if (crc32_hex(j.dump()) != crc) throw LogError(line_no, "checksum mismatch");
    return j;
}

// ---------------------------------------------------------------------------
// Session

class LabSession {
public:
    explicit LabSession(SessionConfig cfg, std::ostream* log = nullptr) : cfg_(std::move(cfg)), log_(log) {
        cfg_.geometry.validate();
        cfg_.levels.validate();
        check_range(cfg_.variac_rms, cfg_.limits.variac_min, cfg_.limits.variac_max, "variac_rms");
        check_range(cfg_.central_v, cfg_.limits.central_min, cfg_.limits.central_max, "central_v");
        check_range(cfg_.endcap_v, cfg_.limits.endcap_min, cfg_.limits.endcap_max, "endcap_v");
        y_null_ = find_ac_null(cfg_.geometry).y_null;
        build();
        if (log_) write({{"k", "header"}, {"v", protocol_version}, {"config", cfg_}});
    }

    const SessionConfig& config() const { return cfg_; }
    double time() const { return sim_->time(); }
    bool paused() const { return paused_; }
    bool resetting() const { return resetting_; }
    double speed() const { return speed_; }
    Mode mode() const { return mode_; }
    double variac_rms() const { return variac_; }
    double y_null() const { return y_null_; }
    const Simulator& simulator() const { return *sim_; }

    /// Applies one command message and returns its ack.
    nlohmann::json handle(const nlohmann::json& msg) {
        nlohmann::json ack{{"v", protocol_version}, {"type", "ack"}, {"id", msg.value("id", nlohmann::json())}};
        try {
            auto extra = apply(msg);
            ack["ok"] = true;
            if (!extra.is_null()) ack["result"] = std::move(extra);
        } catch (const CommandError& e) {
            ack["ok"] = false;
            ack["error"] = {{"code", e.code}, {"message", e.what()}};
        } catch (const std::exception& e) {
            ack["ok"] = false;
            ack["error"] = {{"code", "bad_command"}, {"message", e.what()}};
        }
        if (log_) write({{"k", "cmd"}, {"msg", msg}, {"ack", ack}});
        return ack;
    }

    /// Advances simulated time by whole steps (fractions carry over). A
    /// pending reset completes here instead.
    void advance(double sim_seconds) {
        if (log_) write({{"k", "advance"}, {"dt", sim_seconds}});
        if (resetting_) {
            build();
            resetting_ = false;
            return;
        }
        if (paused_ || sim_seconds <= 0.0) return;
        carry_ += sim_seconds / sim_->config().dt;
        auto steps = static_cast<std::int64_t>(std::floor(carry_ + 1e-9));
        carry_ -= static_cast<double>(steps);
        for (; steps > 0; --steps) {
            try {
                sim_->step();
            } catch (const physics_divergence& e) {
                sim_->log({sim_->time(), "divergence", -1, e.what()});
                paused_ = true;
                break;
            }
            push_history();
        }
        if (mode_ == Mode::loading && sim_->time() >= loaded_at_ + 0.5) mode_ = Mode::running;
        if (mode_ != Mode::idle && std::none_of(sim_->particles().begin(), sim_->particles().end(),
                                                [](const Particle& p) { return p.active; }))
            mode_ = Mode::idle;
    }

    /// Current state message; new events since the previous message only.
    nlohmann::json state() {
        nlohmann::json s{{"v", protocol_version}, {"type", "state"}, {"seq", seq_++}, {"t", sim_->time()},
                         {"mode", mode_name(mode_)}, {"paused", paused_}, {"speed", speed_}};
        const auto& v = sim_->voltages();
        s["voltages"] = {{"variac_rms", variac_},
                         {"ac_rms", sim_->drive().v_ac_rms()},
                         {"central", v.central},
                         {"endcap", v.endcap},
                         {"segments", {{"A", v.segments[0]}, {"B", v.segments[1]}, {"C", v.segments[2]},
                                       {"D", v.segments[3]}, {"E", v.segments[4]}}}};
        auto parts = nlohmann::json::array();
        for (const auto& p : sim_->particles())
            parts.push_back({{"id", p.id}, {"x_mm", p.r[0] * 1e3}, {"y_mm", p.r[1] * 1e3}, {"z_mm", p.r[2] * 1e3},
                             {"gamma", p.gamma()}, {"active", p.active}});
        s["particles"] = std::move(parts);
        s["derived"] = derived();
        auto ev = nlohmann::json::array();
        const auto& all = sim_->events();
        for (; events_sent_ < all.size(); ++events_sent_) ev.push_back(all[events_sent_]);
        s["events"] = std::move(ev);
        if (log_) write({{"k", "state"}, {"msg", s}});
        return s;
    }

    /// Mean height and peak-to-peak y of the first active particle over the
    /// last full AC period; null until one period has been seen.
    nlohmann::json derived() const {
        for (std::size_t i = 0; i < sim_->particles().size(); ++i) {
            if (!sim_->particles()[i].active) continue;
            if (i >= history_.size()) break;
            const auto& h = history_[i];
            if (h.size() < period_steps_) break;
            double sum = 0, lo = 1e300, hi = -1e300;
            for (double y : h) {
                sum += y;
                lo = std::min(lo, y);
                hi = std::max(hi, y);
            }
            return {{"particle", sim_->particles()[i].id},
                    {"y_mean_mm", sum / static_cast<double>(h.size()) * 1e3},
                    {"alpha_mm", (hi - lo) * 1e3}};
        }
        return {{"particle", nullptr}, {"y_mean_mm", nullptr}, {"alpha_mm", nullptr}};
    }

    /// Writes the closing line of the log.
    void close_log() {
        if (log_) write({{"k", "end"}, {"lines", lines_ + 1}});
        log_ = nullptr;
    }

private:
    static void check_range(double v, double lo, double hi, const std::string& what) {
        if (!std::isfinite(v) || v < lo || v > hi)
            throw CommandError("range", what + " " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                                            std::to_string(hi) + "]");
    }
    static double number(const nlohmann::json& msg, const char* key) {
        if (!msg.contains(key) || !msg.at(key).is_number()) throw CommandError("bad_command", std::string("missing number '") + key + "'");
        return msg.at(key).get<double>();
    }

    void build() {
        VoltageState v;
        v.central = cfg_.central_v;
        v.endcap = cfg_.endcap_v;
        variac_ = cfg_.variac_rms;
        model_ = std::make_unique<TrapModel>(cfg_.geometry, drive_for(variac_));
        sim_ = std::make_unique<Simulator>(*model_, std::vector<Particle>{}, cfg_.sim, v);
        rng_.seed(cfg_.seed);
        history_.clear();
        events_sent_ = 0;
        carry_ = 0.0;
        paused_ = false;
        mode_ = Mode::idle;
        next_id_ = 0;
        period_steps_ = static_cast<std::size_t>(std::llround(model_->drive().period() / cfg_.sim.dt));
    }

    DriveParams drive_for(double variac) const {
        // a dead transformer still needs a finite frequency; keep a token amplitude
        return DriveParams::from_rms(std::max(variac_to_ac_rms(variac), 1e-9));
    }

    void push_history() {
        const auto& ps = sim_->particles();
        history_.resize(ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!ps[i].active) continue;
            auto& h = history_[i];
            h.push_back(ps[i].r[1]);
            while (h.size() > period_steps_) h.pop_front();
        }
    }

    nlohmann::json apply(const nlohmann::json& msg) {
        if (msg.value("v", protocol_version) != protocol_version) throw CommandError("bad_command", "unsupported protocol version");
        if (!msg.contains("cmd") || !msg.at("cmd").is_string()) throw CommandError("bad_command", "missing 'cmd'");
        const std::string cmd = msg.at("cmd").get<std::string>();
        if (resetting_ && cmd != "reset") throw CommandError("busy", "session is resetting");
        const double now = sim_->time();
        const auto& lim = cfg_.limits;

        if (cmd == "set_central_v") {
            const double v = number(msg, "value");
            check_range(v, lim.central_min, lim.central_max, "central voltage");
            sim_->schedule_change(now, "central", v);
        } else if (cmd == "set_endcap_v") {
            const double v = number(msg, "value");
            check_range(v, lim.endcap_min, lim.endcap_max, "endcap voltage");
            sim_->schedule_change(now, "endcap", v);
        } else if (cmd == "set_variac_rms") {
            const double v = number(msg, "value");
            check_range(v, lim.variac_min, lim.variac_max, "variac RMS");
            variac_ = v;
            sim_->set_drive(drive_for(v));
        } else if (cmd == "apply_pattern") {
            SegmentPattern p;
            if (msg.contains("pattern") && msg.at("pattern").is_string()) p = pattern_by_name(msg.at("pattern").get<std::string>());
            else if (msg.contains("pattern")) p = msg.at("pattern").get<SegmentPattern>();
            else throw CommandError("bad_command", "apply_pattern needs 'pattern'");
            p.values = cfg_.levels;  // levels are fixed by the divider network
            VoltageSchedule s;
            s.relay_delay = cfg_.relay_delay;
            for (int i = 0; i < 5; ++i) s.add(0.0, std::string(1, static_cast<char>('A' + i)), p.values.at(p.levels[i]));
            for (const auto& e : s.entries) sim_->schedule_change(now + s.effective_time(e), e.target, e.value);
            return {{"pattern", p.name}, {"effective_t", now + cfg_.relay_delay}};
        } else if (cmd == "set_segment") {
            const std::string seg = msg.value("segment", "");
            if (VoltageState::segment_index(seg) < 0) throw CommandError("bad_command", "unknown segment '" + seg + "'");
            const std::string lvl = msg.value("level", "");
            const Level l = lvl == "high" ? Level::high : lvl == "low" ? Level::low : lvl == "off" ? Level::off
                                                                                   : throw CommandError("bad_command", "unknown level '" + lvl + "'");
            sim_->schedule_change(now + cfg_.relay_delay, seg, cfg_.levels.at(l));
        } else if (cmd == "load_particles") {
            const int count = msg.value("count", 1);
            const int active = static_cast<int>(std::count_if(sim_->particles().begin(), sim_->particles().end(),
                                                              [](const Particle& p) { return p.active; }));
            if (count < 1 || active + count > lim.max_load)
                throw CommandError("range", "load count must keep the trap at 1.." + std::to_string(lim.max_load) + " particles");
            double gmin = msg.value("gamma_min", cfg_.gamma_min), gmax = msg.value("gamma_max", cfg_.gamma_max);
            if (gmin > gmax) std::swap(gmin, gmax);
            if (!(gmax < 0.0)) throw CommandError("range", "gamma range must be negative");
            if (sim_->particles().size() + static_cast<std::size_t>(count) > 4 * max_particles)
                throw CommandError("state", "particle roster full; reset the session");
            std::uniform_real_distribution<double> gam(gmin, gmax);
            std::normal_distribution<double> jit(0.0, 1.0);
            auto ids = nlohmann::json::array();
            for (int k = 0; k < count; ++k) {
                // dropped in above the null with a little scatter
                const Vec3d r{cfg_.geometry.center_x() + 50e-6 * jit(rng_), y_null_ + 1e-3 + 0.5e-3 * k,
                              1.5e-3 * jit(rng_)};
                auto p = Particle::with_gamma(next_id_++, gam(rng_), r);
                sim_->add_particle(p);
                ids.push_back(p.id);
            }
            mode_ = Mode::loading;
            loaded_at_ = now;
            return {{"ids", ids}};
        } else if (cmd == "reset") {
            resetting_ = true;  // completes on the next advance
        } else if (cmd == "pause") {
            paused_ = true;
        } else if (cmd == "resume") {
            paused_ = false;
        } else if (cmd == "set_speed") {
            const double v = number(msg, "value");
            check_range(v, lim.speed_min, lim.speed_max, "speed");
            speed_ = v;
        } else if (cmd == "estimate_gamma") {
            return estimate_gamma(msg);
        } else {
            throw CommandError("bad_command", "unknown command '" + cmd + "'");
        }
        return nullptr;
    }

    // Method 1 or 2 on a series the client collected (e.g. from a sweep).
    nlohmann::json estimate_gamma(const nlohmann::json& msg) const {
        HeightVoltageSeries s;
        for (const auto& pt : msg.at("series"))
            s.push_back({pt.at("v_central").get<double>(), pt.at("y_mm").get<double>() * 1e-3,
                         pt.value("sigma_y_mm", 0.05) * 1e-3, pt.value("alpha_mm", 0.0) * 1e-3,
                         pt.value("sigma_alpha_mm", 0.0) * 1e-3});
        const std::string method = msg.value("method", "null_balance");
        if (method == "null_balance") {
            const auto mm = micromotion_minimum(s);
            auto e = gamma_from_null_balance(mm.y_vertex, mm.v_vertex, cfg_.geometry);
            nlohmann::json j = e;
            j["v_min"] = mm.v_vertex;
            return j;
        }
        if (method == "height_fit") {
            HeightFitOptions o;
            o.drag_rate = cfg_.sim.drag / sphere_mass();
            VoltageState base = sim_->voltages();
            return fit_gamma_height_curve(s, TrapModel(cfg_.geometry, sim_->drive()), base, o);
        }
        throw CommandError("bad_command", "unknown method '" + method + "'");
    }

    void write(nlohmann::json obj) {
        *log_ << log_line(std::move(obj)) << '\n';
        ++lines_;
    }

    SessionConfig cfg_;
    std::ostream* log_ = nullptr;
    std::size_t lines_ = 0;
    double y_null_ = 0.0;
    std::unique_ptr<TrapModel> model_;
    std::unique_ptr<Simulator> sim_;
    std::mt19937_64 rng_;
    std::vector<std::deque<double>> history_;
    std::size_t period_steps_ = 1;
    std::size_t events_sent_ = 0;
    std::uint64_t seq_ = 0;
    double carry_ = 0.0;
    double variac_ = 0.0;
    double speed_ = 1.0;
    double loaded_at_ = 0.0;
    int next_id_ = 0;
    bool paused_ = false;
    bool resetting_ = false;
    Mode mode_ = Mode::idle;
};

// ---------------------------------------------------------------------------
// Replay

struct ReplayResult {
    std::size_t lines = 0;
    std::size_t states = 0;
    std::size_t commands = 0;
    std::optional<std::size_t> first_mismatch;  // line whose recorded message differs from the replay
    std::vector<nlohmann::json> state_stream;
};

/// Re-runs a recorded session from its header config and compares every ack
/// and state message. Corrupt or truncated logs throw LogError at the line.
inline ReplayResult replay_session(std::istream& in, std::ostream* relog = nullptr) {
    ReplayResult r;
    std::unique_ptr<LabSession> s;
    std::string text;
    bool ended = false;
    while (std::getline(in, text)) {
        ++r.lines;
        if (ended) throw LogError(r.lines, "content after end marker");
        const auto j = parse_log_line(text, r.lines);
        const std::string k = j.value("k", "");
        if (r.lines == 1) {
            if (k != "header") throw LogError(1, "first line must be the session header");
            if (j.value("v", 0) != protocol_version) throw LogError(1, "unsupported log version");
            s = std::make_unique<LabSession>(j.at("config").get<SessionConfig>(), relog);
            continue;
        }
        if (k == "cmd") {
            ++r.commands;
            if (s->handle(j.at("msg")) != j.at("ack") && !r.first_mismatch) r.first_mismatch = r.lines;
        } else if (k == "advance") {
            s->advance(j.at("dt").get<double>());
        } else if (k == "state") {
            ++r.states;
            auto st = s->state();
            if (st != j.at("msg") && !r.first_mismatch) r.first_mismatch = r.lines;
            r.state_stream.push_back(std::move(st));
        } else if (k == "end") {
            if (j.value("lines", std::size_t{0}) != r.lines) throw LogError(r.lines, "line count does not match end marker");
            ended = true;
        } else {
            throw LogError(r.lines, "unknown record kind '" + k + "'");
        }
    }
    if (!s) throw LogError(1, "empty log");
    if (!ended) throw LogError(r.lines + 1, "log truncated (no end marker)");
    if (relog) s->close_log();
    return r;
}

// ---------------------------------------------------------------------------
// Threaded runner

/// Bounded queue of state messages for one consumer. A full queue drops its
/// oldest message, so a slow reader skips frames but never sees them out of
/// order.
class StateSubscription {
public:
    explicit StateSubscription(std::size_t capacity) : cap_(std::max<std::size_t>(1, capacity)) {}
    void push(const nlohmann::json& s) {
        {
            std::lock_guard lk(m_);
            if (q_.size() == cap_) {
                q_.pop_front();
                ++dropped_;
            }
            q_.push_back(s);
        }
        cv_.notify_one();
    }
    std::optional<nlohmann::json> pop(std::chrono::milliseconds timeout) {
        std::unique_lock lk(m_);
        if (!cv_.wait_for(lk, timeout, [&] { return !q_.empty() || closed_; })) return std::nullopt;
        if (q_.empty()) return std::nullopt;
        auto s = std::move(q_.front());
        q_.pop_front();
        return s;
    }
    void close() {
        {
            std::lock_guard lk(m_);
            closed_ = true;
        }
        cv_.notify_all();
    }
    bool closed() const {
        std::lock_guard lk(m_);
        return closed_;
    }
    std::size_t dropped() const {
        std::lock_guard lk(m_);
        return dropped_;
    }

private:
    std::size_t cap_;
    mutable std::mutex m_;
    std::condition_variable cv_;
    std::deque<nlohmann::json> q_;
    std::size_t dropped_ = 0;
    bool closed_ = false;
};

/// Owns a session on its own thread. Commands are queued and applied in
/// arrival order at tick boundaries; each tick advances speed/rate seconds of
/// simulated time and broadcasts one state message.
class SessionRunner {
public:
    explicit SessionRunner(SessionConfig cfg, std::ostream* log = nullptr, double rate_hz = 60.0)
        : session_(std::move(cfg), log), rate_(rate_hz) {
        if (!(rate_hz > 0.0)) throw invalid_input("stream rate must be > 0");
    }
    ~SessionRunner() { stop(); }
    SessionRunner(const SessionRunner&) = delete;
    SessionRunner& operator=(const SessionRunner&) = delete;

    void start() {
        if (thread_.joinable()) return;
        running_ = true;
        thread_ = std::thread([this] { loop(); });
    }
    void stop() {
        if (!thread_.joinable()) return;
        running_ = false;
        thread_.join();
        std::lock_guard lk(m_);
        stopped_ = true;
        for (auto& [cmd, promise] : inbox_) promise.set_value(reject(cmd));
        inbox_.clear();
        for (auto& s : subs_) s->close();
    }

    std::future<nlohmann::json> submit(nlohmann::json cmd) {
        std::promise<nlohmann::json> p;
        auto f = p.get_future();
        std::lock_guard lk(m_);
        if (stopped_) p.set_value(reject(cmd));
        else inbox_.emplace_back(std::move(cmd), std::move(p));
        return f;
    }

    std::shared_ptr<StateSubscription> subscribe(std::size_t capacity = 8) {
        auto s = std::make_shared<StateSubscription>(capacity);
        std::lock_guard lk(m_);
        subs_.push_back(s);
        return s;
    }

    /// One tick without the thread (tests, offline runs).
    nlohmann::json tick() {
        std::deque<std::pair<nlohmann::json, std::promise<nlohmann::json>>> batch;
        {
            std::lock_guard lk(m_);
            batch.swap(inbox_);
        }
        for (auto& [cmd, promise] : batch) promise.set_value(session_.handle(cmd));
        session_.advance(session_.speed() / rate_);
        auto st = session_.state();
        std::lock_guard lk(m_);
        std::erase_if(subs_, [](const auto& s) { return s->closed(); });
        for (auto& s : subs_) s->push(st);
        return st;
    }

    /// Read-only access for setup before start() or after stop().
    const LabSession& session() const { return session_; }
    void close_log() { session_.close_log(); }

private:
    static nlohmann::json reject(const nlohmann::json& cmd) {
        return {{"v", protocol_version}, {"type", "ack"}, {"id", cmd.value("id", nlohmann::json())}, {"ok", false},
                {"error", {{"code", "state"}, {"message", "session stopped"}}}};
    }
    void loop() {
        using clock = std::chrono::steady_clock;
        const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / rate_));
        auto next = clock::now();
        while (running_) {
            tick();
            next += period;
            const auto now = clock::now();
            if (next < now) next = now;  // behind: do not try to catch up
            std::this_thread::sleep_until(next);
        }
    }

    LabSession session_;
    double rate_;
    std::atomic<bool> running_{false};
    bool stopped_ = false;  // guarded by m_
    std::thread thread_;
    std::mutex m_;
    std::deque<std::pair<nlohmann::json, std::promise<nlohmann::json>>> inbox_;
    std::vector<std::shared_ptr<StateSubscription>> subs_;
};

}  // namespace trap
