// trapctl: batch front end for the trap model, experiments and vision, and
// the live session server.

#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <random>

#include <CLI11.hpp>

#include <trap/server.hpp>
#include <trap/vision.hpp>

using namespace trap;
using nlohmann::json;

namespace {

// Whole-run configuration document. Every block is optional.
struct Config {
    json doc = json::object();
    std::uint64_t seed = 0;

    TrapGeometry geometry() const { return doc.contains("geometry") ? doc["geometry"].get<TrapGeometry>() : default_geometry(); }
    DriveParams drive() const { return doc.contains("drive") ? doc["drive"].get<DriveParams>() : DriveParams{}; }
    TrapModel model() const { return TrapModel(geometry(), drive()); }
    VoltageState voltages() const { return doc.contains("voltages") ? doc["voltages"].get<VoltageState>() : VoltageState{}; }
    SimConfig sim() const {
        SimConfig c = doc.contains("sim") ? doc["sim"].get<SimConfig>() : SimConfig{};
        c.seed = seed;
        c.validate(drive());
        return c;
    }
    CameraModel camera() const { return doc.contains("camera") ? doc["camera"].get<CameraModel>() : CameraModel{}; }

    static Particle particle_from(const json& j, int id, const TrapGeometry& g) {
        const double gamma = j.value("gamma", -2.1e-3);
        if (!(gamma != 0.0) || !std::isfinite(gamma)) throw invalid_input("particle gamma must be finite and nonzero");
        Vec3d r{g.center_x(), 3e-3, 0.0};
        if (j.contains("position_mm")) {
            const auto p = j["position_mm"].get<std::vector<double>>();
            if (p.size() != 3) throw invalid_input("position_mm takes [x, y, z]");
            r = {p[0] * 1e-3, p[1] * 1e-3, p[2] * 1e-3};
        }
        return Particle::with_gamma(j.value("id", id), gamma, r, j.value("mass", sphere_mass()));
    }
    Particle particle() const { return particle_from(doc.value("particle", json::object()), 0, geometry()); }
    std::vector<Particle> particles() const {
        std::vector<Particle> out;
        const auto g = geometry();
        if (doc.contains("particles"))
            for (std::size_t i = 0; i < doc["particles"].size(); ++i) out.push_back(particle_from(doc["particles"][i], int(i), g));
        return out;
    }
    SessionConfig session() const {
        SessionConfig s = doc.contains("session") ? doc["session"].get<SessionConfig>() : SessionConfig{};
        if (doc.contains("geometry")) s.geometry = geometry();
        if (doc.contains("sim")) s.sim = doc["sim"].get<SimConfig>();
        s.seed = seed;
        return s;
    }
};

Config load_config(const std::string& path, std::uint64_t seed) {
    Config c;
    c.seed = seed;
    if (path.empty()) return c;
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open config " + path);
    try {
        c.doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw invalid_input("config " + path + ": " + e.what());
    }
    if (!c.doc.is_object()) throw invalid_input("config must be a JSON object");
    return c;
}

// Writes to the file, or stdout for "" / "-".
template <class F>
void with_output(const std::string& path, F&& f) {
    if (path.empty() || path == "-") {
        f(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out) throw invalid_input("cannot write " + path);
    f(out);
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

std::atomic<net::Server*> g_server{nullptr};
void on_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Planar rail trap laboratory"};
    app.require_subcommand(1);
    std::string config_path;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON configuration document");
    app.add_option("--seed", seed, "RNG seed");
    auto cfg = [&] { return load_config(config_path, seed); };

    // potential-map
    auto* pm = app.add_subcommand("potential-map", "static potential, field and pseudopotential on an x-y grid (CSV)");
    double pm_x0 = -10, pm_x1 = 15, pm_y0 = 0.5, pm_y1 = 15, pm_z = 0, pm_gamma = -2.1e-3;
    int pm_nx = 51, pm_ny = 30;
    std::string pm_out;
    pm->add_option("--x-mm", pm_x0, "x start")->capture_default_str();
    pm->add_option("--x-end-mm", pm_x1, "x end")->capture_default_str();
    pm->add_option("--y-mm", pm_y0, "y start (> 0)")->capture_default_str();
    pm->add_option("--y-end-mm", pm_y1, "y end")->capture_default_str();
    pm->add_option("--z-mm", pm_z, "slice position along the rails")->capture_default_str();
    pm->add_option("--nx", pm_nx)->capture_default_str();
    pm->add_option("--ny", pm_ny)->capture_default_str();
    pm->add_option("--gamma", pm_gamma, "charge-to-mass ratio for the pseudo column, C/kg")->capture_default_str();
    pm->add_option("-o,--out", pm_out, "output CSV (default stdout)");

    // find-null
    auto* fn = app.add_subcommand("find-null", "height of the AC field null above the centre electrode");

    // fit-gamma
    auto* fg = app.add_subcommand("fit-gamma", "charge-to-mass ratio from a height-voltage CSV");
    std::string fg_csv, fg_method = "both";
    double fg_drag_rate = -1.0;
    fg->add_option("csv", fg_csv, "series CSV")->required()->check(CLI::ExistingFile);
    fg->add_option("--method", fg_method, "height-fit, null-balance or both")->check(CLI::IsMember({"height-fit", "null-balance", "both"}));
    fg->add_option("--drag-rate", fg_drag_rate, "b/m of the particle in 1/s (default: Stokes drag on the default sphere)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "central-voltage sweep on one particle; series CSV plus a JSON summary");
    double sw_start = -5, sw_stop = -1500, sw_step = -5, sw_hold = 5, sw_noise = 0.0;
    bool sw_camera = false;
    std::string sw_out;
    sw->add_option("--start", sw_start)->capture_default_str();
    sw->add_option("--stop", sw_stop)->capture_default_str();
    sw->add_option("--step", sw_step)->capture_default_str();
    sw->add_option("--hold", sw_hold, "max seconds per step")->capture_default_str();
    sw->add_option("--noise-mm", sw_noise, "Gaussian height noise added to each point")->capture_default_str();
    sw->add_flag("--camera", sw_camera, "measure y and micromotion through the simulated camera");
    sw->add_option("-o,--out", sw_out, "series CSV (default stdout)");

    // shuttle / split
    auto* sh = app.add_subcommand("shuttle", "move a particle between pattern wells");
    std::string sh_from = "center-C", sh_to = "center-D", sh_traj;
    sh->add_option("--from", sh_from)->capture_default_str();
    sh->add_option("--to", sh_to)->capture_default_str();
    sh->add_option("--trajectory", sh_traj, "trajectory CSV");
    auto* sp = app.add_subcommand("split", "split two particles from one well");
    std::string sp_traj;
    sp->add_option("--trajectory", sp_traj, "trajectory CSV");
    auto* pr = app.add_subcommand("profile", "axial U/q profile of a pattern (CSV)");
    std::string pr_pattern = "center-C", pr_out;
    double pr_step = 0.1;
    pr->add_option("--pattern", pr_pattern)->capture_default_str();
    pr->add_option("--step-mm", pr_step)->capture_default_str();
    pr->add_option("-o,--out", pr_out);

    // render / track
    auto* rd = app.add_subcommand("render", "camera frames of a settled particle (or a synthetic spot) as PGM");
    std::string rd_stem = "frame";
    int rd_frames = 1;
    std::optional<double> rd_y;
    double rd_z = 0.0, rd_alpha = 0.0;
    rd->add_option("--out", rd_stem, "output stem; frames are <stem>_<k>.pgm")->capture_default_str();
    rd->add_option("--frames", rd_frames)->capture_default_str();
    rd->add_option("--y-mm", rd_y, "synthetic spot height instead of a simulation");
    rd->add_option("--z-mm", rd_z)->capture_default_str();
    rd->add_option("--alpha-mm", rd_alpha, "synthetic micromotion amplitude")->capture_default_str();
    auto* tk = app.add_subcommand("track", "detect and track particles in PGM frames");
    std::vector<std::string> tk_frames;
    std::string tk_out, tk_json;
    int tk_threshold = 60;
    double tk_max_jump = 30.0;
    tk->add_option("frames", tk_frames, "PGM frames in time order")->required()->check(CLI::ExistingFile);
    tk->add_option("--threshold", tk_threshold)->capture_default_str();
    tk->add_option("--max-jump-px", tk_max_jump)->capture_default_str();
    tk->add_option("-o,--out", tk_out, "blob CSV (default stdout)");
    tk->add_option("--json", tk_json, "per-track summary JSON");

    // serve / replay
    auto* sv = app.add_subcommand("serve", "live lab sessions over TCP");
    unsigned short sv_port = 7070;
    double sv_rate = 60.0;
    std::string sv_logs;
    sv->add_option("--port", sv_port)->capture_default_str();
    sv->add_option("--rate", sv_rate, "state messages per second")->capture_default_str();
    sv->add_option("--log-dir", sv_logs, "directory for JSON-lines session logs");
    auto* rp = app.add_subcommand("replay", "verify and re-run a session log");
    std::string rp_log;
    rp->add_option("log", rp_log)->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*pm) {
            const auto c = cfg();
            const auto model = c.model();
            const auto v = c.voltages();
            if (pm_nx < 2 || pm_ny < 2) throw invalid_input("grid needs at least 2 points per axis");
            if (!(pm_y0 > 0.0)) throw invalid_input("y must stay above the electrode plane");
            with_output(pm_out, [&](std::ostream& out) {
                out << "x,y,z,phi,ex,ey,ez,pseudo\n";
                out.precision(10);
                const double z = pm_z * 1e-3;
                for (int j = 0; j < pm_ny; ++j)
                    for (int i = 0; i < pm_nx; ++i) {
                        const double x = (pm_x0 + (pm_x1 - pm_x0) * i / (pm_nx - 1)) * 1e-3;
                        const double y = (pm_y0 + (pm_y1 - pm_y0) * j / (pm_ny - 1)) * 1e-3;
                        const auto g = model.static_gradient(v, x, y, z);
                        out << x << ',' << y << ',' << z << ',' << model.static_potential(v, x, y, z) << ',' << -g.x
                            << ',' << -g.y << ',' << -g.z << ',' << model.pseudopotential_per_charge(pm_gamma, x, y) << '\n';
                    }
            });
        } else if (*fn) {
            const auto n = find_ac_null(cfg().geometry());
            print_json({{"x_mm", n.x * 1e3}, {"y_null_mm", n.y_null * 1e3}, {"grad_sq", n.grad_sq}, {"grad_sq_max", n.grad_sq_max}});
        } else if (*fg) {
            const auto c = cfg();
            const auto s = read_series_csv(fg_csv);
            json out = json::object();
            if (fg_method != "null-balance") {
                HeightFitOptions o;
                o.drag_rate = fg_drag_rate >= 0.0 ? fg_drag_rate : c.sim().drag / sphere_mass();
                out["height_fit"] = fit_gamma_height_curve(s, c.model(), c.voltages(), o);
            }
            if (fg_method != "height-fit") {
                const auto mm = micromotion_minimum(s);
                json j = gamma_from_null_balance(mm.y_vertex, mm.v_vertex, c.geometry(), s[mm.index].sigma_y);
                j["v_min"] = mm.v_at_min;
                j["v_vertex"] = mm.v_vertex;
                out["null_balance"] = j;
            }
            print_json(out);
        } else if (*sw) {
            const auto c = cfg();
            SweepOptions o;
            o.base = c.voltages();
            if (sw_camera) {
                ObserveOptions ob;
                ob.seed = seed;
                o.observe = camera_observer(c.camera(), ob);
            }
            auto r = voltage_sweep_experiment(c.model(), c.particle(), linear_sweep(sw_start, sw_stop, sw_step, sw_hold), c.sim(), o);
            if (sw_noise > 0.0) {
                std::mt19937_64 rng(seed);
                std::normal_distribution<double> n(0.0, sw_noise * 1e-3);
                for (auto& p : r.series) {
                    p.y += n(rng);
                    p.sigma_y = sw_noise * 1e-3;
                }
            }
            with_output(sw_out, [&](std::ostream& out) { write_series_csv(out, r.series); });
            json summary{{"points", r.series.size()},
                         {"ejection_voltage", r.ejection_voltage ? json(*r.ejection_voltage) : json(nullptr)}};
            (sw_out.empty() || sw_out == "-" ? std::cerr : std::cout) << summary.dump() << '\n';
        } else if (*sh) {
            const auto c = cfg();
            ShuttleConfig sc;
            sc.sim = c.sim();
            sc.central_v = c.voltages().central;
            const auto r = run_shuttle_experiment(c.model(), c.particle(), sc, pattern_by_name(sh_from), pattern_by_name(sh_to));
            if (!sh_traj.empty()) with_output(sh_traj, [&](std::ostream& out) { write_trajectory_csv(out, r.trajectory); });
            print_json({{"distance_mm", r.distance * 1e3},
                        {"z_initial_mm", r.z_initial * 1e3},
                        {"z_final_mm", r.z_final * 1e3},
                        {"ejected", r.ejected},
                        {"events", events_json(r.trajectory.events)}});
        } else if (*sp) {
            const auto c = cfg();
            ShuttleConfig sc;
            sc.sim = c.sim();
            sc.central_v = c.voltages().central;
            auto ps = c.particles();
            if (ps.empty()) {
                const double x = c.geometry().center_x();
                ps = {Particle::with_gamma(0, -2.1e-3, {x, 3e-3, -1e-3}), Particle::with_gamma(1, -2.0e-3, {x, 3e-3, 1e-3})};
            }
            const auto r = run_split_experiment(c.model(), ps, sc);
            if (!sp_traj.empty()) with_output(sp_traj, [&](std::ostream& out) { write_trajectory_csv(out, r.trajectory); });
            print_json({{"d1_mm", r.d1 * 1e3},
                        {"d2_mm", r.d2 * 1e3},
                        {"split_failed", r.split_failed},
                        {"ejected", r.ejected},
                        {"well_center_mm", r.well_center * 1e3},
                        {"events", events_json(r.trajectory.events)}});
        } else if (*pr) {
            const auto c = cfg();
            const auto p = axial_profile(pattern_by_name(pr_pattern), c.model(), c.particle().gamma(), pr_step * 1e-3, c.voltages());
            with_output(pr_out, [&](std::ostream& out) { write_profile_csv(out, p); });
            std::vector<double> mm;
            for (double z : p.minima) mm.push_back(z * 1e3);
            (pr_out.empty() || pr_out == "-" ? std::cerr : std::cout) << json{{"minima_mm", mm}}.dump() << '\n';
        } else if (*rd) {
            const auto c = cfg();
            const auto cam = c.camera();
            if (rd_frames < 1) throw invalid_input("--frames must be >= 1");
            const double exposure = 1.0 / cam.fps;
            std::mt19937_64 seeder(seed);
            if (rd_y) {
                for (int k = 0; k < rd_frames; ++k) {
                    const auto f = render_frame({oscillation_path(rd_z * 1e-3, *rd_y * 1e-3, rd_alpha * 1e-3)}, cam, exposure,
                                                k * exposure, {}, seeder());
                    save_frame(rd_stem + "_" + std::to_string(k), f);
                }
            } else {
                Simulator sim(c.model(), {c.particle()}, c.sim(), c.voltages());
                const auto s = settle(sim, 0);
                if (s.ejected) throw invalid_input("particle is not trapped under the configured voltages");
                for (int k = 0; k < rd_frames; ++k) {
                    const double t0 = sim.time();
                    std::vector<std::array<double, 2>> path;
                    while (sim.time() < t0 + exposure - 0.5 * sim.config().dt) {
                        sim.step();
                        path.push_back({sim.particles()[0].r[2], sim.particles()[0].r[1]});
                    }
                    save_frame(rd_stem + "_" + std::to_string(k), render_frame({path}, cam, exposure, t0, {}, seeder()));
                }
            }
        } else if (*tk) {
            const auto cam = cfg().camera();
            const StreakModel streak;
            DetectOptions dop;
            dop.threshold = tk_threshold;
            std::vector<FrameBlob> rows;
            std::vector<std::array<double, 2>> last;
            std::vector<int> last_ids;
            std::map<int, std::vector<TrackedBlob>> tracks;
            int next_id = 0;
            for (std::size_t k = 0; k < tk_frames.size(); ++k) {
                const auto blobs = detect_blobs(load_frame(tk_frames[k]), dop);
                const auto ids = associate(last, blobs, tk_max_jump, next_id, last_ids);
                last.clear();
                last_ids.clear();
                for (std::size_t b = 0; b < blobs.size(); ++b) {
                    rows.push_back({k, blobs[b]});
                    tracks[ids[b]].push_back(blobs[b]);
                    last.push_back({blobs[b].cx, blobs[b].cy});
                    last_ids.push_back(ids[b]);
                }
            }
            with_output(tk_out, [&](std::ostream& out) { write_blobs_csv(out, rows); });
            if (!tk_json.empty()) {
                json j = json::array();
                for (const auto& [id, bs] : tracks) {
                    const auto o = summarize(bs, cam, &streak);
                    j.push_back({{"track", id}, {"frames", o.frames}, {"z_mm", o.z * 1e3}, {"y_mm", o.y * 1e3},
                                 {"sigma_y_mm", o.sigma_y * 1e3}, {"alpha_mm", o.alpha * 1e3}, {"sigma_alpha_mm", o.sigma_alpha * 1e3}});
                }
                with_output(tk_json, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
            }
        } else if (*sv) {
            net::ServerOptions o;
            o.session = cfg().session();
            o.port = sv_port;
            o.rate_hz = sv_rate;
            o.log_dir = sv_logs;
            net::Server server(o);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on 127.0.0.1:" << server.port() << '\n';
            server.run();
            g_server = nullptr;
        } else if (*rp) {
            std::ifstream in(rp_log);
            const auto r = replay_session(in);
            print_json({{"lines", r.lines},
                        {"commands", r.commands},
                        {"states", r.states},
                        {"identical", !r.first_mismatch.has_value()},
                        {"first_mismatch_line", r.first_mismatch ? json(*r.first_mismatch) : json(nullptr)}});
            if (r.first_mismatch) return 1;
        }
    } catch (const physics_divergence& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const invalid_input& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
