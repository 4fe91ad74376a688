#pragma once

// Synthetic camera and the particle detection pipeline: render long-exposure
// frames, threshold, label 4-connected components, size filter, centroid and
// streak (micromotion) amplitude, ruler calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dynamics.hpp"

namespace trap {

struct Frame {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
    double exposure_s = 0.0;
    double timestamp = 0.0;
    // position of pixel (0,0) in full-sensor coordinates; nonzero for crops
    int origin_u = 0;
    int origin_v = 0;

    Frame() = default;
    Frame(int w, int h, std::uint8_t fill = 0) : width(w), height(h) {
        if (w <= 0 || h <= 0) throw invalid_input("frame dimensions must be > 0");
        pixels.assign(std::size_t(w) * std::size_t(h), fill);
    }
    std::uint8_t at(int u, int v) const { return pixels[std::size_t(v) * std::size_t(width) + std::size_t(u)]; }
    std::uint8_t& at(int u, int v) { return pixels[std::size_t(v) * std::size_t(width) + std::size_t(u)]; }
};

enum class Axis { horizontal, vertical };

/// Side view: image u runs along z, image v runs down (y inverted).
struct CameraModel {
    double mm_per_px = 0.03;
    double u0 = 808.0;   // px, column of z = 0
    double v0 = 1200.0;  // px, row of y = 0 (electrode plane)
    int width = 1616;
    int height = 1240;
    double fps = 60.0;

    void validate() const {
        if (!(mm_per_px > 0.0)) throw invalid_input("mm_per_px must be > 0");
        if (width <= 0 || height <= 0) throw invalid_input("sensor size must be > 0");
        if (!(fps > 0.0)) throw invalid_input("fps must be > 0");
    }
    double u_of_z(double z) const { return u0 + z * 1e3 / mm_per_px; }
    double v_of_y(double y) const { return v0 - y * 1e3 / mm_per_px; }
    double z_of_u(double u) const { return (u - u0) * mm_per_px * 1e-3; }
    double y_of_v(double v) const { return (v0 - v) * mm_per_px * 1e-3; }
};

struct RulerPoint {
    double px;
    double mm;
};

/// Scale from two reference marks along one image axis; the first mark fixes
/// the offset. Vertical marks measure height, so mm grows upward (smaller v).
inline CameraModel calibrate(const RulerPoint& p1, const RulerPoint& p2, Axis axis, CameraModel cam = {}) {
    if (p1.px == p2.px || p1.mm == p2.mm) throw invalid_input("calibration points must be distinct");
    cam.mm_per_px = std::abs((p2.mm - p1.mm) / (p2.px - p1.px));
    if (axis == Axis::horizontal) cam.u0 = p1.px - p1.mm / cam.mm_per_px;
    else cam.v0 = p1.px + p1.mm / cam.mm_per_px;
    return cam;
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderOptions {
    double spot_sigma_px = 1.5;
    double peak = 200.0;      // counts above background when saturated
    double gain = 50.0;       // exposure-to-signal gain before saturation
    double background_mean = 8.0;
    double background_sd = 2.0;
    bool noise = true;
};

namespace detail {
// Accumulates the time-averaged spot footprint of each path over the frame.
inline void deposit_paths(std::vector<double>& acc, int w, int h, int ou, int ov,
                          const std::vector<std::vector<std::array<double, 2>>>& paths, double sigma) {
    const int rad = static_cast<int>(std::ceil(5.0 * sigma));
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (const auto& path : paths) {
        if (path.empty()) continue;
        const double wgt = 1.0 / static_cast<double>(path.size());
        for (const auto& [pu, pv] : path) {
            const double lu = pu - ou, lv = pv - ov;
            const int uc = static_cast<int>(std::lround(lu)), vc = static_cast<int>(std::lround(lv));
            if (uc + rad < 0 || vc + rad < 0 || uc - rad >= w || vc - rad >= h) continue;
            for (int v = std::max(0, vc - rad); v <= std::min(h - 1, vc + rad); ++v)
                for (int u = std::max(0, uc - rad); u <= std::min(w - 1, uc + rad); ++u) {
                    const double du = u - lu, dv = v - lv;
                    acc[std::size_t(v) * std::size_t(w) + std::size_t(u)] += wgt * std::exp(-(du * du + dv * dv) * inv2s2);
                }
        }
    }
}
}  // namespace detail

struct RenderWindow {
    int u = 0, v = 0, width = 0, height = 0;  // full-sensor rectangle; width 0 = whole sensor
};

/// Renders particle paths (each a list of (z, y) in m, sampled uniformly over
/// the exposure) as a long-exposure frame. Paths outside the view leave an
/// empty (noise-only) frame.
inline Frame render_frame(const std::vector<std::vector<std::array<double, 2>>>& paths_zy, const CameraModel& cam,
                          double exposure_s, double timestamp = 0.0, const RenderOptions& opt = {},
                          std::uint64_t seed = 0, RenderWindow win = {}) {
    cam.validate();
    if (!(exposure_s > 0.0)) throw invalid_input("exposure must be > 0");
    if (win.width == 0) win = {0, 0, cam.width, cam.height};
    Frame f(win.width, win.height);
    f.exposure_s = exposure_s;
    f.timestamp = timestamp;
    f.origin_u = win.u;
    f.origin_v = win.v;
    std::vector<std::vector<std::array<double, 2>>> px;
    px.reserve(paths_zy.size());
    for (const auto& p : paths_zy) {
        auto& q = px.emplace_back();
        q.reserve(p.size());
        for (const auto& [z, y] : p) q.push_back({cam.u_of_z(z), cam.v_of_y(y)});
    }
    std::vector<double> acc(f.pixels.size(), 0.0);
    detail::deposit_paths(acc, f.width, f.height, f.origin_u, f.origin_v, px, opt.spot_sigma_px);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> bg(opt.background_mean, opt.background_sd);
    for (std::size_t i = 0; i < acc.size(); ++i) {
        double val = opt.noise ? bg(rng) : opt.background_mean;
        if (acc[i] > 0.0) val += opt.peak * (1.0 - std::exp(-opt.gain * acc[i]));
        f.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
    }
    return f;
}

/// Path of a particle at (z, y_center) moving y = y_center + (alpha/2) cos(phase)
/// through whole AC periods.
inline std::vector<std::array<double, 2>> oscillation_path(double z, double y_center, double alpha, int samples = 400) {
    std::vector<std::array<double, 2>> p;
    for (int k = 0; k < samples; ++k) {
        const double ph = 2.0 * std::numbers::pi * (k + 0.5) / samples;
        p.push_back({z, y_center + 0.5 * alpha * std::cos(ph)});
    }
    return p;
}

// ---------------------------------------------------------------------------
// Detection

struct DetectOptions {
    int threshold = 60;
    int min_area = 4;
    int max_area = 200000;
};

struct BBox {
    int u_min = 0, v_min = 0, u_max = 0, v_max = 0;  // inclusive, full-sensor px
    int width() const { return u_max - u_min + 1; }
    int height() const { return v_max - v_min + 1; }
};

struct TrackedBlob {
    double cx = 0.0, cy = 0.0;  // px, intensity-weighted centroid
    BBox bbox;
    int area = 0;               // px
    double height_px = 0.0;     // threshold-crossing extents, subpixel
    double width_px = 0.0;
    double amplitude_px = 0.0;  // height minus spot diameter (width), >= 0
};

namespace detail {
// Distance past pixel `inside` (>= thr) towards `outside` (< thr) where the
// linear interpolation crosses thr; in [0, 1].
inline double crossing(double inside, double outside, double thr) {
    if (inside <= outside) return 0.0;
    return std::clamp((inside - thr) / (inside - outside), 0.0, 1.0);
}
}  // namespace detail

/// Binarize at threshold, label 4-connected components, drop those outside
/// the area range. Blobs are ordered by first pixel in raster order.
inline std::vector<TrackedBlob> detect_blobs(const Frame& f, const DetectOptions& opt = {}) {
    if (opt.threshold < 0 || opt.threshold > 255) throw invalid_input("threshold must be in 0..255");
    const int w = f.width, h = f.height;
    const auto thr = static_cast<std::uint8_t>(opt.threshold);
    std::vector<int> label(f.pixels.size(), 0);
    std::vector<TrackedBlob> out;
    std::vector<int> stack, members;
    int next = 0;
    for (int v0 = 0; v0 < h; ++v0)
        for (int u0 = 0; u0 < w; ++u0) {
            const std::size_t i0 = std::size_t(v0) * w + u0;
            if (label[i0] || f.pixels[i0] < thr) continue;
            ++next;
            members.clear();
            stack.assign(1, static_cast<int>(i0));
            label[i0] = next;
            while (!stack.empty()) {
                const int i = stack.back();
                stack.pop_back();
                members.push_back(i);
                const int u = i % w, v = i / w;
                auto visit = [&](int uu, int vv) {
                    if (uu < 0 || vv < 0 || uu >= w || vv >= h) return;
                    const std::size_t j = std::size_t(vv) * w + uu;
                    if (label[j] || f.pixels[j] < thr) return;
                    label[j] = next;
                    stack.push_back(static_cast<int>(j));
                };
                visit(u - 1, v);
                visit(u + 1, v);
                visit(u, v - 1);
                visit(u, v + 1);
            }
            const int area = static_cast<int>(members.size());
            if (area < opt.min_area || area > opt.max_area) continue;

            TrackedBlob b;
            b.area = area;
            b.bbox = {w, h, -1, -1};
            double sw = 0.0, su = 0.0, sv = 0.0;
            double top = h, bottom = -1, left = w, right = -1;
            auto val = [&](int u, int v) -> double {
                if (u < 0 || v < 0 || u >= w || v >= h) return 0.0;
                return f.at(u, v);
            };
            auto outside = [&](int u, int v) { return u < 0 || v < 0 || u >= w || v >= h || label[std::size_t(v) * w + u] != next; };
            for (int i : members) {
                const int u = i % w, v = i / w;
                const double I = f.pixels[i];
                sw += I;
                su += I * u;
                sv += I * v;
                b.bbox.u_min = std::min(b.bbox.u_min, u);
                b.bbox.u_max = std::max(b.bbox.u_max, u);
                b.bbox.v_min = std::min(b.bbox.v_min, v);
                b.bbox.v_max = std::max(b.bbox.v_max, v);
                // boundary pixels give subpixel edge positions
                if (outside(u, v - 1)) top = std::min(top, v - detail::crossing(I, val(u, v - 1), thr));
                if (outside(u, v + 1)) bottom = std::max(bottom, v + detail::crossing(I, val(u, v + 1), thr));
                if (outside(u - 1, v)) left = std::min(left, u - detail::crossing(I, val(u - 1, v), thr));
                if (outside(u + 1, v)) right = std::max(right, u + detail::crossing(I, val(u + 1, v), thr));
            }
            b.cx = su / sw + f.origin_u;
            b.cy = sv / sw + f.origin_v;
            b.bbox.u_min += f.origin_u;
            b.bbox.u_max += f.origin_u;
            b.bbox.v_min += f.origin_v;
            b.bbox.v_max += f.origin_v;
            b.height_px = bottom - top;
            b.width_px = right - left;
            b.amplitude_px = std::max(0.0, b.height_px - b.width_px);
            out.push_back(b);
        }
    return out;
}

/// Peak-to-peak micromotion in m, straight from the streak extents.
inline double measure_micromotion(const TrackedBlob& b, const CameraModel& cam) {
    return b.amplitude_px * cam.mm_per_px * 1e-3;
}

/// Response of the streak measurement to a known oscillation, tabulated from
/// noise-free renders with the same spot, sensor and threshold. The tips of a
/// streak are dimmer than a resting spot, so the raw height-minus-width
/// reads about a pixel short; inverting the table removes that.
class StreakModel {
public:
    explicit StreakModel(const RenderOptions& render = {}, const DetectOptions& detect = {}, double max_px = 600.0) {
        RenderOptions ro = render;
        ro.noise = false;
        CameraModel cam;
        cam.mm_per_px = 1.0;  // paths given directly in px
        cam.u0 = cam.v0 = 0.0;
        for (double a = 0.0; a <= max_px + 1e-9; a += a < 20.0 ? 0.5 : a < 100.0 ? 2.0 : 10.0) {
            double acc = 0.0;
            int n = 0;
            for (double sub : {0.0, 0.25, 0.5, 0.75}) {
                const double uc = 40.0 + sub, vc = 40.0 + 0.5 * a + sub;
                const int h = static_cast<int>(a) + 80;
                const auto samples = std::max(400, static_cast<int>(8 * a));
                // v = -y * 1e3 with this camera
                const Frame f = render_frame({oscillation_path(uc * 1e-3, -vc * 1e-3, a * 1e-3, samples)}, cam, 1.0, 0.0, ro, 0,
                                             {0, 0, 80, h});
                const auto b = detect_blobs(f, detect);
                if (b.size() != 1) continue;
                acc += b[0].amplitude_px;
                ++n;
            }
            if (n == 0) continue;
            true_px_.push_back(a);
            raw_px_.push_back(std::max(acc / n, raw_px_.empty() ? 0.0 : raw_px_.back()));
        }
        if (true_px_.size() < 2) throw invalid_input("streak model: spot not detectable at this threshold");
    }
    /// Raw amplitude (px) -> true peak-to-peak amplitude (px).
    double correct(double raw) const {
        if (raw <= raw_px_.front()) return true_px_.front();
        const auto it = std::upper_bound(raw_px_.begin(), raw_px_.end(), raw);
        if (it == raw_px_.end()) return true_px_.back() + (raw - raw_px_.back());
        const std::size_t i = static_cast<std::size_t>(it - raw_px_.begin());
        const double t = (raw - raw_px_[i - 1]) / (raw_px_[i] - raw_px_[i - 1]);
        return true_px_[i - 1] + t * (true_px_[i] - true_px_[i - 1]);
    }

private:
    std::vector<double> true_px_, raw_px_;
};

inline double measure_micromotion(const TrackedBlob& b, const CameraModel& cam, const StreakModel& model) {
    return model.correct(b.amplitude_px) * cam.mm_per_px * 1e-3;
}

struct Observation {
    std::size_t frames = 0;
    double z = 0.0;                    // m
    double y = 0.0, sigma_y = 0.0;     // m
    double alpha = 0.0, sigma_alpha = 0.0;
};

/// Mean and sample standard deviation over per-frame blobs of one particle.
inline Observation summarize(const std::vector<TrackedBlob>& blobs, const CameraModel& cam,
                             const StreakModel* streak = nullptr) {
    Observation o;
    o.frames = blobs.size();
    if (blobs.empty()) return o;
    double sz = 0, sy = 0, sa = 0, syy = 0, saa = 0;
    for (const auto& b : blobs) {
        const double y = cam.y_of_v(b.cy), a = streak ? measure_micromotion(b, cam, *streak) : measure_micromotion(b, cam);
        sz += cam.z_of_u(b.cx);
        sy += y;
        sa += a;
        syy += y * y;
        saa += a * a;
    }
    const double n = static_cast<double>(blobs.size());
    o.z = sz / n;
    o.y = sy / n;
    o.alpha = sa / n;
    if (blobs.size() > 1) {
        o.sigma_y = std::sqrt(std::max(0.0, (syy - n * o.y * o.y) / (n - 1)));
        o.sigma_alpha = std::sqrt(std::max(0.0, (saa - n * o.alpha * o.alpha) / (n - 1)));
    }
    return o;
}

// ---------------------------------------------------------------------------
// Camera on a running simulation

struct ObserveOptions {
    int frames = 15;
    double exposure_s = 0.0;  // 0: one full frame interval
    RenderOptions render{};
    DetectOptions detect{};
    int crop_margin_px = 48;  // render only a window around the particle
    std::uint64_t seed = 0;
};

/// Films particle `idx` for opt.frames frames while the simulation runs and
/// returns the blob nearest to it in each frame (frames without a blob are
/// skipped).
inline std::vector<TrackedBlob> film_particle(Simulator& sim, std::size_t idx, const CameraModel& cam,
                                              const ObserveOptions& opt = {}) {
    const double frame_dt = 1.0 / cam.fps;
    const double exposure = opt.exposure_s > 0.0 ? opt.exposure_s : frame_dt;
    if (exposure > frame_dt + 1e-12) throw invalid_input("exposure longer than the frame interval");
    std::vector<TrackedBlob> out;
    std::mt19937_64 seeder(opt.seed);
    for (int k = 0; k < opt.frames; ++k) {
        const double t0 = sim.time();
        std::vector<std::vector<std::array<double, 2>>> paths(sim.particles().size());
        while (sim.time() < t0 + exposure - 0.5 * sim.config().dt) {
            sim.step();
            for (std::size_t i = 0; i < paths.size(); ++i) {
                const auto& p = sim.particles()[i];
                if (p.active) paths[i].push_back({p.r[2], p.r[1]});
            }
        }
        const auto& me = paths.at(idx);
        if (me.empty()) break;
        double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
        for (const auto& [z, y] : me) {
            umin = std::min(umin, cam.u_of_z(z));
            umax = std::max(umax, cam.u_of_z(z));
            vmin = std::min(vmin, cam.v_of_y(y));
            vmax = std::max(vmax, cam.v_of_y(y));
        }
        RenderWindow win;
        win.u = std::max(0, static_cast<int>(std::floor(umin)) - opt.crop_margin_px);
        win.v = std::max(0, static_cast<int>(std::floor(vmin)) - opt.crop_margin_px);
        win.width = std::min(cam.width, static_cast<int>(std::ceil(umax)) + opt.crop_margin_px) - win.u;
        win.height = std::min(cam.height, static_cast<int>(std::ceil(vmax)) + opt.crop_margin_px) - win.v;
        if (win.width > 0 && win.height > 0) {
            const Frame f = render_frame(paths, cam, exposure, t0, opt.render, seeder(), win);
            const auto blobs = detect_blobs(f, opt.detect);
            const double uc = 0.5 * (umin + umax), vc = 0.5 * (vmin + vmax);
            const TrackedBlob* best = nullptr;
            double bd = 1e300;
            for (const auto& b : blobs) {
                const double d = std::hypot(b.cx - uc, b.cy - vc);
                if (d < bd) bd = d, best = &b;
            }
            if (best) out.push_back(*best);
        }
        if (frame_dt > exposure) sim.run_for(frame_dt - exposure);
    }
    return out;
}

/// Sweep observer that replaces the simulated (y, alpha) by camera
/// measurements averaged over opt.frames frames.
inline std::function<bool(Simulator&, HeightVoltagePoint&)> camera_observer(const CameraModel& cam, ObserveOptions opt = {}) {
    auto streak = std::make_shared<const StreakModel>(opt.render, opt.detect);
    return [cam, opt, streak](Simulator& sim, HeightVoltagePoint& pt) mutable {
        const auto blobs = film_particle(sim, 0, cam, opt);
        ++opt.seed;
        if (blobs.empty()) return false;
        const auto o = summarize(blobs, cam, streak.get());
        pt.y = o.y;
        pt.sigma_y = o.sigma_y;
        pt.alpha = o.alpha;
        pt.sigma_alpha = o.sigma_alpha;
        return true;
    };
}

// ---------------------------------------------------------------------------
// Ruler fixture

struct RulerSpec {
    Axis axis = Axis::horizontal;
    double spacing_mm = 1.0;
    int ticks = 21;
    double first_mm = -10.0;  // reading of the first tick
    double across_mm = 5.0;   // position of the ruler on the other axis
    double tick_length_px = 24.0;
};

/// Ticks drawn as short bright lines with a Gaussian cross profile.
inline Frame render_ruler(const CameraModel& cam, const RulerSpec& r = {}, const RenderOptions& opt = {},
                          std::uint64_t seed = 0) {
    cam.validate();
    std::vector<std::vector<std::array<double, 2>>> paths;
    for (int k = 0; k < r.ticks; ++k) {
        const double along = (r.first_mm + k * r.spacing_mm) * 1e-3;
        const double across = r.across_mm * 1e-3;
        std::vector<std::array<double, 2>> line;
        const int n = 64;
        const double half = 0.5 * r.tick_length_px * cam.mm_per_px * 1e-3;
        for (int i = 0; i < n; ++i) {
            const double s = -half + 2.0 * half * i / (n - 1);
            if (r.axis == Axis::horizontal) line.push_back({along, across + s});
            else line.push_back({across + s, along});
        }
        paths.push_back(std::move(line));
    }
    return render_frame(paths, cam, 1.0 / cam.fps, 0.0, opt, seed);
}

/// Least-squares fit of tick centroids against tick readings; returns the
/// camera with the recovered scale and offset on that axis.
inline CameraModel calibrate_from_ruler(const Frame& f, const RulerSpec& r, CameraModel cam = {},
                                        const DetectOptions& det = {}) {
    auto blobs = detect_blobs(f, det);
    if (blobs.size() < 2) throw invalid_input("ruler needs at least two visible ticks");
    std::vector<double> pos;
    for (const auto& b : blobs) pos.push_back(r.axis == Axis::horizontal ? b.cx : b.cy);
    std::sort(pos.begin(), pos.end());
    if (r.axis == Axis::vertical) std::reverse(pos.begin(), pos.end());  // readings grow upward
    const double n = static_cast<double>(pos.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < pos.size(); ++k) {
        const double mm = r.first_mm + static_cast<double>(k) * r.spacing_mm;
        sx += mm;
        sy += pos[k];
        sxx += mm * mm;
        sxy += mm * pos[k];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);  // px per mm
    const double icpt = (sy - slope * sx) / n;
    const double mm_a = r.first_mm, mm_b = r.first_mm + (n - 1) * r.spacing_mm;
    return calibrate({icpt + slope * mm_a, mm_a}, {icpt + slope * mm_b, mm_b}, r.axis, cam);
}

// ---------------------------------------------------------------------------
// Nearest-neighbour association across frames

/// Assigns each blob in `next` to the closest previous track within max_px;
/// unmatched blobs start new tracks. Returns the track id per blob in `next`.
inline std::vector<int> associate(const std::vector<std::array<double, 2>>& tracks, const std::vector<TrackedBlob>& next,
                                  double max_px, int& next_id, std::vector<int> track_ids = {}) {
    if (track_ids.empty())
        for (std::size_t i = 0; i < tracks.size(); ++i) track_ids.push_back(static_cast<int>(i));
    std::vector<int> out(next.size(), -1);
    std::vector<bool> used(tracks.size(), false);
    // greedy on globally sorted pair distances
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t t = 0; t < tracks.size(); ++t)
        for (std::size_t b = 0; b < next.size(); ++b) {
            const double d = std::hypot(tracks[t][0] - next[b].cx, tracks[t][1] - next[b].cy);
            if (d <= max_px) pairs.emplace_back(d, t, b);
        }
    std::sort(pairs.begin(), pairs.end());
    for (const auto& [d, t, b] : pairs) {
        if (used[t] || out[b] >= 0) continue;
        used[t] = true;
        out[b] = track_ids[t];
    }
    for (auto& id : out)
        if (id < 0) id = next_id++;
    return out;
}

// ---------------------------------------------------------------------------
// Files

inline void write_pgm(std::ostream& out, const Frame& f) {
    out << "P5\n" << f.width << ' ' << f.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
}

inline Frame read_pgm(std::istream& in) {
    auto token = [&]() {
        std::string t;
        while (in >> std::ws && in.peek() == '#') std::getline(in, t);
        if (!(in >> t)) throw invalid_input("truncated PGM header");
        return t;
    };
    if (token() != "P5") throw invalid_input("not a binary PGM (P5)");
    const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
    if (maxval != 255) throw invalid_input("only 8-bit PGM is supported");
    in.get();  // single whitespace before the raster
    Frame f(w, h);
    in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(f.pixels.size())) throw invalid_input("truncated PGM raster");
    return f;
}

inline nlohmann::json frame_sidecar(const Frame& f) {
    return {{"width", f.width}, {"height", f.height}, {"exposure_s", f.exposure_s},
            {"timestamp", f.timestamp}, {"origin_u", f.origin_u}, {"origin_v", f.origin_v}};
}

/// Writes <stem>.pgm and <stem>.json.
inline void save_frame(const std::filesystem::path& stem, const Frame& f) {
    std::ofstream pgm(stem.string() + ".pgm", std::ios::binary);
    if (!pgm) throw std::runtime_error("cannot write " + stem.string() + ".pgm");
    write_pgm(pgm, f);
    std::ofstream js(stem.string() + ".json");
    js << frame_sidecar(f).dump(2) << '\n';
}

inline Frame load_frame(const std::filesystem::path& pgm_path) {
    std::ifstream in(pgm_path, std::ios::binary);
    if (!in) throw invalid_input("cannot open " + pgm_path.string());
    Frame f = read_pgm(in);
    auto side = pgm_path;
    side.replace_extension(".json");
    if (std::filesystem::exists(side)) {
        std::ifstream js(side);
        const auto j = nlohmann::json::parse(js);
        f.exposure_s = j.value("exposure_s", 0.0);
        f.timestamp = j.value("timestamp", 0.0);
        f.origin_u = j.value("origin_u", 0);
        f.origin_v = j.value("origin_v", 0);
    }
    return f;
}

struct FrameBlob {
    std::size_t frame_idx;
    TrackedBlob blob;
};

inline void write_blobs_csv(std::ostream& out, const std::vector<FrameBlob>& rows) {
    out << "frame_idx,cx_px,cy_px,area,amplitude_px\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.frame_idx << ',' << r.blob.cx << ',' << r.blob.cy << ',' << r.blob.area << ',' << r.blob.amplitude_px << '\n';
}

inline void to_json(nlohmann::json& j, const TrackedBlob& b) {
    j = {{"cx_px", b.cx},
         {"cy_px", b.cy},
         {"area", b.area},
         {"amplitude_px", b.amplitude_px},
         {"bbox", {b.bbox.u_min, b.bbox.v_min, b.bbox.u_max, b.bbox.v_max}}};
}

inline void to_json(nlohmann::json& j, const CameraModel& c) {
    j = {{"mm_per_px", c.mm_per_px}, {"u0", c.u0}, {"v0", c.v0}, {"width", c.width}, {"height", c.height}, {"fps", c.fps}};
}
inline void from_json(const nlohmann::json& j, CameraModel& c) {
    c = CameraModel{};
    c.mm_per_px = j.value("mm_per_px", c.mm_per_px);
    c.u0 = j.value("u0", c.u0);
    c.v0 = j.value("v0", c.v0);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.fps = j.value("fps", c.fps);
    c.validate();
}

}  // namespace trap
