#pragma once

// Five-rail planar trap layout, drive and electrode voltages.
//
// Coordinates: x across the rails, y normal to the electrode plane (up),
// z along the trap axis. The origin is the left edge of the central DC
// electrode, in the electrode plane, at the axial center of the trap.
// All lengths are meters, voltages volts, angular frequency rad/s.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace trap {

inline constexpr double standard_gravity = 9.80665;      // m/s^2
inline constexpr double coulomb_constant = 8.9875e9;     // N m^2 / C^2

/// Thrown for inputs that violate a documented precondition or range.
struct invalid_input : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an integration produces non-finite state.
struct physics_divergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// How the AC rail potential falls off outside the rail's outer edge.
enum class AcFalloff {
    across_segments,  ///< linear ramp to 0 V over gap_ac_segment + seg_depth_x
    gap,              ///< linear ramp to 0 V over gap_ac_segment only
};

/// Electrode rectangle in the plane, x/z extents.
struct Rect {
    double x1{}, x2{}, z1{}, z2{};
};

/// Linear in-plane boundary value on [x1, x2]: v1 at x1, v2 at x2.
struct BoundarySegment {
    double x1{}, x2{};
    double v1{}, v2{};

    BoundarySegment() = default;
    BoundarySegment(double x1_, double x2_, double v1_, double v2_) : x1(x1_), x2(x2_), v1(v1_), v2(v2_) {
        if (!(x1 < x2)) throw invalid_input("BoundarySegment requires x1 < x2");
    }
    static BoundarySegment constant(double x1, double x2, double v) { return {x1, x2, v, v}; }
};

struct TrapGeometry {
    double a = 3.2e-3;                   // central DC electrode width
    double b = 4.2e-3;                   // right AC rail width
    double c = 4.2e-3;                   // left AC rail width
    double gap_central_ac = 0.0;
    double gap_ac_segment = 0.0;
    double gap_segment_segment = 0.5e-3;
    double seg_width_z = 18.9e-3;        // segment extent along z ("w")
    double seg_depth_x = 15.5e-3;        // segment extent along x
    double rail_length_z = 139.6e-3;
    AcFalloff ac_falloff = AcFalloff::across_segments;
    // One label per segment slot along z, both rows. "A".."E" are driven
    // pairs, "-" marks a slot that is not a driven segment (the endcaps sit
    // there by default).
    std::vector<std::string> segment_labels{"-", "A", "B", "C", "D", "E", "-"};
    std::vector<Rect> endcap_rects;

    double center_x() const { return 0.5 * a; }
    double segment_pitch() const { return seg_width_z + gap_segment_segment; }
    /// Inner x edge of the right / left segment rows.
    double right_row_x() const { return a + gap_central_ac + b + gap_ac_segment; }
    double left_row_x() const { return -gap_central_ac - c - gap_ac_segment; }

    /// z-extent of slot i (0-based) with the slots centered on z = 0.
    std::pair<double, double> slot_z(std::size_t i) const {
        const double n = static_cast<double>(segment_labels.size());
        const double zc = (static_cast<double>(i) - 0.5 * (n - 1.0)) * segment_pitch();
        return {zc - 0.5 * seg_width_z, zc + 0.5 * seg_width_z};
    }
    Rect right_slot(std::size_t i) const {
        auto [z1, z2] = slot_z(i);
        return {right_row_x(), right_row_x() + seg_depth_x, z1, z2};
    }
    Rect left_slot(std::size_t i) const {
        auto [z1, z2] = slot_z(i);
        return {left_row_x() - seg_depth_x, left_row_x(), z1, z2};
    }

    /// Endcaps on the outermost slots of both rows.
    std::vector<Rect> outer_slot_endcaps() const {
        if (segment_labels.empty()) return {};
        const std::size_t last = segment_labels.size() - 1;
        return {left_slot(0), right_slot(0), left_slot(last), right_slot(last)};
    }

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) throw invalid_input(std::string(name) + " must be > 0");
        };
        auto nonneg = [](double v, const char* name) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw invalid_input(std::string(name) + " must be >= 0");
        };
        positive(a, "a");
        positive(b, "b");
        positive(c, "c");
        positive(seg_width_z, "seg_width_z");
        positive(seg_depth_x, "seg_depth_x");
        positive(rail_length_z, "rail_length_z");
        nonneg(gap_central_ac, "gap_central_ac");
        nonneg(gap_ac_segment, "gap_ac_segment");
        nonneg(gap_segment_segment, "gap_segment_segment");
        for (const auto& r : endcap_rects)
            if (!(r.x1 < r.x2) || !(r.z1 < r.z2)) throw invalid_input("endcap rectangle with empty extent");
    }
};

/// Gap width giving a 4.75 mm AC null for a = 3.2 mm, b = c = 4.2 mm with
/// gap_central_ac = gap_ac_segment and the across-segments AC fall-off.
/// Reproduced by calibrate_gaps_for_null() (see field_analysis.hpp).
inline constexpr double default_calibrated_gap = 2.5520598554e-4;

inline TrapGeometry default_geometry() {
    TrapGeometry g;
    g.gap_central_ac = default_calibrated_gap;
    g.gap_ac_segment = default_calibrated_gap;
    g.endcap_rects = g.outer_slot_endcaps();
    return g;
}

struct DriveParams {
    double v_ac_amplitude = 963.0 * std::numbers::sqrt2;  // peak volts
    double omega = 2.0 * std::numbers::pi * 60.0;

    static DriveParams from_rms(double v_rms, double frequency_hz = 60.0) {
        return {v_rms * std::numbers::sqrt2, 2.0 * std::numbers::pi * frequency_hz};
    }
    double v_ac_rms() const { return v_ac_amplitude / std::numbers::sqrt2; }
    double period() const { return 2.0 * std::numbers::pi / omega; }
    void validate() const {
        if (!(omega > 0.0) || !std::isfinite(omega)) throw invalid_input("drive omega must be > 0");
        if (!std::isfinite(v_ac_amplitude)) throw invalid_input("drive amplitude must be finite");
    }
};

/// Static electrode voltages. Segment voltages are indexed A..E.
struct VoltageState {
    double central = 0.0;
    double endcap = 0.0;
    std::array<double, 5> segments{0.0, 0.0, 0.0, 0.0, 0.0};

    static int segment_index(const std::string& label) {
        if (label.size() == 1 && label[0] >= 'A' && label[0] <= 'E') return label[0] - 'A';
        return -1;
    }
    bool operator==(const VoltageState&) const = default;
};

// ---------------------------------------------------------------------------
// JSON (lengths m, voltages V, omega rad/s)

inline void to_json(nlohmann::json& j, const Rect& r) {
    j = {{"x1", r.x1}, {"x2", r.x2}, {"z1", r.z1}, {"z2", r.z2}};
}
inline void from_json(const nlohmann::json& j, Rect& r) {
    r.x1 = j.at("x1").get<double>();
    r.x2 = j.at("x2").get<double>();
    r.z1 = j.at("z1").get<double>();
    r.z2 = j.at("z2").get<double>();
}

inline void to_json(nlohmann::json& j, const TrapGeometry& g) {
    j = {{"a", g.a},
         {"b", g.b},
         {"c", g.c},
         {"gap_central_ac", g.gap_central_ac},
         {"gap_ac_segment", g.gap_ac_segment},
         {"gap_segment_segment", g.gap_segment_segment},
         {"seg_width_z", g.seg_width_z},
         {"seg_depth_x", g.seg_depth_x},
         {"rail_length_z", g.rail_length_z},
         {"ac_falloff", g.ac_falloff == AcFalloff::gap ? "gap" : "across_segments"},
         {"segment_labels", g.segment_labels},
         {"endcap_rects", g.endcap_rects}};
}

/// Missing keys keep default_geometry() values; gaps given without
/// endcap_rects re-derive the endcaps from the outer slots.
inline void from_json(const nlohmann::json& j, TrapGeometry& g) {
    g = default_geometry();
    auto opt = [&](const char* key, double& field) {
        if (j.contains(key)) field = j.at(key).get<double>();
    };
    opt("a", g.a);
    opt("b", g.b);
    g.c = g.b;
    opt("c", g.c);
    opt("gap_central_ac", g.gap_central_ac);
    opt("gap_ac_segment", g.gap_ac_segment);
    opt("gap_segment_segment", g.gap_segment_segment);
    opt("seg_width_z", g.seg_width_z);
    opt("seg_depth_x", g.seg_depth_x);
    opt("rail_length_z", g.rail_length_z);
    if (j.contains("ac_falloff")) {
        const auto s = j.at("ac_falloff").get<std::string>();
        if (s == "gap") g.ac_falloff = AcFalloff::gap;
        else if (s == "across_segments") g.ac_falloff = AcFalloff::across_segments;
        else throw invalid_input("unknown ac_falloff '" + s + "'");
    }
    if (j.contains("segment_labels")) g.segment_labels = j.at("segment_labels").get<std::vector<std::string>>();
    if (j.contains("endcap_rects")) g.endcap_rects = j.at("endcap_rects").get<std::vector<Rect>>();
    else g.endcap_rects = g.outer_slot_endcaps();
    g.validate();
}

inline void to_json(nlohmann::json& j, const DriveParams& d) {
    j = {{"v_ac_amplitude", d.v_ac_amplitude}, {"omega", d.omega}};
}
/// Accepts v_ac_rms (converted to peak) or v_ac_amplitude, and omega or frequency_hz.
inline void from_json(const nlohmann::json& j, DriveParams& d) {
    d = DriveParams{};
    if (j.contains("omega")) d.omega = j.at("omega").get<double>();
    if (j.contains("frequency_hz")) d.omega = 2.0 * std::numbers::pi * j.at("frequency_hz").get<double>();
    if (j.contains("v_ac_amplitude")) d.v_ac_amplitude = j.at("v_ac_amplitude").get<double>();
    if (j.contains("v_ac_rms")) d.v_ac_amplitude = j.at("v_ac_rms").get<double>() * std::numbers::sqrt2;
    d.validate();
}

inline void to_json(nlohmann::json& j, const VoltageState& v) {
    j = {{"central", v.central}, {"endcap", v.endcap}, {"segments", nlohmann::json::object()}};
    for (int i = 0; i < 5; ++i) j["segments"][std::string(1, static_cast<char>('A' + i))] = v.segments[i];
}
inline void from_json(const nlohmann::json& j, VoltageState& v) {
    v = VoltageState{};
    if (j.contains("central")) v.central = j.at("central").get<double>();
    if (j.contains("endcap")) v.endcap = j.at("endcap").get<double>();
    if (j.contains("segments"))
        for (auto& [k, val] : j.at("segments").items()) {
            const int idx = VoltageState::segment_index(k);
            if (idx < 0) throw invalid_input("unknown segment '" + k + "'");
            v.segments[idx] = val.get<double>();
        }
}

}  // namespace trap
