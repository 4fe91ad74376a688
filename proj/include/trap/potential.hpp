#pragma once

// Closed-form free-space potentials above a planar electrode array.
//
// Every kernel is templated on the scalar so that Dual<> arguments give
// exact derivatives of the closed forms (Hessians of the AC potential,
// curvature of the total energy).

#include <cmath>
#include <numbers>
#include <vector>

#include "dual.hpp"
#include "geometry.hpp"

namespace trap {

template <class T>
struct Vec2 {
    T x{}, y{};
};

template <class T>
struct Vec3 {
    T x{}, y{}, z{};
};

namespace detail {

inline void require_above_plane(double y) {
    if (!(y > 0.0)) throw invalid_input("potential evaluated at y <= 0 (model is valid only above the electrode plane)");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Infinite strips (z-independent)

/// Potential above the plane from one boundary segment, all other boundary 0.
template <class T>
T strip_potential(const BoundarySegment& s, const T& x, const T& y) {
    using std::atan;
    using std::log;
    detail::require_above_plane(value_of(y));
    const T u2 = s.x2 - x;
    const T u1 = s.x1 - x;
    const T angle = atan(u2 / y) - atan(u1 / y);
    if (s.v1 == s.v2) return s.v1 * angle / std::numbers::pi;
    // Ramp: split f(s) = f(x) + beta (s - x) inside the Poisson integral.
    const double beta = (s.v2 - s.v1) / (s.x2 - s.x1);
    const T fx = s.v1 + beta * (x - s.x1);
    const T ln_ratio = log((u2 * u2 + y * y) / (u1 * u1 + y * y));
    return (fx * angle + 0.5 * beta * y * ln_ratio) / std::numbers::pi;
}

template <class T>
Vec2<T> strip_gradient(const BoundarySegment& s, const T& x, const T& y) {
    using std::atan;
    using std::log;
    detail::require_above_plane(value_of(y));
    const T u2 = s.x2 - x;
    const T u1 = s.x1 - x;
    const T r2 = u2 * u2 + y * y;
    const T r1 = u1 * u1 + y * y;
    const T dangle_dx = y / r1 - y / r2;
    const T dangle_dy = u1 / r1 - u2 / r2;
    constexpr double inv_pi = 1.0 / std::numbers::pi;
    if (s.v1 == s.v2) return {s.v1 * inv_pi * dangle_dx, s.v1 * inv_pi * dangle_dy};

    const double beta = (s.v2 - s.v1) / (s.x2 - s.x1);
    const T fx = s.v1 + beta * (x - s.x1);
    const T angle = atan(u2 / y) - atan(u1 / y);
    const T ln_ratio = log(r2 / r1);
    const T dln_dx = 2.0 * u1 / r1 - 2.0 * u2 / r2;
    const T dln_dy = 2.0 * y / r2 - 2.0 * y / r1;
    Vec2<T> g;
    g.x = inv_pi * (beta * angle + fx * dangle_dx + 0.5 * beta * y * dln_dx);
    g.y = inv_pi * (fx * dangle_dy + 0.5 * beta * ln_ratio + 0.5 * beta * y * dln_dy);
    return g;
}

/// In-plane boundary function built from strips and linear gap ramps.
struct RailBoundary {
    std::vector<BoundarySegment> segments;

    template <class T>
    T potential(const T& x, const T& y) const {
        T sum = 0.0;
        for (const auto& s : segments) sum += strip_potential(s, x, y);
        return sum;
    }
    template <class T>
    Vec2<T> gradient(const T& x, const T& y) const {
        Vec2<T> g{T(0.0), T(0.0)};
        for (const auto& s : segments) {
            const auto gs = strip_gradient(s, x, y);
            g.x += gs.x;
            g.y += gs.y;
        }
        return g;
    }
    /// Boundary value at in-plane position x (0 outside all segments).
    double boundary_value(double x) const {
        for (const auto& s : segments)
            if (x >= s.x1 && x <= s.x2) return s.v1 + (s.v2 - s.v1) * (x - s.x1) / (s.x2 - s.x1);
        return 0.0;
    }
};

/// Central DC electrode at 1 V with its gap ramps down to the AC rails' DC level (0 V).
inline RailBoundary dc_boundary(const TrapGeometry& g) {
    RailBoundary r;
    const double g1 = g.gap_central_ac;
    if (g1 > 0.0) r.segments.emplace_back(-g1, 0.0, 0.0, 1.0);
    r.segments.push_back(BoundarySegment::constant(0.0, g.a, 1.0));
    if (g1 > 0.0) r.segments.emplace_back(g.a, g.a + g1, 1.0, 0.0);
    return r;
}

/// Both AC rails at unit amplitude with their gap ramps.
inline RailBoundary ac_boundary(const TrapGeometry& g) {
    RailBoundary r;
    const double g1 = g.gap_central_ac;
    const double outer =
        g.ac_falloff == AcFalloff::across_segments ? g.gap_ac_segment + g.seg_depth_x : g.gap_ac_segment;
    // left rail
    const double l_in = -g1, l_out = -g1 - g.c;
    if (outer > 0.0) r.segments.emplace_back(l_out - outer, l_out, 0.0, 1.0);
    r.segments.push_back(BoundarySegment::constant(l_out, l_in, 1.0));
    if (g1 > 0.0) r.segments.emplace_back(l_in, 0.0, 1.0, 0.0);
    // right rail
    const double r_in = g.a + g1, r_out = g.a + g1 + g.b;
    if (g1 > 0.0) r.segments.emplace_back(g.a, r_in, 0.0, 1.0);
    r.segments.push_back(BoundarySegment::constant(r_in, r_out, 1.0));
    if (outer > 0.0) r.segments.emplace_back(r_out, r_out + outer, 1.0, 0.0);
    return r;
}

template <class T>
T dc_potential_2d(const TrapGeometry& g, double v_central, const T& x, const T& y) {
    return v_central * dc_boundary(g).potential(x, y);
}

/// Spatial part of the AC potential per unit amplitude.
template <class T>
T ac_potential_2d(const TrapGeometry& g, const T& x, const T& y) {
    return ac_boundary(g).potential(x, y);
}

// ---------------------------------------------------------------------------
// Finite rectangles (solid-angle form)

/// Potential of a rectangle at voltage v, everything else in the plane at 0.
template <class T>
T rect_potential_3d(const Rect& r, double v, const T& x, const T& y, const T& z) {
    using std::atan;
    using std::sqrt;
    detail::require_above_plane(value_of(y));
    T sum = 0.0;
    const double xs[2] = {r.x1, r.x2};
    const double zs[2] = {r.z1, r.z2};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const T dx = xs[i] - x;
            const T dz = zs[j] - z;
            const T rr = sqrt(dx * dx + y * y + dz * dz);
            const T term = atan(dx * dz / (y * rr));
            if ((i + j) % 2 == 0) sum += term;
            else sum -= term;
        }
    return v * sum / (2.0 * std::numbers::pi);
}

template <class T>
Vec3<T> rect_gradient_3d(const Rect& r, double v, const T& x, const T& y, const T& z) {
    using std::sqrt;
    detail::require_above_plane(value_of(y));
    Vec3<T> g{T(0.0), T(0.0), T(0.0)};
    const double xs[2] = {r.x1, r.x2};
    const double zs[2] = {r.z1, r.z2};
    const T y2 = y * y;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const T dx = xs[i] - x;
            const T dz = zs[j] - z;
            const T dx2y = dx * dx + y2;
            const T dz2y = dz * dz + y2;
            const T rr = sqrt(dx * dx + y2 + dz * dz);
            // d/d(dx), d/d(dz), d/dy of atan(dx dz / (y R))
            const T f_dx = y * dz / (dx2y * rr);
            const T f_dz = y * dx / (dz2y * rr);
            const T f_y = -(dx * dz) * (rr * rr + y2) / (dx2y * dz2y * rr);
            const double sign = (i + j) % 2 == 0 ? 1.0 : -1.0;
            g.x -= sign * f_dx;
            g.y += sign * f_y;
            g.z -= sign * f_dz;
        }
    const double k = v / (2.0 * std::numbers::pi);
    g.x = k * g.x;
    g.y = k * g.y;
    g.z = k * g.z;
    return g;
}

// ---------------------------------------------------------------------------
// Whole trap

struct ChargedBody {
    double q{};  // C
    double m{};  // kg
    double drag = 0.0;  // kg/s; linear drag weakens the pseudopotential, see TrapModel::drag_factor
    double gamma() const { return q / m; }
};

/// Precomputed boundaries for one geometry and drive. Immutable; safe to
/// share across threads.
class TrapModel {
public:
    explicit TrapModel(TrapGeometry geometry = default_geometry(), DriveParams drive = {})
        : geom_(std::move(geometry)), drive_(drive), dc_(dc_boundary(geom_)), ac_(ac_boundary(geom_)) {
        geom_.validate();
        drive_.validate();
        for (std::size_t i = 0; i < geom_.segment_labels.size(); ++i) {
            const int idx = VoltageState::segment_index(geom_.segment_labels[i]);
            if (idx < 0) continue;
            segment_rects_.push_back({idx, geom_.left_slot(i)});
            segment_rects_.push_back({idx, geom_.right_slot(i)});
        }
    }

    const TrapGeometry& geometry() const { return geom_; }
    const DriveParams& drive() const { return drive_; }
    const RailBoundary& dc_rail() const { return dc_; }
    const RailBoundary& ac_rail() const { return ac_; }
    TrapModel with_drive(DriveParams d) const { return TrapModel(geom_, d); }

    struct SegmentRect {
        int index;  // 0..4 for A..E
        Rect rect;
    };
    const std::vector<SegmentRect>& segment_rects() const { return segment_rects_; }

    template <class T>
    Vec2<T> ac_gradient(const T& x, const T& y) const {
        return ac_.gradient(x, y);
    }
    /// |grad phi_AC|^2 per unit amplitude squared.
    template <class T>
    T ac_grad_sq(const T& x, const T& y) const {
        const auto g = ac_.gradient(x, y);
        return g.x * g.x + g.y * g.y;
    }
    /// Gradient of |grad phi_AC|^2 (unit amplitude), via exact dual derivatives.
    Vec2<double> ac_grad_sq_gradient(double x, double y) const {
        using D = Dual<double>;
        const auto gx = ac_.gradient(D(x, 1.0), D(y));
        const auto gy = ac_.gradient(D(x), D(y, 1.0));
        return {2.0 * (gx.x.v * gx.x.d + gx.y.v * gx.y.d), 2.0 * (gy.x.v * gy.x.d + gy.y.v * gy.y.d)};
    }

    /// Potential from every static electrode (central rail, segments, endcaps).
    template <class T>
    T static_potential(const VoltageState& v, const T& x, const T& y, const T& z) const {
        T phi = v.central * dc_.potential(x, y);
        for (const auto& s : segment_rects_) {
            const double vs = v.segments[s.index];
            if (vs != 0.0) phi += rect_potential_3d(s.rect, vs, x, y, z);
        }
        if (v.endcap != 0.0)
            for (const auto& r : geom_.endcap_rects) phi += rect_potential_3d(r, v.endcap, x, y, z);
        return phi;
    }

    template <class T>
    Vec3<T> static_gradient(const VoltageState& v, const T& x, const T& y, const T& z) const {
        const auto g2 = dc_.gradient(x, y);
        Vec3<T> g{v.central * g2.x, v.central * g2.y, T(0.0)};
        auto add = [&](const Rect& r, double vs) {
            const auto gr = rect_gradient_3d(r, vs, x, y, z);
            g.x += gr.x;
            g.y += gr.y;
            g.z += gr.z;
        };
        for (const auto& s : segment_rects_)
            if (v.segments[s.index] != 0.0) add(s.rect, v.segments[s.index]);
        if (v.endcap != 0.0)
            for (const auto& r : geom_.endcap_rects) add(r, v.endcap);
        return g;
    }

    /// Pseudopotential normalized by charge, (gamma / 4 Omega^2) V_AC^2 |grad phi_AC|^2, in J/C.
    template <class T>
    T pseudopotential_per_charge(double gamma, const T& x, const T& y) const {
        const double k = gamma * drive_.v_ac_amplitude * drive_.v_ac_amplitude / (4.0 * drive_.omega * drive_.omega);
        return k * ac_grad_sq(x, y);
    }
    /// Omega^2 / (Omega^2 + (b/m)^2): ratio of the time-averaged force with
    /// linear drag b to the drag-free pseudopotential force. 1 for b = 0.
    double drag_factor(const ChargedBody& p) const {
        const double beta = p.drag / p.m;
        const double w2 = drive_.omega * drive_.omega;
        return w2 / (w2 + beta * beta);
    }
    /// Pseudopotential energy q^2 V^2 |grad phi_AC|^2 / (4 m Omega^2), in J,
    /// times drag_factor(p).
    template <class T>
    T pseudopotential_energy(const ChargedBody& p, const T& x, const T& y) const {
        return (p.q * drag_factor(p)) * pseudopotential_per_charge(p.gamma(), x, y);
    }

    /// Time-independent total energy U = m g y + q phi_static + psi, in J.
    template <class T>
    T energy(const VoltageState& v, const ChargedBody& p, const T& x, const T& y, const T& z) const {
        return p.m * standard_gravity * y + p.q * static_potential(v, x, y, z) + pseudopotential_energy(p, x, y);
    }

    Vec3<double> energy_gradient(const VoltageState& v, const ChargedBody& p, double x, double y, double z) const {
        const auto gs = static_gradient(v, x, y, z);
        const auto gp = ac_grad_sq_gradient(x, y);
        const double kp = p.q * p.gamma() * drag_factor(p) * drive_.v_ac_amplitude * drive_.v_ac_amplitude /
                          (4.0 * drive_.omega * drive_.omega);
        return {p.q * gs.x + kp * gp.x, p.m * standard_gravity + p.q * gs.y + kp * gp.y, p.q * gs.z};
    }

    /// d2U/dx2 and d2U/dy2 at a point (exact, nested duals).
    std::pair<double, double> energy_curvature_xy(const VoltageState& v, const ChargedBody& p, double x, double y,
                                                  double z) const {
        using D2 = Dual<Dual<double>>;
        const D2 xs{Dual<double>(x, 1.0), Dual<double>(1.0, 0.0)};
        const D2 ys{Dual<double>(y, 1.0), Dual<double>(1.0, 0.0)};
        const double uxx = energy(v, p, xs, D2(y), D2(z)).d.d;
        const double uyy = energy(v, p, D2(x), ys, D2(z)).d.d;
        return {uxx, uyy};
    }

private:
    TrapGeometry geom_;
    DriveParams drive_;
    RailBoundary dc_;
    RailBoundary ac_;
    std::vector<SegmentRect> segment_rects_;
};

// Free-function forms -------------------------------------------------------

inline double pseudopotential(const TrapGeometry& g, const DriveParams& d, double gamma, double x, double y) {
    if (!(d.omega > 0.0)) throw invalid_input("pseudopotential requires a nonzero drive frequency");
    return TrapModel(g, d).pseudopotential_per_charge(gamma, x, y);
}

/// Total energy in joules; divide by q for the charge-normalized curve.
inline double total_potential_energy(const TrapGeometry& g, const DriveParams& d, const VoltageState& v,
                                     const ChargedBody& p, double x, double y, double z = 0.0) {
    if (p.q == 0.0 || !(p.m > 0.0)) throw invalid_input("particle needs q != 0 and m > 0");
    return TrapModel(g, d).energy(v, p, x, y, z);
}

}  // namespace trap
