#pragma once

// Null and equilibrium finding, and the two charge-to-mass estimators
// (height-curve fit, null force balance).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include "potential.hpp"

namespace trap {

inline constexpr double height_search_cap = 50e-3;  // m; above this the well is treated as absent

struct NullPoint {
    double x{};
    double y_null{};
    double grad_sq{};      // |grad phi_AC|^2 at the null (unit amplitude)
    double grad_sq_max{};  // largest |grad phi_AC|^2 seen on the search interval
};

struct EquilibriumResult {
    bool found = false;    // a local minimum of U(a/2, y) exists below the cap
    double y_min = 0.0;
    double curvature = 0.0;    // d2U/dy2, J/m^2
    double curvature_x = 0.0;  // d2U/dx2, J/m^2
    bool stable = false;       // found && both curvatures > 0
};

enum class GammaMethod { height_fit, null_balance };

struct GammaEstimate {
    double gamma{};
    double sigma{};
    GammaMethod method{GammaMethod::height_fit};
    double chi2_reduced = std::numeric_limits<double>::quiet_NaN();  // height_fit only
};

struct HeightVoltagePoint {
    double v_central{};    // V
    double y{};            // m
    double sigma_y{};      // m
    double alpha{};        // m, peak-to-peak micromotion
    double sigma_alpha{};  // m
};
using HeightVoltageSeries = std::vector<HeightVoltagePoint>;

namespace detail {

/// Refines a bracketed 1D minimum; boost's Brent at half double precision.
template <class F>
double refine_min(F&& f, double lo, double hi) {
    const int bits = std::numeric_limits<double>::digits / 2;
    std::uintmax_t iters = 200;
    return boost::math::tools::brent_find_minima(f, lo, hi, bits, iters).first;
}

/// First strict interior local minimum on a uniform grid, bracketed by its neighbours.
template <class F>
std::optional<std::pair<double, double>> first_local_min(F&& f, double lo, double hi, int n) {
    const double h = (hi - lo) / n;
    double prev2 = f(lo), prev1 = f(lo + h);
    for (int i = 2; i <= n; ++i) {
        const double cur = f(lo + i * h);
        if (prev1 < prev2 && prev1 < cur) return std::make_pair(lo + (i - 2) * h, lo + i * h);
        prev2 = prev1;
        prev1 = cur;
    }
    return std::nullopt;
}

}  // namespace detail

/// AC null on the centerline: local minimum of |grad phi_AC(a/2, y)|^2 on (0, 50 mm).
inline NullPoint find_ac_null(const TrapGeometry& g) {
    g.validate();
    if (std::abs(g.b - g.c) > 1e-12) throw invalid_input("find_ac_null requires a symmetric layout (b == c)");
    const RailBoundary ac = ac_boundary(g);
    const double x = g.center_x();
    auto gsq = [&](double y) {
        const auto gr = ac.gradient(x, y);
        return gr.x * gr.x + gr.y * gr.y;
    };
    const double lo = 1e-3 * g.a, hi = height_search_cap;
    const int n = 4000;
    double gmax = 0.0;
    for (int i = 0; i <= n; ++i) gmax = std::max(gmax, gsq(lo + (hi - lo) * i / n));
    auto bracket = detail::first_local_min(gsq, lo, hi, n);
    if (!bracket) throw std::runtime_error("find_ac_null: no interior minimum of |grad phi_AC|^2 (degenerate geometry)");
    const double y = detail::refine_min(gsq, bracket->first, bracket->second);
    return {x, y, gsq(y), gmax};
}

/// Sets gap_central_ac = gap_ac_segment so the AC null sits at target_y.
inline TrapGeometry calibrate_gaps_for_null(TrapGeometry g, double target_y) {
    auto residual = [&](double gap) {
        TrapGeometry t = g;
        t.gap_central_ac = gap;
        t.gap_ac_segment = gap;
        return find_ac_null(t).y_null - target_y;
    };
    double lo = 0.0, hi = g.a;
    if (residual(lo) > 0.0) throw invalid_input("target null height below the zero-gap null");
    while (residual(hi) < 0.0) {
        hi *= 2.0;
        if (hi > 1.0) throw invalid_input("target null height not reachable by gap calibration");
    }
    boost::math::tools::eps_tolerance<double> tol(40);
    std::uintmax_t iters = 100;
    auto [a, b] = boost::math::tools::toms748_solve(residual, lo, hi, tol, iters);
    g.gap_central_ac = g.gap_ac_segment = 0.5 * (a + b);
    g.endcap_rects = g.outer_slot_endcaps();
    return g;
}

/// Equilibrium height on the centerline. Absence of a minimum, or a
/// minimum without lateral confinement, is the ejection regime and is
/// reported through found/stable rather than thrown.
inline EquilibriumResult find_equilibrium_height(const TrapModel& model, const VoltageState& v, const ChargedBody& p,
                                                 double y_cap = height_search_cap, int scan_points = 1000) {
    if (p.q == 0.0 || !(p.m > 0.0)) throw invalid_input("particle needs q != 0 and m > 0");
    const double x = model.geometry().center_x();
    auto u = [&](double y) { return model.energy(v, p, x, y, 0.0); };
    const double lo = 1e-2 * model.geometry().a;
    EquilibriumResult r;
    auto bracket = detail::first_local_min(u, lo, y_cap, scan_points);
    if (!bracket) return r;
    r.found = true;
    r.y_min = detail::refine_min(u, bracket->first, bracket->second);
    const auto [uxx, uyy] = model.energy_curvature_xy(v, p, x, r.y_min, 0.0);
    r.curvature = uyy;
    r.curvature_x = uxx;
    r.stable = uyy > 0.0 && uxx > 0.0;
    return r;
}

inline EquilibriumResult find_equilibrium_height(const TrapGeometry& g, const DriveParams& d, const VoltageState& v,
                                                 const ChargedBody& p) {
    return find_equilibrium_height(TrapModel(g, d), v, p);
}

/// Model heights for a series at a trial gamma (mass normalized to 1 kg, so
/// drag_rate b/m in 1/s is the drag coefficient).
inline std::vector<double> model_heights(const TrapModel& model, const HeightVoltageSeries& s, double gamma,
                                         const VoltageState& base = {}, double drag_rate = 0.0) {
    std::vector<double> out;
    out.reserve(s.size());
    const ChargedBody p{gamma, 1.0, drag_rate};
    for (const auto& pt : s) {
        VoltageState v = base;
        v.central = pt.v_central;
        const auto eq = find_equilibrium_height(model, v, p);
        out.push_back(eq.found ? eq.y_min : height_search_cap);
    }
    return out;
}

/// (1/(N - p)) sum ((y_i - f_i)/sigma_i)^2
inline double reduced_chi_squared(const std::vector<double>& model, const HeightVoltageSeries& s, int fitted_params = 1) {
    if (model.size() != s.size()) throw invalid_input("model/series size mismatch");
    const auto n = static_cast<int>(s.size());
    if (n <= fitted_params) throw invalid_input("reduced chi-squared needs N > p");
    double chi2 = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!(s[i].sigma_y > 0.0)) throw invalid_input("reduced chi-squared needs sigma_y > 0");
        const double r = (s[i].y - model[i]) / s[i].sigma_y;
        chi2 += r * r;
    }
    return chi2 / (n - fitted_params);
}

struct HeightFitOptions {
    double gamma_min_abs = 1e-5;  // C/kg, search range for |gamma|
    double gamma_max_abs = 1e-1;
    int coarse_points = 48;
    bool negative = true;  // search gamma < 0
    double drag_rate = 0.0;  // b/m of the particle, 1/s
};

/// Method 1: one-parameter weighted least squares of y_min(V; gamma) to the
/// measured heights. sigma from the Delta chi^2 = 1 profile interval.
inline GammaEstimate fit_gamma_height_curve(const HeightVoltageSeries& s, const TrapModel& model,
                                            const VoltageState& base = {}, const HeightFitOptions& opt = {}) {
    if (s.size() < 3) throw invalid_input("height fit needs at least 3 points");
    for (const auto& p : s)
        if (!(p.sigma_y > 0.0)) throw invalid_input("height fit needs sigma_y > 0 for every point");
    const bool all_same = std::all_of(s.begin(), s.end(), [&](const auto& p) { return p.v_central == s.front().v_central; });
    if (all_same) throw invalid_input("height fit needs at least two distinct voltages");

    const double sign = opt.negative ? -1.0 : 1.0;
    auto chi2_at_log = [&](double log_abs) {
        const auto f = model_heights(model, s, sign * std::exp(log_abs), base, opt.drag_rate);
        double c = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double r = (s[i].y - f[i]) / s[i].sigma_y;
            c += r * r;
        }
        return c;
    };
    const double la = std::log(opt.gamma_min_abs), lb = std::log(opt.gamma_max_abs);
    const int n = opt.coarse_points;
    int best = 0;
    std::vector<double> coarse(n + 1);
    for (int i = 0; i <= n; ++i) {
        coarse[i] = chi2_at_log(la + (lb - la) * i / n);
        if (coarse[i] < coarse[best]) best = i;
    }
    const double step = (lb - la) / n;
    const double lo = la + std::max(best - 1, 0) * step;
    const double hi = la + std::min(best + 1, n) * step;
    const double log_best = detail::refine_min(chi2_at_log, lo, hi);
    const double chi2_min = chi2_at_log(log_best);
    if (!std::isfinite(chi2_min)) throw std::runtime_error("height fit did not converge");

    // Delta chi^2 = 1 crossings on each side, in log|gamma|.
    auto crossing = [&](double dir) {
        auto f = [&](double l) { return chi2_at_log(l) - chi2_min - 1.0; };
        double d = 1e-4;
        double l_out = log_best + dir * d;
        while (f(l_out) < 0.0) {
            d *= 2.0;
            l_out = log_best + dir * d;
            if (d > 10.0) throw std::runtime_error("height fit: chi^2 profile too flat for an interval");
        }
        double l_in = log_best + dir * d * 0.5;
        if (f(l_in) >= 0.0) l_in = log_best;
        boost::math::tools::eps_tolerance<double> tol(30);
        std::uintmax_t iters = 60;
        auto [a, b] = dir > 0 ? boost::math::tools::toms748_solve(f, l_in, l_out, tol, iters)
                              : boost::math::tools::toms748_solve(f, l_out, l_in, tol, iters);
        return std::exp(0.5 * (a + b));
    };
    const double g_hi = crossing(+1.0), g_lo = crossing(-1.0);

    GammaEstimate e;
    e.method = GammaMethod::height_fit;
    e.gamma = sign * std::exp(log_best);
    e.sigma = 0.5 * std::abs(g_hi - g_lo);
    e.chi2_reduced = chi2_min / static_cast<double>(s.size() - 1);
    return e;
}

/// Method 2: at the null, the central electrode's vertical force balances
/// gravity, gamma = -g / |V d(phi_DC per volt)/dy|. Uncertainties propagate
/// to first order.
inline GammaEstimate gamma_from_null_balance(double y_null, double v_central, const TrapGeometry& g,
                                             double sigma_y = 0.0, double sigma_v = 0.0) {
    if (!(y_null > 0.0)) throw invalid_input("null balance needs y_null > 0");
    const RailBoundary dc = dc_boundary(g);
    const double x = g.center_x();
    const auto gy = dc.gradient(Dual<double>(x), Dual<double>(y_null, 1.0)).y;
    const double field = std::abs(v_central * gy.v);
    if (!(field > 0.0)) throw invalid_input("null balance needs a nonzero central field (voltage 0?)");
    GammaEstimate e;
    e.method = GammaMethod::null_balance;
    e.gamma = -standard_gravity / field;
    const double rel_v = v_central != 0.0 ? sigma_v / std::abs(v_central) : 0.0;
    const double rel_y = std::abs(gy.d / gy.v) * sigma_y;
    e.sigma = std::abs(e.gamma) * std::sqrt(rel_v * rel_v + rel_y * rel_y);
    return e;
}

struct MicromotionMinimum {
    std::size_t index{};  // row of minimal alpha
    double v_at_min{};    // V
    double y_at_min{};    // m
    double v_vertex{};    // refined |V - V0| vertex
    double y_vertex{};    // height interpolated at the vertex
};

/// Row of minimal micromotion plus a V-shaped refinement
/// alpha = k |V - V0| + alpha0 over the neighbouring rows.
inline MicromotionMinimum micromotion_minimum(const HeightVoltageSeries& s) {
    if (s.size() < 3) throw invalid_input("micromotion minimum needs at least 3 points");
    std::size_t i = 0;
    for (std::size_t k = 1; k < s.size(); ++k)
        if (s[k].alpha < s[i].alpha) i = k;
    if (i == 0 || i + 1 == s.size())
        throw std::runtime_error("micromotion minimum at the end of the series: the null was not crossed");

    MicromotionMinimum m;
    m.index = i;
    m.v_at_min = s[i].v_central;
    m.y_at_min = s[i].y;

    const std::size_t lo = i >= 2 ? i - 2 : 0;
    const std::size_t hi = std::min(i + 2, s.size() - 1);
    auto sse = [&](double v0) {
        // linear least squares of alpha on |V - v0|
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(hi - lo + 1);
        for (std::size_t k = lo; k <= hi; ++k) {
            const double xk = std::abs(s[k].v_central - v0);
            sx += xk;
            sy += s[k].alpha;
            sxx += xk * xk;
            sxy += xk * s[k].alpha;
        }
        const double den = n * sxx - sx * sx;
        const double slope = den != 0.0 ? (n * sxy - sx * sy) / den : 0.0;
        const double icpt = (sy - slope * sx) / n;
        double r = 0.0;
        for (std::size_t k = lo; k <= hi; ++k) {
            const double e = s[k].alpha - (slope * std::abs(s[k].v_central - v0) + icpt);
            r += e * e;
        }
        return r;
    };
    double a = s[i - 1].v_central, b = s[i + 1].v_central;
    if (a > b) std::swap(a, b);
    m.v_vertex = detail::refine_min(sse, a, b);
    // height at the vertex, linear between the bracketing rows
    m.y_vertex = m.y_at_min;
    for (std::size_t k = lo; k < hi; ++k) {
        const double v1 = s[k].v_central, v2 = s[k + 1].v_central;
        if ((m.v_vertex - v1) * (m.v_vertex - v2) <= 0.0 && v1 != v2) {
            const double t = (m.v_vertex - v1) / (v2 - v1);
            m.y_vertex = s[k].y + t * (s[k + 1].y - s[k].y);
            break;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// CSV / JSON

inline HeightVoltageSeries read_series_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw invalid_input("empty series CSV");
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) {
            c.erase(std::remove_if(c.begin(), c.end(), [](unsigned char ch) { return std::isspace(ch); }), c.end());
            cols.push_back(c);
        }
    }
    const std::vector<std::string> need{"voltage_V", "height_mm", "sigma_height_mm", "micromotion_mm",
                                        "sigma_micromotion_mm"};
    std::vector<int> idx;
    for (const auto& n : need) {
        auto it = std::find(cols.begin(), cols.end(), n);
        if (it == cols.end()) throw invalid_input("series CSV missing column '" + n + "'");
        idx.push_back(static_cast<int>(it - cols.begin()));
    }
    HeightVoltageSeries s;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) {
            try {
                vals.push_back(std::stod(c));
            } catch (const std::exception&) {
                throw invalid_input("series CSV line " + std::to_string(lineno) + ": bad number '" + c + "'");
            }
        }
        if (vals.size() < cols.size())
            throw invalid_input("series CSV line " + std::to_string(lineno) + ": too few columns");
        s.push_back({vals[idx[0]], vals[idx[1]] * 1e-3, vals[idx[2]] * 1e-3, vals[idx[3]] * 1e-3, vals[idx[4]] * 1e-3});
    }
    return s;
}

inline HeightVoltageSeries read_series_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw invalid_input("cannot open " + path);
    return read_series_csv(f);
}

inline void write_series_csv(std::ostream& out, const HeightVoltageSeries& s) {
    out << "voltage_V,height_mm,sigma_height_mm,micromotion_mm,sigma_micromotion_mm\n";
    out.precision(10);
    for (const auto& p : s)
        out << p.v_central << ',' << p.y * 1e3 << ',' << p.sigma_y * 1e3 << ',' << p.alpha * 1e3 << ','
            << p.sigma_alpha * 1e3 << '\n';
}

inline void to_json(nlohmann::json& j, const GammaEstimate& e) {
    j = {{"method", e.method == GammaMethod::height_fit ? "height-fit" : "null-balance"},
         {"gamma", e.gamma},
         {"sigma", e.sigma}};
    if (e.method == GammaMethod::height_fit) j["chi2_reduced"] = e.chi2_reduced;
}

}  // namespace trap
