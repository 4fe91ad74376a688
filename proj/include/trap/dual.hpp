#pragma once

// Forward-mode dual numbers. Nesting (Dual<Dual<double>>) gives second
// derivatives; the potential kernels are templated on the scalar so the same
// closed forms yield Hessians and curvature terms without hand expansion.

#include <cmath>
#include <type_traits>

namespace trap {

template <class T>
struct Dual {
    T v{};  ///< value
    T d{};  ///< derivative along the seeded direction

    constexpr Dual() = default;
    constexpr Dual(double value) : v(value), d(0.0) {}  // NOLINT: implicit from constants
    constexpr Dual(T value, T deriv) : v(value), d(deriv) {}

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    Dual& operator/=(const Dual& o) { d = (d * o.v - v * o.d) / (o.v * o.v); v /= o.v; return *this; }
};

template <class T> struct is_dual : std::false_type {};
template <class T> struct is_dual<Dual<T>> : std::true_type {};

template <class T> Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <class T> Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <class T> Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <class T> Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <class T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }

template <class T> Dual<T> operator+(Dual<T> a, double b) { a.v += b; return a; }
template <class T> Dual<T> operator+(double b, Dual<T> a) { a.v += b; return a; }
template <class T> Dual<T> operator-(Dual<T> a, double b) { a.v -= b; return a; }
template <class T> Dual<T> operator-(double b, const Dual<T>& a) { return {b - a.v, -a.d}; }
template <class T> Dual<T> operator*(Dual<T> a, double b) { a.v *= b; a.d *= b; return a; }
template <class T> Dual<T> operator*(double b, Dual<T> a) { a.v *= b; a.d *= b; return a; }
template <class T> Dual<T> operator/(Dual<T> a, double b) { a.v /= b; a.d /= b; return a; }
template <class T> Dual<T> operator/(double b, const Dual<T>& a) { return {b / a.v, -b * a.d / (a.v * a.v)}; }

template <class T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.v < b.v; }
template <class T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.v > b.v; }
template <class T> bool operator<=(const Dual<T>& a, double b) { return a.v <= b; }
template <class T> bool operator>(const Dual<T>& a, double b) { return a.v > b; }

template <class T>
Dual<T> atan(const Dual<T>& a) {
    using std::atan;
    return {atan(a.v), a.d / (1.0 + a.v * a.v)};
}
template <class T>
Dual<T> log(const Dual<T>& a) {
    using std::log;
    return {log(a.v), a.d / a.v};
}
template <class T>
Dual<T> sqrt(const Dual<T>& a) {
    using std::sqrt;
    T s = sqrt(a.v);
    return {s, a.d / (2.0 * s)};
}

/// Plain value of a (possibly nested) dual.
template <class T>
constexpr double value_of(const T& x) {
    if constexpr (is_dual<T>::value) return value_of(x.v);
    else return x;
}

/// df/dx at x for a scalar function templated on its argument type.
template <class F>
double derivative(F&& f, double x) {
    return f(Dual<double>(x, 1.0)).d;
}

/// d2f/dx2 at x via a doubly nested dual.
template <class F>
double second_derivative(F&& f, double x) {
    using D2 = Dual<Dual<double>>;
    D2 arg{Dual<double>(x, 1.0), Dual<double>(1.0, 0.0)};
    return f(arg).d.d;
}

}  // namespace trap
