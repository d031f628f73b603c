#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <limits>

#include "spectral_risk/common.hpp"
#include "spectral_risk/quadrature.hpp"

namespace spectral_risk {

using cplx = std::complex<double>;

// Hurwitz zeta(alpha, x) = sum_{n>=0} (n+x)^{-alpha} by Euler-Maclaurin. Explicit terms are
// summed until the shift reaches 25, then the tail is closed with Bernoulli corrections
// through B_12.
inline double hurwitz_zeta(double alpha, double x) {
    if (!(alpha > 1.0 + 1e-9)) throw DomainError("hurwitz_zeta: alpha must exceed 1");
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("hurwitz_zeta: x must be positive and finite");
    constexpr double cutoff = 25.0;
    // B_{2k}/(2k)! for k = 1..6
    constexpr std::array<double, 6> bern = {1.0 / 12.0,        -1.0 / 720.0,      1.0 / 30240.0,
                                            -1.0 / 1209600.0, 1.0 / 47900160.0, -691.0 / 1307674368000.0};
    double head = 0.0;
    double y = x;
    while (y < cutoff) {
        head += std::pow(y, -alpha);
        y += 1.0;
    }
    const double ys = std::pow(y, -alpha);
    double tail = y * ys / (alpha - 1.0) + 0.5 * ys;
    double term = alpha * ys / y;  // alpha * y^{-alpha-1}
    const double inv_y2 = 1.0 / (y * y);
    for (std::size_t k = 0; k < bern.size(); ++k) {
        tail += bern[k] * term;
        const double j = 2.0 * static_cast<double>(k) + 1.0;
        term *= (alpha + j) * (alpha + j + 1.0) * inv_y2;
    }
    return head + tail;
}

inline double riemann_zeta(double alpha) {
    if (!(alpha > 1.0 + 1e-9)) throw DomainError("riemann_zeta: alpha must exceed 1");
    return hurwitz_zeta(alpha, 1.0);
}

// zeta(alpha, tau) + zeta(alpha, 1 - tau). Arguments are put in canonical order so the result
// is bit-identical under tau -> 1 - tau whenever 1 - (1 - tau) == tau in floating point.
inline double symmetrized_hurwitz_zeta(double alpha, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("symmetrized_hurwitz_zeta: tau must lie in (0,1)");
    const double s = tau <= 0.5 ? tau : 1.0 - tau;
    const double other = 1.0 - s;
    return hurwitz_zeta(alpha, s) + hurwitz_zeta(alpha, other);
}

namespace detail {

inline bool near_integer(double a, double tol) { return std::abs(a - std::round(a)) < tol; }

// Small-|x| expansion of int_0^1 lambda^a / (lambda + x)^m, valid for |x| < 1, a not an integer.
inline cplx resolvent_moment_series(double a, cplx x, int m) {
    const double s = std::sin(pi * a);
    cplx sum = 0.0;
    cplx xn = 1.0;  // (-x)^n
    if (m == 1) {
        sum = -pi * std::pow(x, a) / s;
        for (int n = 0; n < 200; ++n) {
            const cplx t = xn / (static_cast<double>(n) - a);
            sum -= t;
            if (std::abs(t) < 1e-18 * std::abs(sum)) break;
            xn *= -x;
        }
    } else {
        sum = pi * a * std::pow(x, a - 1.0) / s;
        xn = -1.0;  // (-1)^n x^{n-1} at n = 1
        for (int n = 1; n < 200; ++n) {
            const cplx t = static_cast<double>(n) * xn / (static_cast<double>(n) - a);
            sum += t;
            if (std::abs(t) < 1e-18 * std::abs(sum)) break;
            xn *= -x;
        }
    }
    return sum;
}

// int_0^delta lambda^a / (lambda + x)^m for delta <= |x|/4 by the geometric expansion in lambda/x.
inline cplx resolvent_moment_head(double a, cplx x, int m, double delta) {
    if (delta <= 0.0) return 0.0;
    const cplx r = -delta / x;
    cplx rn = 1.0;
    cplx sum = 0.0;
    for (int n = 0; n < 400; ++n) {
        const double coef = (m == 1 ? 1.0 : static_cast<double>(n + 1)) / (a + static_cast<double>(n) + 1.0);
        const cplx t = coef * rn;
        sum += t;
        if (std::abs(t) < 1e-18 * std::abs(sum)) break;
        rn *= r;
    }
    const double lead = std::pow(delta, a + 1.0);
    return sum * lead / (m == 1 ? x : x * x);
}

}  // namespace detail

// Several moments int_0^1 lambda^{a_i} / (lambda + x)^{m_i} dlambda sharing one x, with a_i > -1,
// m_i in {1, 2} and x off the cut [-1, 0]. Im x < 0 is handled by conjugation.
template <std::size_t K>
std::array<cplx, K> resolvent_moments(const std::array<double, K>& a, const std::array<int, K>& m, cplx x) {
    for (std::size_t i = 0; i < K; ++i) {
        if (!(a[i] > -1.0)) throw DomainError("resolvent_moments: exponent must exceed -1");
        if (m[i] != 1 && m[i] != 2) throw DomainError("resolvent_moments: power must be 1 or 2");
    }
    if (x.imag() == 0.0 && x.real() <= 0.0 && x.real() >= -1.0)
        throw DomainError("resolvent_moments: argument on the cut [-1,0]");
    const bool flip = x.imag() < 0.0;
    if (flip) x = std::conj(x);

    std::array<cplx, K> out{};
    const double ax = std::abs(x);
    bool use_series = ax < 1e-3;
    for (std::size_t i = 0; i < K && use_series; ++i)
        if (detail::near_integer(a[i], 1e-3)) use_series = false;

    if (use_series) {
        for (std::size_t i = 0; i < K; ++i) out[i] = detail::resolvent_moment_series(a[i], x, m[i]);
    } else {
        const double delta = std::min(0.25 * ax, 1.0);
        for (std::size_t i = 0; i < K; ++i) out[i] = detail::resolvent_moment_head(a[i], x, m[i], delta);
        if (delta < 1.0) {
            // Remaining piece in t = log(lambda) - c. When Re x < 0, c = log(-Re x) and the distance
            // to the pole is formed as lam0 * expm1(t), which keeps it exact at the peak. This also
            // covers poles just beyond lambda = 1.
            const bool near_cut = x.real() < 0.0 && -x.real() > delta;
            const double lam0 = near_cut ? -x.real() : 1.0;
            const double c = std::log(lam0);
            auto f = [&](double t) {
                std::array<cplx, K> v;
                const double lam = lam0 * std::exp(t);
                const cplx d = near_cut ? cplx(lam0 * std::expm1(t), x.imag()) : lam + x;
                const cplx inv1 = 1.0 / d;
                    // Squared powers are integrated by parts on [delta, 1]:
                // int lam^a/(lam+x)^2 = [-lam^a/(lam+x)] + a int lam^{a-1}/(lam+x).
                for (std::size_t i = 0; i < K; ++i)
                    v[i] = std::pow(lam, a[i] + 1.0) * (m[i] == 1 ? inv1 : a[i] * inv1 / lam);
                return v;
            };
            const std::array<double, 1> bp{0.0};
            std::span<const double> bps;
            if (near_cut) bps = std::span<const double>(bp);
            QuadratureOptions opt;
            opt.abs_tol = 1e-300;
            opt.rel_tol = 2e-14;
            opt.max_intervals = 20000;
            auto r = integrate(f, std::log(delta) - c, -c, opt, bps);
            if (!r.converged && r.error > 1e-10 * detail::quad_norm(r.value))
                throw ConvergenceError("resolvent_moments: quadrature did not converge");
            for (std::size_t i = 0; i < K; ++i) {
                out[i] += r.value[i];
                if (m[i] == 2) out[i] += std::pow(delta, a[i]) / (delta + x) - 1.0 / (1.0 + x);
            }
        }
    }
    if (flip)
        for (auto& v : out) v = std::conj(v);
    return out;
}

inline cplx resolvent_moment(double a, cplx x, int m) {
    return resolvent_moments<1>({a}, {m}, x)[0];
}

// F_a(x) = int_0^1 lambda^a / (lambda + x) dlambda for a in (-1,1) \ {0}, Im x >= 0, x off [-1,0].
inline cplx power_law_tail_integral(double a, cplx x) {
    if (!(a > -1.0 && a < 1.0) || a == 0.0)
        throw DomainError("power_law_tail_integral: a must lie in (-1,1) and be non-integer");
    if (x.imag() < 0.0) throw DomainError("power_law_tail_integral: requires Im x >= 0");
    if (x.imag() == 0.0 && x.real() <= 0.0 && x.real() >= -1.0)
        throw DomainError("power_law_tail_integral: x lies on the cut [-1,0]");
    return resolvent_moment(a, x, 1);
}

}  // namespace spectral_risk
