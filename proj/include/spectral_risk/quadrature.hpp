#pragma once

#include <algorithm>
#include <array>
#include <complex>
#include <limits>
#include <queue>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "spectral_risk/common.hpp"

namespace spectral_risk {

struct QuadratureOptions {
    double abs_tol = 1e-15;
    double rel_tol = 1e-12;
    int max_intervals = 4000;
};

template <class T>
struct QuadratureResult {
    T value{};
    double error = 0.0;
    int intervals = 0;
    bool converged = false;
};

namespace detail {

inline double quad_norm(double v) { return std::abs(v); }
inline double quad_norm(const std::complex<double>& v) { return std::abs(v); }
template <class T, std::size_t K>
double quad_norm(const std::array<T, K>& v) {
    double m = 0.0;
    for (const auto& e : v) m = std::max(m, quad_norm(e));
    return m;
}

template <class T>
T quad_zero() {
    if constexpr (std::is_arithmetic_v<T>) {
        return T{0};
    } else {
        T z{};
        return z;
    }
}

template <class T>
void quad_axpy(T& acc, double w, const T& v) {
    if constexpr (std::is_arithmetic_v<T> || std::is_same_v<T, std::complex<double>>) {
        acc += w * v;
    } else {
        for (std::size_t i = 0; i < acc.size(); ++i) quad_axpy(acc[i], w, v[i]);
    }
}

template <class T>
T quad_diff(const T& a, const T& b) {
    if constexpr (std::is_arithmetic_v<T> || std::is_same_v<T, std::complex<double>>) {
        return a - b;
    } else {
        T out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = quad_diff(a[i], b[i]);
        return out;
    }
}

// Kronrod 21-point rule with embedded 10-point Gauss rule, tables from Boost.
struct KronrodTable {
    std::array<double, 11> x{};
    std::array<double, 11> wk{};
    std::array<double, 11> wg{};  // zero where the node is Kronrod-only
};

inline const KronrodTable& kronrod21() {
    static const KronrodTable table = [] {
        KronrodTable t;
        const auto& kx = boost::math::quadrature::gauss_kronrod<double, 21>::abscissa();
        const auto& kw = boost::math::quadrature::gauss_kronrod<double, 21>::weights();
        const auto& gx = boost::math::quadrature::gauss<double, 10>::abscissa();
        const auto& gw = boost::math::quadrature::gauss<double, 10>::weights();
        for (std::size_t i = 0; i < 11; ++i) {
            t.x[i] = kx[i];
            t.wk[i] = kw[i];
            t.wg[i] = 0.0;
            for (std::size_t j = 0; j < gx.size(); ++j)
                if (std::abs(gx[j] - kx[i]) < 1e-14) t.wg[i] = gw[j];
        }
        return t;
    }();
    return table;
}

template <class T>
struct Panel {
    double a, b;
    T value;
    double error;
    double floor;  // rounding floor: below this the estimate cannot improve by bisection
    bool operator<(const Panel& o) const { return error < o.error; }
};

// One 21-point Kronrod panel with the embedded Gauss estimate, rescaled as in QUADPACK.
template <class T, class F>
Panel<T> kronrod_panel(F& f, double a, double b) {
    const auto& t = kronrod21();
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    std::array<T, 21> fv;
    std::array<double, 21> wk, wg;
    fv[0] = f(c);
    wk[0] = t.wk[0];
    wg[0] = t.wg[0];
    for (std::size_t i = 1; i < 11; ++i) {
        fv[2 * i - 1] = f(c - h * t.x[i]);
        fv[2 * i] = f(c + h * t.x[i]);
        wk[2 * i - 1] = wk[2 * i] = t.wk[i];
        wg[2 * i - 1] = wg[2 * i] = t.wg[i];
    }
    T k = quad_zero<T>(), g = quad_zero<T>();
    double resabs = 0.0;
    for (std::size_t i = 0; i < 21; ++i) {
        quad_axpy(k, wk[i], fv[i]);
        if (wg[i] != 0.0) quad_axpy(g, wg[i], fv[i]);
        resabs += wk[i] * quad_norm(fv[i]);
    }
    T mean = quad_zero<T>();
    quad_axpy(mean, 0.5, k);
    double resasc = 0.0;
    for (std::size_t i = 0; i < 21; ++i) resasc += wk[i] * quad_norm(quad_diff(fv[i], mean));
    T kv = quad_zero<T>(), gv = quad_zero<T>();
    quad_axpy(kv, h, k);
    quad_axpy(gv, h, g);
    resabs *= std::abs(h);
    resasc *= std::abs(h);
    double err = quad_norm(quad_diff(kv, gv));
    if (resasc != 0.0 && err != 0.0) err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
    const double floor = 50.0 * std::numeric_limits<double>::epsilon() * resabs;
    err = std::max(err, floor);
    return Panel<T>{a, b, kv, err, floor};
}

}  // namespace detail

// Globally adaptive Gauss-Kronrod quadrature on a finite interval. The integrand may
// return double, std::complex<double>, or a std::array of either. Optional interior
// breakpoints seed the initial partition.
template <class F>
auto integrate(F&& f, double a, double b, const QuadratureOptions& opt = {},
               std::span<const double> breakpoints = {}) {
    using T = std::decay_t<std::invoke_result_t<F&, double>>;
    QuadratureResult<T> result;
    result.value = detail::quad_zero<T>();
    if (a == b) {
        result.converged = true;
        return result;
    }
    double sign = 1.0;
    if (b < a) {
        std::swap(a, b);
        sign = -1.0;
    }
    std::vector<double> cuts{a};
    for (double p : breakpoints)
        if (p > a && p < b) cuts.push_back(p);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    std::priority_queue<detail::Panel<T>> heap;
    T retired = detail::quad_zero<T>();
    double retired_err = 0.0;
    double active_err = 0.0;
    auto admit = [&](detail::Panel<T>&& p) {
        // Panels whose estimate sits on the rounding floor are final.
        if (p.error <= p.floor) {
            detail::quad_axpy(retired, 1.0, p.value);
            retired_err += p.error;
        } else {
            active_err += p.error;
            heap.push(std::move(p));
        }
    };
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) admit(detail::kronrod_panel<T>(f, cuts[i], cuts[i + 1]));
    auto current_sum = [&]() {
        T s = retired;
        auto copy = heap;
        while (!copy.empty()) {
            detail::quad_axpy(s, 1.0, copy.top().value);
            copy.pop();
        }
        return s;
    };
    T total = current_sum();
    int count = static_cast<int>(cuts.size()) - 1;
    while (!heap.empty()) {
        const double scale = detail::quad_norm(total);
        if (active_err <= std::max(opt.abs_tol, opt.rel_tol * scale)) break;
        if (count >= opt.max_intervals) break;
        auto worst = heap.top();
        heap.pop();
        active_err -= worst.error;
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) {
            detail::quad_axpy(retired, 1.0, worst.value);
            retired_err += worst.error;
            continue;
        }
        auto left = detail::kronrod_panel<T>(f, worst.a, mid);
        auto right = detail::kronrod_panel<T>(f, mid, worst.b);
        detail::quad_axpy(total, -1.0, worst.value);
        detail::quad_axpy(total, 1.0, left.value);
        detail::quad_axpy(total, 1.0, right.value);
        admit(std::move(left));
        admit(std::move(right));
        ++count;
        // Refresh running quantities occasionally to keep rounding drift bounded.
        if (count % 256 == 0) {
            total = current_sum();
            active_err = 0.0;
            auto copy = heap;
            while (!copy.empty()) {
                active_err += copy.top().error;
                copy.pop();
            }
        }
    }
    const T sum = current_sum();
    result.converged = active_err <= std::max(opt.abs_tol, opt.rel_tol * detail::quad_norm(sum));
    detail::quad_axpy(result.value, sign, sum);
    result.error = active_err + retired_err;
    result.intervals = count;
    return result;
}

// Same as integrate() but throws ConvergenceError when the tolerance is not met.
template <class F>
auto integrate_or_throw(F&& f, double a, double b, const QuadratureOptions& opt = {},
                        std::span<const double> breakpoints = {}, const char* what = "quadrature") {
    auto r = integrate(std::forward<F>(f), a, b, opt, breakpoints);
    if (!r.converged) {
        const double scale = detail::quad_norm(r.value);
        // Accept results within a small factor of the requested tolerance.
        if (r.error > 100.0 * std::max(opt.abs_tol, opt.rel_tol * scale))
            throw ConvergenceError(std::string(what) + ": adaptive quadrature did not converge");
    }
    return r.value;
}

// Composite Gauss-Legendre nodes and weights on a list of panel boundaries.
struct NodeSet {
    std::vector<double> x;
    std::vector<double> w;
};

inline NodeSet gauss_legendre_panels(std::span<const double> edges) {
    const auto& gx = boost::math::quadrature::gauss<double, 20>::abscissa();
    const auto& gw = boost::math::quadrature::gauss<double, 20>::weights();
    NodeSet out;
    for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        const double a = edges[p], b = edges[p + 1];
        const double c = 0.5 * (a + b), h = 0.5 * (b - a);
        std::vector<std::pair<double, double>> nodes;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (gx[i] == 0.0) {
                nodes.emplace_back(c, h * gw[i]);
            } else {
                nodes.emplace_back(c - h * gx[i], h * gw[i]);
                nodes.emplace_back(c + h * gx[i], h * gw[i]);
            }
        }
        std::sort(nodes.begin(), nodes.end());
        for (auto& [xx, ww] : nodes) {
            out.x.push_back(xx);
            out.w.push_back(ww);
        }
    }
    return out;
}

}  // namespace spectral_risk
