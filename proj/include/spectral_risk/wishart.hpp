#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "spectral_risk/common.hpp"
#include "spectral_risk/loss.hpp"
#include "spectral_risk/profiles.hpp"
#include "spectral_risk/quadrature.hpp"
#include "spectral_risk/special_functions.hpp"
#include "spectral_risk/spectrum.hpp"

namespace spectral_risk {

// Throughout, x denotes r^{-1}. The fixed point reads z = Z(x) with
// Z(x) = -x + (x/N) sum_l lambda_l / (lambda_l + x).

enum class SpectrumMode { discrete_sum, continuous_integral };

// C_nu = (pi/nu) / sin(pi/nu).
inline double stieltjes_constant(double nu) {
    if (!(nu > 1.0)) throw DomainError("stieltjes_constant: nu must exceed 1");
    return (pi / nu) / std::sin(pi / nu);
}

// Z, dZ/dx and the auxiliary sums at one x. du and dv are derivatives in x.
struct ResolventEval {
    cplx x, z, dz, v, u, w, du, dv;
};

class WishartModel {
public:
    WishartModel(const PowerLawSpectrum& spec, double N) : spec_(spec), n_(N) {
        spec.validate();
        check_n(N);
        if (spec.is_discrete()) {
            modes_ = materialize(spec);
            finish_discrete();
        } else {
            trace_ = 1.0 / (spec.nu - 1.0);
            c2sum_ = 1.0 / spec.kappa;
        }
    }

    WishartModel(DiscreteSpectrum modes, double N) : modes_(std::move(modes)), n_(N) {
        check_n(N);
        if (modes_.size() == 0 || modes_.c2.size() != modes_.size())
            throw DomainError("wishart: mode list must be nonempty with matching coefficients");
        for (double l : modes_.lambda)
            if (!(l > 0.0)) throw DomainError("wishart: eigenvalues must be positive");
        finish_discrete();
    }

    bool continuous() const { return spec_ && !spec_->is_discrete(); }
    SpectrumMode mode() const { return continuous() ? SpectrumMode::continuous_integral : SpectrumMode::discrete_sum; }
    double N() const { return n_; }
    double trace() const { return trace_; }
    double target_norm_sq() const { return c2sum_; }
    double lambda_max() const { return continuous() ? 1.0 : lmax_; }
    const std::optional<PowerLawSpectrum>& spectrum() const { return spec_; }

    // Z(x) and dZ/dx, the only quantities Newton iterations need.
    std::pair<cplx, cplx> z_of(cplx x) const {
        if (continuous()) {
            const double nu = spec_->nu;
            const auto m = resolvent_moments<2>({-1.0 / nu, 1.0 - 1.0 / nu}, {1, 2}, x);
            return {-x + x * m[0] / (nu * n_), -1.0 + m[1] / (nu * n_)};
        }
        cplx s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < modes_.size(); ++i) {
            const double l = modes_.lambda[i];
            const cplx q = l / (l + x);
            s1 += q;
            s2 += q * q;
        }
        return {-x + x * s1 / n_, -1.0 + s2 / n_};
    }

    ResolventEval evaluate(cplx x) const {
        ResolventEval e;
        e.x = x;
        if (continuous()) {
            const double nu = spec_->nu, k = spec_->kappa / nu;
            const auto m = resolvent_moments<7>({-1.0 / nu, 1.0 - 1.0 / nu, k - 1.0, k, 1.0 - 1.0 / nu, k, k - 1.0},
                                                {1, 2, 1, 1, 1, 2, 2}, x);
            e.z = -x + x * m[0] / (nu * n_);
            e.dz = -1.0 + m[1] / (nu * n_);
            e.v = m[2] / nu;
            e.u = m[3] / nu;
            e.w = m[4] / nu;
            e.du = -m[5] / nu;
            e.dv = -m[6] / nu;
            return e;
        }
        cplx s1 = 0.0, s2 = 0.0, v = 0.0, u = 0.0, w = 0.0, du = 0.0, dv = 0.0;
        for (std::size_t i = 0; i < modes_.size(); ++i) {
            const double l = modes_.lambda[i], c2 = modes_.c2[i];
            const cplx inv = 1.0 / (l + x);
            const cplx q = l * inv;
            s1 += q;
            s2 += q * q;
            v += c2 * inv;
            u += c2 * q;
            w += l * q;
            du -= c2 * q * inv;
            dv -= c2 * inv * inv;
        }
        e.z = -x + x * s1 / n_;
        e.dz = -1.0 + s2 / n_;
        e.v = v;
        e.u = u;
        e.w = w;
        e.du = du;
        e.dv = dv;
        return e;
    }

    const DiscreteSpectrum& modes() const {
        if (continuous()) throw DomainError("wishart: continuous spectrum has no mode list");
        return modes_;
    }

private:
    std::optional<PowerLawSpectrum> spec_;
    DiscreteSpectrum modes_;
    double n_ = 0.0;
    double trace_ = 0.0;
    double c2sum_ = 0.0;
    double lmax_ = 0.0;

    static void check_n(double N) {
        if (!(N >= 1.0) || !std::isfinite(N)) throw DomainError("wishart: N must be finite and >= 1");
    }
    void finish_discrete() {
        trace_ = pairwise_sum(modes_.lambda);
        c2sum_ = modes_.target_norm_sq();
        lmax_ = *std::max_element(modes_.lambda.begin(), modes_.lambda.end());
    }
};

namespace wishart_detail {

// Root of a real function decreasing on [lo, hi] with f(lo) > 0 > f(hi), by Newton steps
// safeguarded with bisection.
template <class F>
double decreasing_root(F&& f_and_df, double lo, double hi, double rel_tol = 1e-15) {
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 300; ++it) {
        const auto [f, df] = f_and_df(x);
        if (f == 0.0) return x;
        if (f > 0.0) lo = x;
        else hi = x;
        double next = (df < 0.0) ? x - f / df : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= rel_tol * std::abs(x) || hi - lo <= rel_tol * std::abs(hi)) return next;
        x = next;
    }
    throw ConvergenceError("wishart: real fixed-point solve did not converge");
}

// Bisection in log of a positive variable for a sign change of a decreasing function.
template <class F>
double log_bisect(F&& g, double lo, double hi) {
    double a = std::log(lo), b = std::log(hi);
    for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
        const double m = 0.5 * (a + b);
        if (g(std::exp(m)) > 0.0) a = m;
        else b = m;
    }
    return std::exp(0.5 * (a + b));
}

}  // namespace wishart_detail

// x* > 0 where dZ/dx vanishes. The left support edge is lambda_- = Z(x*).
inline double left_edge_x(const WishartModel& m) {
    auto slope = [&](double x) { return m.z_of(cplx(x, 0.0)).second.real(); };
    double hi = m.trace() / m.N();
    double lo = 0.5 * hi;
    int guard = 0;
    while (slope(lo) <= 0.0) {
        lo *= 0.5;
        if (++guard > 2000 || lo == 0.0)
            throw DomainError("wishart: no left edge; the spectrum needs more modes than samples");
    }
    return wishart_detail::log_bisect(slope, lo, hi);
}

struct WishartEdges {
    double lambda_minus, lambda_plus, tau_minus, tau_plus;
};

// Support edges from the exact fixed point: x* on (0, inf) and x_+ on (-inf, -lambda_max).
inline WishartEdges exact_support_edges(const WishartModel& m) {
    const double xs = left_edge_x(m);
    const double lmax = m.lambda_max();
    auto slope = [&](double d) { return m.z_of(cplx(-lmax - d, 0.0)).second.real(); };
    double lo = 1.0, hi = 1.0;
    while (slope(lo) <= 0.0) lo *= 0.5;
    while (slope(hi) > 0.0) hi *= 2.0;
    const double d = wishart_detail::log_bisect(slope, lo, hi);
    const double xp = -lmax - d;
    return {m.z_of(cplx(xs, 0.0)).first.real(), m.z_of(cplx(xp, 0.0)).first.real(), -xs, -xp};
}

// Closed-form leading-order edges for the continuous power law.
inline WishartEdges support_edges(double nu, double N) {
    if (!(nu > 1.0)) throw DomainError("support_edges: nu must exceed 1");
    if (!(N >= 2.0)) throw DomainError("support_edges: N must be at least 2");
    const double c = stieltjes_constant(nu);
    const double tau_minus = -std::pow((nu - 1.0) * c / nu, nu) * std::pow(N, -nu);
    const double mu1 = 1.0 / nu;  // eigenvalue density at lambda = 1
    return {-tau_minus / (nu - 1.0), 1.0 + mu1 * std::log(N) / N, tau_minus, 1.0 + mu1 / N};
}

// Real solution x of Z(x) = z for z left of the support (z < lambda_-).
inline double solve_real_outside(const WishartModel& m, double z, double x_star) {
    auto f = [&](double x) {
        const auto [zz, dz] = m.z_of(cplx(x, 0.0));
        return std::pair<double, double>{zz.real() - z, dz.real()};
    };
    double hi = std::max(x_star, 1e-300);
    while (f(hi).first > 0.0) hi = 2.0 * hi + m.trace() / m.N();
    return wishart_detail::decreasing_root(f, x_star, hi);
}

struct EffectiveRegularization {
    double eta_eff;
    double derivative;  // d eta_eff / d eta
};

inline EffectiveRegularization effective_regularization_full(const WishartModel& m, double eta) {
    if (!std::isfinite(eta) || eta == 0.0) throw DomainError("effective_regularization: eta must be finite and nonzero");
    double x;
    if (eta > 0.0) {
        auto f = [&](double xx) {
            const auto [zz, dz] = m.z_of(cplx(xx, 0.0));
            return std::pair<double, double>{zz.real() + eta, dz.real()};
        };
        // Z(eta) > -eta and Z(eta + Tr/N) <= -eta bracket the unique root.
        x = wishart_detail::decreasing_root(f, eta, eta + m.trace() / m.N());
    } else {
        const double xs = left_edge_x(m);
        const double lam_minus = m.z_of(cplx(xs, 0.0)).first.real();
        if (!(-eta < 0.5 * lam_minus))
            throw DomainError("effective_regularization: negative eta must satisfy -eta < lambda_-/2");
        x = solve_real_outside(m, -eta, xs);
    }
    const double dz = m.z_of(cplx(x, 0.0)).second.real();
    return {x, -1.0 / dz};
}

inline double effective_regularization(const WishartModel& m, double eta) {
    return effective_regularization_full(m, eta).eta_eff;
}

inline double effective_regularization(const PowerLawSpectrum& spec, double N, double eta) {
    if (!(eta > 0.0)) throw DomainError("effective_regularization: eta must be positive");
    return effective_regularization(WishartModel(spec, N), eta);
}

// r(z) for z in the upper half plane or on the real axis left of the support, by Newton
// continuation along the segment from a point far left on the real axis.
inline cplx stieltjes_x_at(const WishartModel& m, cplx z) {
    if (z.imag() < 0.0) return std::conj(stieltjes_x_at(m, std::conj(z)));
    const double z0 = -(std::abs(z) + 1.0);
    double x0 = effective_regularization(m, -z0);
    cplx x(x0, 0.0);
    double s = 0.0, step = 0.125;
    auto newton = [&](cplx target, cplx& xx) {
        for (int it = 0; it < 40; ++it) {
            const auto [zz, dz] = m.z_of(xx);
            const cplx delta = (zz - target) / dz;
            xx -= delta;
            if (!std::isfinite(xx.real()) || !std::isfinite(xx.imag())) return false;
            if (std::abs(delta) <= 1e-15 * std::abs(xx)) return true;
        }
        // Rounding noise can stall the step test; accept a small residual.
        return std::abs(m.z_of(xx).first - target) <= 1e-12 * std::abs(xx);
    };
    while (s < 1.0) {
        const double next = std::min(1.0, s + step);
        const cplx target = next == 1.0 ? z : cplx(z0, 0.0) + next * (z - cplx(z0, 0.0));
        cplx trial = x;
        if (newton(target, trial) && (target.imag() == 0.0 || trial.imag() <= 0.0)) {
            x = trial;
            s = next;
            step = std::min(0.25, 1.5 * step);
        } else {
            step *= 0.5;
            if (step < 1e-12) throw ConvergenceError("stieltjes_at: continuation failed");
        }
    }
    return x;
}

inline cplx stieltjes_at(const WishartModel& m, cplx z) { return 1.0 / stieltjes_x_at(m, z); }

// |1 + z r - (1/N) sum r lambda / (r lambda + 1)|, equal to |z - Z(x)| / |x|.
inline double fixed_point_residual(const WishartModel& m, cplx z, cplx r) {
    const cplx x = 1.0 / r;
    return std::abs(z - m.z_of(x).first) / std::abs(x);
}

// Leading-order interior solution at phase phi: r = r0 e^{i phi}.
struct PhaseSolution {
    double r0;
    double lambda;
};

inline PhaseSolution solve_phase_interior(double nu, double N, double phi) {
    if (!(nu > 1.0)) throw DomainError("solve_phase_interior: nu must exceed 1");
    if (!(phi > 0.0 && phi < pi)) throw DomainError("solve_phase_interior: phi must lie in (0, pi)");
    const double c = stieltjes_constant(nu);
    const double a = 1.0 - 1.0 / nu;
    const double rho = std::pow(N, -nu) * std::pow(c * std::sin(a * phi) / std::sin(phi), nu);
    const double lambda = rho * std::sin(phi) * (std::cos(a * phi) / std::sin(a * phi) - std::cos(phi) / std::sin(phi));
    return {1.0 / rho, lambda};
}

// Residual of the leading-order fixed point lambda = -x + (C/N) x^{1-1/nu} at x = r^{-1}.
inline double phase_limit_residual(double nu, double N, double phi, const PhaseSolution& s) {
    const cplx x = std::polar(1.0 / s.r0, -phi);
    const cplx zz = -x + stieltjes_constant(nu) / N * std::pow(x, 1.0 - 1.0 / nu);
    return std::abs(cplx(s.lambda, 0.0) - zz) / std::abs(x);
}

// Auxiliary functions v, u, w at a given r.
struct AuxiliaryVuw {
    cplx v, u, w;
};

inline AuxiliaryVuw auxiliary_vuw(const WishartModel& m, cplx r) {
    if (r == cplx(0.0)) throw DomainError("auxiliary_vuw: r must be nonzero");
    const cplx x = 1.0 / r;
    if (m.continuous() && x.imag() == 0.0 && x.real() <= 0.0 && x.real() >= -1.0)
        throw DomainError("auxiliary_vuw: r^{-1} lies on the integration cut");
    const auto e = m.evaluate(x);
    return {e.v, e.u, e.w};
}

// Node of the exact interior solution on the upper boundary of the support.
struct PhaseNode {
    double phi = 0.0;
    double weight = 0.0;   // quadrature weight in phi
    double lambda = 0.0;
    double dlambda = 0.0;  // d lambda / d phi
    cplx dx;               // d x / d phi
    ResolventEval e;
    double residual = 0.0;
};

// Exact continuous-spectrum solution on a phase grid.
struct StieltjesSolution {
    std::vector<PhaseNode> nodes;
    WishartEdges edges{};
    double N = 0.0;
    PowerLawSpectrum spectrum;

    double max_residual() const {
        double r = 0.0;
        for (const auto& n : nodes) r = std::max(r, n.residual);
        return r;
    }
};

namespace wishart_detail {

// Solve Im Z(rho e^{-i phi}) = 0 for rho, then fill in lambda and the phi-derivatives.
inline PhaseNode solve_phase_node(const WishartModel& m, double phi, double guess) {
    const cplx rot = std::polar(1.0, -phi);
    auto g = [&](double lr) {
        const cplx x = std::exp(lr) * rot;
        const auto [zz, dz] = m.z_of(x);
        return std::array<double, 3>{zz.imag(), (dz * x).imag(), std::abs(x)};
    };
    // Damped Newton in log(rho) from the guess. Far trial points can put x next to the cut with
    // a tiny imaginary part, so steps are kept short and bracketing is the fallback.
    double lr = std::log(guess);
    bool ok = false;
    for (int it = 0; it < 60; ++it) {
        const auto v = g(lr);
        if (std::abs(v[0]) <= 1e-14 * v[2]) {
            ok = true;
            break;
        }
        if (!(v[1] > 0.0)) break;
        const double step = std::clamp(-v[0] / v[1], -0.2, 0.2);
        lr += step;
        if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(lr))) {
            ok = true;
            break;
        }
    }
    if (!ok) {
        double lo = std::log(guess), hi = lo, step = 0.05;
        if (g(lo)[0] > 0.0) {
            for (int k = 0; g(lo)[0] > 0.0; ++k, step *= 1.5) {
                if (k > 200) throw ConvergenceError("phase solve: no bracket");
                hi = lo;
                lo -= step;
            }
        } else {
            for (int k = 0; g(hi)[0] <= 0.0; ++k, step *= 1.5) {
                if (k > 200) throw ConvergenceError("phase solve: no bracket");
                lo = hi;
                hi += step;
            }
        }
        // g < 0 at lo, g > 0 at hi.
        lr = 0.5 * (lo + hi);
        for (int it = 0; it < 200; ++it) {
            const auto v = g(lr);
            if (std::abs(v[0]) <= 1e-14 * v[2]) break;
            if (v[0] < 0.0) lo = lr;
            else hi = lr;
            double next = v[1] > 0.0 ? lr - v[0] / v[1] : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            const bool done = std::abs(next - lr) < 1e-16 * std::max(1.0, std::abs(lr));
            lr = next;
            if (done) break;
        }
    }
    PhaseNode node;
    node.phi = phi;
    const double rho = std::exp(lr);
    node.e = m.evaluate(rho * rot);
    node.lambda = node.e.z.real();
    node.residual = std::abs(node.e.z.imag()) / rho;
    // Along the curve Im Z = 0: rho' Im(Z' e^{-i phi}) = rho Re(Z' e^{-i phi}).
    const cplx a = node.e.dz * rot;
    const double drho = rho * a.real() / a.imag();
    node.dx = cplx(drho, -rho) * rot;
    node.dlambda = (node.e.dz * node.dx).real();
    return node;
}

inline std::vector<double> phase_panel_edges(double N, double ratio) {
    std::vector<double> edges{0.0};
    for (double p = 1e-3; p < 0.5; p *= 4.0) edges.push_back(p);
    for (double p = 0.5; p < pi - 1.0; p += 0.25) edges.push_back(p);
    std::vector<double> top;
    for (double d = 1.0; d > 1e-3 / N; d *= ratio) top.push_back(pi - d);
    edges.insert(edges.end(), top.begin(), top.end());
    edges.push_back(pi);
    return edges;
}

}  // namespace wishart_detail

// Exact interior solve for the continuous spectrum on graded Gauss-Legendre panels in phi.
struct PhaseGridOptions {
    double panel_ratio = 0.5;  // geometric grading of the initial panels toward phi = pi
    double rel_tol = 1e-11;    // per-panel refinement tolerance relative to the measure totals
    int max_depth = 30;
};

namespace wishart_detail {

struct PhasePanel {
    double a = 0.0, b = 0.0;
    std::vector<PhaseNode> nodes;
    std::array<double, 4> monitor{};
};

// Masses of rho1, rho_eps, the diagonal of rho2 and |Im x|/lambda carried by a panel.
inline std::array<double, 4> panel_monitor(const std::vector<PhaseNode>& nodes) {
    std::array<double, 4> out{};
    for (const auto& n : nodes) {
        const double wl = n.weight * n.dlambda, l = n.lambda;
        out[0] += wl * n.e.u.imag() / (pi * l);
        out[1] += wl * n.e.w.imag() / (pi * l * l);
        out[2] += wl * std::norm(n.e.x) * n.e.v.imag() / (pi * l * l);
        out[3] += wl * std::abs(n.e.x.imag()) / l;
    }
    return out;
}

template <class Guess>
PhasePanel solve_panel(const WishartModel& m, double a, double b, Guess&& guess) {
    PhasePanel p;
    p.a = a;
    p.b = b;
    const std::array<double, 2> e{a, b};
    const auto grid = gauss_legendre_panels(e);
    for (std::size_t i = 0; i < grid.x.size(); ++i) {
        auto node = solve_phase_node(m, grid.x[i], guess(grid.x[i]));
        node.weight = grid.w[i];
        p.nodes.push_back(std::move(node));
    }
    p.monitor = panel_monitor(p.nodes);
    return p;
}

// |x| at the parent node closest in phi, used as the Newton guess for children.
inline double nearest_rho(const PhasePanel& parent, double phi) {
    double best = 0.0, dist = 1e300;
    for (const auto& n : parent.nodes) {
        const double d = std::abs(n.phi - phi);
        if (d < dist) {
            dist = d;
            best = std::abs(n.e.x);
        }
    }
    return best;
}

inline void refine_panel(const WishartModel& m, const PhasePanel& parent, const std::array<double, 4>& tol, int depth,
                         int max_depth, std::vector<PhaseNode>& out) {
    const double mid = 0.5 * (parent.a + parent.b);
    auto guess = [&](double phi) { return nearest_rho(parent, phi); };
    const auto left = solve_panel(m, parent.a, mid, guess);
    const auto right = solve_panel(m, mid, parent.b, guess);
    bool ok = true;
    for (std::size_t k = 0; k < tol.size(); ++k)
        if (std::abs(parent.monitor[k] - left.monitor[k] - right.monitor[k]) > tol[k]) ok = false;
    if (ok || depth >= max_depth || !(mid > parent.a && mid < parent.b)) {
        out.insert(out.end(), left.nodes.begin(), left.nodes.end());
        out.insert(out.end(), right.nodes.begin(), right.nodes.end());
        return;
    }
    refine_panel(m, left, tol, depth + 1, max_depth, out);
    refine_panel(m, right, tol, depth + 1, max_depth, out);
}

}  // namespace wishart_detail

// Exact interior solve for the continuous spectrum. Gauss-Legendre panels in phi, graded toward
// phi = pi, are bisected until the masses of the learning measures agree between a panel and its
// halves. The population edge lambda = 1 leaves a narrow feature that this refinement resolves.
inline StieltjesSolution solve_stieltjes(const WishartModel& m, const PhaseGridOptions& opt = {}) {
    if (!(opt.panel_ratio > 0.0 && opt.panel_ratio < 1.0))
        throw DomainError("solve_stieltjes: panel_ratio must lie in (0,1)");
    if (!m.continuous()) throw DomainError("solve_stieltjes: phase grid needs the continuous spectrum");
    const double nu = m.spectrum()->nu;
    const double N = m.N();
    StieltjesSolution sol;
    sol.N = N;
    sol.spectrum = *m.spectrum();
    sol.edges = exact_support_edges(m);
    const auto edges = wishart_detail::phase_panel_edges(N, opt.panel_ratio);

    // Coarse pass with continuation from node to node.
    std::vector<wishart_detail::PhasePanel> panels;
    double prev_rho = -1.0;
    auto guess = [&](double phi) {
        const double asym = 1.0 / solve_phase_interior(nu, N, phi).r0;
        double g = asym;
        if (prev_rho > 0.0 && (asym > 1e-2 || !std::isfinite(asym))) g = prev_rho;
        if (!(g > 0.0) || !std::isfinite(g)) g = prev_rho > 0.0 ? prev_rho : 1.0;
        return g;
    };
    std::array<double, 4> total{};
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        const std::array<double, 2> e{edges[i], edges[i + 1]};
        const auto grid = gauss_legendre_panels(e);
        wishart_detail::PhasePanel p;
        p.a = e[0];
        p.b = e[1];
        for (std::size_t j = 0; j < grid.x.size(); ++j) {
            auto node = wishart_detail::solve_phase_node(m, grid.x[j], guess(grid.x[j]));
            node.weight = grid.w[j];
            prev_rho = std::abs(node.e.x);
            p.nodes.push_back(std::move(node));
        }
        p.monitor = wishart_detail::panel_monitor(p.nodes);
        for (std::size_t k = 0; k < total.size(); ++k) total[k] += std::abs(p.monitor[k]);
        panels.push_back(std::move(p));
    }
    std::array<double, 4> tol{};
    for (std::size_t k = 0; k < tol.size(); ++k) tol[k] = opt.rel_tol * total[k];
    for (const auto& p : panels) wishart_detail::refine_panel(m, p, tol, 0, opt.max_depth, sol.nodes);
    return sol;
}

inline StieltjesSolution solve_stieltjes(const PowerLawSpectrum& spec, double N) {
    return solve_stieltjes(WishartModel(spec, N));
}

// Learning measures on the nodes of a phase-grid solution. Integrals over lambda use
// node_weight(i) = w_phi * d lambda / d phi.
struct LearningMeasures {
    std::vector<double> lambda;
    std::vector<double> weight;
    std::vector<double> rho1;
    std::vector<double> rho_eps;
    std::vector<double> rho2_diag;
    std::vector<double> im_x;
    std::vector<double> im_u;
    std::vector<double> kernel_diag;  // lambda_1 -> lambda_2 limit of the off-diagonal kernel
    std::pair<double, double> support;

    std::size_t size() const { return lambda.size(); }

    double rho2_offdiag(std::size_t i, std::size_t j) const {
        const double li = lambda[i], lj = lambda[j];
        // Nodes that coincide in floating point use the diagonal limit.
        if (i == j || std::abs(li - lj) <= 1e-9 * li) return 0.5 * (kernel_diag[i] + kernel_diag[j]);
        return (im_u[j] * im_x[i] - im_u[i] * im_x[j]) / (pi * pi * li * lj * (li - lj));
    }

    // Piecewise-linear interpolation of a node quantity in lambda.
    static double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double l) {
        if (l <= xs.front() || l >= xs.back()) return 0.0;
        const auto it = std::upper_bound(xs.begin(), xs.end(), l);
        const std::size_t j = static_cast<std::size_t>(it - xs.begin());
        const double t = (l - xs[j - 1]) / (xs[j] - xs[j - 1]);
        return ys[j - 1] + t * (ys[j] - ys[j - 1]);
    }
    double rho1_density(double l) const { return interpolate(lambda, rho1, l); }
    double rho_eps_density(double l) const { return interpolate(lambda, rho_eps, l); }
    double rho2_diag_density(double l) const { return interpolate(lambda, rho2_diag, l); }
};

inline LearningMeasures learning_measures(const StieltjesSolution& sol) {
    LearningMeasures out;
    out.support = {sol.edges.lambda_minus, sol.edges.lambda_plus};
    const std::size_t n = sol.nodes.size();
    for (const auto& node : sol.nodes) {
        const double l = node.lambda;
        if (!(node.dlambda >= 0.0) || !(l > 0.0)) throw ResolutionError("learning_measures: phase grid is not monotone in lambda");
        const auto& e = node.e;
        out.lambda.push_back(l);
        out.weight.push_back(node.weight * node.dlambda);
        out.rho1.push_back(e.u.imag() / (pi * l));
        out.rho_eps.push_back(e.w.imag() / (pi * l * l));
        out.rho2_diag.push_back(std::norm(e.x) * e.v.imag() / (pi * l * l));
        out.im_x.push_back(e.x.imag());
        out.im_u.push_back(e.u.imag());
        // d/dlambda = (d/dphi) / (d lambda / d phi).
        const double dimx = node.dx.imag() / node.dlambda;
        const double dimu = (e.du * node.dx).imag() / node.dlambda;
        out.kernel_diag.push_back(-(dimu * e.x.imag() - e.u.imag() * dimx) / (pi * pi * l * l));
    }
    for (std::size_t i = 1; i < n; ++i)
        if (out.lambda[i] < out.lambda[i - 1] * (1.0 - 1e-12))
            throw ResolutionError("learning_measures: phase grid is not monotone in lambda");
    return out;
}

// Terms of the quadratic functional: Q1 = int h rho1, Q2 = int int h h rho2 (split into diagonal
// and off-diagonal parts), Qeps = int h^2 rho_eps.
struct WishartFunctionalTerms {
    double q1 = 0.0;
    double q2_diag = 0.0;
    double q2_offdiag = 0.0;
    double q_eps = 0.0;
    double target_norm_sq = 0.0;
    double N = 0.0;
    bool offdiag_included = true;

    // The functional does not separate dataset variance from bias; the signal part is
    // reported as bias and the dataset variance slot is zero.
    LossBreakdown breakdown(double sigma_sq) const {
        const double q2 = q2_diag + (offdiag_included ? q2_offdiag : 0.0);
        const double signal = 0.5 * (q2 - 2.0 * q1 + target_norm_sq);
        const double noise = 0.5 * sigma_sq / N * q_eps;
        return LossBreakdown::from_parts(signal, 0.0, noise, Provenance::asymptotic);
    }
};

inline WishartFunctionalTerms functional_terms(const LearningMeasures& mu, double target_norm_sq, double N,
                                               const SpectralProfile& profile, bool include_offdiag) {
    const std::size_t n = mu.size();
    std::vector<double> hw(n);
    WishartFunctionalTerms t;
    t.target_norm_sq = target_norm_sq;
    t.N = N;
    t.offdiag_included = include_offdiag;
    std::vector<double> p1(n), p2(n), pe(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double h = profile.evaluate(mu.lambda[i]);
        if (!std::isfinite(h)) throw DomainError("loss_functional: profile is not finite on the support");
        hw[i] = h * mu.weight[i];
        p1[i] = hw[i] * mu.rho1[i];
        p2[i] = hw[i] * h * mu.rho2_diag[i];
        pe[i] = hw[i] * h * mu.rho_eps[i];
    }
    t.q1 = pairwise_sum(p1);
    t.q2_diag = pairwise_sum(p2);
    t.q_eps = pairwise_sum(pe);
    // The off-diagonal part is always computed so callers can inspect its size.
    std::vector<double> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += hw[j] * mu.rho2_offdiag(i, j);
        rows[i] = hw[i] * s;
    }
    t.q2_offdiag = pairwise_sum(rows);
    return t;
}

// Contour evaluation of the functional for analytic profiles. The contour is a closed curve
// around the support made of two rays at angles +-theta and two circular arcs.
namespace wishart_detail {

inline cplx profile_at(const SpectralProfile& p, cplx z) {
    return std::visit(
        [&](const auto& k) -> cplx {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, Krr>) return z / (z + k.eta);
            else if constexpr (std::is_same_v<K, Gf>) return 1.0 - std::exp(-k.t * z);
            else if constexpr (std::is_same_v<K, Gd>) return 1.0 - std::pow(1.0 - k.alpha * z, static_cast<double>(k.t));
            else if constexpr (std::is_same_v<K, Interpolation>) return 1.0;
            else {
                if (k.h->size() != 1)
                    throw DomainError("contour evaluation needs an analytic profile; tabulated tables are not analytic");
                return (*k.h)[0];
            }
        },
        p.kind());
}

struct ContourNode {
    cplx z, dz;  // dz already includes the quadrature weight
    ResolventEval e;
};

inline std::vector<ContourNode> build_contour(const WishartModel& m, double r_in, double r_out, double theta) {
    // Segments in order (counter-clockwise around the support).
    struct Seg {
        bool arc;
        double radius_or_angle, a, b, panel;
    };
    const std::vector<Seg> segs = {
        {true, r_in, 0.0, -theta, 0.1},
        {false, -theta, std::log(r_in), std::log(r_out), 1.0},
        {true, r_out, -theta, theta, 0.1},
        {false, theta, std::log(r_out), std::log(r_in), 1.0},
        {true, r_in, theta, 0.0, 0.1},
    };
    std::vector<ContourNode> nodes;
    cplx x(solve_real_outside(m, r_in, left_edge_x(m)), 0.0);
    for (const auto& s : segs) {
        const int panels = std::max(1, static_cast<int>(std::ceil(std::abs(s.b - s.a) / s.panel)));
        std::vector<double> edges(static_cast<std::size_t>(panels) + 1);
        for (int p = 0; p <= panels; ++p) edges[static_cast<std::size_t>(p)] = s.a + (s.b - s.a) * p / panels;
        const bool reversed = s.b < s.a;
        if (reversed) std::reverse(edges.begin(), edges.end());
        auto grid = gauss_legendre_panels(edges);
        if (reversed) {
            std::reverse(grid.x.begin(), grid.x.end());
            std::reverse(grid.w.begin(), grid.w.end());
        }
        const double dir = reversed ? -1.0 : 1.0;
        for (std::size_t i = 0; i < grid.x.size(); ++i) {
            ContourNode n;
            if (s.arc) {
                n.z = std::polar(s.radius_or_angle, grid.x[i]);
                n.dz = cplx(0.0, 1.0) * n.z * grid.w[i] * dir;
            } else {
                n.z = std::polar(std::exp(grid.x[i]), s.radius_or_angle);
                n.dz = n.z * grid.w[i] * dir;
            }
            // Newton from the previous node; contour nodes are close together.
            for (int it = 0; it < 60; ++it) {
                const auto [zz, dzz] = m.z_of(x);
                const cplx delta = (zz - n.z) / dzz;
                x -= delta;
                if (std::abs(delta) <= 1e-15 * std::abs(x)) break;
                if (it == 59) x = stieltjes_x_at(m, n.z);
            }
            n.e = m.evaluate(x);
            if (std::abs(n.e.z - n.z) > 1e-10 * std::abs(x)) throw ConvergenceError("contour: fixed point failed");
            nodes.push_back(n);
        }
    }
    return nodes;
}

}  // namespace wishart_detail

inline WishartFunctionalTerms contour_functional_terms(const WishartModel& m, const SpectralProfile& profile) {
    const auto edges = exact_support_edges(m);
    double r_in = 0.5 * edges.lambda_minus;
    const double r_out = 1.5 * edges.lambda_plus;
    constexpr double theta = pi / 5.0;
    if (const auto* k = std::get_if<Krr>(&profile.kind()); k && k->eta < 0.0) {
        if (!(-k->eta < 0.5 * edges.lambda_minus))
            throw DomainError("loss_functional: negative eta must satisfy -eta < lambda_-/2");
        r_in = std::sqrt(-k->eta * edges.lambda_minus);
    }
    const auto nodes = wishart_detail::build_contour(m, r_in, r_out, theta);
    const std::size_t n = nodes.size();
    std::vector<cplx> hz(n);
    for (std::size_t i = 0; i < n; ++i) {
        hz[i] = wishart_detail::profile_at(profile, nodes[i].z);
        if (!std::isfinite(std::abs(hz[i]))) throw DomainError("loss_functional: profile overflows on the contour");
    }
    const cplx two_pi_i(0.0, 2.0 * pi);
    cplx q1 = 0.0, qe = 0.0, q2 = 0.0;
    std::vector<cplx> a(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& nd = nodes[i];
        q1 += hz[i] * nd.e.u / nd.z * nd.dz;
        qe += hz[i] * hz[i] * nd.e.w / (nd.z * nd.z) * nd.dz;
        a[i] = hz[i] * nd.e.x / nd.z * nd.dz;
    }
    for (std::size_t i = 0; i < n; ++i) {
        cplx row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            // T(z_i, z_j) = (v_i - v_j) / (z_i - z_j); on the diagonal dv/dz.
            const cplx t = i == j ? nodes[i].e.dv / nodes[i].e.dz
                                  : (nodes[i].e.v - nodes[j].e.v) / (nodes[i].z - nodes[j].z);
            row += a[j] * t;
        }
        q2 += a[i] * row;
    }
    WishartFunctionalTerms t;
    t.target_norm_sq = m.target_norm_sq();
    t.N = m.N();
    t.q1 = (-q1 / two_pi_i).real();
    t.q_eps = (-qe / two_pi_i).real();
    t.q2_diag = (q2 / (two_pi_i * two_pi_i)).real();
    t.q2_offdiag = 0.0;
    t.offdiag_included = true;
    return t;
}

// Quadratic loss functional. Continuous spectra integrate the learning measures over the exact
// phase grid; discrete spectra use the contour form, which always contains the off-diagonal part.
inline LossBreakdown loss_functional(const StieltjesSolution& sol, double sigma_sq, const SpectralProfile& profile,
                                     bool include_offdiag = true) {
    if (!(sigma_sq >= 0.0)) throw DomainError("loss_functional: sigma_sq must be >= 0");
    const auto mu = learning_measures(sol);
    return functional_terms(mu, target_norm_sq(sol.spectrum), sol.N, profile, include_offdiag).breakdown(sigma_sq);
}

inline LossBreakdown loss_functional(const WishartModel& m, double sigma_sq, const SpectralProfile& profile,
                                     bool include_offdiag = true) {
    if (!(sigma_sq >= 0.0)) throw DomainError("loss_functional: sigma_sq must be >= 0");
    if (m.continuous()) return loss_functional(solve_stieltjes(m), sigma_sq, profile, include_offdiag);
    if (!include_offdiag)
        throw DomainError("loss_functional: discrete spectra are evaluated by contour and always include the off-diagonal part");
    if (const auto* g = std::get_if<Gd>(&profile.kind()); g && g->alpha * m.lambda_max() > 1.0)
        throw DomainError("loss_functional: contour evaluation needs gd step alpha * lambda_max <= 1");
    return contour_functional_terms(m, profile).breakdown(sigma_sq);
}

inline LossBreakdown loss_functional(const PowerLawSpectrum& spec, double N, double sigma_sq,
                                     const SpectralProfile& profile, bool include_offdiag = true) {
    return loss_functional(WishartModel(spec, N), sigma_sq, profile, include_offdiag);
}

// Ridge regression closed form through the effective regularization.
inline LossBreakdown exact_krr_loss(const WishartModel& m, double sigma_sq, double eta) {
    if (!(sigma_sq >= 0.0)) throw DomainError("exact_krr_loss: sigma_sq must be >= 0");
    const auto er = effective_regularization_full(m, eta);
    const double x = er.eta_eff, d = er.derivative;
    double signal = 0.0, noise = 0.0;
    if (m.continuous()) {
        const double nu = m.spectrum()->nu, k = m.spectrum()->kappa / nu;
        const auto mm = resolvent_moments<2>({k - 1.0, 1.0 - 1.0 / nu}, {2, 2}, cplx(x, 0.0));
        signal = x * x * mm[0].real() / nu;
        noise = mm[1].real() / nu;
    } else {
        const auto& md = m.modes();
        std::vector<double> s(md.size()), q(md.size());
        for (std::size_t i = 0; i < md.size(); ++i) {
            const double den = md.lambda[i] + x;
            s[i] = x * x * md.c2[i] / (den * den);
            q[i] = md.lambda[i] * md.lambda[i] / (den * den);
        }
        signal = pairwise_sum(s);
        noise = pairwise_sum(q);
    }
    return LossBreakdown::from_parts(0.5 * signal, 0.5 * (d - 1.0) * signal, 0.5 * d * sigma_sq / m.N() * noise,
                                     Provenance::asymptotic);
}

inline LossBreakdown exact_krr_loss(const PowerLawSpectrum& spec, double N, double sigma_sq, double eta) {
    return exact_krr_loss(WishartModel(spec, N), sigma_sq, eta);
}

// Optimal profile in the phase parameterization: g((nu-1)/nu, phi) / g(kappa/nu, phi) with
// g(a, phi) = cot(a phi) - cot(phi).
inline double wishart_optimal_profile(double nu, double kappa, double phi) {
    if (!(nu > 1.0)) throw DomainError("wishart_optimal_profile: nu must exceed 1");
    if (!(kappa > 0.0 && kappa < nu)) throw DomainError("wishart_optimal_profile: need 0 < kappa < nu");
    if (!(phi > 0.0 && phi < pi)) throw DomainError("wishart_optimal_profile: phi must lie in (0, pi)");
    const double cot_phi = std::cos(phi) / std::sin(phi);
    const double an = (nu - 1.0) / nu * phi;
    const double ad = kappa / nu * phi;
    return (std::cos(an) / std::sin(an) - cot_phi) / (std::cos(ad) / std::sin(ad) - cot_phi);
}

namespace wishart_detail {

template <class T>
T scaled_eigenvalue(double nu, T phi) {
    const double a = 1.0 - 1.0 / nu;
    const double c = stieltjes_constant(nu);
    const T base = std::sin(phi) / (c * std::sin(a * phi));
    return std::pow(base, -nu) * std::sin(phi) * (std::cos(a * phi) / std::sin(a * phi) - std::cos(phi) / std::sin(phi));
}

// d/dphi of the scaled eigenvalue by a complex step, free of subtractive cancellation near phi = 0.
inline double scaled_eigenvalue_derivative(double nu, double phi) {
    const double h = 1e-20 * std::min(phi, pi - phi);
    return scaled_eigenvalue(nu, cplx(phi, h)).imag() / h;
}

}  // namespace wishart_detail

// Scaled eigenvalue N^nu lambda(phi) of the leading-order phase solution.
inline double wishart_scaled_eigenvalue(double nu, double phi) { return wishart_detail::scaled_eigenvalue(nu, phi); }

// Profile as a function of (phi, N^nu lambda).
using PhaseProfile = std::function<double(double phi, double lambda_scaled)>;

// Noiseless loss as a phase integral over (0, pi - pi/(nu N)) plus the target mass below the
// left edge, (1/2) int_0^{lambda_-} mu_c = lambda_-^{kappa/nu} / (2 kappa), which no profile can learn.
inline double noiseless_phase_loss(double nu, double kappa, const PhaseProfile& profile, double N) {
    if (!(nu > 1.0)) throw DomainError("noiseless_phase_loss: nu must exceed 1");
    if (!(kappa > 0.0 && kappa < 1.0)) throw DomainError("noiseless_phase_loss: requires 0 < kappa < 1");
    if (!(N >= 2.0)) throw DomainError("noiseless_phase_loss: N must be at least 2");
    const double c = stieltjes_constant(nu);
    const double a = 1.0 - 1.0 / nu, b = kappa / nu;
    const double skp = std::sin(b * pi);
    auto integrand = [&](double phi) {
        const double s = std::sin(phi);
        const double g = std::cos(a * phi) / std::sin(a * phi) - std::cos(phi) / s;
        const double pref = std::pow(s / (c * std::sin(a * phi)), nu - kappa);
        const double lam = wishart_scaled_eigenvalue(nu, phi);
        const double dlam = wishart_detail::scaled_eigenvalue_derivative(nu, phi);
        const double dev = profile(phi, lam) - wishart_optimal_profile(nu, kappa, phi);
        const double sq = std::sin(phi - b * phi) * dev * dev / (nu * skp * s * s * g * g);
        const double free_a = std::pow(s * g, b - 1.0) / nu;
        const double free_b = std::pow(std::sin(b * phi), 2) / (nu * std::sin(phi - b * phi) * skp);
        return pref * (sq + free_a - free_b) * dlam;
    };
    const double upper = pi - pi / (nu * N);
    std::vector<double> bps;
    for (double d = 0.5; d > pi - upper; d *= 0.25) bps.push_back(pi - d);
    QuadratureOptions opt;
    opt.rel_tol = 1e-10;
    opt.abs_tol = 0.0;
    opt.max_intervals = 20000;
    const double val = integrate_or_throw(integrand, 0.0, upper, opt, bps, "noiseless_phase_loss");
    const double below_edge = std::pow(support_edges(nu, N).lambda_minus, kappa / nu) / kappa;
    return 0.5 * (std::pow(N, -kappa) * val + below_edge);
}

}  // namespace spectral_risk
