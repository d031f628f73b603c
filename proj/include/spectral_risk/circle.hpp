#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <variant>
#include <vector>

#include "spectral_risk/common.hpp"
#include "spectral_risk/loss.hpp"
#include "spectral_risk/profiles.hpp"
#include "spectral_risk/quadrature.hpp"
#include "spectral_risk/special_functions.hpp"
#include "spectral_risk/spectrum.hpp"

namespace spectral_risk {

namespace circle_detail {

inline void require_circle(const PowerLawSpectrum& spec, std::int64_t N) {
    spec.validate();
    if (spec.flavor != Flavor::circle) throw DomainError("circle model: needs a circle-flavor spectrum");
    if (N < 2) throw DomainError("circle model: N must be at least 2");
}

// Reduces k into (-N/2, N/2].
inline std::int64_t reduce_index(std::int64_t k, std::int64_t N) {
    std::int64_t r = k % N;
    if (r < 0) r += N;
    if (2 * r > N) r -= N;
    return r;
}

// Aliased tail sum_{n != 0} (s(|k+Nn|+1))^{-alpha} for reduced k.
inline double deformation_tail(double alpha, double scale, std::int64_t N, std::int64_t k) {
    if (!(alpha > 1.0)) throw DomainError("n_deformation: a*nu + b*(kappa+1) must exceed 1");
    const double n = static_cast<double>(N);
    const double kk = static_cast<double>(k);
    const double z = hurwitz_zeta(alpha, 1.0 + (1.0 + kk) / n) + hurwitz_zeta(alpha, 1.0 + (1.0 - kk) / n);
    return std::pow(scale * n, -alpha) * z;
}

// Population values and aliased tails at one lattice class k.
struct ClassData {
    double lam, c2;                           // lambda_k, |c_k|^2
    double d10, d01, d20, d11, d21;           // tails of lambda, c^2, lambda^2, lambda c^2, lambda^2 c^2
    double lam_hat() const { return lam + d10; }
    double br_c2() const { return c2 + d01; }
    double br_l2() const { return lam * lam + d20; }
    double br_lc2() const { return lam * c2 + d11; }
};

inline ClassData class_data(const PowerLawSpectrum& spec, std::int64_t N, std::int64_t k) {
    const double nu = spec.nu, b = spec.kappa + 1.0, s = spec.base_scale();
    ClassData d;
    const double base = s * static_cast<double>((k < 0 ? -k : k) + 1);
    d.lam = std::pow(base, -nu);
    d.c2 = std::pow(base, -b);
    d.d10 = deformation_tail(nu, s, N, k);
    d.d01 = deformation_tail(b, s, N, k);
    d.d20 = deformation_tail(2.0 * nu, s, N, k);
    d.d11 = deformation_tail(nu + b, s, N, k);
    d.d21 = deformation_tail(2.0 * nu + b, s, N, k);
    return d;
}

// Multiplicity of reduced class k >= 0 among k in (-N/2, N/2].
inline double class_weight(std::int64_t k, std::int64_t N) {
    if (k == 0) return 1.0;
    if (N % 2 == 0 && 2 * k == N) return 1.0;
    return 2.0;
}

struct ClassTerms {
    double bias, var_u, var_eps;
};

// Per-class loss terms in a cancellation-free arrangement; residual = 1 - h.
inline ClassTerms class_terms(const ClassData& d, double s, double h, double residual) {
    const double lh = d.lam_hat();
    const double q = h / lh;
    const double head = d.d10 + d.lam * residual;
    const double bias = d.c2 * head * head / (lh * lh) + q * q * d.d21 - 2.0 * q * d.d11 + d.d01;
    const double var_u = q * q * (d.lam * d.lam * d.d01 + d.c2 * d.d20 + d.d20 * d.d01 - d.d21);
    const double var_eps = s * q * q * d.br_l2();
    return {bias, var_u, var_eps};
}

inline double optimal_h(const ClassData& d, double s) {
    return d.br_lc2() * d.lam_hat() / ((s + d.br_c2()) * d.br_l2());
}

// 1 - h* with the lambda^2 c^2 products cancelled analytically.
inline double optimal_residual(const ClassData& d, double s) {
    const double num = s * d.br_l2() + d.c2 * d.d20 + d.d01 * d.lam * d.lam + d.d01 * d.d20 - d.lam * d.c2 * d.d10 -
                       d.d11 * d.lam - d.d11 * d.d10;
    return num / ((s + d.br_c2()) * d.br_l2());
}

inline double optimal_free_term(const ClassData& d, double s) {
    const double c2 = d.c2, l = d.lam;
    const double D = c2 * c2 * d.d20 + 2.0 * c2 * l * l * d.d01 + 2.0 * c2 * d.d01 * d.d20 + d.d01 * d.d01 * l * l +
                     d.d01 * d.d01 * d.d20 - 2.0 * l * c2 * d.d11 - d.d11 * d.d11;
    return (s * d.br_c2() * d.br_l2() + D) / ((s + d.br_c2()) * d.br_l2());
}

inline double completed_square_weight(const ClassData& d, double s) {
    const double lh = d.lam_hat();
    return (s + d.br_c2()) * d.br_l2() / (lh * lh);
}

inline std::vector<ClassData> all_classes(const PowerLawSpectrum& spec, std::int64_t N) {
    std::vector<ClassData> out;
    out.reserve(static_cast<std::size_t>(N / 2 + 1));
    for (std::int64_t k = 0; 2 * k <= N; ++k) out.push_back(class_data(spec, N, k));
    return out;
}

inline LossBreakdown assemble(const std::vector<ClassTerms>& terms, std::int64_t N) {
    std::vector<double> b(terms.size()), u(terms.size()), e(terms.size());
    for (std::size_t k = 0; k < terms.size(); ++k) {
        const double w = 0.5 * class_weight(static_cast<std::int64_t>(k), N);
        b[k] = w * terms[k].bias;
        u[k] = w * terms[k].var_u;
        e[k] = w * terms[k].var_eps;
    }
    return LossBreakdown::from_parts(pairwise_sum(b), pairwise_sum(u), pairwise_sum(e), Provenance::exact);
}

}  // namespace circle_detail

// [lambda_k^a |c_k|^{2b}]_N: the population value at class k plus all its aliases k + Nn.
inline double n_deformation(const PowerLawSpectrum& spec, std::int64_t N, std::int64_t k, double a, double b) {
    circle_detail::require_circle(spec, N);
    const double alpha = a * spec.nu + b * (spec.kappa + 1.0);
    if (!(alpha > 1.0)) throw DomainError("n_deformation: a*nu + b*(kappa+1) must exceed 1");
    const std::int64_t r = circle_detail::reduce_index(k, N);
    const double base = spec.base_scale() * static_cast<double>((r < 0 ? -r : r) + 1);
    return std::pow(base, -alpha) + circle_detail::deformation_tail(alpha, spec.base_scale(), N, r);
}

// Empirical eigenvalue lambda_hat_k = [lambda_k]_N.
inline double empirical_eigenvalue(const PowerLawSpectrum& spec, std::int64_t N, std::int64_t k) {
    return n_deformation(spec, N, k, 1.0, 0.0);
}

// Profile values at a class: h and 1 - h.
using ClassProfile = std::function<std::pair<double, double>(std::int64_t k, double lambda_hat)>;

inline LossBreakdown exact_loss(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq,
                                const ClassProfile& profile) {
    circle_detail::require_circle(spec, N);
    if (!(sigma_sq >= 0.0)) throw DomainError("exact_loss: sigma_sq must be >= 0");
    const double s = sigma_sq / static_cast<double>(N);
    const auto classes = circle_detail::all_classes(spec, N);
    std::vector<circle_detail::ClassTerms> terms(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const auto [h, p] = profile(static_cast<std::int64_t>(k), classes[k].lam_hat());
        terms[k] = circle_detail::class_terms(classes[k], s, h, p);
    }
    return circle_detail::assemble(terms, N);
}

inline LossBreakdown exact_loss(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq,
                                const SpectralProfile& profile) {
    return exact_loss(spec, N, sigma_sq, [&](std::int64_t, double lh) {
        return std::make_pair(profile.evaluate(lh), profile.residual(lh));
    });
}

inline double optimal_profile_value(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq, std::int64_t k) {
    circle_detail::require_circle(spec, N);
    if (!(sigma_sq >= 0.0)) throw DomainError("optimal_profile_value: sigma_sq must be >= 0");
    const auto d = circle_detail::class_data(spec, N, circle_detail::reduce_index(k, N));
    return circle_detail::optimal_h(d, sigma_sq / static_cast<double>(N));
}

// Minimal loss over all profiles: the free term of the completed square. Components are those of
// the optimal profile.
inline LossBreakdown optimal_loss(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq) {
    circle_detail::require_circle(spec, N);
    if (!(sigma_sq >= 0.0)) throw DomainError("optimal_loss: sigma_sq must be >= 0");
    const double s = sigma_sq / static_cast<double>(N);
    const auto classes = circle_detail::all_classes(spec, N);
    std::vector<circle_detail::ClassTerms> terms(classes.size());
    std::vector<double> free(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const auto& d = classes[k];
        terms[k] = circle_detail::class_terms(d, s, circle_detail::optimal_h(d, s), circle_detail::optimal_residual(d, s));
        free[k] = 0.5 * circle_detail::class_weight(static_cast<std::int64_t>(k), N) * circle_detail::optimal_free_term(d, s);
    }
    auto out = circle_detail::assemble(terms, N);
    out.total = pairwise_sum(free);
    return out;
}

// Per-class quantities exposed for the completed-square identity.
struct CircleClassInfo {
    std::int64_t k;
    double weight;        // multiplicity in (-N/2, N/2]
    double lambda_hat;
    double h_opt;
    double w;             // completed-square weight W_k
};

inline std::vector<CircleClassInfo> circle_classes(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq) {
    circle_detail::require_circle(spec, N);
    const double s = sigma_sq / static_cast<double>(N);
    const auto classes = circle_detail::all_classes(spec, N);
    std::vector<CircleClassInfo> out;
    out.reserve(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const auto& d = classes[k];
        out.push_back({static_cast<std::int64_t>(k), circle_detail::class_weight(static_cast<std::int64_t>(k), N),
                       d.lam_hat(), circle_detail::optimal_h(d, s), circle_detail::completed_square_weight(d, s)});
    }
    return out;
}

namespace circle_detail {

// zeta_tau^{(alpha)} = tau^{-alpha} (1 + a_alpha); returns a_alpha.
inline double zeta_tau_excess(double alpha, double tau) {
    const double s = tau <= 0.5 ? tau : 1.0 - tau;
    const double rest = hurwitz_zeta(alpha, 1.0 + s) + hurwitz_zeta(alpha, 1.0 - s);
    return std::pow(s, alpha) * rest;
}

struct LimitTerms {
    double weight;     // coefficient of (h - h*)^2 times tau^{kappa+1}
    double h_opt;
    double free;       // free term times tau^{kappa+1}
    double lam_scaled; // zeta_tau^{(nu)} = N^nu lambda_hat
};

inline LimitTerms limit_terms(double nu, double kappa, double tau) {
    const double s = tau <= 0.5 ? tau : 1.0 - tau;
    const double a1 = zeta_tau_excess(kappa + 1.0, s);
    const double a2 = zeta_tau_excess(2.0 * nu, s);
    const double a3 = zeta_tau_excess(nu + kappa + 1.0, s);
    const double an = zeta_tau_excess(nu, s);
    LimitTerms t;
    t.weight = (1.0 + a1) * (1.0 + a2) / ((1.0 + an) * (1.0 + an));
    t.h_opt = (1.0 + a3) * (1.0 + an) / ((1.0 + a1) * (1.0 + a2));
    t.free = (2.0 * a1 + a2 + a1 * a1 + 2.0 * a1 * a2 + a1 * a1 * a2 - 2.0 * a3 - a3 * a3) / ((1.0 + a1) * (1.0 + a2));
    t.lam_scaled = std::pow(s, -nu) * (1.0 + an);
    return t;
}

}  // namespace circle_detail

// Noiseless optimal profile in the N -> infinity limit at fixed tau = k/N.
inline double circle_optimal_profile_limit(double nu, double kappa, double tau) {
    if (!(nu > 1.0) || !(kappa > 0.0)) throw DomainError("circle_optimal_profile_limit: need nu > 1, kappa > 0");
    if (!(kappa < 2.0 * nu)) throw DomainError("circle_optimal_profile_limit: needs kappa < 2 nu");
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("circle_optimal_profile_limit: tau must lie in (0,1)");
    return circle_detail::limit_terms(nu, kappa, tau).h_opt;
}

// Profile as a function of tau for the limiting functional: returns (h, 1 - h).
using TauProfile = std::function<std::pair<double, double>(double tau, double lambda_scaled)>;

// A catalog profile with its parameter already rescaled (eta N^nu for ridge, t N^{-nu} for flow),
// evaluated at the rescaled eigenvalue zeta_tau^{(nu)}.
inline TauProfile scaled_profile(const SpectralProfile& profile) {
    return [profile](double, double lam) { return std::make_pair(profile.evaluate(lam), profile.residual(lam)); };
}

inline TauProfile optimal_tau_profile(double nu, double kappa) {
    return [nu, kappa](double tau, double) {
        const double h = circle_optimal_profile_limit(nu, kappa, tau);
        return std::make_pair(h, 1.0 - h);
    };
}

// Coefficient C of N^{-kappa} in the noiseless loss for kappa < 2 nu:
// C = int_0^{1/2} [A (h - h*)^2 + free] dtau, integrated in u = tau^p to absorb the endpoint.
inline double noiseless_limit_loss_nonsaturated(const TauProfile& profile, double nu, double kappa) {
    if (!(nu > 1.0) || !(kappa > 0.0)) throw DomainError("noiseless_limit_loss_nonsaturated: need nu > 1, kappa > 0");
    if (!(kappa < 2.0 * nu)) throw DomainError("noiseless_limit_loss_nonsaturated: integral diverges for kappa >= 2 nu");
    const double p = std::min(1.0, 2.0 * nu - kappa);
    auto f = [&](double u) {
        if (u <= 0.0) return 0.0;
        const double tau = std::pow(u, 1.0 / p);
        const auto t = circle_detail::limit_terms(nu, kappa, tau);
        const double r = profile(tau, t.lam_scaled).second;
        const double dev = (1.0 - t.h_opt) - r;  // h - h*
        const double body = t.weight * dev * dev + t.free;
        // tau^{-(kappa+1)} dtau = (1/p) u^{(1 - p - kappa - 1)/p} du
        return body * std::pow(u, (-kappa - p) / p) / p;
    };
    QuadratureOptions opt;
    opt.abs_tol = 1e-14;
    opt.rel_tol = 1e-10;
    opt.max_intervals = 4000;
    const double upper = std::pow(0.5, p);
    return integrate_or_throw(f, 0.0, upper, opt, {}, "noiseless_limit_loss_nonsaturated");
}

// Saturated phase (kappa > 2 nu), noiseless:
// L = 1/2 N^{-2 nu} sum_l (c_l^2/lambda_l^2) [(lambda_l N^nu (h(lambda_l) - 1) - 2 zeta(nu))^2 + 2 zeta(2 nu)].
// The residual callable supplies 1 - h(lambda).
inline double noiseless_loss_saturated(const PowerLawSpectrum& spec, std::int64_t N,
                                       const std::function<double(double)>& residual) {
    circle_detail::require_circle(spec, N);
    if (spec.scale2) throw DomainError("noiseless_loss_saturated: needs the unscaled circle spectrum");
    const double nu = spec.nu, kappa = spec.kappa;
    if (!(kappa > 2.0 * nu)) throw DomainError("noiseless_loss_saturated: needs kappa > 2 nu");
    const double nn = std::pow(static_cast<double>(N), nu);
    const double z1 = riemann_zeta(nu), z2 = riemann_zeta(2.0 * nu);
    const double eps = 0.5 * (kappa / nu - 2.0);
    double total = 0.0;
    double worst_ratio = 0.0;
    constexpr std::int64_t max_terms = 50'000'000;
    for (std::int64_t m = 0; m < max_terms; ++m) {
        const double lam = std::pow(static_cast<double>(m + 1), -nu);
        const double c2 = std::pow(static_cast<double>(m + 1), -kappa - 1.0);
        const double p = residual(lam);
        const double dev = -lam * nn * p - 2.0 * z1;
        const double term = (m == 0 ? 1.0 : 2.0) * c2 / (lam * lam) * (dev * dev + 2.0 * z2);
        total += term;
        worst_ratio = std::max(worst_ratio, p * p * std::pow(lam, kappa / nu - eps) * nn * nn);
        if (m > 0 && term < 1e-16 * total) break;
        if (m + 1 == max_terms) warn("noiseless_loss_saturated: lattice sum truncated before convergence");
    }
    if (worst_ratio > 1e4)
        warn("noiseless_loss_saturated: profile residual too large for the saturated-phase formula");
    return 0.5 * total / (nn * nn);
}

inline double noiseless_loss_saturated(const PowerLawSpectrum& spec, std::int64_t N, const SpectralProfile& profile) {
    return noiseless_loss_saturated(spec, N, [&](double lam) { return profile.residual(lam); });
}

// Saturated ridge closed form and its minimizer eta* = -2 zeta(nu) N^{-nu}.
struct SaturatedKrr {
    double eta_star;
    double constant;  // loss(eta*) N^{2 nu} = zeta(2 nu)(2 zeta(kappa + 1 - 2 nu) - 1)
    double scale;     // N^nu
    double z1, z2, sum_c2_over_l2;

    double loss_at(double eta) const {
        const double shift = eta * scale + 2.0 * z1;
        return 0.5 * (shift * shift + 2.0 * z2) * sum_c2_over_l2 / (scale * scale);
    }
};

inline SaturatedKrr saturated_krr(double nu, double kappa, std::int64_t N) {
    if (!(kappa > 2.0 * nu)) throw DomainError("saturated_krr: needs kappa > 2 nu");
    if (N < 1) throw DomainError("saturated_krr: N must be positive");
    SaturatedKrr out;
    out.scale = std::pow(static_cast<double>(N), nu);
    out.z1 = riemann_zeta(nu);
    out.z2 = riemann_zeta(2.0 * nu);
    out.sum_c2_over_l2 = 2.0 * riemann_zeta(kappa + 1.0 - 2.0 * nu) - 1.0;
    out.eta_star = -2.0 * out.z1 / out.scale;
    out.constant = out.z2 * out.sum_c2_over_l2;
    return out;
}

}  // namespace spectral_risk
