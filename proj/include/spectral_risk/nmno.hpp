#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "spectral_risk/common.hpp"
#include "spectral_risk/loss.hpp"
#include "spectral_risk/profiles.hpp"
#include "spectral_risk/quadrature.hpp"
#include "spectral_risk/special_functions.hpp"
#include "spectral_risk/spectrum.hpp"

namespace spectral_risk {

// Naive model of noisy observations: every captured mode contributes c^2 (1-h)^2 to the bias
// and (sigma^2/N) h^2 to the noise variance. Discrete spectra keep exactly the top N modes;
// continuous spectra integrate the densities over [N^{-nu}, 1].

namespace nmno_detail {

inline void require_inputs(std::int64_t N, double sigma_sq) {
    if (N < 1) throw DomainError("nmno: N must be at least 1");
    if (!(sigma_sq >= 0.0)) throw DomainError("nmno: sigma^2 must be non-negative");
}

// h and 1-h evaluated separately so that small residuals keep full precision.
struct ProfilePair {
    std::function<double(double)> h;
    std::function<double(double)> residual;
};

inline ProfilePair pair_of(const SpectralProfile& profile) {
    return {[&profile](double l) { return profile.evaluate(l); },
            [&profile](double l) { return profile.residual(l); }};
}

inline LossBreakdown discrete_sum(std::int64_t N, double sigma_sq, const ProfilePair& p,
                                  const std::function<std::pair<double, double>(std::int64_t)>& mode) {
    std::vector<double> bias(static_cast<std::size_t>(N)), noise(static_cast<std::size_t>(N));
    for (std::int64_t r = 0; r < N; ++r) {
        const auto [lam, c2] = mode(r);
        const double h = p.h(lam), q = p.residual(lam);
        bias[static_cast<std::size_t>(r)] = c2 * q * q;
        noise[static_cast<std::size_t>(r)] = h * h;
    }
    const double b = 0.5 * pairwise_sum(bias);
    const double v = 0.5 * sigma_sq / static_cast<double>(N) * pairwise_sum(noise);
    return LossBreakdown::from_parts(b, 0.0, v, Provenance::nmno);
}

inline LossBreakdown continuous_integral(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq,
                                         const ProfilePair& p) {
    const double nu = spec.nu, kappa = spec.kappa;
    const double lo = -nu * std::log(static_cast<double>(N));
    // lambda = e^y; mu(d lambda) = (1/nu) lambda^{...} lambda dy
    auto f = [&](double y) {
        const double lam = std::exp(y);
        const double h = p.h(lam), q = p.residual(lam);
        return std::array<double, 2>{q * q * std::pow(lam, kappa / nu) / nu, h * h * std::pow(lam, -1.0 / nu) / nu};
    };
    std::vector<double> cuts;
    for (double y = std::ceil(lo); y < 0.0; y += 1.0) cuts.push_back(y);
    QuadratureOptions opt;
    opt.abs_tol = 0.0;
    opt.rel_tol = 1e-11;
    opt.max_intervals = 20000;
    const auto r = integrate_or_throw(f, lo, 0.0, opt, cuts, "nmno_loss");
    return LossBreakdown::from_parts(0.5 * r[0], 0.0, 0.5 * sigma_sq / static_cast<double>(N) * r[1],
                                     Provenance::nmno);
}

}  // namespace nmno_detail

inline LossBreakdown nmno_loss(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq,
                               const std::function<double(double)>& h,
                               const std::function<double(double)>& residual) {
    spec.validate();
    nmno_detail::require_inputs(N, sigma_sq);
    const nmno_detail::ProfilePair p{h, residual};
    if (!spec.is_discrete()) return nmno_detail::continuous_integral(spec, N, sigma_sq, p);
    if (spec.truncation && N > spec.mode_count()) throw DomainError("nmno_loss: N exceeds the truncation");
    return nmno_detail::discrete_sum(N, sigma_sq, p, [&](std::int64_t r) {
        const std::int64_t l = index_at_rank(spec, r);
        return std::pair{eigenvalue_at(spec, l), coefficient_sq_at(spec, l)};
    });
}

inline LossBreakdown nmno_loss(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq,
                               const SpectralProfile& profile) {
    const auto p = nmno_detail::pair_of(profile);
    return nmno_loss(spec, N, sigma_sq, p.h, p.residual);
}

// Arbitrary mode list, assumed sorted by decreasing eigenvalue.
inline LossBreakdown nmno_loss(const DiscreteSpectrum& spec, std::int64_t N, double sigma_sq,
                               const SpectralProfile& profile) {
    nmno_detail::require_inputs(N, sigma_sq);
    if (static_cast<std::size_t>(N) > spec.size()) throw DomainError("nmno_loss: N exceeds the number of modes");
    return nmno_detail::discrete_sum(N, sigma_sq, nmno_detail::pair_of(profile), [&](std::int64_t r) {
        const auto i = static_cast<std::size_t>(r);
        return std::pair{spec.lambda[i], spec.c2[i]};
    });
}

// Pointwise minimizer h = c^2 / (c^2 + sigma^2/N) at a captured eigenvalue. For the continuous
// flavor c^2 and the mode count are replaced by their densities at lambda.
inline double nmno_optimal_profile(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq, double lambda) {
    spec.validate();
    nmno_detail::require_inputs(N, sigma_sq);
    const double lmin = lambda_min(spec, N);
    if (!(lambda > 0.0 && lambda <= 1.0) || lambda < lmin * (1.0 - 1e-12))
        throw DomainError("nmno_optimal_profile: lambda is not among the captured eigenvalues");
    const double noise = sigma_sq / static_cast<double>(N);
    if (!spec.is_discrete()) {
        const double mc = density_at(spec, lambda, DensityKind::coefficient);
        const double ml = density_at(spec, lambda, DensityKind::eigenvalue);
        return mc / (mc + noise * ml);
    }
    const double base = std::pow(lambda, -1.0 / spec.nu) / spec.base_scale();
    if (std::abs(base - std::round(base)) > 1e-8 * base)
        throw DomainError("nmno_optimal_profile: lambda is not an eigenvalue of the spectrum");
    const double c2 = std::pow(lambda, (spec.kappa + 1.0) / spec.nu);
    return c2 / (c2 + noise);
}

// Loss of the pointwise minimizer, 1/2 sum c^2 s / (c^2 + s) with s = sigma^2/N.
inline LossBreakdown nmno_optimal_loss(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq) {
    auto h = [&](double l) { return nmno_optimal_profile(spec, N, sigma_sq, l); };
    auto q = [&](double l) {
        const double hv = h(l);
        return 1.0 - hv;
    };
    return nmno_loss(spec, N, sigma_sq, h, q);
}

// Limit constants C in L = C N^{-rate}.

struct NmnoGf {
    double t_prime = 1.0;  // t = t' N^{nu/(kappa+1)}
};
struct NmnoKrr {
    double eta_prime = 1.0;  // eta = eta' N^{-nu/(kappa+1)} or N^{-nu/(2nu+1)} when saturated
};
using NmnoAlgorithm = std::variant<NmnoGf, NmnoKrr>;

enum class NmnoPhase { nonsaturated, saturated };

// Sum c_l^2 / lambda_l^2 entering the saturated KRR signal term.
inline double saturated_signal_sum(const PowerLawSpectrum& spec) {
    spec.validate();
    if (!(spec.kappa > 2.0 * spec.nu)) throw DomainError("saturated_signal_sum: needs kappa > 2 nu");
    const double a = spec.kappa + 1.0 - 2.0 * spec.nu;
    switch (spec.flavor) {
        case Flavor::continuous: return 1.0 / (spec.kappa - 2.0 * spec.nu);
        case Flavor::positive:
            if (!spec.truncation) return riemann_zeta(a);
            return riemann_zeta(a) - hurwitz_zeta(a, static_cast<double>(*spec.truncation) + 1.0);
        case Flavor::circle: return (2.0 * riemann_zeta(a) - 1.0) * std::pow(spec.base_scale(), -a);
    }
    return 0.0;
}

// Rate exponent r in L ~ N^{-r}.
inline double nmno_rate(double nu, double kappa, NmnoPhase phase) {
    return phase == NmnoPhase::saturated ? 2.0 * nu / (2.0 * nu + 1.0) : kappa / (kappa + 1.0);
}

namespace nmno_detail {

inline void check_limit_inputs(const NmnoAlgorithm& alg, double nu, double kappa, double sigma_sq, NmnoPhase phase) {
    if (!(nu > 1.0) || !(kappa > 0.0)) throw DomainError("nmno_limit_constant: need nu > 1 and kappa > 0");
    if (!(sigma_sq >= 0.0)) throw DomainError("nmno_limit_constant: sigma^2 must be non-negative");
    if (const auto* g = std::get_if<NmnoGf>(&alg)) {
        if (!(g->t_prime > 0.0)) throw DomainError("nmno_limit_constant: t' must be positive");
        if (phase != NmnoPhase::nonsaturated) throw DomainError("nmno_limit_constant: gradient flow has no saturated phase");
        return;
    }
    const auto& k = std::get<NmnoKrr>(alg);
    if (!(k.eta_prime > 0.0)) throw DomainError("nmno_limit_constant: eta' must be positive");
    if (phase == NmnoPhase::nonsaturated && !(kappa < 2.0 * nu))
        throw DomainError("nmno_limit_constant: nonsaturated ridge needs kappa < 2 nu");
    if (phase == NmnoPhase::saturated && !(kappa > 2.0 * nu))
        throw DomainError("nmno_limit_constant: saturated ridge needs kappa > 2 nu");
}

// int_0^inf g(y) dy with y = log(lambda/scale); g receives y so that integrands can be written in
// log space without overflowing lambda. g must decay at least like e^{lo_rate y} as y -> -inf and
// e^{-hi_rate |y|} as y -> +inf.
template <class G>
double log_line_integral(G&& g, double lo_rate, double hi_rate) {
    constexpr double depth = 48.0;
    const double lo = -std::min(depth / lo_rate, 4000.0), hi = std::min(depth / hi_rate, 4000.0);
    std::vector<double> cuts;
    for (double y = std::ceil(lo); y < hi; y += 1.0) cuts.push_back(y);
    QuadratureOptions opt;
    opt.abs_tol = 0.0;
    opt.rel_tol = 1e-13;
    opt.max_intervals = 40000;
    return integrate_or_throw(std::forward<G>(g), lo, hi, opt, cuts, "nmno_limit_constant");
}

// log(1 + e^y) without overflow.
inline double log1p_exp(double y) { return y > 0.0 ? y + std::log1p(std::exp(-y)) : std::log1p(std::exp(y)); }

}  // namespace nmno_detail

// Evaluates the limit integrals by quadrature. saturated_sum supplies sum c^2/lambda^2 for the
// saturated ridge phase.
inline double nmno_limit_constant(const NmnoAlgorithm& alg, double nu, double kappa, double sigma_sq, NmnoPhase phase,
                                  std::optional<double> saturated_sum = std::nullopt) {
    nmno_detail::check_limit_inputs(alg, nu, kappa, sigma_sq, phase);
    const double a = kappa / nu, b = 1.0 / nu;
    if (const auto* g = std::get_if<NmnoGf>(&alg)) {
        // lambda = u / t' with u = e^y.
        const double t = g->t_prime;
        auto f = [&](double y) {
            const double u = std::exp(y);
            const double e = -std::expm1(-u);
            const double signal = std::exp(-2.0 * u + a * y) * std::pow(t, -a);
            const double noise = y > -std::log(std::numeric_limits<double>::max()) / (b + 1.0)
                                     ? e * e * std::exp(-b * y) * std::pow(t, b)
                                     : 0.0;
            return signal + sigma_sq * noise;
        };
        return 0.5 / nu * nmno_detail::log_line_integral(f, std::min(a, 2.0 - b), b);
    }
    // lambda = eta' e^y; both terms carry the factor (1 + e^y)^{-2}.
    const double eta = std::get<NmnoKrr>(alg).eta_prime;
    auto noise = [&](double y) {
        return sigma_sq * std::pow(eta, -b) * std::exp((2.0 - b) * y - 2.0 * nmno_detail::log1p_exp(y));
    };
    if (phase == NmnoPhase::nonsaturated) {
        auto f = [&](double y) {
            return std::pow(eta, a) * std::exp(a * y - 2.0 * nmno_detail::log1p_exp(y)) + noise(y);
        };
        return 0.5 / nu * nmno_detail::log_line_integral(f, std::min(a, 2.0 - b), std::min(2.0 - a, b));
    }
    if (!saturated_sum) throw DomainError("nmno_limit_constant: saturated phase needs sum c^2/lambda^2");
    const double integral = sigma_sq > 0.0 ? nmno_detail::log_line_integral(noise, 2.0 - b, b) : 0.0;
    return 0.5 * (integral / nu + eta * eta * *saturated_sum);
}

// Number of modes per unit of lambda^{-1/nu}: 2/s for the circle flavor (modes +-l), else 1.
inline double mode_multiplicity(const PowerLawSpectrum& spec) {
    return spec.flavor == Flavor::circle ? 2.0 / spec.base_scale() : 1.0;
}

// Spectrum-aware constant: the densities scale by the mode multiplicity A, while the discrete
// saturated signal sum does not, so C = A C(S/A).
inline double nmno_limit_constant(const NmnoAlgorithm& alg, const PowerLawSpectrum& spec, double sigma_sq,
                                  NmnoPhase phase) {
    spec.validate();
    const double A = mode_multiplicity(spec);
    std::optional<double> sum;
    if (phase == NmnoPhase::saturated) sum = saturated_signal_sum(spec) / A;
    return A * nmno_limit_constant(alg, spec.nu, spec.kappa, sigma_sq, phase, sum);
}

// Gamma and Beta reductions of the same integrals.
inline double nmno_limit_constant_closed_form(const NmnoAlgorithm& alg, double nu, double kappa, double sigma_sq,
                                              NmnoPhase phase, std::optional<double> saturated_sum = std::nullopt) {
    nmno_detail::check_limit_inputs(alg, nu, kappa, sigma_sq, phase);
    using boost::math::beta;
    using boost::math::tgamma;
    const double a = kappa / nu, b = 1.0 / nu;
    if (const auto* g = std::get_if<NmnoGf>(&alg)) {
        const double t = g->t_prime;
        // int (1-e^{-u})^2 u^{-b-1} du = Gamma(-b)(2^b - 2) for 0 < b < 1
        const double signal = tgamma(a) * std::pow(2.0 * t, -a);
        const double noise = tgamma(-b) * (std::pow(2.0, b) - 2.0) * std::pow(t, b);
        return 0.5 / nu * (signal + sigma_sq * noise);
    }
    const double eta = std::get<NmnoKrr>(alg).eta_prime;
    const double noise = sigma_sq * std::pow(eta, -b) * beta(2.0 - b, b);
    if (phase == NmnoPhase::nonsaturated) return 0.5 / nu * (std::pow(eta, a) * beta(a, 2.0 - a) + noise);
    if (!saturated_sum) throw DomainError("nmno_limit_constant: saturated phase needs sum c^2/lambda^2");
    return 0.5 * (noise / nu + eta * eta * *saturated_sum);
}

// Minimizer of the saturated constant over eta':
// eta'^{2+1/nu} = sigma^2 B(2-1/nu, 1/nu) / (2 nu^2 S).
inline double nmno_saturated_optimal_eta(double nu, double kappa, double sigma_sq, double saturated_sum) {
    if (!(kappa > 2.0 * nu)) throw DomainError("nmno_saturated_optimal_eta: needs kappa > 2 nu");
    if (!(sigma_sq > 0.0) || !(saturated_sum > 0.0)) throw DomainError("nmno_saturated_optimal_eta: needs sigma^2 > 0");
    const double b = 1.0 / nu;
    const double A = sigma_sq * boost::math::beta(2.0 - b, b);
    return std::pow(A / (2.0 * nu * nu * saturated_sum), 1.0 / (2.0 + b));
}

}  // namespace spectral_risk
