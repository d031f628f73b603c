#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spectral_risk/common.hpp"
#include "spectral_risk/special_functions.hpp"

namespace spectral_risk {

enum class Flavor { circle, positive, continuous };

inline std::string to_string(Flavor f) {
    switch (f) {
        case Flavor::circle: return "circle";
        case Flavor::positive: return "positive";
        case Flavor::continuous: return "continuous";
    }
    return "unknown";
}

inline Flavor parse_flavor(const std::string& s) {
    if (s == "circle") return Flavor::circle;
    if (s == "positive" || s == "discrete") return Flavor::positive;
    if (s == "continuous") return Flavor::continuous;
    throw DomainError("unknown spectrum flavor '" + s + "'");
}

inline constexpr std::int64_t default_truncation = 40000;

// Power-law population spectrum. Circle flavor: lambda_l = (s(|l|+1))^{-nu},
// c_l^2 = (s(|l|+1))^{-kappa-1} for l in Z, with s = 2 when scale2 is set and 1 otherwise.
// Positive flavor: lambda_l = l^{-nu}, c_l^2 = l^{-kappa-1}, l >= 1. Continuous flavor: densities
// (1/nu) lambda^{-1-1/nu} and (1/nu) lambda^{kappa/nu-1} on (0,1].
struct PowerLawSpectrum {
    double nu = 1.5;
    double kappa = 1.0;
    Flavor flavor = Flavor::circle;
    std::optional<std::int64_t> truncation = default_truncation;
    bool scale2 = false;

    void validate() const {
        if (!(nu > 1.0)) throw DomainError("spectrum: nu must exceed 1");
        if (!(kappa > 0.0)) throw DomainError("spectrum: kappa must be positive");
        if (truncation && *truncation < 1) throw DomainError("spectrum: truncation must be at least 1");
        if (scale2 && flavor != Flavor::circle) throw DomainError("spectrum: scale2 applies to the circle flavor only");
    }

    static PowerLawSpectrum circle(double nu, double kappa, bool scale2 = false,
                                   std::int64_t truncation = default_truncation) {
        PowerLawSpectrum s{nu, kappa, Flavor::circle, truncation, scale2};
        s.validate();
        return s;
    }
    static PowerLawSpectrum positive(double nu, double kappa, std::int64_t truncation = default_truncation) {
        PowerLawSpectrum s{nu, kappa, Flavor::positive, truncation, false};
        s.validate();
        return s;
    }
    static PowerLawSpectrum continuous(double nu, double kappa) {
        PowerLawSpectrum s{nu, kappa, Flavor::continuous, std::nullopt, false};
        s.validate();
        return s;
    }

    bool is_discrete() const { return flavor != Flavor::continuous; }
    double base_scale() const { return scale2 ? 2.0 : 1.0; }

    // Number of discrete modes kept under the truncation.
    std::int64_t mode_count() const {
        if (!is_discrete()) throw DomainError("spectrum: continuous flavor has no mode count");
        if (!truncation) throw DomainError("spectrum: discrete enumeration needs a truncation");
        return flavor == Flavor::circle ? 2 * *truncation + 1 : *truncation;
    }
};

namespace detail {

inline void check_index(const PowerLawSpectrum& spec, std::int64_t l) {
    spec.validate();
    if (spec.flavor == Flavor::continuous) throw DomainError("spectrum: index access needs a discrete flavor");
    if (spec.flavor == Flavor::positive && l < 1) throw DomainError("spectrum: positive flavor index must be >= 1");
    const std::int64_t mag = l < 0 ? -l : l;
    if (spec.truncation && mag > *spec.truncation) throw DomainError("spectrum: index beyond truncation");
}

inline double mode_base(const PowerLawSpectrum& spec, std::int64_t l) {
    if (spec.flavor == Flavor::circle) {
        const std::int64_t mag = l < 0 ? -l : l;
        return spec.base_scale() * static_cast<double>(mag + 1);
    }
    return static_cast<double>(l);
}

}  // namespace detail

inline double eigenvalue_at(const PowerLawSpectrum& spec, std::int64_t l) {
    detail::check_index(spec, l);
    return std::pow(detail::mode_base(spec, l), -spec.nu);
}

inline double coefficient_sq_at(const PowerLawSpectrum& spec, std::int64_t l) {
    detail::check_index(spec, l);
    return std::pow(detail::mode_base(spec, l), -spec.kappa - 1.0);
}

enum class DensityKind { eigenvalue, coefficient };

inline double density_at(const PowerLawSpectrum& spec, double lambda, DensityKind which) {
    spec.validate();
    if (spec.flavor != Flavor::continuous) throw DomainError("density_at: needs the continuous flavor");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw DomainError("density_at: lambda must lie in (0,1]");
    const double inv = 1.0 / spec.nu;
    if (which == DensityKind::eigenvalue) return inv * std::pow(lambda, -1.0 - inv);
    return inv * std::pow(lambda, spec.kappa * inv - 1.0);
}

// Circle enumeration order 0, -1, +1, -2, +2, ...
inline std::int64_t circle_index_at_rank(std::int64_t rank) {
    const std::int64_t mag = (rank + 1) / 2;
    return rank % 2 == 1 ? -mag : mag;
}

inline std::int64_t index_at_rank(const PowerLawSpectrum& spec, std::int64_t rank) {
    return spec.flavor == Flavor::circle ? circle_index_at_rank(rank) : rank + 1;
}

inline double lambda_min(const PowerLawSpectrum& spec, std::int64_t N) {
    spec.validate();
    if (N < 1) throw DomainError("lambda_min: N must be at least 1");
    if (spec.flavor == Flavor::continuous) return std::pow(static_cast<double>(N), -spec.nu);
    if (spec.truncation && N > spec.mode_count()) throw DomainError("lambda_min: N exceeds the truncation");
    return eigenvalue_at(spec, index_at_rank(spec, N - 1));
}

inline double target_norm_sq(const PowerLawSpectrum& spec) {
    spec.validate();
    const double a = spec.kappa + 1.0;
    switch (spec.flavor) {
        case Flavor::circle:
            return (2.0 * riemann_zeta(a) - 1.0) * std::pow(spec.base_scale(), -a);
        case Flavor::positive:
            if (!spec.truncation) return riemann_zeta(a);
            return riemann_zeta(a) - hurwitz_zeta(a, static_cast<double>(*spec.truncation) + 1.0);
        case Flavor::continuous:
            return 1.0 / spec.kappa;
    }
    return 0.0;
}

// A materialized list of modes sorted by decreasing eigenvalue. Exact discrete evaluators accept
// arbitrary lists of this kind, not only power laws.
struct DiscreteSpectrum {
    std::vector<double> lambda;
    std::vector<double> c2;

    std::size_t size() const { return lambda.size(); }
    double target_norm_sq() const { return pairwise_sum(c2); }
};

inline DiscreteSpectrum materialize(const PowerLawSpectrum& spec) {
    spec.validate();
    const std::int64_t count = spec.mode_count();
    DiscreteSpectrum out;
    out.lambda.reserve(static_cast<std::size_t>(count));
    out.c2.reserve(static_cast<std::size_t>(count));
    for (std::int64_t r = 0; r < count; ++r) {
        const std::int64_t l = index_at_rank(spec, r);
        out.lambda.push_back(eigenvalue_at(spec, l));
        out.c2.push_back(coefficient_sq_at(spec, l));
    }
    return out;
}

}  // namespace spectral_risk
