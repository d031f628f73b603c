#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "spectral_risk/common.hpp"

namespace spectral_risk {

// Scale of a quantity g(lambda) at lambda = N^{-s}: g ~ N^{-S(s)}. Profiles are continuous and
// piecewise linear on [0, nu].

enum class ScalingAlgorithm { krr, gf, custom };

// Stand-in for +infinity where a residual is exponentially small.
inline constexpr double scaling_sentinel = 1e6;

class ScalingProfile {
public:
    ScalingProfile(double nu, std::vector<std::pair<double, double>> breakpoints,
                   ScalingAlgorithm origin = ScalingAlgorithm::custom)
        : nu_(nu), points_(std::move(breakpoints)), origin_(origin) {
        if (!(nu_ > 0.0)) throw DomainError("ScalingProfile: nu must be positive");
        if (points_.size() < 2) throw DomainError("ScalingProfile: need at least two breakpoints");
        if (points_.front().first != 0.0 || std::abs(points_.back().first - nu_) > 1e-12 * nu_)
            throw DomainError("ScalingProfile: breakpoints must span exactly [0, nu]");
        points_.back().first = nu_;
        for (std::size_t i = 1; i < points_.size(); ++i)
            if (!(points_[i].first > points_[i - 1].first))
                throw DomainError("ScalingProfile: breakpoint scales must be strictly increasing");
        for (const auto& p : points_)
            if (!std::isfinite(p.second)) throw DomainError("ScalingProfile: values must be finite");
    }

    double nu() const { return nu_; }
    ScalingAlgorithm origin() const { return origin_; }
    const std::vector<std::pair<double, double>>& breakpoints() const { return points_; }

    double operator()(double s) const {
        if (s < -1e-12 || s > nu_ * (1.0 + 1e-12)) throw DomainError("ScalingProfile: scale outside [0, nu]");
        s = std::clamp(s, 0.0, nu_);
        auto it = std::lower_bound(points_.begin(), points_.end(), s,
                                   [](const auto& p, double v) { return p.first < v; });
        if (it == points_.begin()) return it->second;
        if (it == points_.end()) return points_.back().second;
        const auto& [s1, v1] = *it;
        const auto& [s0, v0] = *(it - 1);
        return v0 + (v1 - v0) * (s - s0) / (s1 - s0);
    }

private:
    double nu_;
    std::vector<std::pair<double, double>> points_;
    ScalingAlgorithm origin_;
};

enum class ScalingPart { h, one_minus_h };

namespace scaling_detail {

// Builds max(slope * (s - s0), 0) style profiles on [0, nu] with the kink at s0.
inline std::vector<std::pair<double, double>> hinge(double nu, double s0, bool rising) {
    std::vector<std::pair<double, double>> pts;
    auto value = [&](double s) { return rising ? std::max(s - s0, 0.0) : std::max(s0 - s, 0.0); };
    pts.emplace_back(0.0, value(0.0));
    if (s0 > 0.0 && s0 < nu) pts.emplace_back(s0, 0.0);
    pts.emplace_back(nu, value(nu));
    return pts;
}

}  // namespace scaling_detail

// Profiles of KRR with eta ~ N^{-param} and GF with t ~ N^{param}; param lies in [0, nu].
inline ScalingProfile scaling_profile_of(ScalingAlgorithm algorithm, double param, ScalingPart which, double nu) {
    if (!(nu > 0.0)) throw DomainError("scaling_profile_of: nu must be positive");
    if (!(param >= 0.0 && param <= nu)) throw DomainError("scaling_profile_of: parameter scale must lie in [0, nu]");
    if (algorithm == ScalingAlgorithm::custom) throw DomainError("scaling_profile_of: needs krr or gf");
    if (which == ScalingPart::h) return ScalingProfile(nu, scaling_detail::hinge(nu, param, true), algorithm);
    if (algorithm == ScalingAlgorithm::krr)
        return ScalingProfile(nu, scaling_detail::hinge(nu, param, false), algorithm);
    // GF residual e^{-t lambda} is exponentially small where t lambda -> inf, i.e. s < param.
    // The jump is a ramp of width 1e-12 nu so that the profile stays continuous.
    std::vector<std::pair<double, double>> pts;
    const double ramp = 1e-12 * nu;
    if (param > ramp) {
        pts.emplace_back(0.0, scaling_sentinel);
        pts.emplace_back(param - ramp, scaling_sentinel);
        pts.emplace_back(param, 0.0);
    } else {
        pts.emplace_back(0.0, 0.0);
    }
    if (param < nu) pts.emplace_back(nu, 0.0);
    return ScalingProfile(nu, std::move(pts), algorithm);
}

struct RateReport {
    double loss_scale = 0.0;
    std::vector<double> localization_scales;
    bool saturated = false;
    bool optimal = false;
};

struct OptimalityConditions {
    bool cond1 = false;  // S_h large enough above s_*
    bool cond2 = false;  // S_1h large enough below s_*
};

inline constexpr double scaling_tolerance = 1e-9;

namespace scaling_detail {

inline void check_pair(const ScalingProfile& sh, const ScalingProfile& s1h, double kappa) {
    if (std::abs(sh.nu() - s1h.nu()) > 1e-12 * sh.nu()) throw DomainError("nmno_scaling: profiles on different domains");
    if (!(sh.nu() > 1.0)) throw DomainError("nmno_scaling: nu must exceed 1");
    if (!(kappa > 0.0)) throw DomainError("nmno_scaling: kappa must be positive");
}

// Union of breakpoints plus s_*; both terms are linear between consecutive candidates, so the
// minimum of their pointwise minimum is attained on this set.
inline std::vector<double> candidates(const ScalingProfile& sh, const ScalingProfile& s1h, double kappa) {
    const double nu = sh.nu();
    std::vector<double> s{0.0, nu, nu / (kappa + 1.0)};
    for (const auto& p : sh.breakpoints()) s.push_back(p.first);
    for (const auto& p : s1h.breakpoints()) s.push_back(std::min(p.first, nu));
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

inline double noise_term(const ScalingProfile& sh, double s) { return 1.0 - s / sh.nu() + 2.0 * sh(s); }
inline double signal_term(const ScalingProfile& s1h, double kappa, double s) {
    return kappa * s / s1h.nu() + 2.0 * s1h(s);
}

}  // namespace scaling_detail

inline OptimalityConditions check_optimality_conditions(const ScalingProfile& sh, const ScalingProfile& s1h, double nu,
                                                        double kappa) {
    scaling_detail::check_pair(sh, s1h, kappa);
    if (std::abs(nu - sh.nu()) > 1e-12 * nu) throw DomainError("check_optimality_conditions: nu mismatch");
    const double s_star = nu / (kappa + 1.0);
    const double target = kappa / (kappa + 1.0);
    OptimalityConditions out{true, true};
    // cond1: S_h(s) >= (s/nu - 1/(kappa+1))/2, i.e. noise term >= target; ties count as satisfied.
    for (double s : scaling_detail::candidates(sh, s1h, kappa)) {
        if (s >= s_star && scaling_detail::noise_term(sh, s) < target - scaling_tolerance) out.cond1 = false;
        if (s <= s_star && scaling_detail::signal_term(s1h, kappa, s) < target - scaling_tolerance) out.cond2 = false;
    }
    return out;
}

inline RateReport nmno_scaling(const ScalingProfile& sh, const ScalingProfile& s1h, double nu, double kappa) {
    scaling_detail::check_pair(sh, s1h, kappa);
    if (std::abs(nu - sh.nu()) > 1e-12 * nu) throw DomainError("nmno_scaling: nu mismatch");
    const auto cand = scaling_detail::candidates(sh, s1h, kappa);
    std::vector<double> values;
    values.reserve(cand.size());
    bool both_positive = false;
    for (double s : cand) {
        values.push_back(std::min(scaling_detail::noise_term(sh, s), scaling_detail::signal_term(s1h, kappa, s)));
        if (std::min(sh(s), s1h(s)) > scaling_tolerance) both_positive = true;
    }
    if (both_positive) warn("nmno_scaling: h and 1-h are both small at some scale; profiles look inconsistent");
    RateReport out;
    out.loss_scale = *std::min_element(values.begin(), values.end());
    for (std::size_t i = 0; i < cand.size(); ++i)
        if (values[i] <= out.loss_scale + scaling_tolerance &&
            (out.localization_scales.empty() || cand[i] - out.localization_scales.back() > scaling_tolerance))
            out.localization_scales.push_back(cand[i]);
    out.optimal = out.loss_scale >= kappa / (kappa + 1.0) - scaling_tolerance;
    if (sh.origin() == ScalingAlgorithm::krr && s1h.origin() == ScalingAlgorithm::krr) out.saturated = kappa > 2.0 * nu;
    return out;
}

}  // namespace spectral_risk
