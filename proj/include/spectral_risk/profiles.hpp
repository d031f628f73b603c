#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "spectral_risk/common.hpp"

namespace spectral_risk {

struct Krr {
    double eta;
};
struct Gf {
    double t;
};
struct Gd {
    double alpha;
    std::int64_t t;
};
struct Interpolation {};

// Piecewise-linear in log(lambda), clamped to the end values outside the table.
struct Tabulated {
    std::shared_ptr<const std::vector<double>> log_lambda;
    std::shared_ptr<const std::vector<double>> h;
};

using ProfileKind = std::variant<Krr, Gf, Gd, Interpolation, Tabulated>;

class SpectralProfile {
public:
    SpectralProfile() : kind_(Interpolation{}) {}
    SpectralProfile(ProfileKind kind) : kind_(std::move(kind)) { validate(); }

    static SpectralProfile krr(double eta) { return SpectralProfile(Krr{eta}); }
    static SpectralProfile gf(double t) { return SpectralProfile(Gf{t}); }
    static SpectralProfile gd(double alpha, std::int64_t t) { return SpectralProfile(Gd{alpha, t}); }
    static SpectralProfile interpolation() { return SpectralProfile(Interpolation{}); }
    static SpectralProfile tabulated(std::vector<double> lambda, std::vector<double> h) {
        if (lambda.size() != h.size() || lambda.empty())
            throw DomainError("tabulated profile: need equal, nonempty lambda and h columns");
        for (std::size_t i = 0; i < lambda.size(); ++i) {
            if (!(lambda[i] > 0.0)) throw DomainError("tabulated profile: lambda must be positive");
            if (i > 0 && !(lambda[i] > lambda[i - 1]))
                throw DomainError("tabulated profile: lambda must be strictly increasing");
        }
        std::vector<double> ll(lambda.size());
        std::transform(lambda.begin(), lambda.end(), ll.begin(), [](double v) { return std::log(v); });
        return SpectralProfile(Tabulated{std::make_shared<const std::vector<double>>(std::move(ll)),
                                         std::make_shared<const std::vector<double>>(std::move(h))});
    }
    // Constant zero profile, the eta -> infinity limit of ridge regression.
    static SpectralProfile zero() { return tabulated({1.0}, {0.0}); }

    const ProfileKind& kind() const { return kind_; }
    bool is_tabulated() const { return std::holds_alternative<Tabulated>(kind_); }

    // h(lambda). lambda = 0 returns 0 for every kind.
    double evaluate(double lambda) const {
        check_lambda(lambda);
        if (lambda == 0.0) return 0.0;
        return std::visit([&](const auto& k) { return eval_h(k, lambda); }, kind_);
    }

    // 1 - h(lambda), evaluated without cancellation where a direct form exists.
    double residual(double lambda) const {
        check_lambda(lambda);
        if (lambda == 0.0) return 1.0;
        return std::visit([&](const auto& k) { return eval_p(k, lambda); }, kind_);
    }

    double operator()(double lambda) const { return evaluate(lambda); }

    // Gradient descent is only contractive while alpha * lambda < 2.
    bool gd_is_stable(double lambda_max) const {
        if (const auto* g = std::get_if<Gd>(&kind_)) return g->alpha * lambda_max < 2.0;
        return true;
    }

    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        std::visit(
            [&](const auto& k) {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, Krr>) os << "krr:eta=" << k.eta;
                else if constexpr (std::is_same_v<K, Gf>) os << "gf:t=" << k.t;
                else if constexpr (std::is_same_v<K, Gd>) os << "gd:alpha=" << k.alpha << ",t=" << k.t;
                else if constexpr (std::is_same_v<K, Interpolation>) os << "interpolation";
                else os << "tabulated[" << k.h->size() << "]";
            },
            kind_);
        return os.str();
    }

private:
    ProfileKind kind_;

    void validate() const {
        if (const auto* k = std::get_if<Krr>(&kind_)) {
            if (!std::isfinite(k->eta) || k->eta == 0.0) throw DomainError("krr profile: eta must be finite and nonzero");
        } else if (const auto* g = std::get_if<Gf>(&kind_)) {
            if (!(g->t >= 0.0) || !std::isfinite(g->t)) throw DomainError("gf profile: t must be finite and >= 0");
        } else if (const auto* d = std::get_if<Gd>(&kind_)) {
            if (!(d->alpha > 0.0) || d->t < 0) throw DomainError("gd profile: need alpha > 0 and t >= 0");
        }
    }

    static void check_lambda(double lambda) {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("profile: lambda must be finite and >= 0");
    }

    static double krr_denominator(const Krr& k, double lambda) {
        const double d = lambda + k.eta;
        if (d == 0.0 || std::abs(d) <= 1e-15 * std::max(lambda, std::abs(k.eta)))
            throw SingularityError("krr profile: pole at lambda = -eta");
        return d;
    }

    static double eval_h(const Krr& k, double lambda) { return lambda / krr_denominator(k, lambda); }
    static double eval_h(const Gf& g, double lambda) { return -std::expm1(-g.t * lambda); }
    static double eval_h(const Gd& g, double lambda) {
        if (g.alpha * lambda < 1.0) return -std::expm1(static_cast<double>(g.t) * std::log1p(-g.alpha * lambda));
        return 1.0 - eval_p(g, lambda);
    }
    static double eval_h(const Interpolation&, double) { return 1.0; }
    static double eval_h(const Tabulated& t, double lambda) { return table_lookup(t, lambda); }

    static double eval_p(const Krr& k, double lambda) { return k.eta / krr_denominator(k, lambda); }
    static double eval_p(const Gf& g, double lambda) { return std::exp(-g.t * lambda); }
    static double eval_p(const Gd& g, double lambda) {
        if (g.alpha * lambda < 1.0) return std::exp(static_cast<double>(g.t) * std::log1p(-g.alpha * lambda));
        return std::pow(1.0 - g.alpha * lambda, static_cast<double>(g.t));
    }
    static double eval_p(const Interpolation&, double) { return 0.0; }
    static double eval_p(const Tabulated& t, double lambda) { return 1.0 - table_lookup(t, lambda); }

    static double table_lookup(const Tabulated& t, double lambda) {
        const auto& xs = *t.log_lambda;
        const auto& hs = *t.h;
        const double x = std::log(lambda);
        if (x <= xs.front()) return hs.front();
        if (x >= xs.back()) return hs.back();
        const auto it = std::upper_bound(xs.begin(), xs.end(), x);
        const std::size_t j = static_cast<std::size_t>(it - xs.begin());
        const double w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
        return hs[j - 1] + w * (hs[j] - hs[j - 1]);
    }
};

// Reads a two-column "lambda,h" CSV. A non-numeric first line is treated as a header.
inline SpectralProfile load_tabulated_profile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("tabulated profile: cannot open '" + path + "'");
    std::vector<double> lam, h;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DomainError(path + ":" + std::to_string(line_no) + ": expected 'lambda,h'");
        try {
            std::size_t used = 0;
            const double a = std::stod(line.substr(0, comma), &used);
            const double b = std::stod(line.substr(comma + 1));
            lam.push_back(a);
            h.push_back(b);
        } catch (const std::invalid_argument&) {
            if (lam.empty() && line_no == 1) continue;
            throw DomainError(path + ":" + std::to_string(line_no) + ": non-numeric value");
        }
    }
    return SpectralProfile::tabulated(std::move(lam), std::move(h));
}

// Resolves parameters written as "auto" (kind, parameter name) -> value.
using AutoResolver = std::function<double(std::string_view kind, std::string_view param)>;

namespace detail {

inline std::map<std::string, std::string> parse_params(std::string_view body) {
    std::map<std::string, std::string> out;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto end = body.find(',', pos);
        if (end == std::string_view::npos) end = body.size();
        const auto item = body.substr(pos, end - pos);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw DomainError("profile: expected key=value, got '" + std::string(item) + "'");
        out.emplace(std::string(item.substr(0, eq)), std::string(item.substr(eq + 1)));
        pos = end + 1;
    }
    return out;
}

inline double param_value(const std::map<std::string, std::string>& params, const std::string& kind,
                          const std::string& name, const AutoResolver& resolve) {
    const auto it = params.find(name);
    if (it == params.end()) throw DomainError("profile " + kind + ": missing parameter '" + name + "'");
    if (it->second == "auto") {
        if (!resolve) throw DomainError("profile " + kind + ": 'auto' needs a sample count context");
        return resolve(kind, name);
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DomainError("profile " + kind + ": bad value '" + it->second + "' for '" + name + "'");
    }
}

}  // namespace detail

// Parses "krr:eta=-0.001", "gf:t=1e4", "gd:alpha=0.5,t=200", "interpolation", "zero",
// "tabulated:@file.csv".
inline SpectralProfile parse_profile(std::string_view text, const AutoResolver& resolve = {},
                                     const std::string& base_dir = {}) {
    const auto colon = text.find(':');
    const std::string kind(text.substr(0, colon));
    const std::string_view body = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
    if (kind == "interpolation") return SpectralProfile::interpolation();
    if (kind == "zero") return SpectralProfile::zero();
    if (kind == "tabulated") {
        if (body.empty() || body[0] != '@') throw DomainError("tabulated profile: expected 'tabulated:@path'");
        std::string path(body.substr(1));
        if (!base_dir.empty() && !path.empty() && path[0] != '/') path = base_dir + "/" + path;
        return load_tabulated_profile(path);
    }
    const auto params = detail::parse_params(body);
    if (kind == "krr") return SpectralProfile::krr(detail::param_value(params, kind, "eta", resolve));
    if (kind == "gf") return SpectralProfile::gf(detail::param_value(params, kind, "t", resolve));
    if (kind == "gd") {
        const double alpha = detail::param_value(params, kind, "alpha", resolve);
        const double t = detail::param_value(params, kind, "t", resolve);
        if (t < 0 || t != std::floor(t)) throw DomainError("gd profile: t must be a non-negative integer");
        return SpectralProfile::gd(alpha, static_cast<std::int64_t>(t));
    }
    throw DomainError("unknown profile kind '" + kind + "'");
}

// Control g(t) = exp(-eta t) - 1 whose Laplace transform is -eta / (lambda (lambda + eta)).
inline double pair_gf_control_krr(double eta, double t) {
    if (eta == 0.0) throw DomainError("pair_gf_control_krr: eta must be nonzero");
    if (!(t >= 0.0)) throw DomainError("pair_gf_control_krr: t must be >= 0");
    return std::expm1(-eta * t);
}

struct PairGFRun {
    double eta = 1.0;
    std::vector<double> lambda_grid;
    double horizon = 50.0;
    double step = 1e-3;
    bool control_enabled = true;   // false runs the plain flow with g = 0
    double tolerance = 1e-8;       // Richardson error bound for the instability flag
};

struct PairGFResult {
    std::vector<double> lambda;
    std::vector<double> q;            // q_T(lambda)
    std::vector<double> error_estimate;
    bool unstable = false;
};

namespace detail {

// Classical RK4 for p' = -lambda p, q' = -(1 + g(t)) lambda p over the whole grid.
inline std::vector<double> pair_gf_rk4(const PairGFRun& run, double step, std::int64_t steps) {
    const std::size_t n = run.lambda_grid.size();
    std::vector<double> p(n, 1.0), q(n, 1.0);
    auto g = [&](double t) { return run.control_enabled ? pair_gf_control_krr(run.eta, t) : 0.0; };
    for (std::int64_t s = 0; s < steps; ++s) {
        const double t0 = static_cast<double>(s) * step;
        const double g0 = 1.0 + g(t0), gm = 1.0 + g(t0 + 0.5 * step), g1 = 1.0 + g(t0 + step);
        for (std::size_t i = 0; i < n; ++i) {
            const double lam = run.lambda_grid[i];
            const double pi0 = p[i];
            if (pi0 == 0.0) continue;
            const double k1 = -lam * pi0;
            const double k2 = -lam * (pi0 + 0.5 * step * k1);
            const double k3 = -lam * (pi0 + 0.5 * step * k2);
            const double k4 = -lam * (pi0 + step * k3);
            const double l1 = g0 * k1, l2 = gm * k2, l3 = gm * k3, l4 = g1 * k4;
            p[i] = pi0 + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            q[i] += step / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
            if (std::abs(p[i]) < 1e-300) p[i] = 0.0;
        }
    }
    return q;
}

}  // namespace detail

// Integrates the pair of gradient flows realizing the ridge residual eta / (lambda + eta).
// The error estimate compares step h against step 2h (Richardson, order 4).
inline PairGFResult pair_gf_simulate(const PairGFRun& run) {
    if (!(run.horizon > 0.0) || !(run.step > 0.0) || !(run.step < run.horizon))
        throw DomainError("pair_gf_simulate: need 0 < step < horizon");
    if (run.control_enabled && run.eta == 0.0) throw DomainError("pair_gf_simulate: eta must be nonzero");
    for (double l : run.lambda_grid)
        if (!(l >= 0.0)) throw DomainError("pair_gf_simulate: grid must be non-negative");
    std::int64_t steps = static_cast<std::int64_t>(std::llround(run.horizon / run.step));
    if (steps % 2 == 1) ++steps;
    const double h = run.horizon / static_cast<double>(steps);
    const auto fine = detail::pair_gf_rk4(run, h, steps);
    const auto coarse = detail::pair_gf_rk4(run, 2.0 * h, steps / 2);
    PairGFResult out;
    out.lambda = run.lambda_grid;
    out.q = fine;
    out.error_estimate.resize(fine.size());
    for (std::size_t i = 0; i < fine.size(); ++i) {
        out.error_estimate[i] = std::abs(fine[i] - coarse[i]) / 15.0;
        if (!(out.error_estimate[i] <= run.tolerance) || run.lambda_grid[i] * 2.0 * h > 2.78) out.unstable = true;
    }
    if (out.unstable) warn("pair_gf_simulate: step-size error estimate exceeds tolerance");
    return out;
}

}  // namespace spectral_risk
