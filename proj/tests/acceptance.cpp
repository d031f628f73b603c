// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit status if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "spectral_risk/circle.hpp"
#include "spectral_risk/monte_carlo.hpp"
#include "spectral_risk/nmno.hpp"
#include "spectral_risk/profiles.hpp"
#include "spectral_risk/quadrature.hpp"
#include "spectral_risk/special_functions.hpp"
#include "spectral_risk/wishart.hpp"

using namespace spectral_risk;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[fail] " << what << "; ";
        }
    }
    template <class T>
    Outcome& note(const T& v) {
        detail << v;
        return *this;
    }
};

double rel(double a, double b) { return std::abs(a / b - 1.0); }

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return buf;
}

// Minimizes f over log(param) in [log(center) - span, log(center) + span].
double argmin_log(const std::function<double(double)>& f, double center, double span = 5.0) {
    auto g = [&](double y) { return f(std::exp(y)); };
    const double c = std::log(center);
    return std::exp(boost::math::tools::brent_find_minima(g, c - span, c + span, 40).first);
}

// 1. Wishart functional with a ridge profile against the closed-form ridge risk.
void krr_sanity(Outcome& o) {
    const auto spec = PowerLawSpectrum::continuous(1.5, 1.0);
    double worst = 0.0;
    for (double N : {1e2, 1e3, 1e4}) {
        const auto sol = solve_stieltjes(spec, N);
        for (double eta : {1e-3, 1e-2, 1e-1})
            for (double s2 : {0.0, 0.5, 1.0}) {
                const double f = loss_functional(sol, s2, SpectralProfile::krr(eta)).total;
                const double c = exact_krr_loss(spec, N, s2, eta).total;
                worst = std::max(worst, rel(f, c));
                o.require(rel(f, c) < 1e-3, "N=" + fmt(N) + " eta=" + fmt(eta) + " s2=" + fmt(s2));
            }
    }
    o.note("max rel err " + fmt(worst));
}

// 2. Noisy rates from the optimal-parameter loss of NMNO and the Circle model.
void noisy_rates(Outcome& o) {
    struct Case {
        double nu, kappa;
        bool gf;
        double rate;
    };
    const std::vector<Case> cases{{1.5, 1.0, false, 0.5}, {1.5, 1.0, true, 0.5},
                                  {1.2, 5.0, false, 2.4 / 3.4}, {1.2, 5.0, true, 5.0 / 6.0}};
    const std::vector<double> grid = logspace(1e3, 1e5, 5);
    for (const auto& c : cases) {
        const auto circle = PowerLawSpectrum::circle(c.nu, c.kappa);
        const auto positive = PowerLawSpectrum::positive(c.nu, c.kappa, 200000);
        for (int model = 0; model < 2; ++model) {
            std::vector<double> ys;
            for (double Nd : grid) {
                const auto N = static_cast<std::int64_t>(Nd);
                auto profile = [&](double p) { return c.gf ? SpectralProfile::gf(p) : SpectralProfile::krr(p); };
                auto loss = [&](double p) {
                    return model == 0 ? nmno_loss(positive, N, 1.0, profile(p)).total
                                      : exact_loss(circle, N, 1.0, profile(p)).total;
                };
                const double center = c.gf ? std::pow(Nd, c.nu / (c.kappa + 1.0))
                                           : std::pow(Nd, -(c.kappa > 2.0 * c.nu ? c.nu / (2.0 * c.nu + 1.0)
                                                                                  : c.nu / (c.kappa + 1.0)));
                ys.push_back(loss(argmin_log(loss, center)));
            }
            const double slope = loglog_slope(grid, ys);
            const std::string name = std::string(model == 0 ? "nmno" : "circle") + (c.gf ? " gf" : " krr") + " (" +
                                     fmt(c.nu) + "," + fmt(c.kappa) + ")";
            o.note(name + " slope " + fmt(slope) + "; ");
            o.require(std::abs(slope + c.rate) < 0.05, name + " expected " + fmt(-c.rate));
        }
    }
}

// 3. Noisy equivalence of Circle, Gaussian and Cosine features with NMNO.
void nmno_equivalence(Outcome& o) {
    const double nu = 1.5, s2 = 1.0;
    const std::int64_t mc_N = 512, mc_P = 8192, reps = 100;
    for (double kappa : {0.5, 1.0})
        for (bool gf : {false, true}) {
            // Constant of the optimally scaled parameter from the NMNO limit.
            auto constant = [&](double p) {
                return gf ? nmno_limit_constant(NmnoGf{p}, nu, kappa, s2, NmnoPhase::nonsaturated)
                          : nmno_limit_constant(NmnoKrr{p}, nu, kappa, s2, NmnoPhase::nonsaturated);
            };
            const double pc = argmin_log(constant, 1.0, 4.0);
            auto profile = [&](double N) {
                return gf ? SpectralProfile::gf(pc * std::pow(N, nu / (kappa + 1.0)))
                          : SpectralProfile::krr(pc * std::pow(N, -nu / (kappa + 1.0)));
            };
            const std::string name = std::string(gf ? "gf" : "krr") + " kappa=" + fmt(kappa);
            const auto circle = PowerLawSpectrum::circle(nu, kappa, true);
            const auto positive = PowerLawSpectrum::positive(nu, kappa);
            double prev = 1e300, last = 0.0;
            bool monotone = true;
            for (int e = 6; e <= 14; ++e) {
                const std::int64_t N = std::int64_t{1} << e;
                const auto p = profile(static_cast<double>(N));
                const double gap = rel(exact_loss(circle, N, s2, p).total, nmno_loss(positive, N, s2, p).total);
                monotone = monotone && gap < prev;
                prev = last = gap;
            }
            o.note(name + ": gap(2^14) " + fmt(last) + (monotone ? " decreasing" : " NOT decreasing"));
            o.require(monotone, name + " circle gap not decreasing");
            o.require(last < 0.15, name + " circle gap at 2^14 is " + fmt(last));

            const auto trunc = PowerLawSpectrum::positive(nu, kappa, mc_P);
            const auto p = profile(static_cast<double>(mc_N));
            const double nmno = nmno_loss(trunc, mc_N, s2, p).total;
            const double theory = loss_functional(WishartModel(trunc, static_cast<double>(mc_N)), s2, p).total;
            for (auto model : {FeatureModel::gaussian, FeatureModel::cosine}) {
                const auto est = mc_expected_loss(model, trunc, p, s2, mc_N, mc_P, reps, 20240917);
                const double z = (est.mean - nmno) / est.standard_error;
                o.note(", " + to_string(model) + " z_nmno " + fmt(z, 3) + " (z_wishart " +
                       fmt((est.mean - theory) / est.standard_error, 3) + ")");
                o.require(std::abs(z) < 3.0, name + " " + to_string(model) + " MC vs NMNO z=" + fmt(z, 3));
            }
            o.note("; ");
        }
}

// 4. Noiseless Circle constants in both phases.
void noiseless_circle(Outcome& o) {
    const std::int64_t N = 100000;
    const double Nd = static_cast<double>(N);
    for (auto [nu, kappa] : {std::pair{1.5, 0.5}, std::pair{1.5, 1.2}}) {
        const double C = noiseless_limit_loss_nonsaturated(optimal_tau_profile(nu, kappa), nu, kappa);
        const auto l = exact_loss(PowerLawSpectrum::circle(nu, kappa), N, 0.0, [&](std::int64_t k, double) {
            const double h = k == 0 ? 1.0 : circle_optimal_profile_limit(nu, kappa, static_cast<double>(k) / Nd);
            return std::make_pair(h, 1.0 - h);
        });
        const double err = rel(l.total * std::pow(Nd, kappa), C);
        o.note("(" + fmt(nu) + "," + fmt(kappa) + ") rel " + fmt(err) + "; ");
        o.require(err < 0.05, "non-saturated constant (" + fmt(nu) + "," + fmt(kappa) + ")");
    }
    const auto s = saturated_krr(1.2, 5.0, N);
    const double l = exact_loss(PowerLawSpectrum::circle(1.2, 5.0), N, 0.0, SpectralProfile::krr(s.eta_star)).total;
    const double err = rel(l * std::pow(Nd, 2.4), s.constant);
    o.note("saturated rel " + fmt(err));
    o.require(std::abs(s.eta_star + 2.0 * riemann_zeta(1.2) * std::pow(Nd, -1.2)) < 1e-12 * std::abs(s.eta_star),
              "saturated eta*");
    o.require(err < 0.10, "saturated constant");
}

// 5. Overlearning transition of the limiting optimal profiles.
void overlearning(Outcome& o) {
    double worst = 0.0;
    for (double nu : {1.3, 1.5, 1.8})
        for (int i = 1; i <= 100; ++i) {
            const double tau = i / 101.0, phi = pi * i / 101.0;
            const double k0 = nu - 1.0;
            const double c0 = circle_optimal_profile_limit(nu, k0, tau), w0 = wishart_optimal_profile(nu, k0, phi);
            worst = std::max({worst, std::abs(c0 - 1.0), std::abs(w0 - 1.0)});
            o.require(std::abs(c0 - 1.0) < 1e-12 && std::abs(w0 - 1.0) < 1e-12, "transition value nu=" + fmt(nu));
            o.require(circle_optimal_profile_limit(nu, k0 + 0.2, tau) > 1.0 && wishart_optimal_profile(nu, k0 + 0.2, phi) > 1.0,
                      "overlearning above transition nu=" + fmt(nu));
            o.require(circle_optimal_profile_limit(nu, k0 - 0.2, tau) < 1.0 && wishart_optimal_profile(nu, k0 - 0.2, phi) < 1.0,
                      "underlearning below transition nu=" + fmt(nu));
        }
    o.note("max |h*-1| at transition " + fmt(worst));
}

// 6. Stieltjes solver: residuals, Herglotz property, left edge and density.
void stieltjes(Outcome& o) {
    double worst_res = 0.0;
    for (auto [nu, kappa, N] : {std::tuple{1.5, 1.0, 1e3}, std::tuple{2.0, 1.0, 1e4}, std::tuple{3.0, 2.0, 1e2}}) {
        const auto sol = solve_stieltjes(PowerLawSpectrum::continuous(nu, kappa), N);
        worst_res = std::max(worst_res, sol.max_residual());
    }
    o.require(worst_res < 1e-10, "grid fixed-point residual " + fmt(worst_res));

    const WishartModel cont(PowerLawSpectrum::continuous(1.5, 1.0), 100.0);
    const WishartModel disc(materialize(PowerLawSpectrum::positive(1.5, 1.0, 200)), 50.0);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> re(-0.5, 1.5), lim(-5.0, 0.0);
    int herglotz_bad = 0;
    for (int i = 0; i < 1000; ++i) {
        const cplx z(re(rng), std::pow(10.0, lim(rng)));
        const auto& m = i % 2 == 0 ? cont : disc;
        const cplx r = stieltjes_at(m, z);
        if (!(r.imag() > 0.0)) ++herglotz_bad;
        worst_res = std::max(worst_res, fixed_point_residual(m, z, r));
    }
    o.require(herglotz_bad == 0, std::to_string(herglotz_bad) + " Herglotz violations");
    o.require(worst_res < 1e-10, "random-point residual " + fmt(worst_res));

    double worst_edge = 0.0;
    for (double N : {1e2, 1e3, 1e4}) {
        const double closed = std::pow(pi / 4.0, 2) / (N * N);
        worst_edge = std::max(worst_edge, rel(solve_phase_interior(2.0, N, 1e-4).lambda, closed));
    }
    o.require(worst_edge < 1e-3, "left edge rel " + fmt(worst_edge));

    const double nu = 2.0, N = 1e4;
    const auto sol = solve_stieltjes(PowerLawSpectrum::continuous(nu, 1.0), N);
    double worst_density = 0.0;
    int checked = 0;
    for (const auto& n : sol.nodes) {
        const double s = -std::log(n.lambda) / std::log(N);
        if (s < 0.2 * nu || s > 0.8 * nu) continue;
        const double im_r = (1.0 / n.e.x).imag();
        worst_density = std::max(
            worst_density, rel(N * im_r / pi, density_at(PowerLawSpectrum::continuous(nu, 1.0), n.lambda, DensityKind::eigenvalue)));
        ++checked;
    }
    o.require(checked > 10 && worst_density < 0.02, "density rel " + fmt(worst_density));
    o.note("residual " + fmt(worst_res) + ", edge rel " + fmt(worst_edge) + ", density rel " + fmt(worst_density) + " on " +
           std::to_string(checked) + " nodes");
}

// 7. Completed-square identity and NMNO pointwise optimality.
void completed_square(Outcome& o) {
    const auto spec = PowerLawSpectrum::circle(1.5, 1.0);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-0.5, 1.5);
    double worst = 0.0;
    for (std::int64_t N : {8, 33}) {
        const double s2 = 0.7;
        const auto info = circle_classes(spec, N, s2);
        const double opt = optimal_loss(spec, N, s2).total;
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<double> hs(info.size());
            for (auto& h : hs) h = u(rng);
            const auto l = exact_loss(spec, N, s2, [&](std::int64_t k, double) {
                return std::make_pair(hs[static_cast<std::size_t>(k)], 1.0 - hs[static_cast<std::size_t>(k)]);
            });
            double dev = 0.0;
            for (std::size_t k = 0; k < info.size(); ++k)
                dev += 0.5 * info[k].weight * info[k].w * (hs[k] - info[k].h_opt) * (hs[k] - info[k].h_opt);
            worst = std::max(worst, std::abs(l.total - opt - dev));
        }
    }
    o.require(worst < 1e-10, "completed square deviation " + fmt(worst));
    int beaten = 0, compared = 0;
    for (const auto& nspec : {PowerLawSpectrum::positive(1.5, 1.0), PowerLawSpectrum::circle(1.5, 0.5),
                              PowerLawSpectrum::continuous(2.0, 3.0)}) {
        const std::int64_t N = 500;
        const double best = nmno_optimal_loss(nspec, N, 1.0).total;
        for (double e : logspace(1e-6, 1.0, 60))
            for (const auto& p : {SpectralProfile::krr(e), SpectralProfile::gf(1.0 / e), SpectralProfile::gd(0.5, static_cast<std::int64_t>(1.0 / e))}) {
                ++compared;
                if (nmno_loss(nspec, N, 1.0, p).total < best) ++beaten;
            }
    }
    o.require(beaten == 0, std::to_string(beaten) + " grid competitors beat the NMNO optimum");
    o.note("max deviation " + fmt(worst) + ", NMNO optimum vs " + std::to_string(compared) + " competitors");
}

// 8. Pair of gradient flows realizing the ridge profile.
void pair_gf(Outcome& o) {
    for (double eta : {0.1, 1.0}) {
        PairGFRun run;
        run.eta = eta;
        run.lambda_grid = logspace(1e-3, 10.0, 25);
        run.horizon = 50.0 / eta;
        run.step = 1e-3;
        const auto r = pair_gf_simulate(run);
        double worst = 0.0;
        for (std::size_t i = 0; i < r.q.size(); ++i) worst = std::max(worst, std::abs(r.q[i] - eta / (r.lambda[i] + eta)));
        o.note("eta=" + fmt(eta) + " max err " + fmt(worst) + "; ");
        o.require(!r.unstable && worst < 1e-3, "eta=" + fmt(eta));
    }
}

// 9. Special functions.
void special_functions(Outcome& o) {
    double worst_rec = 0.0;
    for (double a = 1.1; a <= 6.0 + 1e-9; a += 0.1)
        for (double x = 0.1; x <= 10.0 + 1e-9; x += 0.1)
            worst_rec = std::max(worst_rec, std::abs(hurwitz_zeta(a, x) - hurwitz_zeta(a, x + 1.0) - std::pow(x, -a)) /
                                                std::max(1.0, std::pow(x, -a)));
    o.require(worst_rec < 1e-12, "Hurwitz recurrence " + fmt(worst_rec));
    const double spot = std::max({std::abs(riemann_zeta(2.0) - pi * pi / 6.0),
                                  std::abs(hurwitz_zeta(2.0, 1.5) - (pi * pi / 2.0 - 4.0)),
                                  std::abs(riemann_zeta(4.0) - std::pow(pi, 4) / 90.0)});
    o.require(spot < 1e-12, "closed-form spot values " + fmt(spot));

    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ua(-0.95, 0.95), ure(-2.0, 2.0), uim(0.0, 1.0);
    QuadratureOptions opt;
    opt.rel_tol = 1e-12;
    opt.abs_tol = 0.0;
    opt.max_intervals = 20000;
    double worst_f = 0.0;
    for (int checked = 0; checked < 200;) {
        const double a = ua(rng);
        if (std::abs(a) < 0.02) continue;
        const cplx x(ure(rng), uim(rng));
        if (std::abs(x.imag()) < 1e-3 && x.real() <= 0.0 && x.real() >= -1.0) continue;
        auto f = [&](double v) -> cplx {
            const double lam = std::pow(v, 1.0 / (1.0 + a));
            return 1.0 / ((lam + x) * (1.0 + a));
        };
        std::vector<double> bps;
        if (x.real() < 0.0 && x.real() > -1.0) bps.push_back(std::pow(-x.real(), 1.0 + a));
        const cplx ref = integrate_or_throw(f, 0.0, 1.0, opt, bps);
        worst_f = std::max(worst_f, std::abs(power_law_tail_integral(a, x) - ref) / std::abs(ref));
        ++checked;
    }
    o.require(worst_f < 1e-8, "F_a vs quadrature " + fmt(worst_f));
    o.note("recurrence " + fmt(worst_rec) + ", spot " + fmt(spot) + ", F_a rel " + fmt(worst_f));
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        void (*run)(Outcome&);
    };
    const Criterion criteria[] = {
        {"1 KRR sanity", krr_sanity},
        {"2 noisy rates", noisy_rates},
        {"3 NMNO equivalence", nmno_equivalence},
        {"4 noiseless circle constants", noiseless_circle},
        {"5 overlearning transition", overlearning},
        {"6 Stieltjes solver", stieltjes},
        {"7 completed square and optimality", completed_square},
        {"8 pair of gradient flows", pair_gf},
        {"9 special functions", special_functions},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "[exception] " << e.what();
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s criterion %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.str().c_str(), dt);
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
