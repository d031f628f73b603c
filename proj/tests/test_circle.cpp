#include <gtest/gtest.h>

#include <random>

#include "spectral_risk/circle.hpp"
#include "spectral_risk/nmno.hpp"

using namespace spectral_risk;

namespace {

double rel(double a, double b) { return std::abs(a / b - 1.0); }

std::vector<double> slope_grid() { return {1e3, 3e3, 1e4, 3e4, 1e5}; }

}  // namespace

TEST(NDeformation, ReferenceValue) {
    const auto spec = PowerLawSpectrum::circle(2.0, 1.0);
    // 0.25 + (zeta(2, 1.5) + zeta(2, 1)) / 16, evaluated with mpmath.
    EXPECT_NEAR(n_deformation(spec, 4, 1, 1.0, 0.0), 0.4112335167120566091, 1e-13);
}

TEST(NDeformation, MatchesTruncatedLatticeSum) {
    const auto spec = PowerLawSpectrum::circle(1.7, 0.9);
    const std::int64_t N = 6;
    for (std::int64_t k = -2; k <= 3; ++k) {
        for (auto [a, b] : {std::pair{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {2.0, 0.0}}) {
            const double alpha = a * spec.nu + b * (spec.kappa + 1.0);
            double s = 0.0;
            const std::int64_t M = 200000;
            for (std::int64_t n = M; n >= -M; --n) s += std::pow(static_cast<double>(std::abs(k + N * n) + 1), -alpha);
            // Tail beyond |n| > M on both sides: 2 int_{M N}^inf x^{-alpha} dx / N.
            const double tail = 2.0 * std::pow(static_cast<double>(M * N), 1.0 - alpha) / ((alpha - 1.0) * N);
            EXPECT_NEAR(n_deformation(spec, N, k, a, b), s + tail, 1e-9 * (s + tail)) << k << " " << a << " " << b;
        }
    }
}

TEST(NDeformation, PeriodicInIndex) {
    const auto spec = PowerLawSpectrum::circle(1.5, 1.0);
    for (std::int64_t N : {5, 8}) {
        for (std::int64_t k = -7; k <= 7; ++k) {
            EXPECT_DOUBLE_EQ(n_deformation(spec, N, k, 1.0, 1.0), n_deformation(spec, N, k + N, 1.0, 1.0));
            EXPECT_DOUBLE_EQ(n_deformation(spec, N, k, 2.0, 0.0), n_deformation(spec, N, k - 3 * N, 2.0, 0.0));
        }
    }
}

TEST(NDeformation, VanishesForLargeN) {
    const auto spec = PowerLawSpectrum::circle(2.0, 1.0);
    EXPECT_NEAR(n_deformation(spec, 100'000'000, 0, 1.0, 0.0), 1.0, 1e-12);
}

TEST(NDeformation, RequiresConvergentSeries) {
    const auto spec = PowerLawSpectrum::circle(1.5, 1.0);
    EXPECT_THROW(n_deformation(spec, 4, 0, 0.5, 0.0), DomainError);
    EXPECT_THROW(n_deformation(PowerLawSpectrum::positive(1.5, 1.0), 4, 0, 1.0, 0.0), DomainError);
}

TEST(NDeformation, EmpiricalEigenvalueDominatesPopulation) {
    const auto spec = PowerLawSpectrum::circle(1.3, 1.0);
    for (std::int64_t N : {7, 16}) {
        for (std::int64_t k = -(N - 1) / 2; k <= N / 2; ++k) EXPECT_GE(empirical_eigenvalue(spec, N, k), eigenvalue_at(spec, k));
    }
}

TEST(CircleExactLoss, ZeroProfileGivesHalfTargetNorm) {
    const auto spec = PowerLawSpectrum::circle(1.5, 1.0);
    const auto l = exact_loss(spec, 32, 0.0, SpectralProfile::zero());
    EXPECT_NEAR(l.total, 0.5 * (2.0 * pi * pi / 6.0 - 1.0), 1e-12);
    EXPECT_NEAR(l.total, 1.14493406684822644, 1e-12);
}

TEST(CircleExactLoss, InterpolationNoiseTerm) {
    const auto spec = PowerLawSpectrum::circle(2.0, 0.7);
    const std::int64_t N = 9;
    const double s2 = 0.4;
    const auto l = exact_loss(spec, N, s2, SpectralProfile::interpolation());
    double expected = 0.0;
    for (std::int64_t k = -(N - 1) / 2; k <= N / 2; ++k) {
        const double lh = empirical_eigenvalue(spec, N, k);
        expected += n_deformation(spec, N, k, 2.0, 0.0) / (lh * lh);
    }
    expected *= 0.5 * s2 / static_cast<double>(N);
    EXPECT_NEAR(l.variance_noise, expected, 1e-14);
    EXPECT_NEAR(l.total, l.bias + l.variance_dataset + l.variance_noise, 1e-12);
    EXPECT_EQ(l.provenance, Provenance::exact);
}

TEST(CircleExactLoss, ReferenceValues) {
    // Class sums in mpmath: 2x20000 direct lattice terms plus Hurwitz remainders (30 digits).
    EXPECT_NEAR(exact_loss(PowerLawSpectrum::circle(2.0, 1.5), 8, 0.1, SpectralProfile::krr(0.05)).total,
                0.1385019379551325714, 1e-13);
    EXPECT_NEAR(exact_loss(PowerLawSpectrum::circle(1.5, 1.0), 7, 0.3, SpectralProfile::gf(20.0)).total,
                0.4345462733937392064, 1e-13);
    EXPECT_NEAR(exact_loss(PowerLawSpectrum::circle(3.0, 0.5), 6, 0.2, SpectralProfile::interpolation()).total,
                1.755280264662521044, 1e-12);
}

TEST(CircleOptimalProfile, Examples) {
    for (double nu : {1.3, 1.5, 2.0}) {
        const auto spec = PowerLawSpectrum::circle(nu, nu - 1.0);
        for (std::int64_t k = 0; k < 10; ++k) EXPECT_NEAR(optimal_profile_value(spec, 20, 0.0, k), 1.0, 1e-12);
    }
    EXPECT_LT(optimal_profile_value(PowerLawSpectrum::circle(1.5, 1.0), 16, 1e12, 3), 1e-10);
}

TEST(CircleOptimalProfile, MatchesOneDimensionalScan) {
    const auto spec = PowerLawSpectrum::circle(2.0, 2.5);
    const std::int64_t N = 4;
    const double hstar = optimal_profile_value(spec, N, 0.0, 1);
    // kappa > nu - 1 overlearns; independent lattice sums give h* = 1.382867922891564.
    EXPECT_NEAR(hstar, 1.382867922891564, 1e-12);
    double best_h = 0.0, best = 1e300;
    for (int i = 0; i <= 40000; ++i) {
        const double h = -2.0 + 4.0 * i / 40000.0;
        const auto l = exact_loss(spec, N, 0.0, [&](std::int64_t k, double) {
            return k == 1 ? std::make_pair(h, 1.0 - h) : std::make_pair(0.0, 1.0);
        });
        if (l.total < best) {
            best = l.total;
            best_h = h;
        }
    }
    EXPECT_NEAR(hstar, best_h, 1e-4);
}

TEST(CircleOptimalLoss, EqualsExactLossAtOptimum) {
    const auto spec = PowerLawSpectrum::circle(1.5, 1.0);
    for (std::int64_t N : {5, 16, 101}) {
        for (double s2 : {0.0, 0.5}) {
            const auto opt = optimal_loss(spec, N, s2);
            const auto at = exact_loss(spec, N, s2, [&](std::int64_t k, double) {
                const double h = optimal_profile_value(spec, N, s2, k);
                return std::make_pair(h, 1.0 - h);
            });
            EXPECT_NEAR(opt.total, at.total, 1e-12 * at.total);
            EXPECT_NEAR(opt.bias + opt.variance_dataset + opt.variance_noise, opt.total, 1e-12 * opt.total);
        }
    }
}

TEST(CircleOptimalLoss, CompletedSquareIdentityAndMinimality) {
    const auto spec = PowerLawSpectrum::circle(1.5, 1.0);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-0.5, 1.5);
    for (std::int64_t N : {8, 33}) {
        const double s2 = 0.7;
        const auto info = circle_classes(spec, N, s2);
        const double opt = optimal_loss(spec, N, s2).total;
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<double> hs(info.size());
            for (auto& h : hs) h = u(rng);
            const auto l = exact_loss(spec, N, s2, [&](std::int64_t k, double) {
                return std::make_pair(hs[static_cast<std::size_t>(k)], 1.0 - hs[static_cast<std::size_t>(k)]);
            });
            double dev = 0.0;
            for (std::size_t k = 0; k < info.size(); ++k) {
                const double d = hs[k] - info[k].h_opt;
                dev += 0.5 * info[k].weight * info[k].w * d * d;
            }
            EXPECT_NEAR(l.total - opt, dev, 1e-10);
            EXPECT_GE(l.total, opt);
        }
    }
}

TEST(CircleOptimalLoss, ApproachesNmnoOptimum) {
    const auto spec = PowerLawSpectrum::circle(1.5, 1.0);
    double prev = 1e300;
    for (std::int64_t N : {64, 128, 256, 1024}) {
        const double gap = rel(optimal_loss(spec, N, 1.0).total, nmno_optimal_loss(spec, N, 1.0).total);
        EXPECT_LT(gap, prev) << N;
        if (N >= 128) EXPECT_LT(gap, 0.2) << N;
        prev = gap;
    }
}

TEST(CircleLimit, OptimalProfileOverlearningTransition) {
    for (double nu : {1.3, 1.5, 1.8}) {
        for (int i = 1; i <= 100; ++i) {
            const double tau = i / 101.0;
            EXPECT_NEAR(circle_optimal_profile_limit(nu, nu - 1.0, tau), 1.0, 1e-12);
            EXPECT_GT(circle_optimal_profile_limit(nu, nu - 1.0 + 0.2, tau), 1.0);
            EXPECT_LT(circle_optimal_profile_limit(nu, nu - 1.0 - 0.2, tau), 1.0);
        }
    }
    EXPECT_THROW(circle_optimal_profile_limit(1.5, 3.0, 0.2), DomainError);
    EXPECT_THROW(circle_optimal_profile_limit(1.5, 1.0, 0.0), DomainError);
}

TEST(CircleLimit, OptimalProfileMatchesDiscreteValue) {
    const double nu = 1.5, kappa = 1.0, tau = 0.25;
    const std::int64_t N = 100000;
    const auto spec = PowerLawSpectrum::circle(nu, kappa);
    const double discrete = optimal_profile_value(spec, N, 0.0, static_cast<std::int64_t>(tau * N) - 1);
    EXPECT_NEAR(circle_optimal_profile_limit(nu, kappa, tau), discrete, 1e-3);
}

TEST(CircleLimit, NoiselessConstantMatchesExactLoss) {
    const double nu = 1.5, kappa = 0.5;
    const double C = noiseless_limit_loss_nonsaturated(optimal_tau_profile(nu, kappa), nu, kappa);
    const std::int64_t N = 100000;
    const auto spec = PowerLawSpectrum::circle(nu, kappa);
    const auto l = exact_loss(spec, N, 0.0, [&](std::int64_t k, double) {
        const double h = k == 0 ? 1.0 : circle_optimal_profile_limit(nu, kappa, static_cast<double>(k) / N);
        return std::make_pair(h, 1.0 - h);
    });
    EXPECT_LT(rel(l.total * std::pow(static_cast<double>(N), kappa), C), 0.03);
}

TEST(CircleLimit, InterpolationConstantBoundsOptimum) {
    for (double kappa : {0.5, 0.9, 1.2}) {
        const double nu = 1.5;
        const double opt = noiseless_limit_loss_nonsaturated(optimal_tau_profile(nu, kappa), nu, kappa);
        const double interp = noiseless_limit_loss_nonsaturated(scaled_profile(SpectralProfile::interpolation()), nu, kappa);
        EXPECT_GE(interp, opt * (1.0 - 1e-10));
        if (kappa == 0.5) EXPECT_NEAR(interp, opt, 1e-9 * opt);
        else EXPECT_GT(interp, opt);
    }
    EXPECT_THROW(noiseless_limit_loss_nonsaturated(optimal_tau_profile(1.5, 0.5), 1.5, 3.0), DomainError);
}

TEST(CircleLimit, ScaledCatalogProfileConstant) {
    // Ridge with eta = eta' N^{-nu}: the exact loss times N^kappa approaches the constant.
    const double nu = 2.0, kappa = 1.0, eta_prime = 0.3;
    const double C = noiseless_limit_loss_nonsaturated(scaled_profile(SpectralProfile::krr(eta_prime)), nu, kappa);
    const std::int64_t N = 50000;
    const auto l = exact_loss(PowerLawSpectrum::circle(nu, kappa), N, 0.0,
                              SpectralProfile::krr(eta_prime * std::pow(static_cast<double>(N), -nu)));
    EXPECT_LT(rel(l.total * std::pow(static_cast<double>(N), kappa), C), 0.03);
}

TEST(CircleSaturated, RidgeMinimizer) {
    const auto s = saturated_krr(1.5, 3.5, 100);
    EXPECT_NEAR(s.eta_star, -5.2247506973709767e-3, 1e-15);
    EXPECT_NEAR(s.eta_star, -2.0 * riemann_zeta(1.5) * 1e-3, 1e-16);
    EXPECT_THROW(saturated_krr(1.5, 2.0, 100), DomainError);
}

TEST(CircleSaturated, GeneralFormulaMatchesClosedForm) {
    const double nu = 1.2, kappa = 5.0;
    const auto spec = PowerLawSpectrum::circle(nu, kappa);
    for (std::int64_t N : {100, 1000}) {
        const auto s = saturated_krr(nu, kappa, N);
        for (double f : {1.0, 0.5, 2.0}) {
            const double eta = f * s.eta_star;
            // lambda (1 - h) = eta exactly reproduces the ridge closed form.
            const double general = noiseless_loss_saturated(spec, N, [&](double lam) { return eta / lam; });
            EXPECT_NEAR(general, s.loss_at(eta), 1e-10 * general);
        }
        EXPECT_NEAR(s.loss_at(s.eta_star) * s.scale * s.scale, s.constant, 1e-12 * s.constant);
    }
    EXPECT_THROW(noiseless_loss_saturated(PowerLawSpectrum::circle(1.5, 1.0), 100, SpectralProfile::krr(0.1)),
                 DomainError);
}

TEST(CircleSaturated, ExactLossApproachesConstant) {
    const double nu = 1.2, kappa = 5.0;
    const std::int64_t N = 100000;
    const auto s = saturated_krr(nu, kappa, N);
    const auto l = exact_loss(PowerLawSpectrum::circle(nu, kappa), N, 0.0, SpectralProfile::krr(s.eta_star));
    EXPECT_LT(rel(l.total * s.scale * s.scale, s.constant), 0.10);
}

TEST(CircleRates, OptimalLossSlopes) {
    struct Case {
        double nu, kappa, s2, slope;
    };
    for (const auto& c : {Case{1.5, 1.0, 1.0, -0.5}, Case{1.5, 0.5, 0.0, -0.5}, Case{1.2, 5.0, 0.0, -2.4}}) {
        const auto spec = PowerLawSpectrum::circle(c.nu, c.kappa);
        std::vector<double> xs = slope_grid(), ys;
        for (double N : xs) ys.push_back(optimal_loss(spec, static_cast<std::int64_t>(N), c.s2).total);
        EXPECT_NEAR(loglog_slope(xs, ys), c.slope, 0.05) << c.nu << " " << c.kappa << " " << c.s2;
    }
}

TEST(CircleExactLoss, Errors) {
    EXPECT_THROW(exact_loss(PowerLawSpectrum::circle(1.5, 1.0), 1, 0.0, SpectralProfile::krr(0.1)), DomainError);
    EXPECT_THROW(exact_loss(PowerLawSpectrum::circle(1.5, 1.0), 8, -1.0, SpectralProfile::krr(0.1)), DomainError);
    EXPECT_THROW(exact_loss(PowerLawSpectrum::positive(1.5, 1.0), 8, 0.0, SpectralProfile::krr(0.1)), DomainError);
    // Negative ridge with a pole at an empirical eigenvalue.
    const auto spec = PowerLawSpectrum::circle(1.5, 1.0);
    const double lh = empirical_eigenvalue(spec, 8, 2);
    EXPECT_THROW(exact_loss(spec, 8, 0.0, SpectralProfile::krr(-lh)), SingularityError);
}
