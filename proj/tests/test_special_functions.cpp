#include <gtest/gtest.h>

#include <random>

#include "spectral_risk/quadrature.hpp"
#include "spectral_risk/special_functions.hpp"

using namespace spectral_risk;

namespace {

// Reference values computed with mpmath at 40 digits.
constexpr double zeta_1_5 = 2.612375348685488343;
constexpr double hurwitz_2_half = 4.934802200544679309;
constexpr double hurwitz_2_three_halves = 0.9348022005446793094;
constexpr double sym_1_5_quarter = 13.51008949324358515;
constexpr double hurwitz_3_3_small = 6474.994197351218880;
constexpr double hurwitz_1_1_shift = 8.230945517633719232;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }
double rel(cplx a, cplx b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST(RiemannZeta, ClosedFormValues) {
    EXPECT_NEAR(riemann_zeta(2.0), pi * pi / 6.0, 1e-12);
    EXPECT_NEAR(riemann_zeta(4.0), std::pow(pi, 4) / 90.0, 1e-12);
    EXPECT_NEAR(riemann_zeta(1.5), zeta_1_5, 1e-12);
}

TEST(RiemannZeta, RejectsAlphaAtOrBelowOne) {
    EXPECT_THROW(riemann_zeta(1.0), DomainError);
    EXPECT_THROW(riemann_zeta(0.5), DomainError);
    EXPECT_THROW(riemann_zeta(1.0 + 1e-10), DomainError);
}

TEST(HurwitzZeta, SpotValues) {
    for (double a : {1.5, 2.0, 3.0}) EXPECT_EQ(hurwitz_zeta(a, 1.0), riemann_zeta(a));
    EXPECT_NEAR(hurwitz_zeta(2.0, 0.5), pi * pi / 2.0, 1e-12);
    EXPECT_NEAR(hurwitz_zeta(2.0, 0.5), hurwitz_2_half, 1e-12);
    EXPECT_NEAR(hurwitz_zeta(2.0, 1.5), pi * pi / 2.0 - 4.0, 1e-12);
    EXPECT_NEAR(hurwitz_zeta(2.0, 1.5), hurwitz_2_three_halves, 1e-12);
    EXPECT_LT(rel(hurwitz_zeta(3.3, 0.07), hurwitz_3_3_small), 1e-13);
    EXPECT_NEAR(hurwitz_zeta(1.1, 7.5), hurwitz_1_1_shift, 1e-11);
}

TEST(HurwitzZeta, RecurrenceOnGrid) {
    for (double a = 1.1; a <= 6.0 + 1e-9; a += 0.1) {
        for (double x = 0.1; x <= 10.0 + 1e-9; x += 0.1) {
            const double lhs = hurwitz_zeta(a, x) - hurwitz_zeta(a, x + 1.0);
            EXPECT_NEAR(lhs, std::pow(x, -a), 1e-12 * std::max(1.0, std::pow(x, -a))) << "a=" << a << " x=" << x;
        }
    }
}

TEST(HurwitzZeta, StrictlyDecreasingInShift) {
    for (double a : {1.05, 1.5, 2.5, 6.0}) {
        double prev = hurwitz_zeta(a, 0.05);
        for (double x = 0.1; x < 20.0; x += 0.05) {
            const double v = hurwitz_zeta(a, x);
            EXPECT_LT(v, prev);
            prev = v;
        }
    }
}

TEST(HurwitzZeta, RejectsInvalidArguments) {
    EXPECT_THROW(hurwitz_zeta(2.0, 0.0), DomainError);
    EXPECT_THROW(hurwitz_zeta(2.0, -1.0), DomainError);
    EXPECT_THROW(hurwitz_zeta(0.9, 1.0), DomainError);
}

TEST(SymmetrizedHurwitzZeta, Values) {
    EXPECT_NEAR(symmetrized_hurwitz_zeta(2.0, 0.5), pi * pi, 1e-12);
    EXPECT_NEAR(symmetrized_hurwitz_zeta(1.5, 0.25), sym_1_5_quarter, 1e-10);
    EXPECT_THROW(symmetrized_hurwitz_zeta(2.0, 0.0), DomainError);
    EXPECT_THROW(symmetrized_hurwitz_zeta(2.0, 1.0), DomainError);
}

TEST(SymmetrizedHurwitzZeta, BitIdenticalUnderReflection) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ua(1.05, 6.0), ut(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = ua(rng);
        // Dyadic tau keeps 1 - (1 - tau) == tau exact.
        const double tau = std::ldexp(std::floor(ut(rng) * 1024.0) + 0.5, -10);
        EXPECT_EQ(symmetrized_hurwitz_zeta(a, tau), symmetrized_hurwitz_zeta(a, 1.0 - tau));
    }
}

TEST(PowerLawTailIntegral, ReferenceValues) {
    // Values from the hypergeometric representation x^{-1} 2F1(1, a+1; a+2; -1/x) / (a+1).
    struct Case {
        double a;
        cplx x, expected;
    };
    const Case cases[] = {
        {0.5, {1.0, 0.0}, {0.4292036732051033808, 0.0}},
        {0.3, {0.2, 0.5}, {0.6732761441321887180, -0.5369018844633899311}},
        {-0.7, {-1.5, 0.0}, {-2.822515895155178152, 0.0}},
        {0.8, {-0.5, 1e-3}, {0.9332570015133995359, -1.801869561349167754}},
        {-0.25, {-2.0, 0.7}, {-0.7142336566115679497, -0.3397826093074943547}},
        {0.6, {1e-3, 0.0}, {1.616812714847214904, 0.0}},
        {-0.5, {1e-6, 1e-14}, {3139.592654256459387, -1.570796326128230654e-5}},
    };
    for (const auto& c : cases) EXPECT_LT(rel(power_law_tail_integral(c.a, c.x), c.expected), 1e-10) << c.a << " " << c.x;
    EXPECT_NEAR(power_law_tail_integral(0.5, 1.0).real(), 2.0 - pi / 2.0, 1e-12);
}

TEST(PowerLawTailIntegral, LargeArgumentLeadingOrder) {
    const double X = 1e8;
    EXPECT_LT(rel(power_law_tail_integral(-0.5, X).real(), 2.0 / X), 1e-7);
}

TEST(PowerLawTailIntegral, SmallArgumentExpansion) {
    for (double a : {-0.6, -0.3, 0.2, 0.7}) {
        for (cplx x : {cplx(0.05, 0.0), cplx(0.01, 0.03), cplx(-0.02, 0.01), cplx(1e-4, 1e-5)}) {
            const cplx series = -(pi / std::sin(pi * a)) * std::pow(x, a) + 1.0 / a + x / (1.0 - a);
            // The remainder is O(x^2) with a coefficient of order 1/(2 - a).
            EXPECT_LT(std::abs(power_law_tail_integral(a, x) - series), 2.0 * std::norm(x) + 1e-12);
        }
    }
}

TEST(PowerLawTailIntegral, DomainErrors) {
    EXPECT_THROW(power_law_tail_integral(0.0, 1.0), DomainError);
    EXPECT_THROW(power_law_tail_integral(1.0, 1.0), DomainError);
    EXPECT_THROW(power_law_tail_integral(0.5, cplx(-0.5, 0.0)), DomainError);
    EXPECT_THROW(power_law_tail_integral(0.5, cplx(1.0, -0.1)), DomainError);
}

TEST(PowerLawTailIntegral, AgreesWithAdaptiveQuadrature) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ua(-0.95, 0.95), ure(-2.0, 2.0), uim(0.0, 1.0);
    QuadratureOptions opt;
    opt.rel_tol = 1e-12;
    opt.abs_tol = 0.0;
    opt.max_intervals = 20000;
    int checked = 0;
    while (checked < 200) {
        const double a = ua(rng);
        if (std::abs(a) < 0.02) continue;
        const cplx x(ure(rng), uim(rng));
        if (std::abs(x.imag()) < 1e-3 && x.real() <= 0.0 && x.real() >= -1.0) continue;
        // Substitute lambda = u^{1/(1+a)} to remove the endpoint singularity.
        auto f = [&](double u) -> cplx {
            const double lam = std::pow(u, 1.0 / (1.0 + a));
            return 1.0 / ((lam + x) * (1.0 + a));
        };
        std::vector<double> bps;
        if (x.real() < 0.0 && x.real() > -1.0) bps.push_back(std::pow(-x.real(), 1.0 + a));
        const cplx ref = integrate_or_throw(f, 0.0, 1.0, opt, bps);
        EXPECT_LT(rel(power_law_tail_integral(a, x), ref), 1e-8) << "a=" << a << " x=" << x;
        ++checked;
    }
}
