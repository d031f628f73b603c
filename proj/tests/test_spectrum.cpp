#include <gtest/gtest.h>

#include <algorithm>

#include "spectral_risk/spectrum.hpp"

using namespace spectral_risk;

TEST(Spectrum, EigenvalueExamples) {
    const auto c = PowerLawSpectrum::circle(2.0, 1.0);
    EXPECT_DOUBLE_EQ(eigenvalue_at(c, 1), 0.25);
    EXPECT_DOUBLE_EQ(eigenvalue_at(c, -3), 0.0625);
    EXPECT_DOUBLE_EQ(eigenvalue_at(PowerLawSpectrum::positive(1.5, 1.0), 4), 0.125);
}

TEST(Spectrum, CoefficientExamples) {
    const auto c = PowerLawSpectrum::circle(2.0, 1.0);
    EXPECT_DOUBLE_EQ(coefficient_sq_at(c, 0), 1.0);
    EXPECT_DOUBLE_EQ(coefficient_sq_at(c, 1), 0.25);
    EXPECT_NEAR(coefficient_sq_at(PowerLawSpectrum::positive(1.5, 1.5), 2), 0.17677669529663688, 1e-15);
}

TEST(Spectrum, DensityExamples) {
    EXPECT_DOUBLE_EQ(density_at(PowerLawSpectrum::continuous(2.0, 1.0), 1.0, DensityKind::eigenvalue), 0.5);
    EXPECT_DOUBLE_EQ(density_at(PowerLawSpectrum::continuous(2.0, 1.0), 0.25, DensityKind::coefficient), 1.0);
    EXPECT_DOUBLE_EQ(density_at(PowerLawSpectrum::continuous(1.5, 5.0), 1.0, DensityKind::coefficient), 2.0 / 3.0);
    EXPECT_THROW(density_at(PowerLawSpectrum::continuous(2.0, 1.0), 0.0, DensityKind::eigenvalue), DomainError);
    EXPECT_THROW(density_at(PowerLawSpectrum::continuous(2.0, 1.0), 1.5, DensityKind::eigenvalue), DomainError);
    EXPECT_THROW(density_at(PowerLawSpectrum::circle(2.0, 1.0), 0.5, DensityKind::eigenvalue), DomainError);
}

TEST(Spectrum, LambdaMinExamples) {
    EXPECT_NEAR(lambda_min(PowerLawSpectrum::continuous(2.0, 1.0), 100), 1e-4, 1e-18);
    EXPECT_DOUBLE_EQ(lambda_min(PowerLawSpectrum::circle(2.0, 1.0), 5), 1.0 / 9.0);
    EXPECT_DOUBLE_EQ(lambda_min(PowerLawSpectrum::positive(1.5, 1.0), 4), 0.125);
    EXPECT_THROW(lambda_min(PowerLawSpectrum::positive(1.5, 1.0, 10), 11), DomainError);
}

TEST(Spectrum, TargetNormExamples) {
    EXPECT_NEAR(target_norm_sq(PowerLawSpectrum::circle(1.5, 1.0)), 2.0 * pi * pi / 6.0 - 1.0, 1e-12);
    EXPECT_NEAR(target_norm_sq(PowerLawSpectrum::positive(1.5, 1.0, 2)), 1.25, 1e-14);
    EXPECT_NEAR(target_norm_sq(PowerLawSpectrum::continuous(2.0, 1.0)), 1.0, 1e-15);
}

TEST(Spectrum, TargetNormMatchesBruteForce) {
    for (double kappa : {0.5, 1.0, 2.5}) {
        const std::int64_t L = 2'000'000;
        // Sum the smallest terms first, then add the integral tail bound correction.
        double s = 0.0;
        for (std::int64_t l = L; l >= 1; --l) s += std::pow(static_cast<double>(l), -kappa - 1.0);
        const double tail = std::pow(static_cast<double>(L) + 0.5, -kappa) / kappa;
        EXPECT_NEAR(target_norm_sq(PowerLawSpectrum::positive(1.5, kappa, L)), s, 1e-10);
        auto untruncated = PowerLawSpectrum::positive(1.5, kappa);
        untruncated.truncation.reset();
        EXPECT_NEAR(target_norm_sq(untruncated), s + tail, 1e-10 + 1e-3 * tail);
    }
}

TEST(Spectrum, CircleSymmetryAndOrdering) {
    const auto c = PowerLawSpectrum::circle(1.7, 0.8);
    for (std::int64_t l = 0; l < 500; ++l) {
        EXPECT_EQ(eigenvalue_at(c, l), eigenvalue_at(c, -l));
        EXPECT_EQ(coefficient_sq_at(c, l), coefficient_sq_at(c, -l));
        EXPECT_GT(eigenvalue_at(c, l), eigenvalue_at(c, l + 1));
        EXPECT_LE(eigenvalue_at(c, l), 1.0);
        EXPECT_GT(eigenvalue_at(c, l), 0.0);
    }
}

TEST(Spectrum, LambdaMinPartitionsExactlyN) {
    for (const auto& spec : {PowerLawSpectrum::circle(2.0, 1.0, false, 300), PowerLawSpectrum::positive(1.5, 1.0, 300),
                             PowerLawSpectrum::circle(1.5, 1.0, true, 300)}) {
        const auto modes = materialize(spec);
        for (std::int64_t N : {1, 2, 3, 10, 57, 200}) {
            const double lmin = lambda_min(spec, N);
            const auto count = std::count_if(modes.lambda.begin(), modes.lambda.end(), [&](double l) { return l >= lmin; });
            // Circle ties at the boundary pair +-l are broken by enumeration order.
            if (spec.flavor == Flavor::circle && N % 2 == 0)
                EXPECT_EQ(count, N + 1);
            else
                EXPECT_EQ(count, N);
        }
    }
}

TEST(Spectrum, MaterializeOrderAndScale2) {
    const auto s2 = PowerLawSpectrum::circle(1.5, 1.0, true, 5);
    const auto m = materialize(s2);
    ASSERT_EQ(m.size(), 11u);
    EXPECT_DOUBLE_EQ(m.lambda[0], std::pow(2.0, -1.5));
    for (std::size_t i = 1; i < m.size(); ++i) EXPECT_LE(m.lambda[i], m.lambda[i - 1]);
    EXPECT_NEAR(target_norm_sq(s2), (2.0 * pi * pi / 6.0 - 1.0) / 4.0, 1e-12);
}

TEST(Spectrum, ValidationErrors) {
    EXPECT_THROW(PowerLawSpectrum::circle(1.0, 1.0), DomainError);
    EXPECT_THROW(PowerLawSpectrum::circle(2.0, 0.0), DomainError);
    EXPECT_THROW(PowerLawSpectrum::positive(2.0, 1.0, 0), DomainError);
    EXPECT_THROW(eigenvalue_at(PowerLawSpectrum::positive(2.0, 1.0), 0), DomainError);
    EXPECT_THROW(eigenvalue_at(PowerLawSpectrum::circle(2.0, 1.0, false, 10), 11), DomainError);
    EXPECT_THROW(eigenvalue_at(PowerLawSpectrum::continuous(2.0, 1.0), 1), DomainError);
    EXPECT_EQ(parse_flavor("circle"), Flavor::circle);
    EXPECT_THROW(parse_flavor("torus"), DomainError);
}
