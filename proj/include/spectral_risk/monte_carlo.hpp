#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <new>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "spectral_risk/common.hpp"
#include "spectral_risk/profiles.hpp"
#include "spectral_risk/spectrum.hpp"

namespace spectral_risk {

// Empirical generalization error of a spectral algorithm on sampled data. Features phi_l(x_i)
// form a P x N matrix; the population error follows from the exact residual
// sum_l (c_l - lambda_l (Phi alpha)_l)^2, so no held-out set is needed.

enum class FeatureModel { gaussian, cosine };

inline std::string to_string(FeatureModel m) { return m == FeatureModel::gaussian ? "gaussian" : "cosine"; }

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based stream derivation: the seed of (stream, index) depends only on its arguments.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ULL)) + index);
}

namespace mc_detail {

inline constexpr std::uint64_t stream_rows = 1;
inline constexpr std::uint64_t stream_inputs = 2;
inline constexpr std::uint64_t stream_dataset = 3;
inline constexpr std::uint64_t stream_noise = 4;
inline constexpr std::int64_t block_rows = 2048;

// Deterministic generator of feature rows; any block can be produced independently.
class FeatureSource {
public:
    FeatureSource(FeatureModel model, std::int64_t N, std::int64_t P, std::uint64_t seed)
        : model_(model), N_(N), P_(P), seed_(seed) {
        if (N < 1 || P < 1) throw DomainError("sample_dataset: N and P must be at least 1");
        if (model == FeatureModel::cosine) {
            std::mt19937_64 eng(derive_seed(seed, stream_inputs, 0));
            std::uniform_real_distribution<double> unif(0.0, 2.0 * pi);
            x_.resize(static_cast<std::size_t>(N));
            for (auto& v : x_) v = unif(eng);
        }
    }

    std::int64_t N() const { return N_; }
    std::int64_t P() const { return P_; }
    const std::vector<double>& inputs() const { return x_; }

    // Rows [row0, row0 + count) into out (count x N).
    void fill(std::int64_t row0, std::int64_t count, Eigen::MatrixXd& out) const {
        out.resize(count, N_);
        if (model_ == FeatureModel::gaussian) {
            std::normal_distribution<double> normal(0.0, 1.0);
            for (std::int64_t r = 0; r < count; ++r) {
                std::mt19937_64 eng(derive_seed(seed_, stream_rows, static_cast<std::uint64_t>(row0 + r)));
                for (std::int64_t i = 0; i < N_; ++i) out(r, i) = normal(eng);
            }
            return;
        }
        // sqrt(2) cos(l x) by rotation from the block start.
        const double root2 = std::sqrt(2.0);
        for (std::int64_t i = 0; i < N_; ++i) {
            const double x = x_[static_cast<std::size_t>(i)];
            const double c1 = std::cos(x), s1 = std::sin(x);
            double c = std::cos(static_cast<double>(row0) * x), s = std::sin(static_cast<double>(row0) * x);
            for (std::int64_t r = 0; r < count; ++r) {
                out(r, i) = (row0 + r == 0) ? 1.0 : root2 * c;
                const double cn = c * c1 - s * s1;
                s = s * c1 + c * s1;
                c = cn;
            }
        }
    }

private:
    FeatureModel model_;
    std::int64_t N_, P_;
    std::uint64_t seed_;
    std::vector<double> x_;
};

using RowFill = std::function<void(std::int64_t row0, std::int64_t count, Eigen::MatrixXd& out)>;

struct KernelSolve {
    Eigen::MatrixXd U;
    Eigen::VectorXd filter;  // h(k_i/N)/k_i
};

inline KernelSolve solve_kernel(const Eigen::MatrixXd& K, std::int64_t N, const SpectralProfile& profile) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
    if (es.info() != Eigen::Success) throw ConvergenceError("empirical loss: eigendecomposition failed");
    const auto& ev = es.eigenvalues();
    const double kmax = ev.cwiseAbs().maxCoeff();
    if (!(ev.minCoeff() > 1e-14 * kmax)) throw SingularKernelError("empirical loss: kernel matrix is rank deficient");
    KernelSolve out{es.eigenvectors(), Eigen::VectorXd(ev.size())};
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        out.filter(i) = profile.evaluate(ev(i) / static_cast<double>(N)) / ev(i);
    return out;
}

// Kernel matrix K = sum_l lambda_l phi_l phi_l^T and clean targets y0 = sum_l c_l phi_l.
inline void accumulate(const RowFill& fill, std::int64_t N, std::span<const double> lambda, std::span<const double> c,
                       Eigen::MatrixXd& K, Eigen::VectorXd& y0) {
    K.setZero(N, N);
    y0.setZero(N);
    Eigen::MatrixXd block;
    const auto P = static_cast<std::int64_t>(lambda.size());
    for (std::int64_t r0 = 0; r0 < P; r0 += block_rows) {
        const std::int64_t n = std::min(block_rows, P - r0);
        fill(r0, n, block);
        const Eigen::Map<const Eigen::VectorXd> lam(lambda.data() + r0, n), cc(c.data() + r0, n);
        Eigen::MatrixXd scaled = lam.cwiseSqrt().asDiagonal() * block;
        K.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
        y0.noalias() += block.transpose() * cc;
    }
    K.triangularView<Eigen::StrictlyUpper>() = K.transpose();
}

// 1/2 sum_l (c_l - lambda_l phi_l^T alpha)^2 over all feature rows.
inline double residual_loss(const RowFill& fill, std::span<const double> lambda, std::span<const double> c,
                            const Eigen::VectorXd& alpha) {
    Eigen::MatrixXd block;
    const auto P = static_cast<std::int64_t>(lambda.size());
    std::vector<double> parts;
    for (std::int64_t r0 = 0; r0 < P; r0 += block_rows) {
        const std::int64_t n = std::min(block_rows, P - r0);
        fill(r0, n, block);
        const Eigen::Map<const Eigen::VectorXd> lam(lambda.data() + r0, n), cc(c.data() + r0, n);
        const Eigen::VectorXd r = cc - lam.cwiseProduct(block * alpha);
        parts.push_back(r.squaredNorm());
    }
    return 0.5 * pairwise_sum(parts);
}

inline std::vector<double> root_coefficients(const DiscreteSpectrum& spec, std::int64_t P) {
    if (P < 1 || static_cast<std::size_t>(P) > spec.size()) throw DomainError("monte carlo: P exceeds the spectrum");
    std::vector<double> c(static_cast<std::size_t>(P));
    for (std::size_t l = 0; l < c.size(); ++l) {
        if (spec.c2[l] < 0.0) throw DomainError("monte carlo: negative coefficient");
        c[l] = std::sqrt(spec.c2[l]);
    }
    return c;
}

inline double loss_once(const RowFill& fill, std::int64_t N, const DiscreteSpectrum& spec, std::int64_t P,
                        const SpectralProfile& profile, double sigma_sq, std::uint64_t noise_seed) {
    if (!(sigma_sq >= 0.0)) throw DomainError("empirical loss: sigma^2 must be non-negative");
    const std::span<const double> lambda(spec.lambda.data(), static_cast<std::size_t>(P));
    const auto c = root_coefficients(spec, P);
    Eigen::MatrixXd K;
    Eigen::VectorXd y;
    try {
        accumulate(fill, N, lambda, c, K, y);
    } catch (const std::bad_alloc&) {
        throw ResourceError("empirical loss: allocation failed");
    }
    if (sigma_sq > 0.0) {
        std::mt19937_64 eng(noise_seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        const double sigma = std::sqrt(sigma_sq);
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += sigma * normal(eng);
    }
    const auto ks = solve_kernel(K, N, profile);
    const Eigen::VectorXd alpha = ks.U * ks.filter.cwiseProduct(ks.U.transpose() * y);
    return residual_loss(fill, lambda, c, alpha);
}

}  // namespace mc_detail

struct SampledDataset {
    Eigen::MatrixXd features;  // P x N, entries phi_l(x_i)
    FeatureModel model = FeatureModel::gaussian;
    std::uint64_t seed = 0;
    std::int64_t N = 0, P = 0;
    std::vector<double> inputs;  // x_i for the cosine model
};

inline SampledDataset sample_dataset(FeatureModel model, std::int64_t N, std::int64_t P, std::uint64_t seed) {
    mc_detail::FeatureSource src(model, N, P, seed);
    SampledDataset out;
    out.model = model;
    out.seed = seed;
    out.N = N;
    out.P = P;
    out.inputs = src.inputs();
    try {
        src.fill(0, P, out.features);
    } catch (const std::bad_alloc&) {
        throw ResourceError("sample_dataset: allocation failed");
    }
    return out;
}

// Population error of one realization with observation noise drawn from noise_seed. The spectrum
// supplies the first P modes (sorted by decreasing eigenvalue).
inline double empirical_loss_once(const SampledDataset& data, const DiscreteSpectrum& spec,
                                  const SpectralProfile& profile, double sigma_sq, std::uint64_t noise_seed) {
    mc_detail::RowFill fill = [&](std::int64_t r0, std::int64_t n, Eigen::MatrixXd& out) {
        out = data.features.middleRows(r0, n);
    };
    return mc_detail::loss_once(fill, data.N, spec, data.P, profile, sigma_sq, noise_seed);
}

struct MCEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    std::int64_t repetitions = 0;
    std::int64_t failures = 0;
    std::optional<std::vector<double>> per_rep_values;
};

struct MCOptions {
    unsigned jobs = 0;  // 0 = hardware concurrency
    bool keep_values = false;
};

// Mean and standard error over reps independent (dataset, noise) draws. Repetition r uses the
// dataset seed derive_seed(master, 3, r) and the noise seed derive_seed(master, 4, r).
inline MCEstimate mc_expected_loss(FeatureModel model, const DiscreteSpectrum& spec, const SpectralProfile& profile,
                                   double sigma_sq, std::int64_t N, std::int64_t P, std::int64_t reps,
                                   std::uint64_t master_seed, const MCOptions& opt = {}) {
    if (reps < 2) throw DomainError("mc_expected_loss: need at least two repetitions");
    if (N < 1 || P < 1) throw DomainError("mc_expected_loss: N and P must be at least 1");
    if (static_cast<std::size_t>(P) > spec.size()) throw DomainError("mc_expected_loss: P exceeds the spectrum");
    std::vector<double> values(static_cast<std::size_t>(reps), 0.0);
    std::vector<char> failed(static_cast<std::size_t>(reps), 0);
    std::atomic<std::int64_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr fatal;
    auto worker = [&] {
        for (;;) {
            const std::int64_t r = next.fetch_add(1);
            if (r >= reps) return;
            const auto ur = static_cast<std::uint64_t>(r);
            try {
                const mc_detail::FeatureSource src(model, N, P, derive_seed(master_seed, mc_detail::stream_dataset, ur));
                const mc_detail::RowFill fill = [&](std::int64_t r0, std::int64_t n, Eigen::MatrixXd& out) {
                    src.fill(r0, n, out);
                };
                values[static_cast<std::size_t>(r)] = mc_detail::loss_once(
                    fill, N, spec, P, profile, sigma_sq, derive_seed(master_seed, mc_detail::stream_noise, ur));
            } catch (const SingularKernelError&) {
                failed[static_cast<std::size_t>(r)] = 1;
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!fatal) fatal = std::current_exception();
                next.store(reps);
                return;
            }
        }
    };
    unsigned jobs = opt.jobs ? opt.jobs : std::max(1u, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::int64_t>(jobs, reps));
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (fatal) std::rethrow_exception(fatal);

    std::vector<double> ok;
    for (std::size_t r = 0; r < values.size(); ++r)
        if (!failed[r]) ok.push_back(values[r]);
    MCEstimate est;
    est.failures = reps - static_cast<std::int64_t>(ok.size());
    if (static_cast<double>(est.failures) > 0.01 * static_cast<double>(reps))
        throw SingularKernelError("mc_expected_loss: " + std::to_string(est.failures) + " of " + std::to_string(reps) +
                                  " repetitions had a rank-deficient kernel");
    if (ok.size() < 2) throw SingularKernelError("mc_expected_loss: fewer than two successful repetitions");
    const double n = static_cast<double>(ok.size());
    est.mean = pairwise_sum(ok) / n;
    std::vector<double> dev(ok.size());
    for (std::size_t i = 0; i < ok.size(); ++i) dev[i] = (ok[i] - est.mean) * (ok[i] - est.mean);
    est.standard_error = std::sqrt(pairwise_sum(dev) / (n - 1.0) / n);
    est.repetitions = static_cast<std::int64_t>(ok.size());
    if (opt.keep_values) est.per_rep_values = std::move(ok);
    if (est.failures > 0) warn("mc_expected_loss: skipped " + std::to_string(est.failures) + " rank-deficient repetitions");
    return est;
}

inline MCEstimate mc_expected_loss(FeatureModel model, const PowerLawSpectrum& spec, const SpectralProfile& profile,
                                   double sigma_sq, std::int64_t N, std::int64_t P, std::int64_t reps,
                                   std::uint64_t master_seed, const MCOptions& opt = {}) {
    if (spec.flavor != Flavor::positive) throw DomainError("mc_expected_loss: needs a positive-flavor spectrum");
    auto trunc = spec;
    trunc.truncation = P;
    return mc_expected_loss(model, materialize(trunc), profile, sigma_sq, N, P, reps, master_seed, opt);
}

// Circle lattice through the same pipeline: inputs u + 2 pi i/N with real Fourier features
// 1, sqrt2 cos(lx), sqrt2 sin(lx) for |l| <= T. The average over u uses M > 2T/N equispaced
// shifts, which is exact for the truncated spectrum; the noise average is analytic.
inline double circle_lattice_loss(const PowerLawSpectrum& spec, std::int64_t N, double sigma_sq,
                                  const SpectralProfile& profile, std::int64_t T) {
    spec.validate();
    if (spec.flavor != Flavor::circle) throw DomainError("circle_lattice_loss: needs a circle-flavor spectrum");
    if (N < 1 || T < 1) throw DomainError("circle_lattice_loss: N and T must be at least 1");
    if (!(sigma_sq >= 0.0)) throw DomainError("circle_lattice_loss: sigma^2 must be non-negative");
    const std::int64_t P = 2 * T + 1;
    std::vector<double> lam(static_cast<std::size_t>(P)), c(static_cast<std::size_t>(P));
    std::vector<std::int64_t> freq(static_cast<std::size_t>(P));
    std::vector<bool> is_sin(static_cast<std::size_t>(P), false);
    lam[0] = eigenvalue_at(spec, 0);
    c[0] = std::sqrt(coefficient_sq_at(spec, 0));
    for (std::int64_t l = 1; l <= T; ++l) {
        const auto i = static_cast<std::size_t>(2 * l - 1);
        lam[i] = lam[i + 1] = eigenvalue_at(spec, l);
        c[i] = std::sqrt(2.0 * coefficient_sq_at(spec, l));
        c[i + 1] = 0.0;
        freq[i] = freq[i + 1] = l;
        is_sin[i + 1] = true;
    }
    const std::int64_t M = 2 * T / N + 2;
    std::vector<double> per_shift;
    const Eigen::Map<const Eigen::VectorXd> lv(lam.data(), P), cv(c.data(), P);
    for (std::int64_t m = 0; m < M; ++m) {
        const double u = 2.0 * pi * static_cast<double>(m) / static_cast<double>(N * M);
        Eigen::MatrixXd phi(P, N);
        for (std::int64_t i = 0; i < N; ++i) {
            const double x = u + 2.0 * pi * static_cast<double>(i) / static_cast<double>(N);
            phi(0, i) = 1.0;
            for (std::int64_t r = 1; r < P; ++r) {
                const auto rr = static_cast<std::size_t>(r);
                const double arg = static_cast<double>(freq[rr]) * x;
                phi(r, i) = std::sqrt(2.0) * (is_sin[rr] ? std::sin(arg) : std::cos(arg));
            }
        }
        const Eigen::MatrixXd K = phi.transpose() * lv.asDiagonal() * phi;
        const auto ks = mc_detail::solve_kernel(K, N, profile);
        const Eigen::MatrixXd B = ks.U * ks.filter.asDiagonal() * ks.U.transpose();
        const Eigen::VectorXd alpha = B * (phi.transpose() * cv);
        const double clean = 0.5 * (cv - lv.cwiseProduct(phi * alpha)).squaredNorm();
        const double noise = 0.5 * sigma_sq * (lv.asDiagonal() * phi * B).squaredNorm();
        per_shift.push_back(clean + noise);
    }
    return pairwise_sum(per_shift) / static_cast<double>(M);
}

}  // namespace spectral_risk
