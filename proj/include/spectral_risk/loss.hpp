#pragma once

#include <cmath>
#include <optional>
#include <string>

namespace spectral_risk {

enum class Provenance { exact, asymptotic, nmno, monte_carlo };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::exact: return "exact";
        case Provenance::asymptotic: return "asymptotic";
        case Provenance::nmno: return "nmno";
        case Provenance::monte_carlo: return "monte-carlo";
    }
    return "unknown";
}

// Generalization error split into bias, dataset variance and noise variance.
struct LossBreakdown {
    double bias = 0.0;
    double variance_dataset = 0.0;
    double variance_noise = 0.0;
    double total = 0.0;
    Provenance provenance = Provenance::exact;
    std::optional<double> standard_error;  // Monte-Carlo estimates only

    static LossBreakdown from_parts(double bias, double var_dataset, double var_noise, Provenance p) {
        LossBreakdown out;
        out.bias = bias;
        out.variance_dataset = var_dataset;
        out.variance_noise = var_noise;
        out.total = bias + var_dataset + var_noise;
        out.provenance = p;
        return out;
    }
};

}  // namespace spectral_risk
