// Command-line driver: sweeps, model comparisons, optimal-profile tables, scaling reports and
// the pair-of-gradient-flows demonstration.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "spectral_risk/circle.hpp"
#include "spectral_risk/harness.hpp"
#include "spectral_risk/nmno.hpp"
#include "spectral_risk/profiles.hpp"
#include "spectral_risk/scaling.hpp"
#include "spectral_risk/wishart.hpp"

namespace sr = spectral_risk;

namespace {

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("spectral_risk");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("SPECTRAL_RISK_LOG")) {
        const std::string level(env);
        if (level == "error") spdlog::set_level(spdlog::level::err);
        else if (level == "info") spdlog::set_level(spdlog::level::info);
        else if (level == "debug") spdlog::set_level(spdlog::level::debug);
        else spdlog::warn("unknown SPECTRAL_RISK_LOG value '{}'", level);
    }
    sr::warning_sink() = [](std::string_view m) { spdlog::warn("{}", m); };
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw sr::ResourceError("cannot write '" + path + "'");
    out << text;
    spdlog::info("wrote {}", path);
}

struct CommonFlags {
    std::string out;
    unsigned jobs = 1;
    std::optional<std::uint64_t> seed;
    std::string offdiag;
    std::string format = "csv";
};

void apply_overrides(sr::ExperimentConfig& cfg, const CommonFlags& f) {
    if (f.seed) {
        if (!cfg.mc) spdlog::warn("--seed ignored: model {} is deterministic", sr::to_string(cfg.model));
        else cfg.mc->seed = *f.seed;
    }
    if (f.offdiag == "on") cfg.offdiag = true;
    if (f.offdiag == "off") cfg.offdiag = false;
}

int run_sweep_command(const std::string& config_path, const CommonFlags& f, const std::string& stub_path) {
    auto cfg = sr::load_config(config_path);
    apply_overrides(cfg, f);
    spdlog::info("sweep '{}': model {}, {} grid points", cfg.name, sr::to_string(cfg.model), cfg.n_grid.size());
    const auto res = sr::run_sweep(cfg, {f.jobs});
    const std::string csv = sr::emit_csv(res.rows);
    const std::string summary = sr::summary_json(cfg, res).dump(2) + "\n";
    if (!f.out.empty()) {
        write_output(f.out, f.format == "json" ? summary : csv);
    } else if (!cfg.out_csv.empty() || !cfg.out_json.empty()) {
        if (!cfg.out_csv.empty()) write_output(cfg.out_csv, csv);
        if (!cfg.out_json.empty()) write_output(cfg.out_json, summary);
    } else {
        write_output("-", f.format == "json" ? summary : csv);
    }
    if (!stub_path.empty()) {
        const std::string data = !f.out.empty() && f.format == "csv" ? f.out : (cfg.out_csv.empty() ? "sweep.csv" : cfg.out_csv);
        write_output(stub_path, sr::gnuplot_stub(data, cfg.name));
    }
    if (res.summary.slope) spdlog::info("log-log slope over top half: {:.6f}", *res.summary.slope);
    for (const auto& [N, msg] : res.summary.errors) spdlog::error("N={}: {}", N, msg);
    return res.summary.errors.empty() ? 0 : 1;
}

int run_compare_command(const std::string& a_path, const std::string& b_path, const CommonFlags& f) {
    auto a = sr::load_config(a_path);
    auto b = sr::load_config(b_path);
    apply_overrides(a, f);
    apply_overrides(b, f);
    const auto res = sr::compare_models(a, b, {f.jobs});
    if (f.format == "json") {
        sr::json j;
        j["monotone_decreasing"] = res.monotone_decreasing;
        j["rows"] = sr::json::array();
        for (const auto& r : res.rows) {
            sr::json row{{"N", r.N}};
            row["total_a"] = r.total_a ? sr::json(*r.total_a) : sr::json(nullptr);
            row["total_b"] = r.total_b ? sr::json(*r.total_b) : sr::json(nullptr);
            row["gap"] = r.gap ? sr::json(*r.gap) : sr::json(nullptr);
            if (!r.error.empty()) row["error"] = r.error;
            j["rows"].push_back(row);
        }
        write_output(f.out, j.dump(2) + "\n");
    } else {
        write_output(f.out, sr::emit_compare_csv(res));
    }
    int failures = 0;
    for (const auto& r : res.rows)
        if (!r.error.empty()) {
            spdlog::error("N={}: {}", r.N, r.error);
            ++failures;
        }
    spdlog::info("gap monotonically decreasing: {}", res.monotone_decreasing);
    return failures == 0 ? 0 : 1;
}

int run_optimal_profile_command(const std::string& config_path, std::int64_t N, const CommonFlags& f) {
    const auto cfg = sr::load_config(config_path);
    if (N <= 0) N = cfg.n_grid.back();
    std::string out = "lambda,h\n";
    const auto& s = cfg.spectrum;
    switch (cfg.model) {
        case sr::ModelKind::circle:
            for (std::int64_t k = 0; 2 * k <= N; ++k)
                out += sr::format_double(sr::empirical_eigenvalue(s, N, k)) + "," +
                       sr::format_double(sr::optimal_profile_value(s, N, cfg.sigma_sq, k)) + "\n";
            break;
        case sr::ModelKind::nmno:
            if (s.is_discrete()) {
                for (std::int64_t r = 0; r < N; ++r) {
                    const double lam = sr::eigenvalue_at(s, sr::index_at_rank(s, r));
                    if (r > 0 && s.flavor == sr::Flavor::circle && r % 2 == 0) continue;  // +-l share a value
                    out += sr::format_double(lam) + "," +
                           sr::format_double(sr::nmno_optimal_profile(s, N, cfg.sigma_sq, lam)) + "\n";
                }
            } else {
                for (double lam : sr::logspace(sr::lambda_min(s, N), 1.0, 200))
                    out += sr::format_double(lam) + "," +
                           sr::format_double(sr::nmno_optimal_profile(s, N, cfg.sigma_sq, lam)) + "\n";
            }
            break;
        case sr::ModelKind::wishart: {
            // Noiseless leading-order optimal profile along the phase grid.
            if (cfg.sigma_sq != 0.0) spdlog::warn("optimal-profile: wishart table is the noiseless asymptotic profile");
            const double scale = std::pow(static_cast<double>(N), -s.nu);
            for (int i = 1; i < 200; ++i) {
                const double phi = sr::pi * i / 200.0;
                out += sr::format_double(scale * sr::wishart_scaled_eigenvalue(s.nu, phi)) + "," +
                       sr::format_double(sr::wishart_optimal_profile(s.nu, s.kappa, phi)) + "\n";
            }
            break;
        }
        default:
            throw sr::DomainError("optimal-profile: supported models are circle, wishart and nmno");
    }
    write_output(f.out, out);
    return 0;
}

sr::ScalingProfile profile_from_json(const sr::json& arr, double nu) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : arr) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    return sr::ScalingProfile(nu, pts);
}

int run_scaling_command(const std::string& algorithm, double scale, double nu, double kappa, const std::string& file,
                        const CommonFlags& f) {
    std::optional<sr::ScalingProfile> sh, s1h;
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw sr::ConfigError("cannot open '" + file + "'");
        const auto j = sr::json::parse(in);
        sh = profile_from_json(j.at("sh"), nu);
        s1h = profile_from_json(j.at("s1h"), nu);
    } else {
        const auto alg = algorithm == "krr" ? sr::ScalingAlgorithm::krr : sr::ScalingAlgorithm::gf;
        if (algorithm != "krr" && algorithm != "gf") throw sr::DomainError("scaling: --algorithm must be krr or gf");
        sh = sr::scaling_profile_of(alg, scale, sr::ScalingPart::h, nu);
        s1h = sr::scaling_profile_of(alg, scale, sr::ScalingPart::one_minus_h, nu);
    }
    const auto report = sr::nmno_scaling(*sh, *s1h, nu, kappa);
    const auto cond = sr::check_optimality_conditions(*sh, *s1h, nu, kappa);
    sr::json j{{"loss_scale", report.loss_scale},
               {"localization", report.localization_scales},
               {"saturated", report.saturated},
               {"optimal", report.optimal},
               {"conditions", {cond.cond1, cond.cond2}}};
    write_output(f.out, j.dump(2) + "\n");
    return 0;
}

int run_pairgf_command(double eta, double horizon_factor, double step, int points, const CommonFlags& f) {
    sr::PairGFRun run;
    run.eta = eta;
    run.horizon = horizon_factor / eta;
    run.step = step;
    run.lambda_grid = sr::logspace(1e-3, 1.0, static_cast<std::size_t>(points));
    const auto res = sr::pair_gf_simulate(run);
    std::string out = "lambda,q,target,abs_error\n";
    double worst = 0.0;
    for (std::size_t i = 0; i < res.lambda.size(); ++i) {
        const double target = eta / (res.lambda[i] + eta);
        const double err = std::abs(res.q[i] - target);
        worst = std::max(worst, err);
        out += sr::format_double(res.lambda[i]) + "," + sr::format_double(res.q[i]) + "," + sr::format_double(target) +
               "," + sr::format_double(err) + "\n";
    }
    write_output(f.out, out);
    spdlog::info("pair-GF max |q_T - eta/(lambda+eta)| = {:.3e}", worst);
    return res.unstable ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Spectral-algorithm generalization error: exact functionals, asymptotics and Monte-Carlo"};
    app.require_subcommand(1);

    CommonFlags flags;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", flags.out, "Output path (stdout when omitted)");
        sub->add_option("--jobs", flags.jobs, "Parallel rows")->check(CLI::PositiveNumber);
        sub->add_option("--seed", flags.seed, "Overrides the config seed");
        sub->add_option("--offdiag", flags.offdiag, "Off-diagonal Wishart term")->check(CLI::IsMember({"on", "off"}));
        sub->add_option("--format", flags.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    };

    std::string config, config_b, stub, algorithm = "krr", scaling_file;
    std::int64_t n_override = 0;
    double scale = 0.0, nu = 1.5, kappa = 1.0, eta = 1.0, horizon = 50.0, step = 1e-3;
    int points = 200;

    auto* sweep = app.add_subcommand("sweep", "Run a sweep over the configured sample counts");
    sweep->add_option("--config", config, "Experiment config (TOML or JSON)")->required();
    sweep->add_option("--gnuplot-stub", stub, "Write a companion gnuplot script");
    add_common(sweep);

    auto* compare = app.add_subcommand("compare", "Relative gap between two configs");
    compare->add_option("--config", config, "First config")->required();
    compare->add_option("--against", config_b, "Second config")->required();
    add_common(compare);

    auto* optimal = app.add_subcommand("optimal-profile", "Dump the optimal profile table");
    optimal->add_option("--config", config, "Experiment config")->required();
    optimal->add_option("--n", n_override, "Sample count (last grid entry by default)");
    add_common(optimal);

    auto* scaling = app.add_subcommand("scaling", "Scaling report for a krr or gf parameter scale");
    scaling->add_option("--algorithm", algorithm, "krr or gf")->check(CLI::IsMember({"krr", "gf"}));
    scaling->add_option("--scale", scale, "Parameter scale s in [0, nu]");
    scaling->add_option("--nu", nu, "Eigenvalue exponent")->required();
    scaling->add_option("--kappa", kappa, "Target exponent")->required();
    scaling->add_option("--profiles", scaling_file, "JSON file with 'sh' and 's1h' breakpoint arrays");
    add_common(scaling);

    auto* pairgf = app.add_subcommand("pairgf-demo", "Pair of gradient flows realizing ridge regression");
    pairgf->add_option("--eta", eta, "Target ridge parameter");
    pairgf->add_option("--horizon", horizon, "Horizon in units of 1/eta");
    pairgf->add_option("--step", step, "Integration step");
    pairgf->add_option("--points", points, "Grid size on [1e-3, 1]")->check(CLI::PositiveNumber);
    add_common(pairgf);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*sweep) return run_sweep_command(config, flags, stub);
        if (*compare) return run_compare_command(config, config_b, flags);
        if (*optimal) return run_optimal_profile_command(config, n_override, flags);
        if (*scaling) return run_scaling_command(algorithm, scale, nu, kappa, scaling_file, flags);
        if (*pairgf) return run_pairgf_command(eta, horizon, step, points, flags);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 0;
}
