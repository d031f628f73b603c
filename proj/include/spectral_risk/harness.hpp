#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "spectral_risk/circle.hpp"
#include "spectral_risk/common.hpp"
#include "spectral_risk/loss.hpp"
#include "spectral_risk/monte_carlo.hpp"
#include "spectral_risk/nmno.hpp"
#include "spectral_risk/profiles.hpp"
#include "spectral_risk/spectrum.hpp"
#include "spectral_risk/wishart.hpp"

namespace spectral_risk {

using json = nlohmann::json;

// Configuration problem with an optional source line and field name.
class ConfigError : public DomainError {
public:
    ConfigError(const std::string& message, int line = 0, std::string field = {})
        : DomainError(format(message, line, field)), line_(line), field_(std::move(field)) {}
    int line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    static std::string format(const std::string& m, int line, const std::string& field) {
        std::string out = "config";
        if (line > 0) out += " line " + std::to_string(line);
        if (!field.empty()) out += " field '" + field + "'";
        return out + ": " + m;
    }
    int line_;
    std::string field_;
};

// ---------------------------------------------------------------------------------------------
// TOML subset: [section] and [a.b] headers, key = value with strings, numbers, booleans and
// (possibly multi-line) arrays, '#' comments. Parsed into JSON so both formats share a schema.

namespace toml_detail {

struct Cursor {
    const std::string& text;
    std::size_t pos = 0;
    int line = 1;

    bool done() const { return pos >= text.size(); }
    char peek() const { return done() ? '\0' : text[pos]; }
    char get() {
        const char c = text[pos++];
        if (c == '\n') ++line;
        return c;
    }
    // Skips spaces, tabs and comments; newlines too when multiline is set.
    void skip(bool multiline) {
        while (!done()) {
            const char c = peek();
            if (c == '#') {
                while (!done() && peek() != '\n') get();
            } else if (c == ' ' || c == '\t' || c == '\r' || (multiline && c == '\n')) {
                get();
            } else {
                break;
            }
        }
    }
    [[noreturn]] void fail(const std::string& m, const std::string& field = {}) const { throw ConfigError(m, line, field); }
};

inline std::string parse_key(Cursor& c) {
    c.skip(false);
    std::string key;
    if (c.peek() == '"') {
        c.get();
        while (!c.done() && c.peek() != '"') key += c.get();
        if (c.done()) c.fail("unterminated quoted key");
        c.get();
        return key;
    }
    while (!c.done() && (std::isalnum(static_cast<unsigned char>(c.peek())) || c.peek() == '_' || c.peek() == '-'))
        key += c.get();
    if (key.empty()) c.fail("expected a key");
    return key;
}

inline json parse_value(Cursor& c, const std::string& field);

inline json parse_array(Cursor& c, const std::string& field) {
    c.get();  // '['
    json arr = json::array();
    for (;;) {
        c.skip(true);
        if (c.peek() == ']') {
            c.get();
            return arr;
        }
        arr.push_back(parse_value(c, field));
        c.skip(true);
        if (c.peek() == ',') {
            c.get();
            continue;
        }
        if (c.peek() == ']') {
            c.get();
            return arr;
        }
        c.fail("expected ',' or ']' in array", field);
    }
}

inline json parse_inline_table(Cursor& c, const std::string& field) {
    c.get();  // '{'
    json obj = json::object();
    for (;;) {
        c.skip(false);
        if (c.peek() == '}') {
            c.get();
            return obj;
        }
        const std::string key = parse_key(c);
        c.skip(false);
        if (c.peek() != '=') c.fail("expected '=' in inline table", field);
        c.get();
        c.skip(false);
        obj[key] = parse_value(c, field + "." + key);
        c.skip(false);
        if (c.peek() == ',') {
            c.get();
            continue;
        }
        if (c.peek() == '}') {
            c.get();
            return obj;
        }
        c.fail("expected ',' or '}' in inline table", field);
    }
}

inline json parse_value(Cursor& c, const std::string& field) {
    c.skip(false);
    const char ch = c.peek();
    if (ch == '[') return parse_array(c, field);
    if (ch == '{') return parse_inline_table(c, field);
    if (ch == '"' || ch == '\'') {
        const char quote = c.get();
        std::string s;
        while (!c.done() && c.peek() != quote && c.peek() != '\n') {
            char x = c.get();
            if (quote == '"' && x == '\\' && !c.done()) {
                const char e = c.get();
                switch (e) {
                    case 'n': x = '\n'; break;
                    case 't': x = '\t'; break;
                    default: x = e;
                }
            }
            s += x;
        }
        if (c.peek() != quote) c.fail("unterminated string", field);
        c.get();
        return s;
    }
    std::string tok;
    while (!c.done()) {
        const char x = c.peek();
        if (x == ',' || x == ']' || x == '}' || x == '\n' || x == '#' || x == ' ' || x == '\t' || x == '\r') break;
        tok += c.get();
    }
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char x : tok)
        if (x != '_') digits += x;
    if (digits.empty()) c.fail("missing value", field);
    const bool integral = digits.find_first_of(".eEinfa") == std::string::npos;
    try {
        std::size_t used = 0;
        if (integral) {
            const long long v = std::stoll(digits, &used);
            if (used == digits.size()) return v;
        } else {
            const double v = std::stod(digits, &used);
            if (used == digits.size()) return v;
        }
    } catch (const std::exception&) {
    }
    c.fail("cannot parse value '" + tok + "'", field);
}

}  // namespace toml_detail

inline json parse_toml(const std::string& text) {
    toml_detail::Cursor c{text};
    json root = json::object();
    json* table = &root;
    std::string prefix;
    for (;;) {
        c.skip(true);
        if (c.done()) break;
        if (c.peek() == '[') {
            c.get();
            std::vector<std::string> path;
            for (;;) {
                path.push_back(toml_detail::parse_key(c));
                c.skip(false);
                if (c.peek() == '.') {
                    c.get();
                    continue;
                }
                break;
            }
            if (c.peek() != ']') c.fail("expected ']' after table name");
            c.get();
            table = &root;
            prefix.clear();
            for (const auto& p : path) {
                if (!table->contains(p)) (*table)[p] = json::object();
                if (!(*table)[p].is_object()) c.fail("table redefines a value", p);
                table = &(*table)[p];
                prefix += (prefix.empty() ? "" : ".") + p;
            }
        } else {
            const std::string key = toml_detail::parse_key(c);
            const std::string field = prefix.empty() ? key : prefix + "." + key;
            c.skip(false);
            if (c.peek() != '=') c.fail("expected '='", field);
            c.get();
            if (table->contains(key)) c.fail("duplicate key", field);
            (*table)[key] = toml_detail::parse_value(c, field);
        }
        c.skip(false);
        if (!c.done() && c.peek() != '\n') c.fail("unexpected text after value");
    }
    return root;
}

// JSON when the first non-space character is '{', TOML otherwise.
inline json parse_config_text(const std::string& text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(std::string("invalid JSON: ") + e.what());
        }
    }
    return parse_toml(text);
}

// ---------------------------------------------------------------------------------------------
// Experiment configuration.

enum class ModelKind { circle, wishart, nmno, mc_gaussian, mc_cosine };

inline std::string to_string(ModelKind m) {
    switch (m) {
        case ModelKind::circle: return "circle";
        case ModelKind::wishart: return "wishart";
        case ModelKind::nmno: return "nmno";
        case ModelKind::mc_gaussian: return "mc-gaussian";
        case ModelKind::mc_cosine: return "mc-cosine";
    }
    return "unknown";
}

inline ModelKind parse_model(const std::string& s) {
    if (s == "circle") return ModelKind::circle;
    if (s == "wishart") return ModelKind::wishart;
    if (s == "nmno") return ModelKind::nmno;
    if (s == "mc-gaussian") return ModelKind::mc_gaussian;
    if (s == "mc-cosine") return ModelKind::mc_cosine;
    throw ConfigError("unknown model '" + s + "'", 0, "model");
}

inline bool is_mc(ModelKind m) { return m == ModelKind::mc_gaussian || m == ModelKind::mc_cosine; }

struct McSettings {
    std::int64_t reps = 100;
    std::int64_t P = 40000;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    ModelKind model = ModelKind::circle;
    PowerLawSpectrum spectrum;
    std::string profile = "interpolation";
    double sigma_sq = 0.0;
    std::vector<std::int64_t> n_grid;
    std::optional<McSettings> mc;
    std::string out_csv, out_json;
    bool offdiag = true;
    bool asymptotic_overlay = false;
    std::string base_dir;  // resolves relative tabulated-profile paths

    void validate() const {
        spectrum.validate();
        if (n_grid.empty()) throw ConfigError("must not be empty", 0, "n_grid");
        for (std::size_t i = 0; i < n_grid.size(); ++i) {
            if (n_grid[i] < 1) throw ConfigError("sample counts must be positive", 0, "n_grid");
            if (i > 0 && n_grid[i] <= n_grid[i - 1]) throw ConfigError("must be strictly ascending", 0, "n_grid");
        }
        if (!(sigma_sq >= 0.0)) throw ConfigError("must be non-negative", 0, "sigma_sq");
        if (is_mc(model) != mc.has_value())
            throw ConfigError(is_mc(model) ? "Monte-Carlo models need an [mc] block" : "[mc] block only applies to mc-* models",
                              0, "mc");
        if (mc && (mc->reps < 2 || mc->P < 1)) throw ConfigError("need reps >= 2 and P >= 1", 0, "mc");
        if (model == ModelKind::circle && spectrum.flavor != Flavor::circle)
            throw ConfigError("circle model needs the circle flavor", 0, "spectrum.flavor");
        if (model == ModelKind::wishart && spectrum.flavor == Flavor::circle)
            throw ConfigError("wishart model needs the positive or continuous flavor", 0, "spectrum.flavor");
        if (is_mc(model) && spectrum.flavor != Flavor::positive)
            throw ConfigError("Monte-Carlo models need the positive flavor", 0, "spectrum.flavor");
        if (mc && spectrum.truncation && mc->P > *spectrum.truncation)
            throw ConfigError("P exceeds the spectrum truncation", 0, "mc.P");
    }
};

namespace config_detail {

template <class T>
T get(const json& obj, const std::string& key, const std::string& field, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("wrong type", 0, field);
    }
}

inline std::vector<std::int64_t> parse_grid(const json& v) {
    std::vector<std::int64_t> out;
    if (v.is_array()) {
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigError("entries must be numbers", 0, "n_grid");
            const double d = e.get<double>();
            if (d != std::floor(d)) throw ConfigError("entries must be integers", 0, "n_grid");
            out.push_back(static_cast<std::int64_t>(d));
        }
        return out;
    }
    if (v.is_object()) {
        // Geometric grid {start, stop, factor}.
        const double start = get<double>(v, "start", "n_grid.start", 0.0);
        const double stop = get<double>(v, "stop", "n_grid.stop", 0.0);
        const double factor = get<double>(v, "factor", "n_grid.factor", 2.0);
        if (!(start >= 1.0) || !(stop >= start) || !(factor > 1.0))
            throw ConfigError("need 1 <= start <= stop and factor > 1", 0, "n_grid");
        for (double n = start; n <= stop * (1.0 + 1e-12); n *= factor) {
            const auto k = static_cast<std::int64_t>(std::llround(n));
            if (out.empty() || k > out.back()) out.push_back(k);
        }
        return out;
    }
    throw ConfigError("expected an array or {start, stop, factor}", 0, "n_grid");
}

}  // namespace config_detail

inline ExperimentConfig config_from_json(const json& j) {
    using config_detail::get;
    if (!j.is_object()) throw ConfigError("top level must be a table");
    const auto schema = get<long long>(j, "schema", "schema", 1);
    if (schema != 1) throw ConfigError("unsupported schema version " + std::to_string(schema), 0, "schema");
    ExperimentConfig cfg;
    cfg.name = get<std::string>(j, "name", "name", cfg.name);
    if (!j.contains("model")) throw ConfigError("missing", 0, "model");
    cfg.model = parse_model(get<std::string>(j, "model", "model", ""));
    if (!j.contains("spectrum") || !j["spectrum"].is_object()) throw ConfigError("missing [spectrum] table", 0, "spectrum");
    const auto& s = j["spectrum"];
    try {
        cfg.spectrum.flavor = parse_flavor(get<std::string>(s, "flavor", "spectrum.flavor", "circle"));
    } catch (const ConfigError&) {
        throw;
    } catch (const DomainError& e) {
        throw ConfigError(e.what(), 0, "spectrum.flavor");
    }
    cfg.spectrum.nu = get<double>(s, "nu", "spectrum.nu", 1.5);
    cfg.spectrum.kappa = get<double>(s, "kappa", "spectrum.kappa", 1.0);
    cfg.spectrum.scale2 = get<bool>(s, "scale2", "spectrum.scale2", false);
    if (cfg.spectrum.flavor == Flavor::continuous) {
        cfg.spectrum.truncation.reset();
    } else {
        const auto t = get<long long>(s, "truncation", "spectrum.truncation", default_truncation);
        cfg.spectrum.truncation = t;
    }
    cfg.profile = get<std::string>(j, "profile", "profile", cfg.profile);
    cfg.sigma_sq = get<double>(j, "sigma_sq", "sigma_sq", 0.0);
    if (!j.contains("n_grid")) throw ConfigError("missing", 0, "n_grid");
    cfg.n_grid = config_detail::parse_grid(j["n_grid"]);
    if (j.contains("mc")) {
        const auto& m = j["mc"];
        if (!m.is_object()) throw ConfigError("expected a table", 0, "mc");
        McSettings mc;
        mc.reps = get<long long>(m, "reps", "mc.reps", mc.reps);
        mc.P = get<long long>(m, "P", "mc.P", mc.P);
        mc.seed = static_cast<std::uint64_t>(get<long long>(m, "seed", "mc.seed", 0));
        cfg.mc = mc;
    }
    if (j.contains("outputs")) {
        const auto& o = j["outputs"];
        cfg.out_csv = get<std::string>(o, "csv", "outputs.csv", "");
        cfg.out_json = get<std::string>(o, "json", "outputs.json", "");
    }
    if (j.contains("flags")) {
        const auto& f = j["flags"];
        cfg.offdiag = get<bool>(f, "offdiag", "flags.offdiag", true);
        cfg.asymptotic_overlay = get<bool>(f, "asymptotic_overlay", "flags.asymptotic_overlay", false);
    }
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const DomainError& e) {
        throw ConfigError(e.what(), 0, "spectrum");
    }
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& base_dir = {}) {
    auto cfg = config_from_json(parse_config_text(text));
    cfg.base_dir = base_dir;
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const auto slash = path.find_last_of('/');
    return parse_config(ss.str(), slash == std::string::npos ? std::string{} : path.substr(0, slash));
}

// ---------------------------------------------------------------------------------------------
// Parameter scaling and per-N evaluation.

// Unit-constant scaling: eta = N^{-nu/(kappa+1)} (N^{-nu/(2nu+1)} when kappa > 2 nu), t = N^{nu/(kappa+1)}.
inline double auto_scale_parameter(std::string_view kind, double nu, double kappa, double N) {
    if (!(nu > 1.0) || !(kappa > 0.0)) throw DomainError("auto_scale_parameter: need nu > 1 and kappa > 0");
    if (!(N >= 1.0)) throw DomainError("auto_scale_parameter: N must be at least 1");
    if (kind == "krr") {
        const double s = kappa > 2.0 * nu ? nu / (2.0 * nu + 1.0) : nu / (kappa + 1.0);
        return std::pow(N, -s);
    }
    if (kind == "gf") return std::pow(N, nu / (kappa + 1.0));
    throw DomainError("auto_scale_parameter: only krr and gf parameters can be auto-scaled");
}

inline SpectralProfile resolve_profile(const ExperimentConfig& cfg, std::int64_t N) {
    const AutoResolver resolve = [&](std::string_view kind, std::string_view) {
        return auto_scale_parameter(kind, cfg.spectrum.nu, cfg.spectrum.kappa, static_cast<double>(N));
    };
    return parse_profile(cfg.profile, resolve, cfg.base_dir);
}

struct ModelEvaluation {
    LossBreakdown loss;
    std::optional<double> standard_error;
};

inline ModelEvaluation evaluate_model(const ExperimentConfig& cfg, std::int64_t N, unsigned mc_jobs = 0) {
    const bool optimal = cfg.profile == "optimal";
    switch (cfg.model) {
        case ModelKind::circle:
            if (optimal) return {optimal_loss(cfg.spectrum, N, cfg.sigma_sq), std::nullopt};
            return {exact_loss(cfg.spectrum, N, cfg.sigma_sq, resolve_profile(cfg, N)), std::nullopt};
        case ModelKind::nmno:
            if (optimal) return {nmno_optimal_loss(cfg.spectrum, N, cfg.sigma_sq), std::nullopt};
            return {nmno_loss(cfg.spectrum, N, cfg.sigma_sq, resolve_profile(cfg, N)), std::nullopt};
        case ModelKind::wishart:
            if (optimal) throw DomainError("wishart model: the 'optimal' profile is not available");
            return {loss_functional(cfg.spectrum, static_cast<double>(N), cfg.sigma_sq, resolve_profile(cfg, N),
                                    cfg.offdiag),
                    std::nullopt};
        case ModelKind::mc_gaussian:
        case ModelKind::mc_cosine: {
            if (optimal) throw DomainError("Monte-Carlo models: the 'optimal' profile is not available");
            const auto model = cfg.model == ModelKind::mc_gaussian ? FeatureModel::gaussian : FeatureModel::cosine;
            MCOptions opt;
            opt.jobs = mc_jobs;
            // Rows draw from a stream keyed by N so that adding rows leaves the others unchanged.
            const auto seed = derive_seed(cfg.mc->seed, 5, static_cast<std::uint64_t>(N));
            const auto est = mc_expected_loss(model, cfg.spectrum, resolve_profile(cfg, N), cfg.sigma_sq, N, cfg.mc->P,
                                              cfg.mc->reps, seed, opt);
            auto loss = LossBreakdown::from_parts(std::numeric_limits<double>::quiet_NaN(),
                                                  std::numeric_limits<double>::quiet_NaN(),
                                                  std::numeric_limits<double>::quiet_NaN(), Provenance::monte_carlo);
            loss.total = est.mean;
            loss.standard_error = est.standard_error;
            return {loss, est.standard_error};
        }
    }
    throw DomainError("evaluate_model: unknown model");
}

// ---------------------------------------------------------------------------------------------
// Sweeps, CSV and JSON.

struct SweepRow {
    std::int64_t N = 0;
    std::optional<double> total, bias, var_dataset, var_noise, standard_error, slope_local;
    std::string error;  // not serialized to CSV

    bool operator==(const SweepRow& o) const {
        return N == o.N && total == o.total && bias == o.bias && var_dataset == o.var_dataset &&
               var_noise == o.var_noise && standard_error == o.standard_error && slope_local == o.slope_local;
    }
};

struct AsymptoticOverlay {
    double rate = 0.0;      // L ~ C N^{-rate}
    double constant = 0.0;  // C
    std::string source;
};

struct SweepSummary {
    std::optional<double> slope;  // least-squares log-log slope over the top half of the grid
    std::size_t fit_points = 0;
    std::optional<AsymptoticOverlay> overlay;
    std::vector<std::pair<std::int64_t, std::string>> errors;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    SweepSummary summary;
};

inline std::optional<double> finite_or_empty(double v) {
    if (std::isfinite(v)) return v;
    return std::nullopt;
}

// Predicted noisy-phase asymptotics for auto-scaled krr or gf.
inline std::optional<AsymptoticOverlay> predicted_asymptotics(const ExperimentConfig& cfg) {
    if (!(cfg.sigma_sq > 0.0)) return std::nullopt;
    const auto& s = cfg.spectrum;
    AsymptoticOverlay out;
    if (cfg.profile == "krr:eta=auto") {
        const auto phase = s.kappa > 2.0 * s.nu ? NmnoPhase::saturated : NmnoPhase::nonsaturated;
        if (s.kappa == 2.0 * s.nu) return std::nullopt;
        out.rate = nmno_rate(s.nu, s.kappa, phase);
        out.constant = nmno_limit_constant(NmnoKrr{1.0}, s, cfg.sigma_sq, phase);
        out.source = phase == NmnoPhase::saturated ? "nmno-krr-saturated" : "nmno-krr";
        return out;
    }
    if (cfg.profile == "gf:t=auto") {
        out.rate = nmno_rate(s.nu, s.kappa, NmnoPhase::nonsaturated);
        out.constant = nmno_limit_constant(NmnoGf{1.0}, s, cfg.sigma_sq, NmnoPhase::nonsaturated);
        out.source = "nmno-gf";
        return out;
    }
    return std::nullopt;
}

struct SweepOptions {
    unsigned jobs = 1;
};

inline SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& opt = {}) {
    cfg.validate();
    const std::size_t n = cfg.n_grid.size();
    SweepResult out;
    out.rows.resize(n);
    std::atomic<std::size_t> next{0};
    const unsigned jobs = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(n)));
    const unsigned mc_jobs = jobs > 1 ? 1u : 0u;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            auto& row = out.rows[i];
            row.N = cfg.n_grid[i];
            try {
                const auto ev = evaluate_model(cfg, row.N, mc_jobs);
                row.total = finite_or_empty(ev.loss.total);
                row.bias = finite_or_empty(ev.loss.bias);
                row.var_dataset = finite_or_empty(ev.loss.variance_dataset);
                row.var_noise = finite_or_empty(ev.loss.variance_noise);
                row.standard_error = ev.standard_error;
            } catch (const std::exception& e) {
                row.error = e.what();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto& row = out.rows[i];
        if (!row.error.empty()) out.summary.errors.emplace_back(row.N, row.error);
        if (i > 0 && row.total && out.rows[i - 1].total && *row.total > 0 && *out.rows[i - 1].total > 0)
            row.slope_local = std::log(*row.total / *out.rows[i - 1].total) /
                              std::log(static_cast<double>(row.N) / static_cast<double>(out.rows[i - 1].N));
    }
    std::vector<double> xs, ys;
    for (std::size_t i = n / 2; i < n; ++i)
        if (out.rows[i].total && *out.rows[i].total > 0) {
            xs.push_back(static_cast<double>(out.rows[i].N));
            ys.push_back(*out.rows[i].total);
        }
    if (xs.size() >= 2) out.summary.slope = loglog_slope(xs, ys);
    out.summary.fit_points = xs.size();
    if (cfg.asymptotic_overlay) out.summary.overlay = predicted_asymptotics(cfg);
    return out;
}

inline const char* csv_header() { return "N,total,bias,var_dataset,var_noise,stderr,slope_local"; }

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string emit_csv(const std::vector<SweepRow>& rows) {
    std::string out = std::string(csv_header()) + "\n";
    auto field = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string{}; };
    for (const auto& r : rows) {
        out += std::to_string(r.N) + "," + field(r.total) + "," + field(r.bias) + "," + field(r.var_dataset) + "," +
               field(r.var_noise) + "," + field(r.standard_error) + "," + field(r.slope_local) + "\n";
    }
    return out;
}

inline std::vector<SweepRow> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != csv_header()) throw DomainError("parse_csv: unexpected header");
    std::vector<SweepRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        for (;;) {
            const auto comma = line.find(',', pos);
            cells.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cells.size() != 7) throw DomainError("parse_csv: line " + std::to_string(lineno) + " needs 7 fields");
        auto num = [&](const std::string& c) -> std::optional<double> {
            if (c.empty()) return std::nullopt;
            return std::stod(c);
        };
        SweepRow r;
        r.N = std::stoll(cells[0]);
        r.total = num(cells[1]);
        r.bias = num(cells[2]);
        r.var_dataset = num(cells[3]);
        r.var_noise = num(cells[4]);
        r.standard_error = num(cells[5]);
        r.slope_local = num(cells[6]);
        rows.push_back(r);
    }
    return rows;
}

inline json to_json(const SweepRow& r) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json j{{"N", r.N},
           {"total", opt(r.total)},
           {"bias", opt(r.bias)},
           {"var_dataset", opt(r.var_dataset)},
           {"var_noise", opt(r.var_noise)},
           {"stderr", opt(r.standard_error)},
           {"slope_local", opt(r.slope_local)}};
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

inline json summary_json(const ExperimentConfig& cfg, const SweepResult& res) {
    json j;
    j["name"] = cfg.name;
    j["model"] = to_string(cfg.model);
    j["profile"] = cfg.profile;
    j["sigma_sq"] = cfg.sigma_sq;
    j["spectrum"] = {{"flavor", to_string(cfg.spectrum.flavor)}, {"nu", cfg.spectrum.nu}, {"kappa", cfg.spectrum.kappa}};
    j["slope"] = res.summary.slope ? json(*res.summary.slope) : json(nullptr);
    j["fit_points"] = res.summary.fit_points;
    if (res.summary.overlay) {
        j["asymptotic"] = {{"rate", res.summary.overlay->rate},
                           {"constant", res.summary.overlay->constant},
                           {"source", res.summary.overlay->source}};
    }
    j["errors"] = json::array();
    for (const auto& [N, msg] : res.summary.errors) j["errors"].push_back({{"N", N}, {"message", msg}});
    j["rows"] = json::array();
    for (const auto& r : res.rows) j["rows"].push_back(to_json(r));
    return j;
}

// Companion gnuplot script for a sweep CSV.
inline std::string gnuplot_stub(const std::string& csv_path, const std::string& title) {
    std::ostringstream s;
    s << "set datafile separator ','\n"
      << "set logscale xy\n"
      << "set key autotitle columnhead\n"
      << "set xlabel 'N'\nset ylabel 'generalization error'\n"
      << "set title '" << title << "'\n"
      << "plot '" << csv_path << "' using 1:2 with linespoints title 'total'\n";
    return s.str();
}

// ---------------------------------------------------------------------------------------------
// Model comparison.

struct CompareRow {
    std::int64_t N = 0;
    std::optional<double> total_a, total_b, gap;
    std::string error;
};

struct CompareResult {
    std::vector<CompareRow> rows;
    bool monotone_decreasing = false;
};

inline CompareResult compare_models(const ExperimentConfig& a, const ExperimentConfig& b, const SweepOptions& opt = {}) {
    if (a.n_grid != b.n_grid) throw ConfigError("compared configs must share n_grid", 0, "n_grid");
    if (a.sigma_sq != b.sigma_sq) throw ConfigError("compared configs must share sigma_sq", 0, "sigma_sq");
    if (a.profile != b.profile) throw ConfigError("compared configs must share the profile", 0, "profile");
    if (a.spectrum.nu != b.spectrum.nu || a.spectrum.kappa != b.spectrum.kappa)
        throw ConfigError("compared configs must share nu and kappa", 0, "spectrum");
    const auto ra = run_sweep(a, opt), rb = run_sweep(b, opt);
    CompareResult out;
    for (std::size_t i = 0; i < a.n_grid.size(); ++i) {
        CompareRow row;
        row.N = a.n_grid[i];
        row.total_a = ra.rows[i].total;
        row.total_b = rb.rows[i].total;
        row.error = !ra.rows[i].error.empty() ? ra.rows[i].error : rb.rows[i].error;
        if (row.total_a && row.total_b && *row.total_b != 0.0) row.gap = std::abs(*row.total_a / *row.total_b - 1.0);
        out.rows.push_back(row);
    }
    out.monotone_decreasing = !out.rows.empty();
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        if (!out.rows[i].gap) {
            out.monotone_decreasing = false;
            break;
        }
        if (i > 0 && !(*out.rows[i].gap < *out.rows[i - 1].gap)) out.monotone_decreasing = false;
    }
    return out;
}

inline std::string emit_compare_csv(const CompareResult& r) {
    std::string out = "N,total_a,total_b,gap\n";
    auto field = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string{}; };
    for (const auto& row : r.rows)
        out += std::to_string(row.N) + "," + field(row.total_a) + "," + field(row.total_b) + "," + field(row.gap) + "\n";
    return out;
}

}  // namespace spectral_risk
