#include "edfa/simulator.hpp"

#include "edfa/error.hpp"
#include "edfa/json_io.hpp"
#include "edfa/parallel.hpp"

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>

namespace edfa::sim {

namespace {

constexpr double kPlanck = 6.62607015e-34;   // J·s
constexpr double kDbPerNeper = 4.342944819032518;  // 10 / ln(10)

// Channels plus pump share one coefficient layout: index n is the pump.
struct Coefficients {
    std::vector<double> sat_abs;    // Γσa·τ / (hν·A) per mW
    std::vector<double> sat_emi;    // Γσe·τ / (hν·A) per mW
    std::vector<double> rate_inv;   // ρΓ(σe + σa), 1/m
    std::vector<double> rate_abs;   // ρΓσa + α, 1/m
};

Coefficients make_coefficients(const EdfStageParams& p, std::span<const double> freqs_thz) {
    const std::size_t n = freqs_thz.size();
    Coefficients c;
    c.sat_abs.resize(n + 1);
    c.sat_emi.resize(n + 1);
    c.rate_inv.resize(n + 1);
    c.rate_abs.resize(n + 1);
    auto fill = [&](std::size_t k, double gamma, double sa, double se, double f_thz) {
        const double photon = kPlanck * f_thz * 1e12;
        const double per_mw = 1e-3 * p.lifetime / (photon * p.core_area);
        c.sat_abs[k] = gamma * sa * per_mw;
        c.sat_emi[k] = gamma * se * per_mw;
        c.rate_inv[k] = p.ion_density * gamma * (se + sa);
        c.rate_abs[k] = p.ion_density * gamma * sa + p.background_loss;
    };
    for (std::size_t k = 0; k < n; ++k)
        fill(k, p.overlap[k], p.sigma_abs[k], p.sigma_emi[k], freqs_thz[k]);
    fill(n, p.pump_overlap, p.pump_sigma_abs, p.pump_sigma_emi, p.pump_frequency_thz);
    return c;
}

void check_vec(const std::vector<double>& v, std::size_t n, const char* name) {
    if (v.size() != n)
        throw Error(ErrorCategory::GridMismatch, std::string("stage parameter '") + name + "' has " +
                                                     std::to_string(v.size()) + " entries, grid has " +
                                                     std::to_string(n));
}

}  // namespace

double CrossSectionShape::at(double f) const {
    double s = 0.0;
    for (const auto& p : peaks) {
        const double d = (f - p.center_thz) / p.width_thz;
        s += p.amplitude_m2 * std::exp(-d * d);
    }
    return s;
}

void EdfStageParams::validate(std::size_t channels) const {
    if (!(length_m > 0.0) || !(ion_density > 0.0) || !(core_area > 0.0) || !(lifetime > 0.0))
        throw Error(ErrorCategory::InvalidArgument,
                    "stage length, ion density, core area and lifetime must be positive");
    if (!(background_loss >= 0.0))
        throw Error(ErrorCategory::InvalidArgument, "background loss must be non-negative");
    if (!(pump_frequency_thz > 0.0))
        throw Error(ErrorCategory::InvalidArgument, "pump frequency must be positive");
    check_vec(overlap, channels, "overlap");
    check_vec(sigma_abs, channels, "sigma_abs");
    check_vec(sigma_emi, channels, "sigma_emi");
    auto in_unit = [](double g) { return g > 0.0 && g <= 1.0; };
    for (std::size_t k = 0; k < channels; ++k) {
        if (!in_unit(overlap[k]))
            throw Error(ErrorCategory::InvalidArgument, "overlap must lie in (0, 1]");
        if (!(sigma_abs[k] >= 0.0) || !(sigma_emi[k] >= 0.0))
            throw Error(ErrorCategory::InvalidArgument, "cross sections must be non-negative");
    }
    if (!in_unit(pump_overlap) || !(pump_sigma_abs >= 0.0) || !(pump_sigma_emi >= 0.0))
        throw Error(ErrorCategory::InvalidArgument, "invalid pump overlap or cross sections");
}

bool EdfStageParams::same_specification(const EdfStageParams& o) const {
    return ion_density == o.ion_density && background_loss == o.background_loss &&
           core_area == o.core_area && lifetime == o.lifetime &&
           pump_frequency_thz == o.pump_frequency_thz && overlap == o.overlap &&
           sigma_abs == o.sigma_abs && sigma_emi == o.sigma_emi && pump_overlap == o.pump_overlap &&
           pump_sigma_abs == o.pump_sigma_abs && pump_sigma_emi == o.pump_sigma_emi;
}

void AmplifierConfig::validate() const {
    if (!grid)
        throw Error(ErrorCategory::InvalidArgument, "amplifier config has no channel grid");
    if (stages.empty())
        throw Error(ErrorCategory::InvalidArgument, "amplifier needs at least one stage");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        stages[i].fiber.validate(grid->size());
        check_vec(stages[i].loss.loss_db, grid->size(), "loss_db");
        for (double l : stages[i].loss.loss_db)
            if (!(l >= 0.0))
                throw Error(ErrorCategory::InvalidArgument,
                            "stage " + std::to_string(i) + " has a negative insertion loss");
        if (!stages[i].fiber.same_specification(stages[0].fiber))
            throw Error(ErrorCategory::InvalidArgument,
                        "stage " + std::to_string(i) +
                            " fibre differs from stage 0 in more than length");
    }
    if (!(pump_min_mw >= 0.0) || !(pump_max_mw > pump_min_mw))
        throw Error(ErrorCategory::InvalidArgument, "pump limits must satisfy 0 <= min < max");
}

GainCoefficients gain_coefficients(const EdfStageParams& p) {
    GainCoefficients g;
    const std::size_t n = p.overlap.size();
    g.a_db_per_m.resize(n);
    g.b_db_per_m.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        g.a_db_per_m[k] = kDbPerNeper * p.ion_density * p.overlap[k] * (p.sigma_emi[k] + p.sigma_abs[k]);
        g.b_db_per_m[k] = -kDbPerNeper * (p.ion_density * p.overlap[k] * p.sigma_abs[k] + p.background_loss);
    }
    return g;
}

double steady_state_n2(const EdfStageParams& params, std::span<const double> signal_mw,
                       std::span<const double> signal_freq_thz, double pump_mw) {
    const auto c = make_coefficients(params, signal_freq_thz);
    const std::size_t n = signal_mw.size();
    double sa = c.sat_abs[n] * pump_mw, se = c.sat_emi[n] * pump_mw;
    for (std::size_t k = 0; k < n; ++k) {
        sa += c.sat_abs[k] * signal_mw[k];
        se += c.sat_emi[k] * signal_mw[k];
    }
    return sa / (1.0 + sa + se);
}

StageResult propagate_stage(const EdfStageParams& params, const PowerSpectrum& input, double pump_mw,
                            const ode::Tolerances& tol) {
    const std::size_t n = input.size();
    params.validate(n);
    if (!(pump_mw >= 0.0) || !std::isfinite(pump_mw))
        throw Error(ErrorCategory::InvalidArgument, "pump power must be finite and non-negative");

    const auto c = make_coefficients(params, input.grid()->frequencies());
    std::vector<double> p0(n + 1);
    for (std::size_t k = 0; k < n; ++k)
        p0[k] = dbm_to_mw(input.dbm(k));
    p0[n] = pump_mw;

    // State: y[k] = ln(P_k(z) / P_k(0)) for channels and pump, y[n+1] = ∫N2 dz.
    // Integrating the inversion with the same stages as the log-powers makes
    // gain = A·<N2> + B·L hold to round-off for the discrete solution.
    auto rhs = [&](double, std::span<const double> y, std::span<double> dy) {
        double sa = 0.0, se = 0.0;
        for (std::size_t k = 0; k <= n; ++k) {
            const double pk = p0[k] * std::exp(y[k]);
            sa += c.sat_abs[k] * pk;
            se += c.sat_emi[k] * pk;
        }
        const double n2 = sa / (1.0 + sa + se);
        for (std::size_t k = 0; k <= n; ++k)
            dy[k] = c.rate_inv[k] * n2 - c.rate_abs[k];
        dy[n + 1] = n2;
    };

    auto sol = ode::integrate(rhs, std::vector<double>(n + 2, 0.0), 0.0, params.length_m, tol);

    StageResult r{input, 0.0, 0.0, std::vector<double>(n), sol.accepted_steps};
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        r.gain_db[k] = kDbPerNeper * sol.y[k];
        out[k] = input.dbm(k) + r.gain_db[k];
    }
    r.output = PowerSpectrum(input.grid(), std::move(out), input.loaded());
    r.n2_integral = sol.y[n + 1];
    r.pump_out_mw = pump_mw * std::exp(sol.y[n]);
    return r;
}

SimulationResult run_at_pump(const AmplifierConfig& config, const PowerSpectrum& input, double pump_mw) {
    if (!same_grid(config.grid, input.grid()))
        throw Error(ErrorCategory::GridMismatch, "input spectrum grid differs from amplifier grid");
    const std::size_t n = input.size();
    std::vector<double> gain(n, 0.0);
    std::vector<double> n2s;
    PowerSpectrum current = input;
    for (const auto& stage : config.stages) {
        auto r = propagate_stage(stage.fiber, current, pump_mw, config.tolerances);
        std::vector<double> next(n);
        for (std::size_t k = 0; k < n; ++k) {
            gain[k] += r.gain_db[k] - stage.loss.loss_db[k];
            next[k] = r.output.dbm(k) - stage.loss.loss_db[k];
        }
        n2s.push_back(r.n2_integral);
        current = PowerSpectrum(input.grid(), std::move(next), input.loaded());
    }
    SimulationResult res{GainSpectrum(input.grid(), gain, input.loaded()), gain, current, pump_mw,
                         n2s, 0.0, 0.0};
    for (double v : n2s)
        res.k_total += v;
    return res;
}

double control_residual(const AmplifierConfig& config, const PowerSpectrum& input,
                        const SimulationResult& result) {
    const double out_total = total_power(result.output, MaskPolicy::All);
    if (config.setting.mode == ControlMode::APC)
        return out_total - config.setting.setpoint;
    return out_total - total_power(input, MaskPolicy::All) - config.setting.setpoint;
}

SimulationResult run_amplifier(const AmplifierConfig& config, const PowerSpectrum& input) {
    config.validate();
    if (input.loaded_count() == 0)
        throw Error(ErrorCategory::InvalidArgument, "run_amplifier: input has no loaded channel");

    constexpr double kTolDb = 1e-9;
    std::optional<SimulationResult> best;
    auto residual = [&](double pump) {
        auto r = run_at_pump(config, input, pump);
        r.constraint_residual_db = control_residual(config, input, r);
        if (!best || std::abs(r.constraint_residual_db) < std::abs(best->constraint_residual_db))
            best = r;
        return r.constraint_residual_db;
    };

    const double lo = config.pump_min_mw, hi = config.pump_max_mw;
    const double f_lo = residual(lo);
    if (f_lo > 0.0)
        throw Error(ErrorCategory::SetpointUnreachable,
                    "setpoint unreachable: exceeded by " + std::to_string(f_lo) +
                        " dB already at the minimum pump limit " + std::to_string(lo) + " mW");
    const double f_hi = residual(hi);
    if (f_hi < 0.0)
        throw Error(ErrorCategory::SetpointUnreachable,
                    "setpoint unreachable: short by " + std::to_string(-f_hi) +
                        " dB at the maximum pump limit " + std::to_string(hi) + " mW");
    if (std::abs(best->constraint_residual_db) <= kTolDb)
        return *best;

    // Bracketed, monotone residual: TOMS 748 keeps bisection's global
    // convergence but needs far fewer simulator runs.
    auto done = [&](double a, double b) {
        return std::abs(best->constraint_residual_db) <= kTolDb || b - a <= 1e-15 * std::max(1.0, b);
    };
    std::uintmax_t iters = 200;
    boost::math::tools::toms748_solve(residual, lo, hi, f_lo, f_hi, done, iters);
    if (std::abs(best->constraint_residual_db) > kTolDb)
        throw Error(ErrorCategory::SetpointUnreachable,
                    "pump control did not converge: residual " +
                        std::to_string(best->constraint_residual_db) + " dB after " +
                        std::to_string(iters) + " iterations");
    return *best;
}

LinearFamilyCheck verify_linear_family(const AmplifierConfig& config,
                                       const std::vector<PowerSpectrum>& inputs, std::size_t threads) {
    if (inputs.size() < 3)
        throw Error(ErrorCategory::InvalidArgument, "verify_linear_family needs at least 3 inputs");
    const std::size_t rows = inputs.size();
    const std::size_t cols = config.grid->size();
    LinearFamilyCheck out;
    out.k_values.resize(rows);
    out.gains.resize(rows);
    parallel_for(rows, threads, [&](std::size_t i) {
        auto r = run_amplifier(config, inputs[i]);
        out.k_values[i] = r.k_total;
        out.gains[i] = r.gain_all_db;
    });

    Eigen::MatrixXd g(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            g(i, j) = out.gains[i][j];
    const Eigen::RowVectorXd mean = g.colwise().mean();
    const Eigen::MatrixXd centred = g.rowwise() - mean;
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred);
    const auto& sv = svd.singularValues();
    out.singular_ratio = (sv.size() > 1 && sv(0) > 0.0) ? sv(1) / sv(0) : 0.0;

    const Eigen::Map<const Eigen::VectorXd> k(out.k_values.data(), static_cast<Eigen::Index>(rows));
    const double k_mean = k.mean();
    const Eigen::VectorXd dk = k.array() - k_mean;
    const double var = dk.squaredNorm();
    out.a_fit.resize(cols);
    out.c_fit.resize(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        const double a = var > 0.0 ? dk.dot(centred.col(static_cast<Eigen::Index>(j))) / var : 0.0;
        out.a_fit[j] = a;
        out.c_fit[j] = mean(static_cast<Eigen::Index>(j)) - a * k_mean;
        for (std::size_t i = 0; i < rows; ++i)
            out.max_residual_db = std::max(
                out.max_residual_db, std::abs(g(i, j) - (a * out.k_values[i] + out.c_fit[j])));
    }
    return out;
}

CrossSectionShape default_absorption_shape() {
    return {{{2.6e-25, 195.7, 0.6}, {2.0e-25, 194.4, 2.2}}};
}

CrossSectionShape default_emission_shape() {
    return {{{2.4e-25, 195.6, 0.6}, {2.9e-25, 193.6, 2.8}}};
}

namespace {

using nlohmann::json;

std::vector<double> per_channel(const json& j, std::size_t n, const char* name) {
    if (j.is_number())
        return std::vector<double>(n, j.get<double>());
    auto v = io::doubles(j, name);
    if (v.size() != n)
        throw Error(ErrorCategory::Schema, std::string(name) + " has " + std::to_string(v.size()) +
                                               " entries, grid has " + std::to_string(n));
    return v;
}

CrossSectionShape shape_from_json(const json& j) {
    CrossSectionShape s;
    for (const auto& p : io::require(j, "peaks", "cross-section shape"))
        s.peaks.push_back({io::require(p, "amplitude_m2", "peak").get<double>(),
                           io::require(p, "center_thz", "peak").get<double>(),
                           io::require(p, "width_thz", "peak").get<double>()});
    return s;
}

std::vector<double> cross_section(const json& fiber, const char* table_key, const char* shape_key,
                                  const CrossSectionShape& fallback, const ChannelGrid& grid) {
    if (fiber.contains(table_key))
        return per_channel(fiber[table_key], grid.size(), table_key);
    const CrossSectionShape shape = fiber.contains(shape_key) ? shape_from_json(fiber[shape_key]) : fallback;
    std::vector<double> v(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k)
        v[k] = shape.at(grid.frequency(k));
    return v;
}

}  // namespace

AmplifierConfig amplifier_from_json(const json& j) {
    const std::string origin = "amplifier config";
    io::check_schema(j, kAmplifierSchema, origin);
    AmplifierConfig cfg;
    cfg.grid = make_grid(io::grid_from_json(io::require(j, "grid", origin)));
    const std::size_t n = cfg.grid->size();
    cfg.setting.mode = parse_mode(io::require(j, "mode", origin).get<std::string>());
    cfg.setting.setpoint = io::require(j, "setpoint", origin).get<double>();
    const auto limits = io::doubles(io::require(j, "pump_limits_mw", origin), "pump_limits_mw");
    if (limits.size() != 2)
        throw Error(ErrorCategory::Schema, "pump_limits_mw must be [min, max]");
    cfg.pump_min_mw = limits[0];
    cfg.pump_max_mw = limits[1];
    if (j.contains("tolerance")) {
        cfg.tolerances.rel = j["tolerance"].value("rel", cfg.tolerances.rel);
        cfg.tolerances.abs = j["tolerance"].value("abs", cfg.tolerances.abs);
    }

    const auto& f = io::require(j, "fiber", origin);
    EdfStageParams base;
    base.ion_density = io::require(f, "ion_density_m3", "fiber").get<double>();
    base.background_loss = f.value("background_loss_per_m", 0.0);
    base.core_area = io::require(f, "core_area_m2", "fiber").get<double>();
    base.lifetime = io::require(f, "lifetime_s", "fiber").get<double>();
    base.pump_frequency_thz = io::require(f, "pump_frequency_thz", "fiber").get<double>();
    base.overlap = per_channel(io::require(f, "overlap", "fiber"), n, "overlap");
    base.sigma_abs = cross_section(f, "sigma_abs_m2", "sigma_abs_shape", default_absorption_shape(), *cfg.grid);
    base.sigma_emi = cross_section(f, "sigma_emi_m2", "sigma_emi_shape", default_emission_shape(), *cfg.grid);
    base.pump_overlap = io::require(f, "pump_overlap", "fiber").get<double>();
    base.pump_sigma_abs = io::require(f, "pump_sigma_abs_m2", "fiber").get<double>();
    base.pump_sigma_emi = f.value("pump_sigma_emi_m2", 0.0);

    for (const auto& s : io::require(j, "stages", origin)) {
        Stage st;
        st.fiber = base;
        st.fiber.length_m = io::require(s, "length_m", "stage").get<double>();
        st.loss.loss_db = s.contains("loss_db") ? per_channel(s["loss_db"], n, "loss_db")
                                                : std::vector<double>(n, 0.0);
        cfg.stages.push_back(std::move(st));
    }
    cfg.validate();
    return cfg;
}

AmplifierConfig load_amplifier_config(const std::string& path) {
    return amplifier_from_json(io::load_json(path));
}

std::string config_hash(const json& j) {
    // FNV-1a 64 over the canonical dump (nlohmann sorts object keys).
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace edfa::sim
