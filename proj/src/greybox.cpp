#include "edfa/greybox.hpp"

#include "edfa/error.hpp"
#include "edfa/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace edfa::greybox {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string channel_name(const GridPtr& grid, std::size_t j) {
    std::ostringstream ss;
    ss << "channel " << j << " (" << grid->frequency(j) << " THz)";
    return ss.str();
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Total gain (dB) realised by a sample over the channels in `use`:
// output total for APC, output total minus input total for AGC.
double realised_db(const Setting& s, const PowerSpectrum& in, const GainSpectrum& g,
                   const std::vector<bool>& use) {
    double pin = 0.0, pout = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
        if (!use[j] || !g.is_valid(j))
            continue;
        pin += dbm_to_mw(in.dbm(j));
        pout += dbm_to_mw(in.dbm(j) + g.db(j));
    }
    if (pout <= 0.0)
        throw Error(ErrorCategory::InvalidArgument, "sample has no channel usable for calibration");
    return s.mode == ControlMode::APC ? mw_to_dbm(pout) : mw_to_dbm(pout) - mw_to_dbm(pin);
}

}  // namespace

void GreyBoxModel::validate() const {
    if (!grid)
        throw Error(ErrorCategory::InvalidArgument, "model has no grid");
    const std::size_t n = grid->size();
    if (delta_g.size() != n || g0.size() != n || fit_meta.valid.size() != n)
        throw Error(ErrorCategory::GridMismatch, "model spectra do not match the model grid");
    std::size_t valid = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (!fit_meta.valid[j])
            continue;
        ++valid;
        if (!std::isfinite(delta_g[j]) || !std::isfinite(g0[j]))
            throw Error(ErrorCategory::InvalidArgument, "model is not finite on valid " + channel_name(grid, j));
        if (!(delta_g[j] > 0.0))
            throw Error(ErrorCategory::FitNonMonotone,
                        "model ΔG is not positive on " + channel_name(grid, j));
    }
    if (valid == 0)
        throw Error(ErrorCategory::InvalidArgument, "model has no valid channel");
}

bool GreyBoxModel::operator==(const GreyBoxModel& o) const {
    auto same = [&](const std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size())
            return false;
        for (std::size_t j = 0; j < a.size(); ++j)
            if (fit_meta.valid[j] && a[j] != b[j])
                return false;
        return true;
    };
    return same_grid(grid, o.grid) && fit_meta.valid == o.fit_meta.valid && same(delta_g, o.delta_g) &&
           same(g0, o.g0) && setting == o.setting && calibration_db == o.calibration_db &&
           fit_meta.n_samples == o.fit_meta.n_samples && fit_meta.extremes == o.fit_meta.extremes;
}

std::size_t default_extremes(std::size_t n) {
    return n >= 8 ? 2 : 1;
}

std::vector<Sample> samples_of(const data::Dataset& d) {
    std::vector<Sample> s;
    s.reserve(d.size());
    for (const auto& r : d.records) {
        if (!r.gain)
            throw Error(ErrorCategory::InvalidArgument,
                        "record " + std::to_string(r.meta.id) + " has no gain; run ASE subtraction first");
        s.push_back({r.input, *r.gain});
    }
    return s;
}

double project_x(const GreyBoxModel& m, const GainSpectrum& gain) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < gain.size(); ++j) {
        if (!m.fit_meta.valid[j] || !gain.is_valid(j))
            continue;
        num += m.delta_g[j] * (gain.db(j) - m.g0[j]);
        den += m.delta_g[j] * m.delta_g[j];
    }
    if (den <= 0.0)
        throw Error(ErrorCategory::InvalidArgument, "gain shares no valid channel with the model");
    return num / den;
}

FitResult fit(const std::vector<Sample>& samples, const Setting& nominal, std::size_t extremes) {
    const std::size_t n = samples.size();
    if (n < 2)
        throw Error(ErrorCategory::FitInsufficientSamples,
                    "fit needs at least 2 samples, got " + std::to_string(n));
    const std::size_t m = extremes ? extremes : default_extremes(n);
    if (n < 2 * m)
        throw Error(ErrorCategory::FitInsufficientSamples,
                    "fit with " + std::to_string(m) + " extremes needs at least " + std::to_string(2 * m) +
                        " samples, got " + std::to_string(n));
    const GridPtr grid = samples.front().input.grid();
    const std::size_t ch = grid->size();
    for (const auto& s : samples)
        if (!same_grid(s.input.grid(), grid) || !same_grid(s.gain.grid(), grid))
            throw Error(ErrorCategory::GridMismatch, "training samples are not on a common grid");

    FitResult res;
    GreyBoxModel& model = res.model;
    FitReport& report = res.report;
    model.grid = grid;
    model.setting = nominal;
    model.fit_meta = {n, m, std::vector<bool>(ch, false)};
    report.n_samples = n;
    report.extremes_averaged = m;

    // Rank by the mean dB gain over channels observed in every sample; along
    // the family this is ΔG-weighted and therefore monotone in x.
    std::vector<bool> common(ch, true);
    for (const auto& s : samples)
        for (std::size_t j = 0; j < ch; ++j)
            common[j] = common[j] && s.gain.is_valid(j);
    const bool have_common = std::find(common.begin(), common.end(), true) != common.end();
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t j = 0; j < ch; ++j)
            if (have_common ? common[j] : samples[i].gain.is_valid(j)) {
                sum += samples[i].gain.db(j);
                ++cnt;
            }
        if (cnt == 0)
            throw Error(ErrorCategory::InvalidArgument, "training sample " + std::to_string(i) + " has no valid gain");
        score[i] = sum / static_cast<double>(cnt);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] < score[b]; });
    const std::vector<std::size_t> bottom(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
    const std::vector<std::size_t> top(order.end() - static_cast<std::ptrdiff_t>(m), order.end());

    std::vector<std::size_t> unobserved;
    model.delta_g.assign(ch, kNaN);
    model.g0.assign(ch, kNaN);
    for (std::size_t j = 0; j < ch; ++j) {
        auto mean_over = [&](const std::vector<std::size_t>& idx, double& out) {
            double sum = 0.0;
            std::size_t cnt = 0;
            for (auto i : idx)
                if (samples[i].gain.is_valid(j)) {
                    sum += samples[i].gain.db(j);
                    ++cnt;
                }
            if (cnt)
                out = sum / static_cast<double>(cnt);
            return cnt;
        };
        double all_mean = 0.0;
        if (mean_over(order, all_mean) == 0) {
            unobserved.push_back(j);
            continue;
        }
        double hi = 0.0, lo = 0.0;
        if (mean_over(top, hi) == 0 || mean_over(bottom, lo) == 0) {
            report.warnings.push_back(channel_name(grid, j) +
                                      " not observed among the extreme samples; marked invalid");
            continue;
        }
        const double dg = hi - lo;
        if (!(dg > 0.0))
            throw Error(ErrorCategory::FitNonMonotone,
                        "fitted ΔG is " + std::to_string(dg) + " dB on " + channel_name(grid, j) +
                            "; the data do not follow a monotone gain family");
        model.delta_g[j] = dg;
        model.g0[j] = all_mean;
        model.fit_meta.valid[j] = true;
    }
    if (!unobserved.empty()) {
        std::ostringstream w;
        w << unobserved.size() << " channel(s) never observed in training, marked invalid:";
        for (auto j : unobserved)
            w << ' ' << j;
        report.warnings.push_back(w.str());
    }
    if (std::find(model.fit_meta.valid.begin(), model.fit_meta.valid.end(), true) ==
        model.fit_meta.valid.end())
        throw Error(ErrorCategory::FitInsufficientSamples, "no channel could be fitted");

    // Averaging m > 1 extremes shrinks the x range below 1; restore it.
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = project_x(model, samples[i].gain);
    const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
    const double range = *xmax - *xmin;
    report.x_range_before_rescale = range;
    if (range > 0.0) {
        for (std::size_t j = 0; j < ch; ++j)
            if (model.fit_meta.valid[j])
                model.delta_g[j] *= range;
        for (auto& v : x)
            v /= range;
    }

    report.residual_rmse_db.assign(ch, kNaN);
    for (std::size_t j = 0; j < ch; ++j) {
        if (!model.fit_meta.valid[j])
            continue;
        double ss = 0.0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (samples[i].gain.is_valid(j)) {
                const double e = samples[i].gain.db(j) - (model.delta_g[j] * x[i] + model.g0[j]);
                ss += e * e;
                ++cnt;
            }
        report.residual_rmse_db[j] = std::sqrt(ss / static_cast<double>(cnt));
    }

    std::vector<double> offsets(n);
    for (std::size_t i = 0; i < n; ++i)
        offsets[i] = realised_db(nominal, samples[i].input, samples[i].gain, model.fit_meta.valid) -
                     nominal.setpoint;
    model.calibration_db = mean_of(offsets);
    report.calibration_db = model.calibration_db;
    return res;
}

FitResult fit(const data::Dataset& d, std::size_t extremes) {
    return fit(samples_of(d), d.setting, extremes);
}

namespace {

void check_query(const GreyBoxModel& model, const PowerSpectrum& input) {
    if (!same_grid(model.grid, input.grid()))
        throw Error(ErrorCategory::GridMismatch,
                    "input grid (" + std::to_string(input.size()) + " channels) does not match model grid (" +
                        std::to_string(model.grid->size()) + " channels)");
}

}  // namespace

double implied_output_dbm(const GreyBoxModel& model, const PowerSpectrum& input, double x) {
    check_query(model, input);
    double sum = 0.0;
    for (std::size_t j = 0; j < input.size(); ++j)
        if (model.fit_meta.valid[j])
            sum += std::pow(10.0, (model.delta_g[j] * x + model.g0[j] + input.dbm(j)) / 10.0);
    return mw_to_dbm(sum);
}

double target_output_dbm(const GreyBoxModel& model, const PowerSpectrum& input) {
    check_query(model, input);
    if (model.setting.mode == ControlMode::APC)
        return model.calibrated_setpoint();
    double pin = 0.0;
    for (std::size_t j = 0; j < input.size(); ++j)
        if (model.fit_meta.valid[j])
            pin += dbm_to_mw(input.dbm(j));
    return model.calibrated_setpoint() + mw_to_dbm(pin);
}

double setpoint_residual_db(const GreyBoxModel& model, const PowerSpectrum& input, double x) {
    return implied_output_dbm(model, input, x) - target_output_dbm(model, input);
}

SolveResult solve(const GreyBoxModel& model, const PowerSpectrum& input) {
    check_query(model, input);
    constexpr double kTolDb = 1e-10;
    constexpr int kMaxDoublings = 4;
    constexpr std::size_t kMaxBisections = 200;

    const double target = target_output_dbm(model, input);
    auto f = [&](double x) { return implied_output_dbm(model, input, x) - target; };

    SolveResult r;
    double lo = -3.0, hi = 4.0;
    double f_lo = f(lo), f_hi = f(hi);
    for (int d = 0; d < kMaxDoublings && (f_lo > 0.0 || f_hi < 0.0); ++d) {
        const double width = hi - lo;
        if (f_lo > 0.0) {
            lo -= width;
            f_lo = f(lo);
        } else {
            hi += width;
            f_hi = f(hi);
        }
    }
    r.bracket_lo = lo;
    r.bracket_hi = hi;
    if (f_lo > 0.0 || f_hi < 0.0) {
        std::ostringstream ss;
        ss << "setpoint equation has no root in x in [" << lo << ", " << hi << "] (residual " << f_lo
           << " .. " << f_hi << " dB); input is far outside the training conditions";
        throw Error(ErrorCategory::SolveOutOfBracket, ss.str());
    }

    double x = 0.5 * (lo + hi);
    double fx = f(x);
    while (std::abs(fx) >= kTolDb && r.iterations < kMaxBisections) {
        if (fx > 0.0)
            hi = x;
        else
            lo = x;
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi)
            break;
        x = mid;
        fx = f(x);
        ++r.iterations;
    }
    r.x = x;
    r.residual_db = fx;
    return r;
}

double solve_x(const GreyBoxModel& model, const PowerSpectrum& input) {
    return solve(model, input).x;
}

GainSpectrum predict(const GreyBoxModel& model, const PowerSpectrum& input) {
    const double x = solve_x(model, input);
    std::vector<double> g(model.grid->size(), kNaN);
    for (std::size_t j = 0; j < g.size(); ++j)
        if (model.fit_meta.valid[j])
            g[j] = model.delta_g[j] * x + model.g0[j];
    return GainSpectrum(model.grid, std::move(g), model.fit_meta.valid);
}

// Persistence ----------------------------------------------------------------

namespace {

json masked(const std::vector<double>& v, const std::vector<bool>& valid) {
    json a = json::array();
    for (std::size_t j = 0; j < v.size(); ++j)
        a.push_back(valid[j] ? json(v[j]) : json(nullptr));
    return a;
}

std::vector<double> unmasked(const json& a, const std::string& what, const std::string& origin) {
    if (!a.is_array())
        throw Error(ErrorCategory::Schema, origin + ": " + what + " must be an array");
    std::vector<double> v;
    for (const auto& e : a)
        v.push_back(e.is_null() ? kNaN : e.get<double>());
    return v;
}

}  // namespace

json to_json(const GreyBoxModel& m) {
    json valid = json::array();
    for (bool b : m.fit_meta.valid)
        valid.push_back(b ? 1 : 0);
    return json{{"schema", kModelSchema},
                {"grid", io::grid_to_json(*m.grid)},
                {"delta_g_db", masked(m.delta_g, m.fit_meta.valid)},
                {"g0_db", masked(m.g0, m.fit_meta.valid)},
                {"setting", io::setting_to_json(m.setting)},
                {"calibration_db", m.calibration_db},
                {"fit_meta", {{"n_samples", m.fit_meta.n_samples},
                              {"extremes", m.fit_meta.extremes},
                              {"valid", valid}}}};
}

GreyBoxModel from_json(const json& j, const std::string& origin) {
    io::check_schema(j, kModelSchema, origin);
    GreyBoxModel m;
    m.grid = make_grid(io::grid_from_json(io::require(j, "grid", origin)));
    m.delta_g = unmasked(io::require(j, "delta_g_db", origin), "delta_g_db", origin);
    m.g0 = unmasked(io::require(j, "g0_db", origin), "g0_db", origin);
    m.setting = io::setting_from_json(io::require(j, "setting", origin));
    m.calibration_db = io::require(j, "calibration_db", origin).get<double>();
    const auto& meta = io::require(j, "fit_meta", origin);
    m.fit_meta.n_samples = io::require(meta, "n_samples", origin).get<std::size_t>();
    m.fit_meta.extremes = io::require(meta, "extremes", origin).get<std::size_t>();
    m.fit_meta.valid = io::bools(io::require(meta, "valid", origin), "fit_meta.valid");
    try {
        m.validate();
    } catch (const Error& e) {
        throw Error(ErrorCategory::Schema, origin + ": " + e.what());
    }
    return m;
}

void save_model(const std::string& path, const GreyBoxModel& m) {
    m.validate();
    io::write_text(path, to_json(m).dump(2) + "\n");
}

GreyBoxModel load_model(const std::string& path) {
    return from_json(io::load_json(path), path);
}

}  // namespace edfa::greybox
