#include "edfa/spectral.hpp"

#include "edfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace edfa {

std::string_view category_name(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCategory::Schema: return "SCHEMA_ERROR";
    case ErrorCategory::Io: return "IO_ERROR";
    case ErrorCategory::GridMismatch: return "GRID_MISMATCH";
    case ErrorCategory::FitInsufficientSamples: return "FIT_INSUFFICIENT_SAMPLES";
    case ErrorCategory::FitNonMonotone: return "FIT_NON_MONOTONE";
    case ErrorCategory::SetpointUnreachable: return "SETPOINT_UNREACHABLE";
    case ErrorCategory::SolveOutOfBracket: return "SOLVE_OUT_OF_BRACKET";
    case ErrorCategory::AseInconsistent: return "ASE_INCONSISTENT";
    case ErrorCategory::IntegratorUnderflow: return "INTEGRATOR_UNDERFLOW";
    case ErrorCategory::TrainingDiverged: return "TRAINING_DIVERGED";
    case ErrorCategory::EmptySplit: return "EMPTY_SPLIT";
    case ErrorCategory::InfeasibleExperiment: return "INFEASIBLE_EXPERIMENT";
    }
    return "UNKNOWN";
}

std::string_view mode_name(ControlMode m) {
    return m == ControlMode::AGC ? "agc" : "apc";
}

ControlMode parse_mode(std::string_view s) {
    if (s == "agc" || s == "AGC")
        return ControlMode::AGC;
    if (s == "apc" || s == "APC")
        return ControlMode::APC;
    throw Error(ErrorCategory::InvalidArgument, "unknown control mode '" + std::string(s) + "'");
}

ChannelGrid::ChannelGrid(std::vector<double> frequencies_thz, double channel_bandwidth_ghz)
    : freqs_(std::move(frequencies_thz)), bandwidth_ghz_(channel_bandwidth_ghz) {
    if (freqs_.empty())
        throw Error(ErrorCategory::InvalidArgument, "channel grid is empty");
    if (!(bandwidth_ghz_ > 0.0))
        throw Error(ErrorCategory::InvalidArgument, "channel bandwidth must be positive");
    for (std::size_t i = 0; i < freqs_.size(); ++i) {
        if (!std::isfinite(freqs_[i]) || freqs_[i] <= 0.0)
            throw Error(ErrorCategory::InvalidArgument,
                        "channel " + std::to_string(i) + " has non-positive frequency");
        if (i > 0 && freqs_[i] <= freqs_[i - 1])
            throw Error(ErrorCategory::InvalidArgument,
                        "channel frequencies must be strictly increasing (at index " +
                            std::to_string(i) + ")");
    }
}

ChannelGrid ChannelGrid::uniform(double first_thz, double spacing_ghz, std::size_t count) {
    std::vector<double> f(count);
    for (std::size_t i = 0; i < count; ++i)
        f[i] = std::round((first_thz + static_cast<double>(i) * spacing_ghz * 1e-3) * 1e9) / 1e9;  // to the Hz
    return ChannelGrid(std::move(f), spacing_ghz);
}

GridPtr make_grid(ChannelGrid grid) {
    return std::make_shared<const ChannelGrid>(std::move(grid));
}

bool same_grid(const GridPtr& a, const GridPtr& b) {
    if (a == b)
        return true;
    if (!a || !b)
        return false;
    return *a == *b;
}

namespace {

void check_lengths(const GridPtr& grid, std::size_t values, std::size_t mask, const char* what) {
    if (!grid)
        throw Error(ErrorCategory::InvalidArgument, std::string(what) + " has no grid");
    if (values != grid->size() || mask != grid->size())
        throw Error(ErrorCategory::GridMismatch,
                    std::string(what) + " length " + std::to_string(values) +
                        " does not match grid length " + std::to_string(grid->size()));
}

}  // namespace

PowerSpectrum::PowerSpectrum(GridPtr grid, std::vector<double> values_dbm, std::vector<bool> loaded)
    : grid_(std::move(grid)), values_(std::move(values_dbm)), loaded_(std::move(loaded)) {
    check_lengths(grid_, values_.size(), loaded_.size(), "power spectrum");
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (!std::isfinite(values_[i]))
            throw Error(ErrorCategory::InvalidArgument,
                        "power spectrum channel " + std::to_string(i) + " is not finite");
}

PowerSpectrum::PowerSpectrum(GridPtr grid, std::vector<double> values_dbm)
    : PowerSpectrum(grid, values_dbm, std::vector<bool>(values_dbm.size(), true)) {}

std::size_t PowerSpectrum::loaded_count() const noexcept {
    return static_cast<std::size_t>(std::count(loaded_.begin(), loaded_.end(), true));
}

bool PowerSpectrum::operator==(const PowerSpectrum& o) const {
    return same_grid(grid_, o.grid_) && values_ == o.values_ && loaded_ == o.loaded_;
}

GainSpectrum::GainSpectrum(GridPtr grid, std::vector<double> values_db, std::vector<bool> valid)
    : grid_(std::move(grid)), values_(std::move(values_db)), valid_(std::move(valid)) {
    check_lengths(grid_, values_.size(), valid_.size(), "gain spectrum");
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (valid_[i] && !std::isfinite(values_[i]))
            throw Error(ErrorCategory::InvalidArgument,
                        "gain spectrum channel " + std::to_string(i) + " is valid but not finite");
}

std::size_t GainSpectrum::valid_count() const noexcept {
    return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), true));
}

bool GainSpectrum::operator==(const GainSpectrum& o) const {
    if (!same_grid(grid_, o.grid_) || valid_ != o.valid_)
        return false;
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (valid_[i] && values_[i] != o.values_[i])
            return false;
    return true;
}

double dbm_to_mw(double dbm) {
    if (!std::isfinite(dbm))
        throw Error(ErrorCategory::InvalidArgument, "dbm_to_mw: non-finite power");
    return std::pow(10.0, dbm / 10.0);
}

double mw_to_dbm(double mw) {
    if (!(mw > 0.0) || !std::isfinite(mw))
        throw Error(ErrorCategory::InvalidArgument,
                    "mw_to_dbm: power must be positive and finite (got " + std::to_string(mw) + ")");
    return 10.0 * std::log10(mw);
}

double total_power(const PowerSpectrum& s, MaskPolicy policy) {
    double sum = 0.0;
    std::size_t selected = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (policy == MaskPolicy::LoadedOnly && !s.is_loaded(i))
            continue;
        sum += dbm_to_mw(s.dbm(i));
        ++selected;
    }
    if (selected == 0)
        throw Error(ErrorCategory::InvalidArgument, "total_power: no channels selected");
    return mw_to_dbm(sum);
}

PowerSpectrum apply_gain(const PowerSpectrum& input, const GainSpectrum& gain) {
    if (!same_grid(input.grid(), gain.grid()))
        throw Error(ErrorCategory::GridMismatch, "apply_gain: input and gain grids differ");
    std::vector<double> out(input.values_dbm().begin(), input.values_dbm().end());
    for (std::size_t i = 0; i < out.size(); ++i)
        if (gain.is_valid(i))
            out[i] += gain.db(i);
    return PowerSpectrum(input.grid(), std::move(out), input.loaded());
}

double loaded_output_total(const PowerSpectrum& input, const GainSpectrum& gain) {
    if (!same_grid(input.grid(), gain.grid()))
        throw Error(ErrorCategory::GridMismatch, "loaded_output_total: grids differ");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (!input.is_loaded(i) || !gain.is_valid(i))
            continue;
        sum += dbm_to_mw(input.dbm(i) + gain.db(i));
        ++n;
    }
    if (n == 0)
        throw Error(ErrorCategory::InvalidArgument, "loaded_output_total: no loaded channel with gain");
    return mw_to_dbm(sum);
}

}  // namespace edfa
