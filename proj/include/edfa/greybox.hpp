#pragma once

#include "edfa/dataset.hpp"
#include "edfa/spectral.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <string>
#include <vector>

namespace edfa::greybox {

struct FitMeta {
    std::size_t n_samples = 0;
    std::size_t extremes = 0;
    std::vector<bool> valid;  // channels the model can predict
};

/// Univariate linear gain family G = ΔG·x + G0 plus the operating setting it
/// was fitted under. Immutable once fitted.
struct GreyBoxModel {
    GridPtr grid;
    std::vector<double> delta_g;  // dB, NaN where invalid
    std::vector<double> g0;       // dB, NaN where invalid
    Setting setting;              // nominal setpoint
    double calibration_db = 0.0;  // realised − nominal, from the training data
    FitMeta fit_meta;

    /// Setpoint actually held by the amplifier: nominal + calibration.
    double calibrated_setpoint() const noexcept { return setting.setpoint + calibration_db; }

    void validate() const;
    bool operator==(const GreyBoxModel& o) const;
};

struct FitReport {
    std::size_t n_samples = 0;
    std::size_t extremes_averaged = 0;
    std::vector<double> residual_rmse_db;  // per channel, NaN where invalid
    double calibration_db = 0.0;
    double x_range_before_rescale = 0.0;
    std::vector<std::string> warnings;
};

struct FitResult {
    GreyBoxModel model;
    FitReport report;
};

/// One training example: an input spectrum and the gain measured for it.
struct Sample {
    PowerSpectrum input;
    GainSpectrum gain;
};

/// m = 2 when n >= 8, else m = 1.
std::size_t default_extremes(std::size_t n);

/// Fits ΔG from the mean gain of the m samples with the highest total gain minus
/// that of the m lowest, G0 from the mean of all samples, then rescales ΔG so
/// the training x values span exactly 1. `extremes = 0` selects the default.
FitResult fit(const std::vector<Sample>& samples, const Setting& nominal, std::size_t extremes = 0);
FitResult fit(const data::Dataset& d, std::size_t extremes = 0);

std::vector<Sample> samples_of(const data::Dataset& d);

/// Least-squares position of a gain spectrum along the family, over channels
/// valid in both.
double project_x(const GreyBoxModel& model, const GainSpectrum& gain);

struct SolveResult {
    double x = 0.0;
    double residual_db = 0.0;
    std::size_t iterations = 0;
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;
};

/// Total output (dBm) implied by x, summed over the channels valid in the model.
double implied_output_dbm(const GreyBoxModel& model, const PowerSpectrum& input, double x);

/// Target of the setpoint equation (dBm) for this input.
double target_output_dbm(const GreyBoxModel& model, const PowerSpectrum& input);

/// Setpoint equation residual implied_output_dbm − target_output_dbm; strictly
/// increasing in x when ΔG > 0.
double setpoint_residual_db(const GreyBoxModel& model, const PowerSpectrum& input, double x);

/// Bisection on the setpoint equation, starting from [-3, 4] and doubling the
/// bracket up to 4 times.
SolveResult solve(const GreyBoxModel& model, const PowerSpectrum& input);
double solve_x(const GreyBoxModel& model, const PowerSpectrum& input);

/// ΔG·x + G0 on the model's valid channels.
GainSpectrum predict(const GreyBoxModel& model, const PowerSpectrum& input);

inline constexpr const char* kModelSchema = "edfa.greybox/1";

nlohmann::json to_json(const GreyBoxModel& m);
GreyBoxModel from_json(const nlohmann::json& j, const std::string& origin = "model");
void save_model(const std::string& path, const GreyBoxModel& m);
GreyBoxModel load_model(const std::string& path);

}  // namespace edfa::greybox
