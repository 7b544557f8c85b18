#pragma once

#include "edfa/ode.hpp"
#include "edfa/spectral.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <string>
#include <vector>

namespace edfa::sim {

/// Sum of Gaussian peaks in frequency; the parametric form used for default
/// absorption/emission cross-section spectra.
struct CrossSectionShape {
    struct Peak {
        double amplitude_m2;
        double center_thz;
        double width_thz;  // 1/e half-width
    };
    std::vector<Peak> peaks;

    double at(double frequency_thz) const;
};

/// Physical constants of one doped-fiber stage. Per-channel arrays are aligned
/// to the amplifier's channel grid.
struct EdfStageParams {
    double length_m = 0.0;
    double ion_density = 0.0;       // ions / m^3
    double background_loss = 0.0;   // 1/m, applied to signals and pump alike
    double core_area = 0.0;         // m^2
    double lifetime = 0.0;          // s
    double pump_frequency_thz = 0.0;

    std::vector<double> overlap;    // per channel, (0, 1]
    std::vector<double> sigma_abs;  // per channel, m^2
    std::vector<double> sigma_emi;  // per channel, m^2
    double pump_overlap = 0.0;
    double pump_sigma_abs = 0.0;
    double pump_sigma_emi = 0.0;

    /// Throws InvalidArgument if a physical invariant is violated or the
    /// per-channel arrays do not have `channels` entries.
    void validate(std::size_t channels) const;

    /// True when the two stages differ at most in length.
    bool same_specification(const EdfStageParams& o) const;
};

/// Per-channel insertion loss (dB, non-negative) applied after a stage. Holds
/// passive components and a VOA at fixed attenuation.
struct StageLoss {
    std::vector<double> loss_db;
};

struct Stage {
    EdfStageParams fiber;
    StageLoss loss;
};

struct AmplifierConfig {
    GridPtr grid;
    std::vector<Stage> stages;
    Setting setting;
    double pump_min_mw = 0.0;
    double pump_max_mw = 0.0;
    ode::Tolerances tolerances{};

    void validate() const;
};

/// Per-channel A(λ) and B(λ) in dB: gain_db = A·<N2> + B·L for one stage.
struct GainCoefficients {
    std::vector<double> a_db_per_m;  // dB per metre of integrated inversion
    std::vector<double> b_db_per_m;  // dB per metre of fibre
};

GainCoefficients gain_coefficients(const EdfStageParams& params);

struct StageResult {
    PowerSpectrum output;
    double n2_integral = 0.0;  // ∫ N2(z) dz over the stage, metres
    double pump_out_mw = 0.0;
    std::vector<double> gain_db;  // per channel, every channel
    std::size_t steps = 0;
};

/// Propagates all channels and a forward pump through one stage. The upper
/// level population follows the two-level steady-state closure
/// N2 = Sa / (1 + Sa + Se) at every z.
StageResult propagate_stage(const EdfStageParams& params, const PowerSpectrum& input, double pump_mw,
                            const ode::Tolerances& tol = {});

/// Steady-state upper-level fraction for local signal powers (mW) and pump
/// power (mW); exposed for oracle tests.
double steady_state_n2(const EdfStageParams& params, std::span<const double> signal_mw,
                       std::span<const double> signal_freq_thz, double pump_mw);

struct SimulationResult {
    GainSpectrum gain;          // valid on loaded channels
    std::vector<double> gain_all_db;  // output − input on every channel
    PowerSpectrum output;
    double pump_power_mw = 0.0;
    std::vector<double> n2_integrals;
    double k_total = 0.0;
    double constraint_residual_db = 0.0;
};

/// Chains every stage at a fixed pump power (each stage receives `pump_mw`).
SimulationResult run_at_pump(const AmplifierConfig& config, const PowerSpectrum& input, double pump_mw);

/// Setpoint residual (dB) of the control loop: realised total gain (AGC) or
/// total output power (APC) minus the target. Totals run over every channel, as
/// seen by a broadband monitor tap.
double control_residual(const AmplifierConfig& config, const PowerSpectrum& input,
                        const SimulationResult& result);

/// Finds the pump power meeting the configured setpoint and returns the
/// amplifier state there. Throws SetpointUnreachable naming the limiting bound.
SimulationResult run_amplifier(const AmplifierConfig& config, const PowerSpectrum& input);

struct LinearFamilyCheck {
    double singular_ratio = 0.0;    // σ2 / σ1 of the mean-centred gain matrix
    std::vector<double> a_fit;      // dB per unit k, per channel
    std::vector<double> c_fit;      // dB, per channel
    double max_residual_db = 0.0;   // max |gain − (a·k + c)| over all entries
    std::vector<double> k_values;
    std::vector<std::vector<double>> gains;  // all-channel gain rows
};

/// Simulates every input and checks that the gain rows form a one-parameter
/// affine family in k = Σ<N2>. Rows use the gain on every channel, which the
/// simulator defines even for unloaded channels.
LinearFamilyCheck verify_linear_family(const AmplifierConfig& config,
                                       const std::vector<PowerSpectrum>& inputs,
                                       std::size_t threads = 0);

/// Default C-band fibre used when a config omits explicit tables.
CrossSectionShape default_absorption_shape();
CrossSectionShape default_emission_shape();

AmplifierConfig amplifier_from_json(const nlohmann::json& j);
AmplifierConfig load_amplifier_config(const std::string& path);

/// Stable content hash of a config file's canonical JSON form.
std::string config_hash(const nlohmann::json& j);

inline constexpr const char* kAmplifierSchema = "edfa.amplifier/1";

}  // namespace edfa::sim
