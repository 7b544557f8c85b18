#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace edfa {

enum class ControlMode { AGC, APC };

std::string_view mode_name(ControlMode m);
ControlMode parse_mode(std::string_view s);

/// Operating setting of an amplifier: target gain (dB) under AGC, target total
/// output power (dBm) under APC.
struct Setting {
    ControlMode mode = ControlMode::AGC;
    double setpoint = 0.0;

    bool operator==(const Setting&) const = default;
};

/// Ordered channel center frequencies (THz) shared by every spectrum.
class ChannelGrid {
public:
    ChannelGrid(std::vector<double> frequencies_thz, double channel_bandwidth_ghz);

    /// `count` channels starting at `first_thz`, spaced by `spacing_ghz`; the
    /// bandwidth equals the spacing.
    static ChannelGrid uniform(double first_thz, double spacing_ghz, std::size_t count);

    std::size_t size() const noexcept { return freqs_.size(); }
    std::span<const double> frequencies() const noexcept { return freqs_; }
    double frequency(std::size_t i) const { return freqs_.at(i); }
    double bandwidth_ghz() const noexcept { return bandwidth_ghz_; }

    bool operator==(const ChannelGrid&) const = default;

private:
    std::vector<double> freqs_;
    double bandwidth_ghz_;
};

using GridPtr = std::shared_ptr<const ChannelGrid>;

GridPtr make_grid(ChannelGrid grid);

/// True when both pointers name the same grid or equal grids.
bool same_grid(const GridPtr& a, const GridPtr& b);

enum class MaskPolicy { All, LoadedOnly };

/// Per-channel power in dBm. Unloaded channels keep their residual power; the
/// mask, not the value, says whether a channel carries signal.
class PowerSpectrum {
public:
    PowerSpectrum(GridPtr grid, std::vector<double> values_dbm, std::vector<bool> loaded);

    /// Every channel loaded.
    PowerSpectrum(GridPtr grid, std::vector<double> values_dbm);

    const GridPtr& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values_dbm() const noexcept { return values_; }
    double dbm(std::size_t i) const { return values_.at(i); }
    const std::vector<bool>& loaded() const noexcept { return loaded_; }
    bool is_loaded(std::size_t i) const { return loaded_.at(i); }
    std::size_t loaded_count() const noexcept;

    bool operator==(const PowerSpectrum& o) const;

private:
    GridPtr grid_;
    std::vector<double> values_;
    std::vector<bool> loaded_;
};

/// Per-channel gain in dB; only channels flagged valid carry a meaningful value.
class GainSpectrum {
public:
    GainSpectrum(GridPtr grid, std::vector<double> values_db, std::vector<bool> valid);

    const GridPtr& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values_db() const noexcept { return values_; }
    double db(std::size_t i) const { return values_.at(i); }
    const std::vector<bool>& valid() const noexcept { return valid_; }
    bool is_valid(std::size_t i) const { return valid_.at(i); }
    std::size_t valid_count() const noexcept;

    bool operator==(const GainSpectrum& o) const;

private:
    GridPtr grid_;
    std::vector<double> values_;
    std::vector<bool> valid_;
};

double dbm_to_mw(double dbm);
double mw_to_dbm(double mw);

/// Total power (dBm) of the selected channels, summed in linear units.
double total_power(const PowerSpectrum& s, MaskPolicy policy);

/// Output spectrum implied by an input and a gain, i.e. input + gain on each
/// channel. Channels without a valid gain keep the input value.
PowerSpectrum apply_gain(const PowerSpectrum& input, const GainSpectrum& gain);

/// Total output power (dBm) over the loaded channels that also have a valid gain.
double loaded_output_total(const PowerSpectrum& input, const GainSpectrum& gain);

}  // namespace edfa
