#pragma once

#include "edfa/spectral.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace edfa::data {

struct RecordMeta {
    std::string source;
    std::uint64_t id = 0;
    std::size_t loaded_count = 0;
    double total_input_dbm = 0.0;  // loaded channels only
};

/// One measurement. At least one of output_raw / gain is present.
struct SampleRecord {
    PowerSpectrum input;
    std::optional<PowerSpectrum> output_raw;
    std::optional<GainSpectrum> gain;
    RecordMeta meta;

    void validate() const;
};

/// Builds the meta block (loaded count and loaded total power) for an input.
RecordMeta describe(const PowerSpectrum& input, std::string source, std::uint64_t id);

struct Dataset {
    GridPtr grid;
    Setting setting;
    std::string provenance;
    std::vector<SampleRecord> records;

    std::size_t size() const noexcept { return records.size(); }
    void validate() const;
};

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices);

/// Random channel-loading protocol: loadable channels are loaded independently
/// with a per-sample probability drawn from `load_probability`; loaded channels
/// get a per-sample average power plus a per-channel perturbation.
struct DatasetProtocol {
    std::vector<bool> loadable;
    std::pair<double, double> load_probability{0.5, 0.5};
    std::pair<double, double> avg_power_range_dbm{-18.0, -14.0};
    double unloaded_power_dbm = -28.0;
    double empty_power_dbm = -80.0;  // channels that are never loadable
    std::pair<double, double> perturbation_range_db{-1.5, 1.5};
    /// When set, records also carry a raw output with this additive noise floor
    /// (linear in mW over frequency) for exercising ASE subtraction.
    std::optional<double> ase_floor_dbm;
    double ase_slope_per_thz = 0.0;  // fractional change of the floor per THz

    void validate(std::size_t channels) const;

    /// Odd-numbered channels (1-based) loadable at random, even ones empty.
    static DatasetProtocol odd_channel_default(std::size_t channels);
};

DatasetProtocol protocol_from_json(const nlohmann::json& j, std::size_t channels);
DatasetProtocol load_protocol(const std::string& path, std::size_t channels);

// Native format -----------------------------------------------------------

inline constexpr const char* kDatasetSchema = "edfa.dataset/1";

/// Header line followed by one JSON record per line; spectra are written with
/// nine significant digits, invalid gains as null.
std::string serialize(const Dataset& d);
Dataset deserialize(const std::string& text, const std::string& origin = "dataset");

void write_dataset(const std::string& path, const Dataset& d);
Dataset read_dataset(const std::string& path);

// Preprocessing -----------------------------------------------------------

/// Which channels are left empty to probe the amplifier's noise floor.
struct AseConvention {
    std::vector<bool> probe;

    /// Even-numbered channels (1-based), i.e. odd indices.
    static AseConvention even_channels(std::size_t channels);
};

/// Noise floor per channel (mW): probe-channel outputs interpolated linearly in
/// mW over frequency, extended flat beyond the outermost probes.
std::vector<double> interpolate_noise_mw(const PowerSpectrum& output_raw, const AseConvention& conv);

/// Replaces the record's gain by (P_out − P_noise) / P_in on non-probe channels.
SampleRecord subtract_ase(const SampleRecord& record, const AseConvention& conv);

Dataset subtract_ase(const Dataset& d, const AseConvention& conv);

// Public dataset ingestion --------------------------------------------------

/// Column layout of an external CSV: which columns hold the input and output
/// spectra (dBm), the grid they map onto and the amplifier setting.
struct IngestMapping {
    char delimiter = ',';
    std::size_t header_rows = 1;
    std::vector<std::size_t> input_columns;
    std::vector<std::size_t> output_columns;
    std::vector<std::string> input_names;   // resolved against the header if set
    std::vector<std::string> output_names;
    GridPtr grid;
    Setting setting;
    std::string source = "public";
};

inline constexpr const char* kIngestMapSchema = "edfa.ingest-map/1";

IngestMapping mapping_from_json(const nlohmann::json& j);
IngestMapping load_mapping(const std::string& path);

/// Gain = output − input on every channel; no noise subtraction.
Dataset ingest_public(const std::string& csv_text, const IngestMapping& map, const std::string& origin);
Dataset ingest_public_file(const std::string& path, const IngestMapping& map);

// Splits ----------------------------------------------------------------------

struct RandomSplit {
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::uint64_t seed = 0;
};

/// Train: more than `threshold` loaded channels; test: fewer. Records with
/// exactly `threshold` are dropped.
struct LoadedCountSplit {
    std::size_t threshold = 12;
};

/// Inclusive dBm ranges on the record's total input power.
struct TotalPowerSplit {
    std::pair<double, double> train_dbm;
    std::pair<double, double> test_dbm;
};

using SplitStrategy = std::variant<RandomSplit, LoadedCountSplit, TotalPowerSplit>;

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

Split split_indices(const Dataset& d, const SplitStrategy& strategy);
std::pair<Dataset, Dataset> split(const Dataset& d, const SplitStrategy& strategy);

SplitStrategy split_from_json(const nlohmann::json& j);
nlohmann::json split_to_json(const SplitStrategy& s);

}  // namespace edfa::data
