#pragma once

#include "edfa/dataset.hpp"
#include "edfa/spectral.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace edfa::eval {

/// Pooled RMSE (dB) over every valid (sample, channel) pair. Masks must match.
double rmse(const std::vector<GainSpectrum>& pred, const std::vector<GainSpectrum>& truth);

/// Signed errors pred − truth over valid pairs, sample-major.
std::vector<double> signed_errors(const std::vector<GainSpectrum>& pred, const std::vector<GainSpectrum>& truth);

/// RMSE of each sample over its own valid channels.
std::vector<double> per_sample_rmse(const std::vector<GainSpectrum>& pred, const std::vector<GainSpectrum>& truth);

/// Empirical CDF of |error|.
class ErrorCdf {
public:
    explicit ErrorCdf(const std::vector<double>& errors);

    /// Fraction of |errors| that are <= e.
    double operator()(double e) const;

    /// Smallest e with CDF(e) >= level; the ceil(level·n)-th order statistic.
    double quantile(double level) const;

    const std::vector<double>& sorted_abs() const noexcept { return sorted_; }

private:
    std::vector<double> sorted_;
};

ErrorCdf error_cdf(const std::vector<double>& errors);
double abs_error_at_cdf(const std::vector<double>& errors, double level = 0.9);

/// Copy of `pred` reduced to the channels valid in `mask`. Throws if the
/// prediction does not cover one of them.
GainSpectrum restrict_to(const GainSpectrum& pred, const std::vector<bool>& mask);

// Experiments ------------------------------------------------------------------

enum class ModelFamily { GreyBox, Mlp };

struct SimulatedSource {
    std::string amplifier;  // config path
    std::string protocol;   // optional protocol path; odd-channel default otherwise
    std::size_t n = 0;
    double noise_db = 0.0;
    std::uint64_t seed = 0;
};

struct MlpOptions {
    std::optional<std::size_t> epochs;
    std::optional<double> learning_rate;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> patience;
    std::optional<std::pair<std::size_t, std::size_t>> hidden;
};

struct ExperimentSpec {
    std::string name = "experiment";
    std::optional<std::string> dataset;      // native dataset path
    std::optional<SimulatedSource> simulate;
    ModelFamily model = ModelFamily::GreyBox;
    std::size_t extremes = 0;
    MlpOptions mlp;
    std::vector<std::size_t> train_sizes;
    std::size_t rounds = 1;
    std::size_t test_size = 400;
    /// Random: a fixed test set of test_size records and a training pool of the
    /// rest. Other strategies: the split's test side is the out-of-distribution
    /// test set and test_size records held out of the train side measure the
    /// in-distribution error.
    data::SplitStrategy split = data::RandomSplit{};
    std::uint64_t seed = 0;
    std::size_t threads = 0;

    void validate() const;
    /// Sizes, rounds and test size only; the source is not checked.
    void validate_plan() const;
};

inline constexpr const char* kExperimentSchema = "edfa.experiment/1";

/// Relative paths in the spec resolve against `base_dir`.
ExperimentSpec experiment_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
ExperimentSpec load_experiment(const std::string& path);
nlohmann::json experiment_to_json(const ExperimentSpec& s);

struct RoundResult {
    std::size_t train_size = 0;
    std::size_t round = 0;
    double rmse_db = 0.0;                   // pooled over the test set
    double mean_sample_rmse_db = 0.0;       // per-sample RMSE averaged
    double cdf90_db = 0.0;
    std::optional<double> rmse_in_distribution_db;
    double max_constraint_residual_db = 0.0;  // grey-box only, 0 otherwise
    std::size_t fit_redraws = 0;              // training draws rejected as non-monotone
    std::vector<double> per_sample_rmse_db;
    std::vector<double> errors_db;
};

struct SizeSummary {
    std::size_t train_size = 0;
    double mean_rmse_db = 0.0;
    double min_rmse_db = 0.0;
    double max_rmse_db = 0.0;
    double std_rmse_db = 0.0;
    double mean_sample_rmse_db = 0.0;
    double mean_cdf90_db = 0.0;
    std::optional<double> mean_rmse_in_distribution_db;
};

struct EvalReport {
    ExperimentSpec spec;
    std::string data_provenance;
    std::size_t test_records = 0;
    std::size_t in_distribution_records = 0;
    std::size_t pool_records = 0;
    std::vector<RoundResult> rounds;  // size-major, then round
    std::vector<SizeSummary> sizes;
};

/// Training draws a grey-box fit rejects as non-monotone are redrawn from the
/// round's stream, at most this many times per round.
inline constexpr std::size_t kMaxFitRedraws = 20;

EvalReport run_experiment(const ExperimentSpec& spec);

/// Same, on an already loaded dataset (the spec's source is ignored).
EvalReport run_experiment(const ExperimentSpec& spec, const data::Dataset& d);

nlohmann::json report_to_json(const EvalReport& r);

/// Columns train_size, round, rmse_db, cdf90_db.
std::string report_csv(const EvalReport& r);

/// Writes report.json and report.csv into `dir`, creating it if needed.
void write_report(const std::string& dir, const EvalReport& r);

}  // namespace edfa::eval
