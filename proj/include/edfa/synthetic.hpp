#pragma once

#include "edfa/dataset.hpp"
#include "edfa/simulator.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace edfa::sim {

/// Random stream for one sample; a pure function of (seed, index, stream) so
/// samples can be produced in any order or in parallel.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, std::uint32_t stream);

/// Draws one input spectrum according to the protocol.
PowerSpectrum draw_input(const GridPtr& grid, const data::DatasetProtocol& protocol, std::mt19937_64& rng);

struct GenerateOptions {
    std::size_t n = 0;
    double noise_db = 0.0;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    std::string provenance = "simulator";
    /// Inputs whose setpoint the amplifier cannot reach are redrawn up to this
    /// many times before giving up.
    std::size_t max_redraws = 100;
};

/// Simulates `n` protocol inputs. Gains are reported on every loadable channel
/// (loaded or carrying residual power), with zero-mean Gaussian measurement
/// noise of standard deviation `noise_db`.
data::Dataset generate_dataset(const AmplifierConfig& config, const data::DatasetProtocol& protocol,
                               const GenerateOptions& options);

}  // namespace edfa::sim
