#include "edfa/synthetic.hpp"

#include "edfa/error.hpp"
#include "edfa/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace edfa::sim {

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream};
    return std::mt19937_64(seq);
}

PowerSpectrum draw_input(const GridPtr& grid, const data::DatasetProtocol& protocol, std::mt19937_64& rng) {
    const std::size_t n = grid->size();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](const std::pair<double, double>& r) {
        return r.first + (r.second - r.first) * unit(rng);
    };
    for (;;) {
        const double p = uniform(protocol.load_probability);
        std::vector<bool> loaded(n, false);
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (protocol.loadable[i] && unit(rng) < p) {
                loaded[i] = true;
                ++count;
            }
        }
        if (count == 0)
            continue;
        const double avg = uniform(protocol.avg_power_range_dbm);
        std::vector<double> power(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (loaded[i])
                power[i] = avg + uniform(protocol.perturbation_range_db);
            else
                power[i] = protocol.loadable[i] ? protocol.unloaded_power_dbm : protocol.empty_power_dbm;
        }
        return PowerSpectrum(grid, std::move(power), std::move(loaded));
    }
}

data::Dataset generate_dataset(const AmplifierConfig& config, const data::DatasetProtocol& protocol,
                               const GenerateOptions& opt) {
    config.validate();
    const std::size_t n_ch = config.grid->size();
    protocol.validate(n_ch);
    if (opt.n == 0)
        throw Error(ErrorCategory::InvalidArgument, "generate_dataset: n must be at least 1");
    if (std::none_of(protocol.loadable.begin(), protocol.loadable.end(), [](bool b) { return b; }))
        throw Error(ErrorCategory::InvalidArgument, "protocol has no loadable channel");
    if (!(opt.noise_db >= 0.0))
        throw Error(ErrorCategory::InvalidArgument, "noise_db must be non-negative");

    std::vector<std::optional<data::SampleRecord>> records(opt.n);
    parallel_for(opt.n, opt.threads, [&](std::size_t idx) {
        auto rng = sample_rng(opt.seed, idx, 0);
        std::optional<PowerSpectrum> input;
        std::optional<SimulationResult> sim;
        for (std::size_t attempt = 0; !sim; ++attempt) {
            input = draw_input(config.grid, protocol, rng);
            try {
                sim = run_amplifier(config, *input);
            } catch (const Error& e) {
                if (e.category() != ErrorCategory::SetpointUnreachable || attempt >= opt.max_redraws)
                    throw;
            }
        }

        // Separate stream: the noise-free and noisy datasets share inputs.
        auto noise_rng = sample_rng(opt.seed, idx, 1);
        std::normal_distribution<double> noise(0.0, 1.0);
        std::vector<double> gain(n_ch, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t k = 0; k < n_ch; ++k) {
            if (!protocol.loadable[k])
                continue;
            gain[k] = sim->gain_all_db[k];
            if (opt.noise_db > 0.0)
                gain[k] += opt.noise_db * noise(noise_rng);
        }

        data::SampleRecord rec{*input, std::nullopt,
                               GainSpectrum(config.grid, gain, protocol.loadable),
                               data::describe(*input, "simulator", idx)};
        if (protocol.ase_floor_dbm) {
            const auto f = config.grid->frequencies();
            const double mid = 0.5 * (f.front() + f.back());
            const double floor_mw = dbm_to_mw(*protocol.ase_floor_dbm);
            std::vector<double> raw(n_ch);
            for (std::size_t k = 0; k < n_ch; ++k) {
                const double signal_db = protocol.loadable[k] ? gain[k] : sim->gain_all_db[k];
                const double ase = floor_mw * (1.0 + protocol.ase_slope_per_thz * (f[k] - mid));
                raw[k] = mw_to_dbm(dbm_to_mw(input->dbm(k) + signal_db) + ase);
            }
            rec.output_raw = PowerSpectrum(config.grid, std::move(raw), input->loaded());
        }
        records[idx] = std::move(rec);
    });

    data::Dataset d{config.grid, config.setting, opt.provenance, {}};
    d.records.reserve(opt.n);
    for (auto& r : records)
        d.records.push_back(std::move(*r));
    return d;
}

}  // namespace edfa::sim
