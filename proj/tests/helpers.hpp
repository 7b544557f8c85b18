#pragma once

#include "edfa/dataset.hpp"
#include "edfa/error.hpp"
#include "edfa/simulator.hpp"
#include "edfa/synthetic.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

namespace testing {

/// Category of the edfa::Error thrown by `fn`; fails the test if none is thrown.
inline edfa::ErrorCategory category_of(auto&& fn) {
    try {
        fn();
    } catch (const edfa::Error& e) {
        return e.category();
    }
    FAIL("expected an edfa::Error");
    return edfa::ErrorCategory::InvalidArgument;
}

inline std::string config_path(const std::string& name) {
    return std::string(EDFA_TEST_CONFIG_DIR) + "/" + name;
}

inline const edfa::sim::AmplifierConfig& agc() {
    static const auto cfg = edfa::sim::load_amplifier_config(config_path("amplifier_agc.json"));
    return cfg;
}

inline const edfa::sim::AmplifierConfig& apc() {
    static const auto cfg = edfa::sim::load_amplifier_config(config_path("amplifier_apc.json"));
    return cfg;
}

inline edfa::data::Dataset simulate(const edfa::sim::AmplifierConfig& cfg, std::size_t n, std::uint64_t seed,
                                    double noise_db = 0.0) {
    edfa::sim::GenerateOptions opt;
    opt.n = n;
    opt.seed = seed;
    opt.noise_db = noise_db;
    opt.threads = 1;
    return edfa::sim::generate_dataset(cfg, edfa::data::DatasetProtocol::odd_channel_default(cfg.grid->size()),
                                       opt);
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("edfa_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
