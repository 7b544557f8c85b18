#pragma once

#include "edfa/dataset.hpp"
#include "edfa/spectral.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace edfa::mlp {

enum class Activation { Tanh, Sigmoid };

struct MlpConfig {
    std::size_t input_dim = 0;   // grid channels + total input + setpoint
    std::size_t h1 = 128;
    std::size_t h2 = 64;
    std::size_t output_dim = 0;  // channels with a training target
    Activation activation = Activation::Tanh;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t epochs = 2000;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    std::size_t patience = 100;  // epochs without validation improvement
    bool full_batch = false;     // one step per epoch over the whole set, no shuffling
    bool zero_init = false;

    void validate() const;
};

/// (128, 64) up to 40 output channels, (256, 128) above.
std::pair<std::size_t, std::size_t> default_hidden(std::size_t output_channels);

struct Normalization {
    Eigen::VectorXd feature_mean, feature_scale;
    Eigen::VectorXd target_mean, target_scale;
};

struct Weights {
    Eigen::MatrixXd w1, w2, w3;
    Eigen::VectorXd b1, b2, b3;

    std::size_t parameter_count() const;
    Eigen::VectorXd flatten() const;
    void assign(const Eigen::VectorXd& flat);
    bool operator==(const Weights& o) const;
};

struct EpochLoss {
    double train = 0.0;
    double validation = 0.0;  // NaN without a validation split
};

struct MlpModel {
    MlpConfig config;
    GridPtr grid;
    std::vector<std::size_t> output_channels;  // grid index of each output unit
    Normalization norm;
    Weights weights;
    std::vector<EpochLoss> history;
    std::size_t best_epoch = 0;
};

/// Network inputs for one spectrum: every channel's input dBm, the total input
/// power over all channels and the setpoint.
Eigen::VectorXd features(const PowerSpectrum& input, const Setting& setting);

/// Training matrices in normalised units, one column per sample. The mask is 1
/// where the target is defined.
struct Batch {
    Eigen::MatrixXd x, t, mask;
};

/// Masked mean squared error (normalised target units) and its gradient with
/// respect to every weight, flattened in Weights::flatten order.
std::pair<double, Eigen::VectorXd> loss_and_gradient(const MlpModel& model, const Batch& batch);
double loss(const MlpModel& model, const Batch& batch);

/// Builds the normalised batch for `d` against the model's normalisation.
Batch make_batch(const MlpModel& model, const data::Dataset& d);

/// Trains on the records' gains; the masked loss covers each record's valid
/// channels. Deterministic for a given seed.
MlpModel train(const data::Dataset& d, MlpConfig config);

/// Config filled in from the dataset: dimensions, default hidden sizes.
MlpConfig config_for(const data::Dataset& d);

GainSpectrum predict(const MlpModel& model, const PowerSpectrum& input, const Setting& setting);

inline constexpr const char* kMlpSchema = "edfa.mlp/1";

nlohmann::json to_json(const MlpModel& m);
MlpModel from_json(const nlohmann::json& j, const std::string& origin = "model");
void save_model(const std::string& path, const MlpModel& m);
MlpModel load_model(const std::string& path);

}  // namespace edfa::mlp
