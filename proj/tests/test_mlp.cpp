#include "edfa/mlp.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace edfa;
using testing::agc;
using testing::category_of;

namespace {

mlp::MlpConfig small_config(const data::Dataset& d) {
    auto c = mlp::config_for(d);
    c.h1 = 12;
    c.h2 = 8;
    c.epochs = 5;
    c.seed = 4;
    return c;
}

double training_rmse_db(const mlp::MlpModel& m, const data::Dataset& d) {
    double ss = 0.0;
    std::size_t n = 0;
    for (const auto& r : d.records) {
        const auto p = mlp::predict(m, r.input, d.setting);
        for (std::size_t j = 0; j < p.size(); ++j)
            if (r.gain->is_valid(j)) {
                ss += std::pow(p.db(j) - r.gain->db(j), 2);
                ++n;
            }
    }
    return std::sqrt(ss / static_cast<double>(n));
}

// Bitwise equality with NaN entries treated as equal.
bool same_values(const GainSpectrum& a, const GainSpectrum& b) {
    if (a.size() != b.size())
        return false;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double x = a.values_db()[j], y = b.values_db()[j];
        if (!(x == y || (std::isnan(x) && std::isnan(y))))
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("hidden sizes follow the output width") {
    CHECK(mlp::default_hidden(40) == std::pair<std::size_t, std::size_t>{128, 64});
    CHECK(mlp::default_hidden(41) == std::pair<std::size_t, std::size_t>{256, 128});
    const auto d = testing::simulate(agc(), 4, 1);
    const auto c = mlp::config_for(d);
    CHECK(c.input_dim == d.grid->size() + 2);
    CHECK(c.output_dim == 40);
    CHECK(c.h1 == 128);
    auto bad = c;
    bad.h2 = 200;
    CHECK(category_of([&] { bad.validate(); }) == ErrorCategory::InvalidArgument);
}

TEST_CASE("features carry spectrum, total power and setpoint") {
    const auto d = testing::simulate(agc(), 1, 2);
    const auto f = mlp::features(d.records[0].input, d.setting);
    REQUIRE(f.size() == static_cast<Eigen::Index>(d.grid->size() + 2));
    CHECK(f[5] == d.records[0].input.dbm(5));
    CHECK(f[f.size() - 2] == doctest::Approx(total_power(d.records[0].input, MaskPolicy::All)));
    CHECK(f[f.size() - 1] == d.setting.setpoint);
}

TEST_CASE("zero weights and zero step predict the output biases") {
    const auto d = testing::simulate(agc(), 8, 3);
    auto c = small_config(d);
    c.zero_init = true;
    c.learning_rate = 0.0;
    c.epochs = 3;
    const auto m = mlp::train(d, c);

    // Biases stay zero, so predictions sit at the per-channel training mean.
    double expected = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < m.output_channels.size(); ++k) {
        const std::size_t ch = m.output_channels[k];
        double mean = 0.0;
        for (const auto& r : d.records)
            mean += r.gain->db(ch);
        mean /= static_cast<double>(d.size());
        double var = 0.0;
        for (const auto& r : d.records)
            var += std::pow(r.gain->db(ch) - mean, 2);
        var /= static_cast<double>(d.size());
        const auto p = mlp::predict(m, d.records[0].input, d.setting);
        CHECK(p.db(ch) == doctest::Approx(mean).epsilon(1e-12));
        for (const auto& r : d.records) {
            expected += std::pow(r.gain->db(ch) - mean, 2) / var;
            ++count;
        }
    }
    for (const auto& e : m.history)
        CHECK(e.train == doctest::Approx(expected / static_cast<double>(count)).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central differences on every layer") {
    const auto d = testing::simulate(agc(), 12, 5);
    for (auto act : {mlp::Activation::Tanh, mlp::Activation::Sigmoid}) {
        auto c = small_config(d);
        c.activation = act;
        auto m = mlp::train(d, c);
        const auto batch = mlp::make_batch(m, d);
        const auto [value, grad] = mlp::loss_and_gradient(m, batch);
        CHECK(value == doctest::Approx(mlp::loss(m, batch)).epsilon(1e-14));

        const Eigen::VectorXd base = m.weights.flatten();
        const auto& w = m.weights;
        const std::array<Eigen::Index, 6> sizes{w.w1.size(), w.b1.size(), w.w2.size(),
                                                w.b2.size(), w.w3.size(), w.b3.size()};
        std::mt19937_64 rng(99);
        Eigen::Index offset = 0;
        double worst = 0.0;
        for (auto size : sizes) {
            std::uniform_int_distribution<Eigen::Index> pick(offset, offset + size - 1);
            for (int t = 0; t < 10; ++t) {
                const Eigen::Index i = pick(rng);
                const double h = 1e-5;
                Eigen::VectorXd p = base;
                p[i] += h;
                m.weights.assign(p);
                const double up = mlp::loss(m, batch);
                p[i] -= 2 * h;
                m.weights.assign(p);
                const double down = mlp::loss(m, batch);
                const double fd = (up - down) / (2 * h);
                const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
                worst = std::max(worst, std::abs(fd - grad[i]) / scale);
            }
            offset += size;
        }
        m.weights.assign(base);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("eight samples are memorised") {
    const auto d = testing::simulate(agc(), 8, 7);
    auto c = mlp::config_for(d);
    c.seed = 1;
    const auto m = mlp::train(d, c);
    CHECK(m.history.size() == c.epochs);
    CHECK(training_rmse_db(m, d) < 0.01);
}

TEST_CASE("retraining with the same seed is bit-identical") {
    const auto d = testing::simulate(agc(), 30, 8);
    auto c = small_config(d);
    c.epochs = 20;
    const auto a = mlp::train(d, c);
    const auto b = mlp::train(d, c);
    CHECK(a.weights == b.weights);
    c.seed = 5;
    CHECK_FALSE(mlp::train(d, c).weights == a.weights);
}

TEST_CASE("prediction is pure and constant without hidden weights") {
    const auto d = testing::simulate(agc(), 10, 9);
    auto m = mlp::train(d, small_config(d));
    const auto a = mlp::predict(m, d.records[0].input, d.setting);
    const auto b = mlp::predict(m, d.records[0].input, d.setting);
    CHECK(same_values(a, b));
    CHECK(a.valid() == d.records[0].gain->valid());

    m.weights.w1.setZero();
    const auto c1 = mlp::predict(m, d.records[1].input, d.setting);
    const auto c2 = mlp::predict(m, d.records[2].input, d.setting);
    CHECK(same_values(c1, c2));
}

TEST_CASE("full-batch loss is non-increasing at a small step") {
    const auto d = testing::simulate(agc(), 9, 10);
    auto c = small_config(d);
    c.full_batch = true;
    c.momentum = 0.0;
    c.learning_rate = 1e-3;
    c.epochs = 200;
    const auto m = mlp::train(d, c);
    REQUIRE(m.history.size() == 200);
    for (std::size_t e = 1; e < m.history.size(); ++e)
        CHECK(m.history[e].train <= m.history[e - 1].train);
    CHECK(m.history.back().train < m.history.front().train);
}

TEST_CASE("early stopping keeps the best validation weights") {
    const auto d = testing::simulate(agc(), 40, 11);
    auto c = small_config(d);
    c.epochs = 400;
    c.patience = 5;
    c.learning_rate = 0.05;
    const auto m = mlp::train(d, c);
    REQUIRE_FALSE(m.history.empty());
    CHECK(m.history.size() <= c.epochs);
    double best = INFINITY;
    for (const auto& e : m.history)
        best = std::min(best, e.validation);
    CHECK(m.history[m.best_epoch].validation == best);
    if (m.history.size() < c.epochs)
        CHECK(m.history.size() == m.best_epoch + 1 + c.patience);
}

TEST_CASE("a runaway step size is reported as divergence") {
    const auto d = testing::simulate(agc(), 16, 12);
    auto c = small_config(d);
    c.learning_rate = 1e6;
    c.epochs = 500;
    CHECK(category_of([&] { mlp::train(d, c); }) == ErrorCategory::TrainingDiverged);
}

TEST_CASE("model persistence and grid checks") {
    const auto d = testing::simulate(agc(), 12, 13);
    const auto m = mlp::train(d, small_config(d));
    testing::TempDir tmp("mlp");
    mlp::save_model(tmp.file("m.json"), m);
    const auto back = mlp::load_model(tmp.file("m.json"));
    CHECK(back.weights == m.weights);
    CHECK(back.output_channels == m.output_channels);
    CHECK(back.history.size() == m.history.size());
    CHECK(same_values(mlp::predict(back, d.records[3].input, d.setting),
                      mlp::predict(m, d.records[3].input, d.setting)));

    auto j = mlp::to_json(m);
    j["weights"].erase("w2");
    CHECK(category_of([&] { mlp::from_json(j); }) == ErrorCategory::Schema);

    const auto other = make_grid(ChannelGrid::uniform(193.0, 100.0, 4));
    const PowerSpectrum in(other, std::vector<double>(4, -15.0));
    CHECK(category_of([&] { mlp::predict(m, in, d.setting); }) == ErrorCategory::GridMismatch);
}
