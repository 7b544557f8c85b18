// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "edfa/dataset.hpp"
#include "edfa/error.hpp"
#include "edfa/evaluation.hpp"
#include "edfa/greybox.hpp"
#include "edfa/json_io.hpp"
#include "edfa/mlp.hpp"
#include "edfa/simulator.hpp"
#include "edfa/synthetic.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

using namespace edfa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string cfg_path(const std::string& name) {
    return std::string(EDFA_TEST_CONFIG_DIR) + "/" + name;
}

const sim::AmplifierConfig& agc() {
    static const auto c = sim::load_amplifier_config(cfg_path("amplifier_agc.json"));
    return c;
}

const sim::AmplifierConfig& apc() {
    static const auto c = sim::load_amplifier_config(cfg_path("amplifier_apc.json"));
    return c;
}

const data::DatasetProtocol& loading_protocol() {
    static const auto p = data::load_protocol(cfg_path("protocol_loading.json"), agc().grid->size());
    return p;
}

data::Dataset simulate(const sim::AmplifierConfig& c, std::size_t n, std::uint64_t seed, double noise = 0.0) {
    sim::GenerateOptions opt;
    opt.n = n;
    opt.seed = seed;
    opt.noise_db = noise;
    return sim::generate_dataset(c, loading_protocol(), opt);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

Outcome linear_family() {
    std::vector<PowerSpectrum> inputs;
    for (std::uint64_t i = 0; i < 200; ++i) {
        auto rng = sim::sample_rng(101, i, 0);
        inputs.push_back(sim::draw_input(agc().grid, loading_protocol(), rng));
    }
    const auto c = sim::verify_linear_family(agc(), inputs);
    return {c.singular_ratio < 1e-6, "sigma2/sigma1=" + fmt(c.singular_ratio)};
}

eval::ExperimentSpec greybox_spec(std::uint64_t seed) {
    eval::ExperimentSpec s;
    s.model = eval::ModelFamily::GreyBox;
    s.extremes = 2;
    s.train_sizes = {8};
    s.rounds = 10;
    s.test_size = 400;
    s.seed = seed;
    return s;
}

double worst_residual = 0.0;

Outcome oracle_equivalence() {
    const auto clean = eval::run_experiment(greybox_spec(1), simulate(agc(), 600, 21));
    const auto noisy = eval::run_experiment(greybox_spec(2), simulate(agc(), 600, 22, 0.05));
    const auto clean_apc = eval::run_experiment(greybox_spec(3), simulate(apc(), 600, 23));
    double worst_clean = 0.0;
    for (const auto* rep : {&clean, &noisy, &clean_apc})
        for (const auto& r : rep->rounds)
            worst_residual = std::max(worst_residual, r.max_constraint_residual_db);
    for (const auto* rep : {&clean, &clean_apc})
        for (const auto& r : rep->rounds)
            worst_clean = std::max(worst_clean, r.rmse_db);
    const double noisy_mean = noisy.sizes[0].mean_rmse_db;
    return {worst_clean < 0.01 && noisy_mean < 0.12,
            "noise-free max RMSE=" + fmt(worst_clean) + " dB (AGC, APC); sigma=0.05 mean RMSE=" + fmt(noisy_mean) +
                " dB over 10 rounds"};
}

Outcome setpoint_constraint() {
    return {worst_residual <= 1e-9, "max |implied total - calibrated setpoint|=" + fmt(worst_residual) + " dB"};
}

Outcome monotone_solve() {
    std::vector<greybox::GreyBoxModel> bases;
    for (std::uint64_t s = 0; s < 4; ++s)
        bases.push_back(greybox::fit(simulate(s % 2 ? apc() : agc(), 10, 300 + s)).model);
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> scale(0.6, 1.4), shift(-0.4, 0.4);
    std::size_t bad_monotone = 0, bad_solve = 0, max_iter = 0;
    double max_res = 0.0;
    for (int t = 0; t < 1000; ++t) {
        auto m = bases[static_cast<std::size_t>(t) % bases.size()];
        for (std::size_t j = 0; j < m.delta_g.size(); ++j)
            if (m.fit_meta.valid[j]) {
                m.delta_g[j] *= scale(rng);
                m.g0[j] += shift(rng);
            }
        auto irng = sim::sample_rng(505, static_cast<std::uint64_t>(t), 0);
        const auto in = sim::draw_input(m.grid, loading_protocol(), irng);
        double prev = -INFINITY;
        for (int k = 0; k <= 140; ++k) {
            const double r = greybox::setpoint_residual_db(m, in, -3.0 + 0.05 * k);
            if (!(r > prev)) {
                ++bad_monotone;
                break;
            }
            prev = r;
        }
        try {
            const auto sr = greybox::solve(m, in);
            max_iter = std::max(max_iter, sr.iterations);
            max_res = std::max(max_res, std::abs(sr.residual_db));
            if (sr.iterations > 60 || !(std::abs(sr.residual_db) < 1e-10))
                ++bad_solve;
        } catch (const Error&) {
            ++bad_solve;
        }
    }
    return {bad_monotone == 0 && bad_solve == 0,
            "non-monotone=" + std::to_string(bad_monotone) + "/1000, failed solves=" + std::to_string(bad_solve) +
                ", max iterations=" + std::to_string(max_iter) + ", max |residual|=" + fmt(max_res) + " dB"};
}

Outcome generalizability() {
    const auto d = simulate(agc(), 2600, 55, 0.05);
    auto gb = greybox_spec(7);
    gb.split = data::LoadedCountSplit{12};
    auto nn = gb;
    nn.model = eval::ModelFamily::Mlp;
    nn.train_sizes = {900};
    const auto rg = eval::run_experiment(gb, d);
    const auto rn = eval::run_experiment(nn, d);
    std::size_t larger = 0, gb_under_two = 0;
    double gb_ratio = 0.0, nn_ratio = 0.0;
    for (std::size_t r = 0; r < 10; ++r) {
        const double fg = rg.rounds[r].rmse_db / *rg.rounds[r].rmse_in_distribution_db;
        const double fn = rn.rounds[r].rmse_db / *rn.rounds[r].rmse_in_distribution_db;
        gb_ratio += fg / 10.0;
        nn_ratio += fn / 10.0;
        larger += fn > fg ? 1 : 0;
        gb_under_two += fg < 2.0 ? 1 : 0;
    }
    const auto& sg = rg.sizes[0];
    const auto& sn = rn.sizes[0];
    return {larger >= 6 && gb_under_two >= 6,
            "grey-box " + fmt(*sg.mean_rmse_in_distribution_db) + " -> " + fmt(sg.mean_rmse_db) + " dB (x" +
                fmt(gb_ratio) + "), MLP " + fmt(*sn.mean_rmse_in_distribution_db) + " -> " + fmt(sn.mean_rmse_db) +
                " dB (x" + fmt(nn_ratio) + "); MLP degrades more in " + std::to_string(larger) +
                "/10 rounds, grey-box factor < 2 in " + std::to_string(gb_under_two) + "/10 (test " +
                std::to_string(rg.test_records) + " OOD, " + std::to_string(rg.in_distribution_records) + " ID)"};
}

Outcome simulator_consistency() {
    double worst_identity = 0.0, worst_fine = 0.0;
    for (const auto* c : {&agc(), &apc()}) {
        for (std::uint64_t s = 0; s < 5; ++s) {
            auto rng = sim::sample_rng(600, s, 0);
            auto in = sim::draw_input(c->grid, loading_protocol(), rng);
            const double pump = 30.0 + 40.0 * static_cast<double>(s);
            for (const auto& stage : c->stages) {
                const auto k = sim::gain_coefficients(stage.fiber);
                const auto r = sim::propagate_stage(stage.fiber, in, pump);
                ode::Tolerances tight;
                tight.rel /= 10.0;
                tight.abs /= 10.0;
                const auto fine = sim::propagate_stage(stage.fiber, in, pump, tight);
                for (std::size_t j = 0; j < in.size(); ++j) {
                    worst_identity = std::max(worst_identity,
                                              std::abs(r.gain_db[j] - (k.a_db_per_m[j] * r.n2_integral +
                                                                       k.b_db_per_m[j] * stage.fiber.length_m)));
                    worst_fine = std::max(worst_fine, std::abs(r.gain_db[j] - fine.gain_db[j]));
                }
                std::vector<double> g(in.size());
                for (std::size_t j = 0; j < in.size(); ++j)
                    g[j] = r.gain_db[j];
                in = apply_gain(in, GainSpectrum(c->grid, g, std::vector<bool>(in.size(), true)));
            }
        }
    }
    return {worst_identity < 1e-6 && worst_fine < 1e-6,
            "max |G - (A<N2> + B L)|=" + fmt(worst_identity) + " dB, max |G - G_fine|=" + fmt(worst_fine) + " dB"};
}

Outcome ase_subtraction() {
    const auto g = make_grid(ChannelGrid::uniform(192.1, 50.0, 3));
    auto record = [&](double noise) {
        PowerSpectrum input(g, {-80.0, -20.0, -80.0}, {false, true, false});
        PowerSpectrum raw(g, {noise, -5.0, noise}, input.loaded());
        return data::SampleRecord{input, raw, std::nullopt, data::describe(input, "acceptance", 0)};
    };
    const data::AseConvention conv{{true, false, true}};
    const double hand = data::subtract_ase(record(-20.0), conv).gain->db(1);
    const double identity = data::subtract_ase(record(-200.0), conv).gain->db(1);
    return {std::abs(hand - 14.860) < 1e-3 && std::abs(identity - 15.0) < 1e-3,
            "hand example gain=" + std::to_string(hand) + " dB, zero-floor gain=" + std::to_string(identity) + " dB"};
}

Outcome mlp_correctness() {
    // Gradient check on every layer.
    const auto d = simulate(agc(), 12, 700);
    auto c = mlp::config_for(d);
    c.epochs = 3;
    c.seed = 9;
    auto m = mlp::train(d, c);
    const auto batch = mlp::make_batch(m, d);
    const auto grad = mlp::loss_and_gradient(m, batch).second;
    const Eigen::VectorXd base = m.weights.flatten();
    std::mt19937_64 rng(71);
    const auto& w = m.weights;
    const std::array<Eigen::Index, 6> sizes{w.w1.size(), w.b1.size(), w.w2.size(), w.b2.size(), w.w3.size(),
                                            w.b3.size()};
    double worst = 0.0;
    Eigen::Index offset = 0;
    for (auto size : sizes) {
        std::uniform_int_distribution<Eigen::Index> pick(offset, offset + size - 1);
        for (int t = 0; t < 10; ++t) {
            const auto i = pick(rng);
            Eigen::VectorXd p = base;
            p[i] += 1e-5;
            m.weights.assign(p);
            const double up = mlp::loss(m, batch);
            p[i] -= 2e-5;
            m.weights.assign(p);
            const double down = mlp::loss(m, batch);
            const double fd = (up - down) / 2e-5;
            worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8}));
        }
        offset += size;
    }

    const auto small = simulate(agc(), 8, 701);
    auto oc = mlp::config_for(small);
    oc.seed = 1;
    const auto fitted = mlp::train(small, oc);
    double ss = 0.0;
    std::size_t n = 0;
    for (const auto& r : small.records) {
        const auto p = mlp::predict(fitted, r.input, small.setting);
        for (std::size_t j = 0; j < p.size(); ++j)
            if (r.gain->is_valid(j)) {
                ss += std::pow(p.db(j) - r.gain->db(j), 2);
                ++n;
            }
    }
    const double overfit = std::sqrt(ss / static_cast<double>(n));

    auto rc = mlp::config_for(d);
    rc.epochs = 30;
    rc.seed = 5;
    const bool identical = mlp::train(d, rc).weights == mlp::train(d, rc).weights;
    return {worst < 1e-4 && overfit < 0.01 && identical,
            "gradient rel. error=" + fmt(worst) + ", 8-sample training RMSE=" + fmt(overfit) +
                " dB, retrain bit-identical=" + (identical ? "yes" : "no")};
}

Outcome metrics() {
    std::mt19937_64 rng(909);
    std::normal_distribution<double> nd(0.0, 0.1);
    std::uniform_int_distribution<int> rows(1, 20), cols(1, 12);
    std::size_t rmse_bad = 0, cdf_bad = 0;
    const auto g = make_grid(ChannelGrid::uniform(193.0, 100.0, 12));
    for (int t = 0; t < 100; ++t) {
        const int n = rows(rng), k = cols(rng);
        std::vector<GainSpectrum> pred, truth;
        std::vector<std::vector<double>> err;
        for (int i = 0; i < n; ++i) {
            std::vector<double> p(12, 0.0), q(12, 0.0);
            std::vector<bool> mask(12, false);
            err.emplace_back();
            for (int j = 0; j < k; ++j) {
                mask[static_cast<std::size_t>(j)] = true;
                q[static_cast<std::size_t>(j)] = 15.0;
                p[static_cast<std::size_t>(j)] = 15.0 + nd(rng);
                err.back().push_back(p[static_cast<std::size_t>(j)] - q[static_cast<std::size_t>(j)]);
            }
            pred.emplace_back(g, p, mask);
            truth.emplace_back(g, q, mask);
        }
        rmse_bad += eval::rmse(pred, truth) == oracle::rmse(err) ? 0 : 1;
        const auto e = eval::signed_errors(pred, truth);
        cdf_bad += eval::abs_error_at_cdf(e, 0.9) == oracle::abs_error_at_cdf(e, 0.9) ? 0 : 1;
    }
    return {rmse_bad == 0 && cdf_bad == 0,
            "RMSE mismatches=" + std::to_string(rmse_bad) + "/100, CDF-90 mismatches=" + std::to_string(cdf_bad) +
                "/100"};
}

Outcome end_to_end() {
    const fs::path dir = fs::temp_directory_path() / ("edfa_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    const std::string cli = EDFA_CLI_PATH;
    const std::string log = (dir / "log.txt").string();
    auto run = [&](const std::string& args) {
        const std::string cmd = "cd \"" + dir.string() + "\" && \"" + cli + "\" " + args + " >> \"" + log + "\" 2>&1";
        return std::system(cmd.c_str());
    };
    std::ofstream(dir / "experiment.json") << R"({
  "schema": "edfa.experiment/1",
  "name": "end-to-end",
  "source": {"dataset": "data.ds"},
  "model": "greybox",
  "extremes": 2,
  "train_sizes": [8],
  "rounds": 5,
  "test_size": 400,
  "seed": 3
})";
    const int a = run("simulate --config \"" + cfg_path("amplifier_agc.json") + "\" --protocol \"" +
                      cfg_path("protocol_loading.json") + "\" -n 500 --seed 12 -o data.ds");
    const int b = a == 0 ? run("fit --data data.ds --mode agc --samples 8 --extremes 2 -o model.gbx") : -1;
    const int c = b == 0 ? run("evaluate --spec experiment.json -o report") : -1;
    Outcome o;
    if (a != 0 || b != 0 || c != 0) {
        std::ifstream f(log);
        std::stringstream ss;
        ss << f.rdbuf();
        o.detail = "pipeline failed: " + ss.str();
    } else {
        const auto j = io::load_json((dir / "report" / "report.json").string());
        double rmse = 0.0, residual = 0.0;
        for (const auto& r : j["rounds"]) {
            rmse = std::max(rmse, r["rmse_db"].get<double>());
            residual = std::max(residual, r["max_constraint_residual_db"].get<double>());
        }
        const bool csv = fs::exists(dir / "report" / "report.csv") && fs::exists(dir / "model.gbx");
        o.pass = rmse < 0.01 && residual <= 1e-9 && csv;
        o.detail = "simulate -> fit -> evaluate: max RMSE=" + fmt(rmse) + " dB, max residual=" + fmt(residual) + " dB";
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
        double budget_s;
    };
    const std::vector<Criterion> criteria{
        {1, "linear gain family", linear_family, 60.0},
        {2, "grey-box oracle equivalence", oracle_equivalence, 120.0},
        {3, "setpoint constraint closure", setpoint_constraint, 0.0},
        {4, "monotone constraint solve", monotone_solve, 0.0},
        {5, "generalizability ordering", generalizability, 0.0},
        {6, "simulator self-consistency", simulator_consistency, 0.0},
        {7, "ASE subtraction", ase_subtraction, 0.0},
        {8, "MLP correctness", mlp_correctness, 0.0},
        {9, "metrics vs brute force", metrics, 0.0},
        {10, "end-to-end CLI", end_to_end, 300.0},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0.0 && secs > c.budget_s) {
            o.pass = false;
            o.detail += " (over the " + fmt(c.budget_s) + " s budget)";
        }
        failed += o.pass ? 0 : 1;
        std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
