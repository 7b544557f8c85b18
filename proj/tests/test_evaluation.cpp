#include "edfa/evaluation.hpp"
#include "edfa/json_io.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

using namespace edfa;
using testing::agc;
using testing::category_of;

namespace {

GridPtr grid_of(std::size_t n) {
    return make_grid(ChannelGrid::uniform(193.0, 100.0, n));
}

GainSpectrum gains(const GridPtr& g, std::vector<double> v) {
    const std::size_t n = v.size();
    return GainSpectrum(g, std::move(v), std::vector<bool>(n, true));
}

std::vector<GainSpectrum> random_set(const GridPtr& g, std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> u(15.0, 1.0);
    std::bernoulli_distribution keep(0.7);
    std::vector<GainSpectrum> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(g->size());
        std::vector<bool> m(g->size());
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = scale * u(rng);
            m[j] = keep(rng);
        }
        m[0] = true;
        out.emplace_back(g, v, m);
    }
    return out;
}

eval::ExperimentSpec greybox_spec() {
    eval::ExperimentSpec s;
    s.model = eval::ModelFamily::GreyBox;
    s.train_sizes = {4, 8};
    s.rounds = 3;
    s.test_size = 20;
    s.seed = 77;
    s.threads = 1;
    return s;
}

}  // namespace

TEST_CASE("rmse by hand") {
    auto g1 = grid_of(1);
    auto g2 = grid_of(2);
    const std::vector<GainSpectrum> t{gains(g1, {10.0}), gains(g1, {12.0})};
    CHECK(eval::rmse(t, t) == 0.0);
    CHECK(eval::rmse({gains(g1, {10.1}), gains(g1, {11.9})}, t) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(eval::rmse({gains(g2, {10.3, 20.4})}, {gains(g2, {10.0, 20.0})}) ==
          doctest::Approx(0.5 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(eval::rmse({gains(g2, {10.3, 20.4})}, {gains(g2, {10.0, 20.0})}) == doctest::Approx(0.35355).epsilon(1e-5));
}

TEST_CASE("rmse requires matching masks and aligned lists") {
    auto g = grid_of(2);
    const GainSpectrum a(g, {1.0, 2.0}, {true, true});
    const GainSpectrum b(g, {1.0, 2.0}, {true, false});
    CHECK(category_of([&] { eval::rmse({a}, {b}); }) == ErrorCategory::InvalidArgument);
    CHECK(category_of([&] { eval::rmse({a, a}, {a}); }) == ErrorCategory::InvalidArgument);
    CHECK(category_of([&] { eval::rmse({a}, {gains(grid_of(3), {1, 2, 3})}); }) == ErrorCategory::GridMismatch);
}

TEST_CASE("rmse is pooled, permutation invariant and scales linearly") {
    auto g = grid_of(6);
    std::mt19937_64 rng(4);
    const auto truth = random_set(g, 30, rng);
    std::vector<GainSpectrum> pred;
    std::normal_distribution<double> noise(0.0, 0.2);
    for (const auto& t : truth) {
        std::vector<double> v(t.values_db().begin(), t.values_db().end());
        for (double& x : v)
            x += noise(rng);
        pred.emplace_back(g, v, t.valid());
    }
    const double r = eval::rmse(pred, truth);

    std::vector<std::vector<double>> err;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        err.emplace_back();
        for (std::size_t j = 0; j < g->size(); ++j)
            if (truth[i].is_valid(j))
                err.back().push_back(pred[i].db(j) - truth[i].db(j));
    }
    CHECK(r == doctest::Approx(oracle::rmse(err)).epsilon(1e-12));

    auto p2 = pred;
    auto t2 = truth;
    std::vector<std::size_t> perm(truth.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        p2[i] = pred[perm[i]];
        t2[i] = truth[perm[i]];
    }
    CHECK(eval::rmse(p2, t2) == doctest::Approx(r).epsilon(1e-12));

    // Scaling every error by 3 scales the RMSE by 3.
    std::vector<GainSpectrum> p3;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        std::vector<double> v(g->size());
        for (std::size_t j = 0; j < v.size(); ++j)
            v[j] = truth[i].db(j) + 3.0 * (pred[i].db(j) - truth[i].db(j));
        p3.emplace_back(g, v, truth[i].valid());
    }
    CHECK(eval::rmse(p3, truth) == doctest::Approx(3.0 * r).epsilon(1e-10));

    const auto ps = eval::per_sample_rmse(pred, truth);
    REQUIRE(ps.size() == truth.size());
    CHECK(ps[3] == doctest::Approx(oracle::rmse({err[3]})).epsilon(1e-12));
    CHECK(eval::signed_errors(pred, truth).size() ==
          std::accumulate(err.begin(), err.end(), std::size_t{0}, [](auto s, const auto& e) { return s + e.size(); }));
}

TEST_CASE("cdf statistic by hand") {
    std::vector<double> e;
    for (int i = 0; i < 10; ++i)
        e.push_back(0.1 * i);
    CHECK(eval::abs_error_at_cdf(e, 0.9) == doctest::Approx(0.8));
    CHECK(eval::abs_error_at_cdf(std::vector<double>(7, 0.0)) == 0.0);
    const auto cdf = eval::error_cdf({-0.3, 0.1, 0.2, -0.05});
    CHECK(cdf(0.1) == 0.5);
    CHECK(cdf(0.3) == 1.0);
    CHECK(cdf(0.0) == 0.0);
    CHECK(cdf.quantile(1.0) == 0.3);
    CHECK(category_of([&] { eval::abs_error_at_cdf({}); }) == ErrorCategory::InvalidArgument);
    CHECK(category_of([&] { eval::abs_error_at_cdf({0.1}, 0.0); }) == ErrorCategory::InvalidArgument);
}

TEST_CASE("cdf statistic agrees with a brute-force count") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> nd(0.0, 0.1);
    std::uniform_int_distribution<int> len(1, 60);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> e(static_cast<std::size_t>(len(rng)));
        for (double& x : e)
            x = nd(rng);
        if (t % 5 == 0)
            e.push_back(e.front());  // ties
        for (double level : {0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 1.0})
            CHECK(eval::abs_error_at_cdf(e, level) == oracle::abs_error_at_cdf(e, level));
        std::vector<double> a;
        for (double x : e)
            a.push_back(std::abs(x));
        std::sort(a.begin(), a.end());
        CHECK(eval::abs_error_at_cdf(e, 0.9) >= a[(a.size() - 1) / 2]);
    }
}

TEST_CASE("restrict_to reduces a prediction to the truth mask") {
    auto g = grid_of(3);
    const GainSpectrum p(g, {1.0, 2.0, 3.0}, {true, true, true});
    const auto r = eval::restrict_to(p, {true, false, true});
    CHECK(r.is_valid(0));
    CHECK_FALSE(r.is_valid(1));
    CHECK(r.db(2) == 3.0);
    const GainSpectrum partial(g, {1.0, 0.0, 3.0}, {true, false, true});
    CHECK(category_of([&] { eval::restrict_to(partial, {true, true, true}); }) == ErrorCategory::InvalidArgument);
}

TEST_CASE("experiment spec parsing") {
    const auto j = nlohmann::json::parse(R"({
        "schema": "edfa.experiment/1",
        "name": "curve",
        "source": {"simulate": {"amplifier": "amp.json", "n": 100, "noise_db": 0.05, "seed": 3}},
        "model": "mlp",
        "mlp": {"epochs": 50, "hidden": [16, 8]},
        "train_sizes": [4, 8],
        "rounds": 5,
        "test_size": 40,
        "split": {"strategy": "by_loaded_count", "threshold": 12},
        "seed": 9
    })");
    const auto s = eval::experiment_from_json(j, "/data/exp");
    REQUIRE(s.simulate);
    CHECK(s.simulate->amplifier == "/data/exp/amp.json");
    CHECK(s.simulate->noise_db == 0.05);
    CHECK(s.model == eval::ModelFamily::Mlp);
    CHECK(*s.mlp.epochs == 50);
    CHECK(s.mlp.hidden->first == 16);
    CHECK(std::get<data::LoadedCountSplit>(s.split).threshold == 12);
    CHECK(s.rounds == 5);
    const auto back = eval::experiment_from_json(eval::experiment_to_json(s), "/elsewhere");
    CHECK(back.simulate->amplifier == s.simulate->amplifier);
    CHECK(back.train_sizes == s.train_sizes);

    auto bad = j;
    bad["model"] = "forest";
    CHECK(category_of([&] { eval::experiment_from_json(bad); }) == ErrorCategory::Schema);
    bad = j;
    bad.erase("train_sizes");
    CHECK(category_of([&] { eval::experiment_from_json(bad); }) == ErrorCategory::Schema);
    bad = j;
    bad["source"]["dataset"] = "x.ds";
    CHECK(category_of([&] { eval::experiment_from_json(bad).validate(); }) == ErrorCategory::InvalidArgument);
}

TEST_CASE("experiments are deterministic and summaries are plain means") {
    const auto d = testing::simulate(agc(), 60, 21, 0.05);
    auto spec = greybox_spec();
    const auto a = eval::run_experiment(spec, d);
    spec.threads = 3;
    const auto b = eval::run_experiment(spec, d);
    CHECK(eval::report_to_json(a) != nlohmann::json());
    auto ja = eval::report_to_json(a), jb = eval::report_to_json(b);
    ja["experiment"].erase("threads");
    jb["experiment"].erase("threads");
    CHECK(ja.dump() == jb.dump());

    REQUIRE(a.rounds.size() == 6);
    REQUIRE(a.sizes.size() == 2);
    CHECK(a.test_records == 20);
    CHECK(a.pool_records == 40);
    for (std::size_t i = 0; i < 2; ++i) {
        double sum = 0.0, hi = 0.0;
        for (std::size_t r = 0; r < 3; ++r) {
            sum += a.rounds[i * 3 + r].rmse_db;
            hi = std::max(hi, a.rounds[i * 3 + r].rmse_db);
        }
        CHECK(a.sizes[i].mean_rmse_db == doctest::Approx(sum / 3.0).epsilon(1e-14));
        CHECK(a.sizes[i].max_rmse_db == hi);
    }
    for (const auto& r : a.rounds) {
        CHECK(r.rmse_db < 0.12);
        CHECK(r.max_constraint_residual_db < 1e-9);
        CHECK(r.cdf90_db == eval::abs_error_at_cdf(r.errors_db, 0.9));
    }
    // Rounds draw different training sets.
    CHECK(a.rounds[0].rmse_db != a.rounds[1].rmse_db);

    spec.seed = 78;
    CHECK(eval::report_to_json(eval::run_experiment(spec, d))["rounds"][0]["rmse_db"] != ja["rounds"][0]["rmse_db"]);
}

TEST_CASE("non-random splits report in- and out-of-distribution error") {
    const auto d = testing::simulate(agc(), 120, 22);
    auto spec = greybox_spec();
    spec.split = data::LoadedCountSplit{12};
    spec.train_sizes = {8};
    spec.rounds = 2;
    const auto rep = eval::run_experiment(spec, d);
    CHECK(rep.in_distribution_records > 0);
    const auto sp = data::split_indices(d, data::LoadedCountSplit{12});
    CHECK(rep.test_records == std::min<std::size_t>(sp.test.size(), 20));
    for (const auto& r : rep.rounds) {
        REQUIRE(r.rmse_in_distribution_db);
        CHECK(*r.rmse_in_distribution_db < 0.01);
        CHECK(r.rmse_db < 0.01);
    }
    CHECK(rep.sizes[0].mean_rmse_in_distribution_db.has_value());
}

TEST_CASE("infeasible experiments are rejected") {
    const auto d = testing::simulate(agc(), 30, 23);
    auto spec = greybox_spec();
    spec.train_sizes = {4, 11};
    CHECK(category_of([&] { eval::run_experiment(spec, d); }) == ErrorCategory::InfeasibleExperiment);
    spec.train_sizes = {4};
    spec.test_size = 30;
    CHECK(category_of([&] { eval::run_experiment(spec, d); }) == ErrorCategory::InfeasibleExperiment);
    spec.test_size = 10;
    spec.train_sizes = {};
    CHECK(category_of([&] { eval::run_experiment(spec, d); }) == ErrorCategory::InvalidArgument);
}

TEST_CASE("mlp experiments run through the same harness") {
    const auto d = testing::simulate(agc(), 40, 24);
    auto spec = greybox_spec();
    spec.model = eval::ModelFamily::Mlp;
    spec.mlp.epochs = 30;
    spec.mlp.hidden = std::pair<std::size_t, std::size_t>{16, 8};
    spec.train_sizes = {10};
    spec.rounds = 2;
    const auto rep = eval::run_experiment(spec, d);
    REQUIRE(rep.rounds.size() == 2);
    for (const auto& r : rep.rounds) {
        CHECK(std::isfinite(r.rmse_db));
        CHECK(r.max_constraint_residual_db == 0.0);
    }
}

TEST_CASE("reports are written as json and csv") {
    const auto d = testing::simulate(agc(), 40, 25);
    auto spec = greybox_spec();
    spec.rounds = 2;
    const auto rep = eval::run_experiment(spec, d);
    testing::TempDir tmp("report");
    const auto dir = tmp.file("out/nested");
    eval::write_report(dir, rep);
    const auto j = io::load_json(dir + "/report.json");
    CHECK(j["schema"] == "edfa.report/1");
    CHECK(j["rounds"].size() == 4);
    CHECK(j["rounds"][0].contains("errors_db"));
    CHECK_FALSE(j["rounds"][1].contains("errors_db"));

    std::ifstream csv(dir + "/report.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "train_size,round,rmse_db,cdf90_db");
    std::size_t rows = 0;
    while (std::getline(csv, line))
        if (!line.empty())
            ++rows;
    CHECK(rows == 4);
    CHECK(eval::report_csv(rep).find("4,0,") != std::string::npos);
}

TEST_CASE("noisy data-efficiency curve is non-increasing and bounded") {
    const auto d = testing::simulate(agc(), 600, 1, 0.05);
    eval::ExperimentSpec spec;
    spec.train_sizes = {4, 8, 16, 32};
    spec.rounds = 10;
    spec.test_size = 400;
    spec.seed = 7;
    const auto rep = eval::run_experiment(spec, d);
    std::size_t redraws = 0;
    for (const auto& r : rep.rounds) {
        CHECK(r.rmse_db <= 0.12);
        redraws += r.fit_redraws;
    }
    for (std::size_t i = 1; i < rep.sizes.size(); ++i)
        CHECK(rep.sizes[i].mean_rmse_db <= rep.sizes[i - 1].mean_rmse_db);
    // Four noisy samples occasionally rank into a non-monotone fit; those draws are replaced.
    CHECK(redraws <= 10);
    CHECK(eval::report_to_json(rep)["rounds"][0].contains("fit_redraws"));
}
