#include "edfa/evaluation.hpp"

#include "edfa/error.hpp"
#include "edfa/greybox.hpp"
#include "edfa/json_io.hpp"
#include "edfa/mlp.hpp"
#include "edfa/parallel.hpp"
#include "edfa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace edfa::eval {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_aligned(const std::vector<GainSpectrum>& pred, const std::vector<GainSpectrum>& truth) {
    if (pred.size() != truth.size())
        throw Error(ErrorCategory::InvalidArgument, "prediction and truth lists differ in length (" +
                                                        std::to_string(pred.size()) + " vs " +
                                                        std::to_string(truth.size()) + ")");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!same_grid(pred[i].grid(), truth[i].grid()))
            throw Error(ErrorCategory::GridMismatch, "sample " + std::to_string(i) + ": grids differ");
        if (pred[i].valid() != truth[i].valid())
            throw Error(ErrorCategory::InvalidArgument, "sample " + std::to_string(i) + ": validity masks differ");
    }
}

double sum_sq(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v)
        s += x * x;
    return s;
}

}  // namespace

std::vector<double> signed_errors(const std::vector<GainSpectrum>& pred, const std::vector<GainSpectrum>& truth) {
    check_aligned(pred, truth);
    std::vector<double> e;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t j = 0; j < pred[i].size(); ++j)
            if (truth[i].is_valid(j))
                e.push_back(pred[i].db(j) - truth[i].db(j));
    return e;
}

double rmse(const std::vector<GainSpectrum>& pred, const std::vector<GainSpectrum>& truth) {
    const auto e = signed_errors(pred, truth);
    if (e.empty())
        throw Error(ErrorCategory::InvalidArgument, "no valid (sample, channel) pair to score");
    return std::sqrt(sum_sq(e) / static_cast<double>(e.size()));
}

std::vector<double> per_sample_rmse(const std::vector<GainSpectrum>& pred, const std::vector<GainSpectrum>& truth) {
    check_aligned(pred, truth);
    std::vector<double> out;
    out.reserve(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        out.push_back(rmse({pred[i]}, {truth[i]}));
    return out;
}

ErrorCdf::ErrorCdf(const std::vector<double>& errors) {
    if (errors.empty())
        throw Error(ErrorCategory::InvalidArgument, "error CDF needs at least one error");
    sorted_.reserve(errors.size());
    for (double e : errors) {
        if (!std::isfinite(e))
            throw Error(ErrorCategory::InvalidArgument, "error CDF input is not finite");
        sorted_.push_back(std::abs(e));
    }
    std::sort(sorted_.begin(), sorted_.end());
}

double ErrorCdf::operator()(double e) const {
    const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), e);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

double ErrorCdf::quantile(double level) const {
    if (!(level > 0.0 && level <= 1.0))
        throw Error(ErrorCategory::InvalidArgument, "CDF level must be in (0, 1]");
    const double n = static_cast<double>(sorted_.size());
    // Guard against level·n landing a hair above an integer.
    auto k = static_cast<std::size_t>(std::ceil(level * n - 1e-9 * n));
    k = std::clamp<std::size_t>(k, 1, sorted_.size());
    return sorted_[k - 1];
}

ErrorCdf error_cdf(const std::vector<double>& errors) {
    return ErrorCdf(errors);
}

double abs_error_at_cdf(const std::vector<double>& errors, double level) {
    return ErrorCdf(errors).quantile(level);
}

GainSpectrum restrict_to(const GainSpectrum& pred, const std::vector<bool>& mask) {
    if (mask.size() != pred.size())
        throw Error(ErrorCategory::GridMismatch, "mask length does not match the prediction");
    std::vector<double> v(pred.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < pred.size(); ++j) {
        if (!mask[j])
            continue;
        if (!pred.is_valid(j))
            throw Error(ErrorCategory::InvalidArgument,
                        "prediction does not cover channel " + std::to_string(j) + " present in the truth");
        v[j] = pred.db(j);
    }
    return GainSpectrum(pred.grid(), std::move(v), mask);
}

// Experiment spec ----------------------------------------------------------------

void ExperimentSpec::validate() const {
    if (dataset.has_value() == simulate.has_value())
        throw Error(ErrorCategory::InvalidArgument, "experiment needs exactly one source: dataset or simulate");
    if (simulate && (simulate->amplifier.empty() || simulate->n == 0))
        throw Error(ErrorCategory::InvalidArgument, "simulated source needs an amplifier config and n >= 1");
    validate_plan();
}

void ExperimentSpec::validate_plan() const {
    if (train_sizes.empty() || rounds == 0 || test_size == 0)
        throw Error(ErrorCategory::InvalidArgument, "experiment needs train sizes, rounds >= 1 and test_size >= 1");
    for (auto s : train_sizes)
        if (s == 0)
            throw Error(ErrorCategory::InvalidArgument, "training size must be positive");
}

namespace {

std::string resolve(const std::string& p, const std::string& base) {
    if (p.empty() || fs::path(p).is_absolute())
        return p;
    return (fs::path(base) / p).lexically_normal().string();
}

}  // namespace

ExperimentSpec experiment_from_json(const json& j, const std::string& base_dir) {
    const std::string origin = "experiment";
    io::check_schema(j, kExperimentSchema, origin);
    ExperimentSpec s;
    try {
        s.name = j.value("name", s.name);
        const auto& src = io::require(j, "source", origin);
        if (src.contains("dataset"))
            s.dataset = resolve(src["dataset"].get<std::string>(), base_dir);
        if (src.contains("simulate")) {
            const auto& sim = src["simulate"];
            SimulatedSource ss;
            ss.amplifier = resolve(io::require(sim, "amplifier", origin).get<std::string>(), base_dir);
            ss.protocol = resolve(sim.value("protocol", std::string{}), base_dir);
            ss.n = io::require(sim, "n", origin).get<std::size_t>();
            ss.noise_db = sim.value("noise_db", 0.0);
            ss.seed = sim.value("seed", std::uint64_t{0});
            s.simulate = ss;
        }
        const auto model = io::require(j, "model", origin).get<std::string>();
        if (model == "greybox")
            s.model = ModelFamily::GreyBox;
        else if (model == "mlp")
            s.model = ModelFamily::Mlp;
        else
            throw Error(ErrorCategory::Schema, "unknown model family '" + model + "'");
        s.extremes = j.value("extremes", std::size_t{0});
        if (j.contains("mlp")) {
            const auto& m = j["mlp"];
            if (m.contains("epochs"))
                s.mlp.epochs = m["epochs"].get<std::size_t>();
            if (m.contains("learning_rate"))
                s.mlp.learning_rate = m["learning_rate"].get<double>();
            if (m.contains("batch_size"))
                s.mlp.batch_size = m["batch_size"].get<std::size_t>();
            if (m.contains("patience"))
                s.mlp.patience = m["patience"].get<std::size_t>();
            if (m.contains("hidden")) {
                const auto h = m["hidden"].get<std::vector<std::size_t>>();
                if (h.size() != 2)
                    throw Error(ErrorCategory::Schema, "mlp.hidden must list two sizes");
                s.mlp.hidden = std::pair{h[0], h[1]};
            }
        }
        s.train_sizes = io::require(j, "train_sizes", origin).get<std::vector<std::size_t>>();
        s.rounds = j.value("rounds", std::size_t{1});
        s.test_size = j.value("test_size", std::size_t{400});
        if (j.contains("split"))
            s.split = data::split_from_json(j["split"]);
        s.seed = j.value("seed", std::uint64_t{0});
        s.threads = j.value("threads", std::size_t{0});
    } catch (const json::exception& e) {
        throw Error(ErrorCategory::Schema, origin + ": " + e.what());
    }
    s.validate();
    return s;
}

ExperimentSpec load_experiment(const std::string& path) {
    return experiment_from_json(io::load_json(path), fs::path(path).parent_path().string());
}

json experiment_to_json(const ExperimentSpec& s) {
    json j{{"schema", kExperimentSchema},
           {"name", s.name},
           {"model", s.model == ModelFamily::GreyBox ? "greybox" : "mlp"},
           {"train_sizes", s.train_sizes},
           {"rounds", s.rounds},
           {"test_size", s.test_size},
           {"split", data::split_to_json(s.split)},
           {"seed", s.seed}};
    if (s.dataset)
        j["source"] = {{"dataset", *s.dataset}};
    if (s.simulate)
        j["source"] = {{"simulate",
                        {{"amplifier", s.simulate->amplifier},
                         {"protocol", s.simulate->protocol},
                         {"n", s.simulate->n},
                         {"noise_db", s.simulate->noise_db},
                         {"seed", s.simulate->seed}}}};
    if (s.model == ModelFamily::GreyBox) {
        j["extremes"] = s.extremes;
    } else {
        json m = json::object();
        if (s.mlp.epochs)
            m["epochs"] = *s.mlp.epochs;
        if (s.mlp.learning_rate)
            m["learning_rate"] = *s.mlp.learning_rate;
        if (s.mlp.batch_size)
            m["batch_size"] = *s.mlp.batch_size;
        if (s.mlp.patience)
            m["patience"] = *s.mlp.patience;
        if (s.mlp.hidden)
            m["hidden"] = {s.mlp.hidden->first, s.mlp.hidden->second};
        j["mlp"] = m;
    }
    return j;
}

// Running ------------------------------------------------------------------------

namespace {

std::mt19937_64 round_rng(std::uint64_t seed, std::size_t size, std::size_t round) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(size), static_cast<std::uint32_t>(round), 0x65u};
    return std::mt19937_64(seq);
}

std::vector<std::size_t> draw(std::vector<std::size_t> from, std::size_t k, std::mt19937_64& rng) {
    std::shuffle(from.begin(), from.end(), rng);
    from.resize(k);
    std::sort(from.begin(), from.end());
    return from;
}

struct Scored {
    double rmse, mean_sample, cdf90, max_residual;
    std::vector<double> per_sample, errors;
};

// Trains one model on `train` and returns a scoring function over records.
class Trained {
public:
    Trained(const ExperimentSpec& spec, const data::Dataset& train, std::uint64_t seed) : setting_(train.setting) {
        if (spec.model == ModelFamily::GreyBox) {
            gb_ = greybox::fit(train, spec.extremes).model;
        } else {
            auto cfg = mlp::config_for(train);
            cfg.seed = seed;
            if (spec.mlp.epochs)
                cfg.epochs = *spec.mlp.epochs;
            if (spec.mlp.learning_rate)
                cfg.learning_rate = *spec.mlp.learning_rate;
            if (spec.mlp.batch_size)
                cfg.batch_size = *spec.mlp.batch_size;
            if (spec.mlp.patience)
                cfg.patience = *spec.mlp.patience;
            if (spec.mlp.hidden)
                std::tie(cfg.h1, cfg.h2) = *spec.mlp.hidden;
            nn_ = mlp::train(train, cfg);
        }
    }

    Scored score(const data::Dataset& d, const std::vector<std::size_t>& idx) const {
        std::vector<GainSpectrum> pred, truth;
        pred.reserve(idx.size());
        truth.reserve(idx.size());
        double max_res = 0.0;
        for (auto i : idx) {
            const auto& r = d.records[i];
            GainSpectrum p = gb_ ? greybox::predict(*gb_, r.input) : mlp::predict(*nn_, r.input, setting_);
            if (gb_) {
                double out_mw = 0.0;
                for (std::size_t j = 0; j < p.size(); ++j)
                    if (p.is_valid(j))
                        out_mw += dbm_to_mw(r.input.dbm(j) + p.db(j));
                const double res = mw_to_dbm(out_mw) - greybox::target_output_dbm(*gb_, r.input);
                max_res = std::max(max_res, std::abs(res));
            }
            pred.push_back(restrict_to(p, r.gain->valid()));
            truth.push_back(*r.gain);
        }
        Scored s;
        s.errors = signed_errors(pred, truth);
        s.rmse = std::sqrt(sum_sq(s.errors) / static_cast<double>(s.errors.size()));
        s.per_sample = per_sample_rmse(pred, truth);
        s.mean_sample = std::accumulate(s.per_sample.begin(), s.per_sample.end(), 0.0) /
                        static_cast<double>(s.per_sample.size());
        s.cdf90 = abs_error_at_cdf(s.errors, 0.9);
        s.max_residual = max_res;
        return s;
    }

private:
    Setting setting_;
    std::optional<greybox::GreyBoxModel> gb_;
    std::optional<mlp::MlpModel> nn_;
};

data::Dataset load_source(const ExperimentSpec& spec) {
    if (spec.dataset)
        return data::read_dataset(*spec.dataset);
    const auto& s = *spec.simulate;
    const auto amp = sim::load_amplifier_config(s.amplifier);
    const auto protocol = s.protocol.empty() ? data::DatasetProtocol::odd_channel_default(amp.grid->size())
                                             : data::load_protocol(s.protocol, amp.grid->size());
    sim::GenerateOptions opt;
    opt.n = s.n;
    opt.noise_db = s.noise_db;
    opt.seed = s.seed;
    opt.threads = spec.threads;
    opt.provenance = "simulator:" + sim::config_hash(io::load_json(s.amplifier));
    return sim::generate_dataset(amp, protocol, opt);
}

}  // namespace

EvalReport run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    return run_experiment(spec, load_source(spec));
}

EvalReport run_experiment(const ExperimentSpec& spec, const data::Dataset& d) {
    spec.validate_plan();
    d.validate();
    for (const auto& r : d.records)
        if (!r.gain)
            throw Error(ErrorCategory::InvalidArgument,
                        "record " + std::to_string(r.meta.id) + " has no gain; preprocess the dataset first");

    EvalReport rep;
    rep.spec = spec;
    rep.data_provenance = d.provenance;

    // Test sets are fixed for the whole experiment by the experiment seed.
    std::mt19937_64 rng = round_rng(spec.seed, 0xFFFFFFFFu, 0xFFFFFFFFu);
    std::vector<std::size_t> pool, test, in_dist;
    if (std::holds_alternative<data::RandomSplit>(spec.split)) {
        std::vector<std::size_t> all(d.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        if (spec.test_size >= d.size())
            throw Error(ErrorCategory::InfeasibleExperiment,
                        "test size " + std::to_string(spec.test_size) + " leaves no training pool in a dataset of " +
                            std::to_string(d.size()));
        std::shuffle(all.begin(), all.end(), rng);
        test.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.test_size));
        pool.assign(all.begin() + static_cast<std::ptrdiff_t>(spec.test_size), all.end());
        std::sort(test.begin(), test.end());
        std::sort(pool.begin(), pool.end());
    } else {
        const auto sp = data::split_indices(d, spec.split);
        test = sp.test.size() > spec.test_size ? draw(sp.test, spec.test_size, rng) : sp.test;
        const std::size_t largest = *std::max_element(spec.train_sizes.begin(), spec.train_sizes.end());
        if (sp.train.size() <= largest)
            throw Error(ErrorCategory::InfeasibleExperiment,
                        "training side of the split has " + std::to_string(sp.train.size()) +
                            " records; need more than " + std::to_string(largest) +
                            " to also hold out an in-distribution test set");
        const std::size_t n_in = std::min(spec.test_size, sp.train.size() - largest);
        std::vector<std::size_t> shuffled = sp.train;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        in_dist.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_in));
        pool.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_in), shuffled.end());
        std::sort(in_dist.begin(), in_dist.end());
        std::sort(pool.begin(), pool.end());
    }
    for (auto s : spec.train_sizes)
        if (s > pool.size())
            throw Error(ErrorCategory::InfeasibleExperiment, "training size " + std::to_string(s) +
                                                                 " exceeds the training pool of " +
                                                                 std::to_string(pool.size()) + " records");
    rep.test_records = test.size();
    rep.in_distribution_records = in_dist.size();
    rep.pool_records = pool.size();

    const std::size_t n_sizes = spec.train_sizes.size();
    rep.rounds.resize(n_sizes * spec.rounds);
    parallel_for(rep.rounds.size(), spec.threads, [&](std::size_t k) {
        const std::size_t size = spec.train_sizes[k / spec.rounds];
        const std::size_t round = k % spec.rounds;
        auto rrng = round_rng(spec.seed, size, round);
        RoundResult& r = rep.rounds[k];
        // A draw whose noisy extremes give a non-positive ΔG is replaced.
        std::optional<Trained> trained;
        for (;;) {
            const auto train_idx = draw(pool, size, rrng);
            const std::uint64_t model_seed = rrng();
            try {
                trained.emplace(spec, data::subset(d, train_idx), model_seed);
                break;
            } catch (const Error& e) {
                if (e.category() != ErrorCategory::FitNonMonotone || r.fit_redraws >= kMaxFitRedraws)
                    throw;
                ++r.fit_redraws;
            }
        }
        const Trained& model = *trained;
        auto s = model.score(d, test);
        r.train_size = size;
        r.round = round;
        r.rmse_db = s.rmse;
        r.mean_sample_rmse_db = s.mean_sample;
        r.cdf90_db = s.cdf90;
        r.max_constraint_residual_db = s.max_residual;
        r.per_sample_rmse_db = std::move(s.per_sample);
        r.errors_db = std::move(s.errors);
        if (!in_dist.empty()) {
            const auto si = model.score(d, in_dist);
            r.rmse_in_distribution_db = si.rmse;
            r.max_constraint_residual_db = std::max(r.max_constraint_residual_db, si.max_residual);
        }
    });

    for (std::size_t i = 0; i < n_sizes; ++i) {
        SizeSummary s;
        s.train_size = spec.train_sizes[i];
        std::vector<double> v;
        double cdf = 0.0, mps = 0.0, in = 0.0;
        for (std::size_t r = 0; r < spec.rounds; ++r) {
            const auto& rr = rep.rounds[i * spec.rounds + r];
            v.push_back(rr.rmse_db);
            cdf += rr.cdf90_db;
            mps += rr.mean_sample_rmse_db;
            if (rr.rmse_in_distribution_db)
                in += *rr.rmse_in_distribution_db;
        }
        const double n = static_cast<double>(spec.rounds);
        s.mean_rmse_db = std::accumulate(v.begin(), v.end(), 0.0) / n;
        s.min_rmse_db = *std::min_element(v.begin(), v.end());
        s.max_rmse_db = *std::max_element(v.begin(), v.end());
        double var = 0.0;
        for (double x : v)
            var += (x - s.mean_rmse_db) * (x - s.mean_rmse_db);
        s.std_rmse_db = std::sqrt(var / n);
        s.mean_cdf90_db = cdf / n;
        s.mean_sample_rmse_db = mps / n;
        if (!in_dist.empty())
            s.mean_rmse_in_distribution_db = in / n;
        rep.sizes.push_back(s);
    }
    return rep;
}

json report_to_json(const EvalReport& r) {
    json sizes = json::array();
    for (const auto& s : r.sizes) {
        json j{{"train_size", s.train_size},     {"mean_rmse_db", s.mean_rmse_db},
               {"min_rmse_db", s.min_rmse_db},   {"max_rmse_db", s.max_rmse_db},
               {"std_rmse_db", s.std_rmse_db},   {"mean_sample_rmse_db", s.mean_sample_rmse_db},
               {"mean_cdf90_db", s.mean_cdf90_db}};
        if (s.mean_rmse_in_distribution_db)
            j["mean_rmse_in_distribution_db"] = *s.mean_rmse_in_distribution_db;
        sizes.push_back(j);
    }
    json rounds = json::array();
    for (const auto& rr : r.rounds) {
        json j{{"train_size", rr.train_size},
               {"round", rr.round},
               {"rmse_db", rr.rmse_db},
               {"mean_sample_rmse_db", rr.mean_sample_rmse_db},
               {"cdf90_db", rr.cdf90_db},
               {"max_constraint_residual_db", rr.max_constraint_residual_db},
               {"fit_redraws", rr.fit_redraws},
               {"per_sample_rmse_db", rr.per_sample_rmse_db}};
        if (rr.rmse_in_distribution_db)
            j["rmse_in_distribution_db"] = *rr.rmse_in_distribution_db;
        if (rr.round == 0)
            j["errors_db"] = rr.errors_db;
        rounds.push_back(j);
    }
    return json{{"schema", "edfa.report/1"},
                {"experiment", experiment_to_json(r.spec)},
                {"data_provenance", r.data_provenance},
                {"test_set", "fixed per experiment seed"},
                {"rmse_pooling", "pooled over (sample, channel); per-sample mean also reported"},
                {"test_records", r.test_records},
                {"in_distribution_records", r.in_distribution_records},
                {"pool_records", r.pool_records},
                {"sizes", sizes},
                {"rounds", rounds}};
}

std::string report_csv(const EvalReport& r) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "train_size,round,rmse_db,cdf90_db\n";
    for (const auto& rr : r.rounds)
        ss << rr.train_size << ',' << rr.round << ',' << rr.rmse_db << ',' << rr.cdf90_db << '\n';
    return ss.str();
}

void write_report(const std::string& dir, const EvalReport& r) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorCategory::Io, "cannot create report directory '" + dir + "': " + ec.message());
    io::write_text((fs::path(dir) / "report.json").string(), report_to_json(r).dump(2) + "\n");
    io::write_text((fs::path(dir) / "report.csv").string(), report_csv(r));
}

}  // namespace edfa::eval
