#include "cli.hpp"

#include "edfa/dataset.hpp"
#include "edfa/error.hpp"
#include "edfa/evaluation.hpp"
#include "edfa/greybox.hpp"
#include "edfa/json_io.hpp"
#include "edfa/mlp.hpp"
#include "edfa/simulator.hpp"
#include "edfa/synthetic.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>

namespace edfa::cli {

namespace fs = std::filesystem;

namespace {

std::string find_config(const std::string& path) {
    if (path.empty() || fs::exists(path) || fs::path(path).is_absolute())
        return path;
    if (const char* dir = std::getenv(kConfigDirEnv)) {
        const fs::path alt = fs::path(dir) / path;
        if (fs::exists(alt))
            return alt.string();
    }
    return path;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

// "freq_thz power_dbm [loaded]" per line; '#' starts a comment.
PowerSpectrum read_spectrum(const std::string& path, const GridPtr& grid) {
    std::istringstream in(io::read_text(path));
    std::vector<double> freq, power;
    std::vector<bool> loaded;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::istringstream ls(line);
        double f = 0.0, p = 0.0;
        if (!(ls >> f))
            continue;
        if (!(ls >> p) || !std::isfinite(p))
            throw Error(ErrorCategory::Schema, path + ":" + std::to_string(lineno) + ": expected 'freq_thz power_dbm [loaded]'");
        int l = 1;
        if (!(ls >> l))
            l = 1;
        freq.push_back(f);
        power.push_back(p);
        loaded.push_back(l != 0);
    }
    if (freq.size() != grid->size())
        throw Error(ErrorCategory::GridMismatch, path + ": spectrum has " + std::to_string(freq.size()) +
                                                     " channels, model grid has " + std::to_string(grid->size()));
    for (std::size_t i = 0; i < freq.size(); ++i)
        if (std::abs(freq[i] - grid->frequency(i)) > 1e-6)
            throw Error(ErrorCategory::GridMismatch, path + ": channel " + std::to_string(i) + " at " +
                                                         std::to_string(freq[i]) + " THz, model grid has " +
                                                         std::to_string(grid->frequency(i)) + " THz");
    return PowerSpectrum(grid, std::move(power), std::move(loaded));
}

std::string format_gain(const GainSpectrum& g) {
    std::ostringstream ss;
    ss << "# freq_thz gain_db valid\n" << std::setprecision(12);
    for (std::size_t i = 0; i < g.size(); ++i) {
        ss << g.grid()->frequency(i) << ' ';
        if (g.is_valid(i))
            ss << g.db(i) << " 1\n";
        else
            ss << "nan 0\n";
    }
    return ss.str();
}

struct Options {
    std::size_t threads = 0;
    bool verbose = false;

    // simulate
    std::string config, protocol, output;
    std::size_t n = 0;
    double noise = 0.0;
    std::uint64_t seed = 0;

    // fit
    std::string data, mode, family = "greybox";
    std::optional<double> setpoint;
    std::size_t samples = 0, extremes = 0, epochs = 0;

    // predict
    std::string model, input;

    // evaluate
    std::string spec;

    // ingest / prep
    std::string public_csv, mapping, ase_input;
};

void cmd_simulate(const Options& o, std::ostream& out) {
    const auto cfg_path = find_config(o.config);
    const auto amp = sim::load_amplifier_config(cfg_path);
    const auto protocol = o.protocol.empty() ? data::DatasetProtocol::odd_channel_default(amp.grid->size())
                                             : data::load_protocol(find_config(o.protocol), amp.grid->size());
    sim::GenerateOptions g;
    g.n = o.n;
    g.noise_db = o.noise;
    g.seed = o.seed;
    g.threads = o.threads;
    g.provenance = "simulator:" + sim::config_hash(io::load_json(cfg_path));
    const auto d = sim::generate_dataset(amp, protocol, g);
    data::write_dataset(o.output, d);
    out << "simulated " << d.size() << " records (" << mode_name(d.setting.mode) << ' ' << d.setting.setpoint
        << ") -> " << o.output << '\n';
}

void cmd_fit(const Options& o, std::ostream& out, std::ostream& err) {
    auto d = data::read_dataset(o.data);
    if (!o.mode.empty() && parse_mode(o.mode) != d.setting.mode)
        throw Error(ErrorCategory::InvalidArgument, "--mode " + o.mode + " does not match the dataset's mode " +
                                                        std::string(mode_name(d.setting.mode)));
    if (o.setpoint)
        d.setting.setpoint = *o.setpoint;
    if (o.samples) {
        if (o.samples > d.size())
            throw Error(ErrorCategory::FitInsufficientSamples, "--samples " + std::to_string(o.samples) +
                                                                   " exceeds the " + std::to_string(d.size()) +
                                                                   " records in " + o.data);
        std::vector<std::size_t> idx(o.samples);
        for (std::size_t i = 0; i < idx.size(); ++i)
            idx[i] = i;
        d = data::subset(d, idx);
    }
    if (o.family == "greybox") {
        const auto res = greybox::fit(d, o.extremes);
        for (const auto& w : res.report.warnings)
            err << "warning: " << w << '\n';
        greybox::save_model(o.output, res.model);
        double worst = 0.0;
        for (double r : res.report.residual_rmse_db)
            if (std::isfinite(r))
                worst = std::max(worst, r);
        const auto valid = std::count(res.model.fit_meta.valid.begin(), res.model.fit_meta.valid.end(), true);
        out << "greybox fit: samples=" << res.report.n_samples << " extremes=" << res.report.extremes_averaged
            << " valid_channels=" << valid << " calibration_db=" << res.report.calibration_db
            << " max_residual_rmse_db=" << worst << " -> " << o.output << '\n';
    } else if (o.family == "mlp") {
        auto cfg = mlp::config_for(d);
        cfg.seed = o.seed;
        if (o.epochs)
            cfg.epochs = o.epochs;
        const auto m = mlp::train(d, cfg);
        mlp::save_model(o.output, m);
        out << "mlp fit: samples=" << d.size() << " hidden=" << cfg.h1 << ',' << cfg.h2
            << " epochs_run=" << m.history.size() << " best_epoch=" << m.best_epoch << " -> " << o.output << '\n';
    } else {
        throw Error(ErrorCategory::InvalidArgument, "unknown model family '" + o.family + "'");
    }
}

void cmd_predict(const Options& o, std::ostream& out) {
    const auto j = io::load_json(o.model);
    const auto schema = j.value("schema", std::string{});
    GainSpectrum g = [&] {
        if (schema == mlp::kMlpSchema) {
            const auto m = mlp::from_json(j, o.model);
            if (!o.setpoint)
                throw Error(ErrorCategory::InvalidArgument, "an MLP prediction needs --setpoint");
            const auto in = read_spectrum(o.input, m.grid);
            return mlp::predict(m, in, Setting{parse_mode(o.mode.empty() ? "agc" : o.mode), *o.setpoint});
        }
        const auto m = greybox::from_json(j, o.model);
        const auto in = read_spectrum(o.input, m.grid);
        return greybox::predict(m, in);
    }();
    const auto text = format_gain(g);
    if (o.output.empty() || o.output == "-") {
        out << text;
    } else {
        io::write_text(o.output, text);
        out << "predicted " << g.valid_count() << " channel gains -> " << o.output << '\n';
    }
}

void cmd_evaluate(const Options& o, std::ostream& out) {
    auto spec = eval::load_experiment(find_config(o.spec));
    if (o.threads)
        spec.threads = o.threads;
    const auto rep = eval::run_experiment(spec);
    eval::write_report(o.output, rep);
    double worst = 0.0;
    std::size_t redraws = 0;
    for (const auto& r : rep.rounds) {
        worst = std::max(worst, r.max_constraint_residual_db);
        redraws += r.fit_redraws;
    }
    out << std::setprecision(6);
    for (const auto& s : rep.sizes) {
        out << "train_size=" << s.train_size << " mean_rmse_db=" << s.mean_rmse_db << " max_rmse_db=" << s.max_rmse_db
            << " mean_cdf90_db=" << s.mean_cdf90_db;
        if (s.mean_rmse_in_distribution_db)
            out << " mean_rmse_in_distribution_db=" << *s.mean_rmse_in_distribution_db;
        out << '\n';
    }
    out << "max_constraint_residual_db=" << worst << " fit_redraws=" << redraws << " report=" << o.output << '\n';
}

void cmd_ingest(const Options& o, std::ostream& out) {
    const auto map = data::load_mapping(find_config(o.mapping));
    const auto d = data::ingest_public_file(o.public_csv, map);
    data::write_dataset(o.output, d);
    out << "ingested " << d.size() << " records -> " << o.output << '\n';
}

void cmd_prep(const Options& o, std::ostream& out) {
    const auto d = data::read_dataset(o.ase_input);
    const auto clean = data::subtract_ase(d, data::AseConvention::even_channels(d.grid->size()));
    data::write_dataset(o.output, clean);
    out << "ASE-subtracted " << clean.size() << " records -> " << o.output << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"EDFA gain digital twin: simulate, fit, predict and evaluate", "edfa"};
    app.require_subcommand(1, 1);
    Options o;
    app.add_option("--threads", o.threads, "Worker thread cap (0 = hardware)");
    app.add_flag("-v,--verbose", o.verbose, "Diagnostics on stderr");

    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset with the physics simulator");
    simulate->add_option("--config", o.config, "Amplifier config")->required();
    simulate->add_option("--protocol", o.protocol, "Channel-loading protocol (default: odd channels)");
    simulate->add_option("-n", o.n, "Number of records")->required()->check(CLI::PositiveNumber);
    simulate->add_option("--noise", o.noise, "Gain measurement noise sigma (dB)")->check(CLI::NonNegativeNumber);
    simulate->add_option("--seed", o.seed, "Random seed");
    simulate->add_option("-o,--output", o.output, "Output dataset")->required();

    auto* fit = app.add_subcommand("fit", "Fit a grey-box (or MLP) model to a dataset");
    fit->add_option("--data", o.data, "Dataset")->required();
    fit->add_option("--mode", o.mode, "agc | apc (must match the dataset)")
        ->check(CLI::IsMember({"agc", "apc", "AGC", "APC"}));
    fit->add_option("--setpoint", o.setpoint, "Nominal setpoint (dB or dBm)");
    fit->add_option("--samples", o.samples, "Use the first K records")->check(CLI::PositiveNumber);
    fit->add_option("--extremes", o.extremes, "Samples averaged at each extreme (0 = default)");
    fit->add_option("--family", o.family, "greybox | mlp")->check(CLI::IsMember({"greybox", "mlp"}));
    fit->add_option("--epochs", o.epochs, "MLP epoch cap");
    fit->add_option("--seed", o.seed, "MLP seed");
    fit->add_option("-o,--output", o.output, "Output model")->required();

    auto* predict = app.add_subcommand("predict", "Predict the gain spectrum for an input spectrum");
    predict->add_option("--model", o.model, "Model file")->required();
    predict->add_option("--input", o.input, "Spectrum text file: freq_thz power_dbm [loaded]")->required();
    predict->add_option("--setpoint", o.setpoint, "Setpoint (MLP models only)");
    predict->add_option("--mode", o.mode, "agc | apc (MLP models only)")
        ->check(CLI::IsMember({"agc", "apc", "AGC", "APC"}));
    predict->add_option("-o,--output", o.output, "Output gain file (default: stdout)");

    auto* evaluate = app.add_subcommand("evaluate", "Run an experiment and write report.json and report.csv");
    evaluate->add_option("--spec", o.spec, "Experiment config")->required();
    evaluate->add_option("-o,--output", o.output, "Report directory")->required();

    auto* ingest = app.add_subcommand("ingest", "Convert a public CSV dataset to the native format");
    ingest->add_option("--public", o.public_csv, "CSV file")->required();
    ingest->add_option("--mapping", o.mapping, "Column mapping config")->required();
    ingest->add_option("-o,--output", o.output, "Output dataset")->required();

    auto* prep = app.add_subcommand("prep", "Preprocess a dataset");
    prep->add_option("--ase-subtract", o.ase_input, "Dataset with raw outputs")->required();
    prep->add_option("-o,--output", o.output, "Output dataset")->required();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty())
        rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << one_line(e.what()) << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*simulate)
            cmd_simulate(o, out);
        else if (*fit)
            cmd_fit(o, out, err);
        else if (*predict)
            cmd_predict(o, out);
        else if (*evaluate)
            cmd_evaluate(o, out);
        else if (*ingest)
            cmd_ingest(o, out);
        else if (*prep)
            cmd_prep(o, out);
    } catch (const Error& e) {
        err << category_name(e.category()) << ": " << one_line(e.what()) << '\n';
        return 1;
    } catch (const nlohmann::json::exception& e) {
        err << category_name(ErrorCategory::Schema) << ": " << one_line(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "INTERNAL_ERROR: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}

}  // namespace edfa::cli
