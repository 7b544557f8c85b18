#include "edfa/mlp.hpp"

#include "edfa/error.hpp"
#include "edfa/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace edfa::mlp {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view activation_name(Activation a) {
    return a == Activation::Tanh ? "tanh" : "sigmoid";
}

Activation parse_activation(const std::string& s) {
    if (s == "tanh")
        return Activation::Tanh;
    if (s == "sigmoid")
        return Activation::Sigmoid;
    throw Error(ErrorCategory::Schema, "unknown activation '" + s + "'");
}

MatrixXd activate(Activation a, const MatrixXd& z) {
    if (a == Activation::Tanh)
        return z.array().tanh().matrix();
    return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

// Derivative expressed through the activation output.
MatrixXd activate_grad(Activation a, const MatrixXd& y) {
    if (a == Activation::Tanh)
        return (1.0 - y.array().square()).matrix();
    return (y.array() * (1.0 - y.array())).matrix();
}

struct Forward {
    MatrixXd a1, a2, y;
};

Forward forward(const MlpModel& m, const MatrixXd& x) {
    const auto& w = m.weights;
    const auto act = m.config.activation;
    Forward f;
    f.a1 = activate(act, (w.w1 * x).colwise() + w.b1);
    f.a2 = activate(act, (w.w2 * f.a1).colwise() + w.b2);
    f.y = (w.w3 * f.a2).colwise() + w.b3;
    return f;
}

double masked_count(const MatrixXd& mask) {
    const double c = mask.sum();
    if (c <= 0.0)
        throw Error(ErrorCategory::InvalidArgument, "batch has no valid target");
    return c;
}

Batch columns(const Batch& b, const std::vector<std::size_t>& idx) {
    return {b.x(Eigen::all, idx), b.t(Eigen::all, idx), b.mask(Eigen::all, idx)};
}

}  // namespace

void MlpConfig::validate() const {
    if (input_dim == 0 || h1 == 0 || h2 == 0 || output_dim == 0)
        throw Error(ErrorCategory::InvalidArgument, "MLP dimensions must be positive");
    if (h1 < h2)
        throw Error(ErrorCategory::InvalidArgument, "MLP hidden sizes must satisfy h1 >= h2");
    if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0))
        throw Error(ErrorCategory::InvalidArgument, "MLP learning rate must be >= 0 and momentum in [0, 1)");
    if (batch_size == 0)
        throw Error(ErrorCategory::InvalidArgument, "MLP batch size must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw Error(ErrorCategory::InvalidArgument, "validation fraction must be in [0, 1)");
}

std::pair<std::size_t, std::size_t> default_hidden(std::size_t output_channels) {
    return output_channels <= 40 ? std::pair<std::size_t, std::size_t>{128, 64}
                                 : std::pair<std::size_t, std::size_t>{256, 128};
}

std::size_t Weights::parameter_count() const {
    return static_cast<std::size_t>(w1.size() + w2.size() + w3.size() + b1.size() + b2.size() + b3.size());
}

VectorXd Weights::flatten() const {
    VectorXd v(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index o = 0;
    auto put = [&](const auto& m) {
        v.segment(o, m.size()) = m.reshaped();
        o += m.size();
    };
    put(w1), put(b1), put(w2), put(b2), put(w3), put(b3);
    return v;
}

void Weights::assign(const VectorXd& v) {
    if (static_cast<std::size_t>(v.size()) != parameter_count())
        throw Error(ErrorCategory::InvalidArgument, "flat weight vector has the wrong length");
    Eigen::Index o = 0;
    auto take = [&](auto& m) {
        m.reshaped() = v.segment(o, m.size());
        o += m.size();
    };
    take(w1), take(b1), take(w2), take(b2), take(w3), take(b3);
}

bool Weights::operator==(const Weights& o) const {
    auto eq = [](const auto& a, const auto& b) {
        return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
    };
    return eq(w1, o.w1) && eq(w2, o.w2) && eq(w3, o.w3) && eq(b1, o.b1) && eq(b2, o.b2) && eq(b3, o.b3);
}

VectorXd features(const PowerSpectrum& input, const Setting& setting) {
    const auto n = static_cast<Eigen::Index>(input.size());
    VectorXd f(n + 2);
    for (Eigen::Index i = 0; i < n; ++i)
        f[i] = input.dbm(static_cast<std::size_t>(i));
    f[n] = total_power(input, MaskPolicy::All);
    f[n + 1] = setting.setpoint;
    return f;
}

Batch make_batch(const MlpModel& m, const data::Dataset& d) {
    if (!same_grid(m.grid, d.grid))
        throw Error(ErrorCategory::GridMismatch, "dataset grid does not match the MLP's training grid");
    const auto n = static_cast<Eigen::Index>(d.size());
    const auto out = static_cast<Eigen::Index>(m.output_channels.size());
    Batch b{MatrixXd(static_cast<Eigen::Index>(m.config.input_dim), n), MatrixXd::Zero(out, n),
            MatrixXd::Zero(out, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = d.records[static_cast<std::size_t>(i)];
        if (!r.gain)
            throw Error(ErrorCategory::InvalidArgument, "record without gain cannot be used for training");
        b.x.col(i) = ((features(r.input, d.setting) - m.norm.feature_mean).array() / m.norm.feature_scale.array())
                         .matrix();
        for (Eigen::Index k = 0; k < out; ++k) {
            const std::size_t ch = m.output_channels[static_cast<std::size_t>(k)];
            if (r.gain->is_valid(ch)) {
                b.t(k, i) = (r.gain->db(ch) - m.norm.target_mean[k]) / m.norm.target_scale[k];
                b.mask(k, i) = 1.0;
            }
        }
    }
    return b;
}

double loss(const MlpModel& m, const Batch& b) {
    const Forward f = forward(m, b.x);
    return ((f.y - b.t).array().square() * b.mask.array()).sum() / masked_count(b.mask);
}

std::pair<double, VectorXd> loss_and_gradient(const MlpModel& m, const Batch& b) {
    const auto& w = m.weights;
    const auto act = m.config.activation;
    const double count = masked_count(b.mask);
    const Forward f = forward(m, b.x);
    const MatrixXd err = ((f.y - b.t).array() * b.mask.array()).matrix();
    const double value = (err.array() * (f.y - b.t).array()).sum() / count;

    const MatrixXd dy = err * (2.0 / count);
    const MatrixXd dz2 = ((w.w3.transpose() * dy).array() * activate_grad(act, f.a2).array()).matrix();
    const MatrixXd dz1 = ((w.w2.transpose() * dz2).array() * activate_grad(act, f.a1).array()).matrix();

    Weights g;
    g.w3 = dy * f.a2.transpose();
    g.b3 = dy.rowwise().sum();
    g.w2 = dz2 * f.a1.transpose();
    g.b2 = dz2.rowwise().sum();
    g.w1 = dz1 * b.x.transpose();
    g.b1 = dz1.rowwise().sum();
    return {value, g.flatten()};
}

MlpConfig config_for(const data::Dataset& d) {
    MlpConfig c;
    c.input_dim = d.grid->size() + 2;
    std::size_t out = 0;
    for (std::size_t ch = 0; ch < d.grid->size(); ++ch)
        if (std::any_of(d.records.begin(), d.records.end(),
                        [&](const auto& r) { return r.gain && r.gain->is_valid(ch); }))
            ++out;
    c.output_dim = out;
    std::tie(c.h1, c.h2) = default_hidden(out);
    return c;
}

MlpModel train(const data::Dataset& d, MlpConfig config) {
    if (d.size() == 0)
        throw Error(ErrorCategory::InvalidArgument, "cannot train on an empty dataset");
    d.validate();

    MlpModel m;
    m.grid = d.grid;
    for (std::size_t ch = 0; ch < d.grid->size(); ++ch)
        if (std::any_of(d.records.begin(), d.records.end(),
                        [&](const auto& r) { return r.gain && r.gain->is_valid(ch); }))
            m.output_channels.push_back(ch);
    if (m.output_channels.empty())
        throw Error(ErrorCategory::InvalidArgument, "no record carries a valid gain");
    if (config.input_dim == 0)
        config.input_dim = d.grid->size() + 2;
    if (config.output_dim == 0)
        config.output_dim = m.output_channels.size();
    if (config.input_dim != d.grid->size() + 2 || config.output_dim != m.output_channels.size())
        throw Error(ErrorCategory::InvalidArgument, "MLP dimensions do not match the dataset");
    config.validate();
    m.config = config;

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(d.size())));
    const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(train_idx.begin(), train_idx.end());

    // Normalisation from the training portion only.
    const auto in = static_cast<Eigen::Index>(config.input_dim);
    const auto out = static_cast<Eigen::Index>(config.output_dim);
    MatrixXd raw(in, static_cast<Eigen::Index>(train_idx.size()));
    for (std::size_t i = 0; i < train_idx.size(); ++i)
        raw.col(static_cast<Eigen::Index>(i)) = features(d.records[train_idx[i]].input, d.setting);
    m.norm.feature_mean = raw.rowwise().mean();
    m.norm.feature_scale =
        ((raw.colwise() - m.norm.feature_mean).array().square().rowwise().mean().sqrt()).matrix();
    for (auto& s : m.norm.feature_scale)
        if (!(s > 1e-12))
            s = 1.0;
    m.norm.target_mean = VectorXd::Zero(out);
    m.norm.target_scale = VectorXd::Ones(out);
    for (Eigen::Index k = 0; k < out; ++k) {
        const std::size_t ch = m.output_channels[static_cast<std::size_t>(k)];
        std::vector<double> v;
        for (auto i : train_idx)
            if (d.records[i].gain->is_valid(ch))
                v.push_back(d.records[i].gain->db(ch));
        if (v.empty())
            continue;
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v)
            var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        m.norm.target_mean[k] = mean;
        if (var > 1e-24)
            m.norm.target_scale[k] = std::sqrt(var);
    }

    auto init = [&](Eigen::Index rows, Eigen::Index cols) {
        MatrixXd w = MatrixXd::Zero(rows, cols);
        if (config.zero_init)
            return w;
        const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index r = 0; r < rows; ++r)
                w(r, c) = u(rng);
        return w;
    };
    const auto h1 = static_cast<Eigen::Index>(config.h1), h2 = static_cast<Eigen::Index>(config.h2);
    m.weights.w1 = init(h1, in);
    m.weights.w2 = init(h2, h1);
    m.weights.w3 = init(out, h2);
    m.weights.b1 = VectorXd::Zero(h1);
    m.weights.b2 = VectorXd::Zero(h2);
    m.weights.b3 = VectorXd::Zero(out);

    const Batch all = make_batch(m, d);
    const Batch tr = columns(all, train_idx);
    const bool has_val = !val_idx.empty() && all.mask(Eigen::all, val_idx).sum() > 0.0;
    const Batch va = has_val ? columns(all, val_idx) : Batch{};

    VectorXd params = m.weights.flatten();
    VectorXd velocity = VectorXd::Zero(params.size());
    VectorXd best = params;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<std::size_t> perm(train_idx.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});

    auto step = [&](const Batch& b) {
        if (b.mask.sum() <= 0.0)
            return;
        const auto [value, grad] = loss_and_gradient(m, b);
        if (!std::isfinite(value) || !grad.allFinite())
            throw Error(ErrorCategory::TrainingDiverged,
                        "training loss became non-finite; lower the learning rate");
        velocity = config.momentum * velocity - config.learning_rate * grad;
        params += velocity;
        m.weights.assign(params);
    };

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.full_batch) {
            step(tr);
        } else {
            std::shuffle(perm.begin(), perm.end(), rng);
            for (std::size_t s = 0; s < perm.size(); s += config.batch_size) {
                const std::vector<std::size_t> idx(
                    perm.begin() + static_cast<std::ptrdiff_t>(s),
                    perm.begin() + static_cast<std::ptrdiff_t>(std::min(perm.size(), s + config.batch_size)));
                step(columns(tr, idx));
            }
        }
        EpochLoss e{loss(m, tr), has_val ? loss(m, va) : kNaN};
        if (!std::isfinite(e.train))
            throw Error(ErrorCategory::TrainingDiverged,
                        "training loss became non-finite at epoch " + std::to_string(epoch));
        m.history.push_back(e);
        if (has_val) {
            if (e.validation < best_val) {
                best_val = e.validation;
                best = params;
                m.best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= config.patience) {
                break;
            }
        } else {
            m.best_epoch = epoch;
        }
    }
    if (has_val)
        m.weights.assign(best);
    return m;
}

GainSpectrum predict(const MlpModel& m, const PowerSpectrum& input, const Setting& setting) {
    if (!same_grid(m.grid, input.grid()))
        throw Error(ErrorCategory::GridMismatch,
                    "input grid (" + std::to_string(input.size()) + " channels) does not match the MLP grid (" +
                        std::to_string(m.grid->size()) + " channels)");
    const VectorXd x =
        ((features(input, setting) - m.norm.feature_mean).array() / m.norm.feature_scale.array()).matrix();
    const VectorXd y = forward(m, x).y.col(0);
    std::vector<double> g(m.grid->size(), kNaN);
    std::vector<bool> valid(m.grid->size(), false);
    for (std::size_t k = 0; k < m.output_channels.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        g[m.output_channels[k]] = y[kk] * m.norm.target_scale[kk] + m.norm.target_mean[kk];
        valid[m.output_channels[k]] = true;
    }
    return GainSpectrum(m.grid, std::move(g), std::move(valid));
}

// Persistence ----------------------------------------------------------------

namespace {

json vec_json(const VectorXd& v) {
    return json(std::vector<double>(v.begin(), v.end()));
}

json mat_json(const MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        rows.push_back(vec_json(m.row(r).transpose()));
    return rows;
}

VectorXd vec_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

MatrixXd mat_from(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
        throw Error(ErrorCategory::Schema, what + " has the wrong number of rows");
    MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const VectorXd row = vec_from(j[static_cast<std::size_t>(r)]);
        if (row.size() != cols)
            throw Error(ErrorCategory::Schema, what + " has the wrong number of columns");
        m.row(r) = row.transpose();
    }
    return m;
}

}  // namespace

json to_json(const MlpModel& m) {
    const auto& c = m.config;
    json hist = json::array();
    for (const auto& e : m.history)
        hist.push_back({e.train, std::isfinite(e.validation) ? json(e.validation) : json(nullptr)});
    return json{{"schema", kMlpSchema},
                {"grid", io::grid_to_json(*m.grid)},
                {"config",
                 {{"input_dim", c.input_dim},
                  {"hidden", {c.h1, c.h2}},
                  {"output_dim", c.output_dim},
                  {"activation", activation_name(c.activation)},
                  {"learning_rate", c.learning_rate},
                  {"momentum", c.momentum},
                  {"batch_size", c.batch_size},
                  {"epochs", c.epochs},
                  {"seed", c.seed},
                  {"validation_fraction", c.validation_fraction},
                  {"patience", c.patience},
                  {"full_batch", c.full_batch}}},
                {"output_channels", m.output_channels},
                {"normalization",
                 {{"feature_mean", vec_json(m.norm.feature_mean)},
                  {"feature_scale", vec_json(m.norm.feature_scale)},
                  {"target_mean", vec_json(m.norm.target_mean)},
                  {"target_scale", vec_json(m.norm.target_scale)}}},
                {"weights",
                 {{"w1", mat_json(m.weights.w1)},
                  {"b1", vec_json(m.weights.b1)},
                  {"w2", mat_json(m.weights.w2)},
                  {"b2", vec_json(m.weights.b2)},
                  {"w3", mat_json(m.weights.w3)},
                  {"b3", vec_json(m.weights.b3)}}},
                {"best_epoch", m.best_epoch},
                {"history", hist}};
}

MlpModel from_json(const json& j, const std::string& origin) {
    io::check_schema(j, kMlpSchema, origin);
    MlpModel m;
    try {
        m.grid = make_grid(io::grid_from_json(io::require(j, "grid", origin)));
        const auto& c = io::require(j, "config", origin);
        m.config.input_dim = io::require(c, "input_dim", origin).get<std::size_t>();
        const auto hidden = io::require(c, "hidden", origin).get<std::vector<std::size_t>>();
        if (hidden.size() != 2)
            throw Error(ErrorCategory::Schema, origin + ": hidden must list two layer sizes");
        m.config.h1 = hidden[0];
        m.config.h2 = hidden[1];
        m.config.output_dim = io::require(c, "output_dim", origin).get<std::size_t>();
        m.config.activation = parse_activation(io::require(c, "activation", origin).get<std::string>());
        m.config.learning_rate = c.value("learning_rate", m.config.learning_rate);
        m.config.momentum = c.value("momentum", m.config.momentum);
        m.config.batch_size = c.value("batch_size", m.config.batch_size);
        m.config.epochs = c.value("epochs", m.config.epochs);
        m.config.seed = c.value("seed", m.config.seed);
        m.config.validation_fraction = c.value("validation_fraction", m.config.validation_fraction);
        m.config.patience = c.value("patience", m.config.patience);
        m.config.full_batch = c.value("full_batch", m.config.full_batch);
        m.config.validate();
        m.output_channels = io::require(j, "output_channels", origin).get<std::vector<std::size_t>>();
        if (m.output_channels.size() != m.config.output_dim || m.config.input_dim != m.grid->size() + 2)
            throw Error(ErrorCategory::Schema, origin + ": dimensions disagree with grid or output channels");
        for (auto ch : m.output_channels)
            if (ch >= m.grid->size())
                throw Error(ErrorCategory::Schema, origin + ": output channel out of range");

        const auto& n = io::require(j, "normalization", origin);
        m.norm.feature_mean = vec_from(io::require(n, "feature_mean", origin));
        m.norm.feature_scale = vec_from(io::require(n, "feature_scale", origin));
        m.norm.target_mean = vec_from(io::require(n, "target_mean", origin));
        m.norm.target_scale = vec_from(io::require(n, "target_scale", origin));
        const auto in = static_cast<Eigen::Index>(m.config.input_dim);
        const auto out = static_cast<Eigen::Index>(m.config.output_dim);
        const auto h1 = static_cast<Eigen::Index>(m.config.h1), h2 = static_cast<Eigen::Index>(m.config.h2);
        if (m.norm.feature_mean.size() != in || m.norm.feature_scale.size() != in ||
            m.norm.target_mean.size() != out || m.norm.target_scale.size() != out)
            throw Error(ErrorCategory::Schema, origin + ": normalization vectors have the wrong length");

        const auto& w = io::require(j, "weights", origin);
        m.weights.w1 = mat_from(io::require(w, "w1", origin), h1, in, "w1");
        m.weights.w2 = mat_from(io::require(w, "w2", origin), h2, h1, "w2");
        m.weights.w3 = mat_from(io::require(w, "w3", origin), out, h2, "w3");
        m.weights.b1 = vec_from(io::require(w, "b1", origin));
        m.weights.b2 = vec_from(io::require(w, "b2", origin));
        m.weights.b3 = vec_from(io::require(w, "b3", origin));
        if (m.weights.b1.size() != h1 || m.weights.b2.size() != h2 || m.weights.b3.size() != out)
            throw Error(ErrorCategory::Schema, origin + ": bias vectors have the wrong length");
        m.best_epoch = j.value("best_epoch", std::size_t{0});
        if (j.contains("history"))
            for (const auto& e : j["history"])
                m.history.push_back({e.at(0).get<double>(), e.at(1).is_null() ? kNaN : e.at(1).get<double>()});
    } catch (const json::exception& e) {
        throw Error(ErrorCategory::Schema, origin + ": " + e.what());
    } catch (const Error& e) {
        if (e.category() == ErrorCategory::Schema)
            throw;
        throw Error(ErrorCategory::Schema, origin + ": " + e.what());
    }
    return m;
}

void save_model(const std::string& path, const MlpModel& m) {
    io::write_text(path, to_json(m).dump() + "\n");
}

MlpModel load_model(const std::string& path) {
    return from_json(io::load_json(path), path);
}

}  // namespace edfa::mlp
