#include "edfa/dataset.hpp"

#include "edfa/error.hpp"
#include "edfa/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace edfa::data {

using nlohmann::json;

namespace {

constexpr int kDigits = 9;

std::string channel_label(const GridPtr& grid, std::size_t i) {
    std::ostringstream ss;
    ss << "channel " << i << " (" << grid->frequency(i) << " THz)";
    return ss.str();
}

}  // namespace

void SampleRecord::validate() const {
    if (!output_raw && !gain)
        throw Error(ErrorCategory::InvalidArgument, "record " + std::to_string(meta.id) +
                                                        " has neither a raw output nor a gain");
    if (meta.loaded_count != input.loaded_count())
        throw Error(ErrorCategory::InvalidArgument,
                    "record " + std::to_string(meta.id) + " loaded count disagrees with its input mask");
    if (output_raw && !same_grid(output_raw->grid(), input.grid()))
        throw Error(ErrorCategory::GridMismatch, "record output grid differs from input grid");
    if (gain && !same_grid(gain->grid(), input.grid()))
        throw Error(ErrorCategory::GridMismatch, "record gain grid differs from input grid");
}

RecordMeta describe(const PowerSpectrum& input, std::string source, std::uint64_t id) {
    RecordMeta m;
    m.source = std::move(source);
    m.id = id;
    m.loaded_count = input.loaded_count();
    m.total_input_dbm = m.loaded_count ? total_power(input, MaskPolicy::LoadedOnly)
                                       : total_power(input, MaskPolicy::All);
    return m;
}

void Dataset::validate() const {
    if (!grid)
        throw Error(ErrorCategory::InvalidArgument, "dataset has no grid");
    for (const auto& r : records) {
        if (!same_grid(r.input.grid(), grid))
            throw Error(ErrorCategory::GridMismatch,
                        "record " + std::to_string(r.meta.id) + " is not on the dataset grid");
        r.validate();
    }
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices) {
    Dataset out{d.grid, d.setting, d.provenance, {}};
    out.records.reserve(indices.size());
    for (auto i : indices)
        out.records.push_back(d.records.at(i));
    return out;
}

// Protocol ------------------------------------------------------------------

void DatasetProtocol::validate(std::size_t channels) const {
    if (loadable.size() != channels)
        throw Error(ErrorCategory::GridMismatch, "protocol loadable mask does not match grid length");
    auto ordered = [](const std::pair<double, double>& r) { return r.first <= r.second; };
    if (!ordered(load_probability) || !ordered(avg_power_range_dbm) || !ordered(perturbation_range_db))
        throw Error(ErrorCategory::InvalidArgument, "protocol ranges must be ordered (lo <= hi)");
    if (load_probability.first < 0.0 || load_probability.second > 1.0)
        throw Error(ErrorCategory::InvalidArgument, "load probability must lie in [0, 1]");
}

DatasetProtocol DatasetProtocol::odd_channel_default(std::size_t channels) {
    DatasetProtocol p;
    p.loadable.resize(channels);
    for (std::size_t i = 0; i < channels; ++i)
        p.loadable[i] = (i % 2 == 0);  // channel number i + 1 is odd
    p.load_probability = {0.15, 0.9};
    return p;
}

namespace {

std::pair<double, double> range_of(const json& j, const char* what) {
    if (j.is_number())
        return {j.get<double>(), j.get<double>()};
    auto v = io::doubles(j, what);
    if (v.size() != 2)
        throw Error(ErrorCategory::Schema, std::string(what) + " must be [lo, hi]");
    return {v[0], v[1]};
}

}  // namespace

DatasetProtocol protocol_from_json(const json& j, std::size_t channels) {
    const std::string origin = "protocol";
    io::check_schema(j, "edfa.protocol/1", origin);
    DatasetProtocol p = DatasetProtocol::odd_channel_default(channels);
    const auto& l = io::require(j, "loadable", origin);
    if (l.is_string()) {
        const auto s = l.get<std::string>();
        for (std::size_t i = 0; i < channels; ++i) {
            if (s == "odd")
                p.loadable[i] = (i % 2 == 0);
            else if (s == "even")
                p.loadable[i] = (i % 2 == 1);
            else if (s == "all")
                p.loadable[i] = true;
            else
                throw Error(ErrorCategory::Schema, "loadable must be odd, even, all or an index list");
        }
    } else {
        std::fill(p.loadable.begin(), p.loadable.end(), false);
        for (const auto& e : l) {
            const auto idx = e.get<std::size_t>();
            if (idx >= channels)
                throw Error(ErrorCategory::Schema, "loadable index out of range");
            p.loadable[idx] = true;
        }
    }
    if (j.contains("load_probability"))
        p.load_probability = range_of(j["load_probability"], "load_probability");
    if (j.contains("avg_power_range_dbm"))
        p.avg_power_range_dbm = range_of(j["avg_power_range_dbm"], "avg_power_range_dbm");
    if (j.contains("perturbation_range_db"))
        p.perturbation_range_db = range_of(j["perturbation_range_db"], "perturbation_range_db");
    p.unloaded_power_dbm = j.value("unloaded_power_dbm", p.unloaded_power_dbm);
    p.empty_power_dbm = j.value("empty_power_dbm", p.empty_power_dbm);
    if (j.contains("ase_floor_dbm") && !j["ase_floor_dbm"].is_null())
        p.ase_floor_dbm = j["ase_floor_dbm"].get<double>();
    p.ase_slope_per_thz = j.value("ase_slope_per_thz", 0.0);
    p.validate(channels);
    return p;
}

DatasetProtocol load_protocol(const std::string& path, std::size_t channels) {
    return protocol_from_json(io::load_json(path), channels);
}

// Native format ---------------------------------------------------------------

namespace {

json rounded(std::span<const double> v) {
    json a = json::array();
    for (double x : v)
        a.push_back(io::round_sig(x, kDigits));
    return a;
}

json mask(const std::vector<bool>& m) {
    json a = json::array();
    for (bool b : m)
        a.push_back(b ? 1 : 0);
    return a;
}

json gain_values(const GainSpectrum& g) {
    json a = json::array();
    for (std::size_t i = 0; i < g.size(); ++i)
        a.push_back(g.is_valid(i) ? json(io::round_sig(g.db(i), kDigits)) : json(nullptr));
    return a;
}

GainSpectrum gain_from(const json& a, const GridPtr& grid, const std::string& where) {
    if (!a.is_array())
        throw Error(ErrorCategory::Schema, where + ": gain_db must be an array");
    std::vector<double> v;
    std::vector<bool> valid;
    for (const auto& e : a) {
        if (e.is_null()) {
            v.push_back(std::numeric_limits<double>::quiet_NaN());
            valid.push_back(false);
        } else if (e.is_number()) {
            v.push_back(e.get<double>());
            valid.push_back(true);
        } else {
            throw Error(ErrorCategory::Schema, where + ": gain_db entries must be numbers or null");
        }
    }
    if (v.size() != grid->size())
        throw Error(ErrorCategory::GridMismatch, where + ": gain length does not match grid");
    return GainSpectrum(grid, std::move(v), std::move(valid));
}

}  // namespace

std::string serialize(const Dataset& d) {
    d.validate();
    std::string out;
    json header{{"schema", kDatasetSchema},
                {"grid", io::grid_to_json(*d.grid)},
                {"setting", io::setting_to_json(d.setting)},
                {"provenance", d.provenance},
                {"count", d.records.size()}};
    out += header.dump();
    out += '\n';
    for (const auto& r : d.records) {
        json rec{{"id", r.meta.id},
                 {"source", r.meta.source},
                 {"loaded_count", r.meta.loaded_count},
                 {"total_input_dbm", io::round_sig(r.meta.total_input_dbm, kDigits)},
                 {"input_dbm", rounded(r.input.values_dbm())},
                 {"loaded", mask(r.input.loaded())}};
        if (r.gain)
            rec["gain_db"] = gain_values(*r.gain);
        if (r.output_raw)
            rec["output_raw_dbm"] = rounded(r.output_raw->values_dbm());
        out += rec.dump();
        out += '\n';
    }
    return out;
}

Dataset deserialize(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorCategory::Schema, origin + ": empty dataset file");
    const json header = io::parse_json(line, origin + " header");
    io::check_schema(header, kDatasetSchema, origin);
    Dataset d;
    d.grid = make_grid(io::grid_from_json(io::require(header, "grid", origin)));
    d.setting = io::setting_from_json(io::require(header, "setting", origin));
    d.provenance = header.value("provenance", "");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        const json rec = io::parse_json(line, where);
        auto values = io::doubles(io::require(rec, "input_dbm", where), "input_dbm");
        auto loaded = io::bools(io::require(rec, "loaded", where), "loaded");
        if (values.size() != d.grid->size() || loaded.size() != d.grid->size())
            throw Error(ErrorCategory::GridMismatch, where + ": input length does not match grid");
        SampleRecord r{PowerSpectrum(d.grid, std::move(values), std::move(loaded)), std::nullopt,
                       std::nullopt, {}};
        if (rec.contains("gain_db"))
            r.gain = gain_from(rec["gain_db"], d.grid, where);
        if (rec.contains("output_raw_dbm")) {
            auto raw = io::doubles(rec["output_raw_dbm"], "output_raw_dbm");
            if (raw.size() != d.grid->size())
                throw Error(ErrorCategory::GridMismatch, where + ": output length does not match grid");
            r.output_raw = PowerSpectrum(d.grid, std::move(raw), r.input.loaded());
        }
        r.meta.id = io::require(rec, "id", where).get<std::uint64_t>();
        r.meta.source = rec.value("source", "");
        r.meta.loaded_count = io::require(rec, "loaded_count", where).get<std::size_t>();
        r.meta.total_input_dbm = io::require(rec, "total_input_dbm", where).get<double>();
        r.validate();
        d.records.push_back(std::move(r));
    }
    if (header.contains("count") && header["count"].get<std::size_t>() != d.records.size())
        throw Error(ErrorCategory::Schema, origin + ": header announces " +
                                               std::to_string(header["count"].get<std::size_t>()) +
                                               " records, file holds " + std::to_string(d.records.size()));
    return d;
}

void write_dataset(const std::string& path, const Dataset& d) {
    io::write_text(path, serialize(d));
}

Dataset read_dataset(const std::string& path) {
    return deserialize(io::read_text(path), path);
}

// ASE subtraction ---------------------------------------------------------------

AseConvention AseConvention::even_channels(std::size_t channels) {
    AseConvention c;
    c.probe.resize(channels);
    for (std::size_t i = 0; i < channels; ++i)
        c.probe[i] = (i % 2 == 1);
    return c;
}

std::vector<double> interpolate_noise_mw(const PowerSpectrum& out, const AseConvention& conv) {
    const std::size_t n = out.size();
    if (conv.probe.size() != n)
        throw Error(ErrorCategory::GridMismatch, "ASE probe mask does not match grid length");
    std::vector<std::size_t> probes;
    for (std::size_t i = 0; i < n; ++i)
        if (conv.probe[i])
            probes.push_back(i);
    if (probes.empty())
        throw Error(ErrorCategory::InvalidArgument, "ASE subtraction needs at least one empty probe channel");

    const auto f = out.grid()->frequencies();
    std::vector<double> noise(n);
    std::size_t right = 0;  // first probe index >= i
    for (std::size_t i = 0; i < n; ++i) {
        while (right < probes.size() && probes[right] < i)
            ++right;
        if (right < probes.size() && probes[right] == i) {
            noise[i] = dbm_to_mw(out.dbm(i));
        } else if (right == 0) {
            noise[i] = dbm_to_mw(out.dbm(probes.front()));
        } else if (right == probes.size()) {
            noise[i] = dbm_to_mw(out.dbm(probes.back()));
        } else {
            const std::size_t a = probes[right - 1], b = probes[right];
            const double t = (f[i] - f[a]) / (f[b] - f[a]);
            noise[i] = (1.0 - t) * dbm_to_mw(out.dbm(a)) + t * dbm_to_mw(out.dbm(b));
        }
    }
    return noise;
}

SampleRecord subtract_ase(const SampleRecord& record, const AseConvention& conv) {
    if (!record.output_raw)
        throw Error(ErrorCategory::InvalidArgument,
                    "record " + std::to_string(record.meta.id) + " has no raw output to correct");
    const auto& in = record.input;
    const auto& out = *record.output_raw;
    for (std::size_t i = 0; i < in.size(); ++i)
        if (conv.probe.at(i) && in.is_loaded(i))
            throw Error(ErrorCategory::InvalidArgument,
                        "probe " + channel_label(in.grid(), i) + " is loaded; it cannot measure noise");
    const auto noise = interpolate_noise_mw(out, conv);
    std::vector<double> gain(in.size(), std::numeric_limits<double>::quiet_NaN());
    std::vector<bool> valid(in.size(), false);
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (conv.probe[i])
            continue;
        const double signal = dbm_to_mw(out.dbm(i)) - noise[i];
        if (!(signal > 0.0)) {
            if (in.is_loaded(i))
                throw Error(ErrorCategory::AseInconsistent,
                            "record " + std::to_string(record.meta.id) + ": output on " +
                                channel_label(in.grid(), i) + " is below the interpolated noise floor");
            continue;
        }
        gain[i] = mw_to_dbm(signal) - in.dbm(i);
        valid[i] = true;
    }
    SampleRecord r = record;
    r.gain = GainSpectrum(in.grid(), std::move(gain), std::move(valid));
    return r;
}

Dataset subtract_ase(const Dataset& d, const AseConvention& conv) {
    Dataset out{d.grid, d.setting, d.provenance + "|ase-subtracted", {}};
    out.records.reserve(d.records.size());
    for (const auto& r : d.records)
        out.records.push_back(subtract_ase(r, conv));
    return out;
}

// Public ingestion --------------------------------------------------------------

namespace {

std::vector<std::size_t> column_block(const json& j, const char* what) {
    std::vector<std::size_t> cols;
    if (j.is_object()) {
        const auto start = io::require(j, "start", what).get<std::size_t>();
        const auto count = io::require(j, "count", what).get<std::size_t>();
        for (std::size_t i = 0; i < count; ++i)
            cols.push_back(start + i);
    } else if (j.is_array()) {
        for (const auto& e : j)
            if (e.is_number_integer())
                cols.push_back(e.get<std::size_t>());
    }
    return cols;
}

std::vector<std::string> column_names(const json& j) {
    std::vector<std::string> names;
    if (j.is_array())
        for (const auto& e : j)
            if (e.is_string())
                names.push_back(e.get<std::string>());
    return names;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == delim) {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

IngestMapping mapping_from_json(const json& j) {
    const std::string origin = "ingest mapping";
    io::check_schema(j, kIngestMapSchema, origin);
    IngestMapping m;
    const auto delim = j.value("delimiter", std::string(","));
    if (delim.size() != 1)
        throw Error(ErrorCategory::Schema, "delimiter must be a single character");
    m.delimiter = delim[0];
    m.header_rows = j.value("header_rows", std::size_t{1});
    const auto& in = io::require(j, "input_columns", origin);
    const auto& out = io::require(j, "output_columns", origin);
    m.input_columns = column_block(in, "input_columns");
    m.output_columns = column_block(out, "output_columns");
    m.input_names = column_names(in);
    m.output_names = column_names(out);
    m.grid = make_grid(io::grid_from_json(io::require(j, "grid", origin)));
    m.setting = io::setting_from_json(io::require(j, "setting", origin));
    m.source = j.value("source", m.source);
    return m;
}

IngestMapping load_mapping(const std::string& path) {
    return mapping_from_json(io::load_json(path));
}

Dataset ingest_public(const std::string& text, const IngestMapping& map, const std::string& origin) {
    IngestMapping m = map;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    for (std::size_t h = 0; h < m.header_rows; ++h) {
        if (!std::getline(in, line))
            throw Error(ErrorCategory::Schema, origin + ": missing header row");
        ++line_no;
        if (h == 0)
            header = split_line(line, m.delimiter);
    }
    auto resolve = [&](const std::vector<std::string>& names, std::vector<std::size_t>& cols) {
        if (names.empty())
            return;
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < header.size(); ++i)
            index.emplace(header[i], i);
        cols.clear();
        for (const auto& n : names) {
            auto it = index.find(n);
            if (it == index.end())
                throw Error(ErrorCategory::Schema, origin + ": column '" + n + "' not found in header");
            cols.push_back(it->second);
        }
    };
    resolve(m.input_names, m.input_columns);
    resolve(m.output_names, m.output_columns);
    const std::size_t n = m.grid->size();
    if (m.input_columns.size() != n || m.output_columns.size() != n)
        throw Error(ErrorCategory::Schema, origin + ": mapping names " + std::to_string(m.input_columns.size()) +
                                               " input / " + std::to_string(m.output_columns.size()) +
                                               " output columns for a " + std::to_string(n) + "-channel grid");
    std::size_t width = 0;
    for (auto c : m.input_columns)
        width = std::max(width, c + 1);
    for (auto c : m.output_columns)
        width = std::max(width, c + 1);

    Dataset d{m.grid, m.setting, "file:" + origin, {}};
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r")
            continue;
        ++row;
        const auto fields = split_line(line, m.delimiter);
        const std::string where = origin + " row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
        if (fields.size() < width || (header.size() && fields.size() != header.size()))
            throw Error(ErrorCategory::Schema, where + ": expected " +
                                                   std::to_string(header.size() ? header.size() : width) +
                                                   " fields, found " + std::to_string(fields.size()));
        auto number = [&](std::size_t col) {
            const auto& s = fields[col];
            char* end = nullptr;
            const double v = std::strtod(s.c_str(), &end);
            if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
                throw Error(ErrorCategory::Schema, where + ": column " + std::to_string(col) +
                                                       " is not a finite number ('" + s + "')");
            return v;
        };
        std::vector<double> pin(n), gain(n);
        for (std::size_t k = 0; k < n; ++k) {
            pin[k] = number(m.input_columns[k]);
            gain[k] = number(m.output_columns[k]) - pin[k];
        }
        PowerSpectrum input(m.grid, std::move(pin));
        SampleRecord r{input, std::nullopt, GainSpectrum(m.grid, std::move(gain), std::vector<bool>(n, true)),
                       describe(input, m.source, row - 1)};
        d.records.push_back(std::move(r));
    }
    return d;
}

Dataset ingest_public_file(const std::string& path, const IngestMapping& map) {
    return ingest_public(io::read_text(path), map, path);
}

// Splits --------------------------------------------------------------------------

Split split_indices(const Dataset& d, const SplitStrategy& strategy) {
    Split s;
    std::visit(
        [&](const auto& st) {
            using T = std::decay_t<decltype(st)>;
            if constexpr (std::is_same_v<T, RandomSplit>) {
                if (st.n_train + st.n_test > d.size())
                    throw Error(ErrorCategory::InfeasibleExperiment,
                                "random split wants " + std::to_string(st.n_train) + " + " +
                                    std::to_string(st.n_test) + " records, dataset has " +
                                    std::to_string(d.size()));
                std::vector<std::size_t> idx(d.size());
                std::iota(idx.begin(), idx.end(), std::size_t{0});
                std::mt19937_64 rng(st.seed);
                std::shuffle(idx.begin(), idx.end(), rng);
                s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(st.n_train));
                s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(st.n_train),
                              idx.begin() + static_cast<std::ptrdiff_t>(st.n_train + st.n_test));
            } else if constexpr (std::is_same_v<T, LoadedCountSplit>) {
                for (std::size_t i = 0; i < d.size(); ++i) {
                    const auto c = d.records[i].meta.loaded_count;
                    if (c > st.threshold)
                        s.train.push_back(i);
                    else if (c < st.threshold)
                        s.test.push_back(i);
                }
            } else {
                const auto& a = st.train_dbm;
                const auto& b = st.test_dbm;
                if (a.first > a.second || b.first > b.second)
                    throw Error(ErrorCategory::InvalidArgument, "total-power split ranges must be ordered");
                if (a.first <= b.second && b.first <= a.second)
                    throw Error(ErrorCategory::InvalidArgument, "total-power split ranges overlap");
                for (std::size_t i = 0; i < d.size(); ++i) {
                    const double p = d.records[i].meta.total_input_dbm;
                    if (p >= a.first && p <= a.second)
                        s.train.push_back(i);
                    else if (p >= b.first && p <= b.second)
                        s.test.push_back(i);
                }
            }
        },
        strategy);
    if (s.train.empty() || s.test.empty())
        throw Error(ErrorCategory::EmptySplit, std::string("split left the ") +
                                                   (s.train.empty() ? "train" : "test") + " side empty");
    return s;
}

std::pair<Dataset, Dataset> split(const Dataset& d, const SplitStrategy& strategy) {
    const auto s = split_indices(d, strategy);
    return {subset(d, s.train), subset(d, s.test)};
}

SplitStrategy split_from_json(const json& j) {
    const auto kind = io::require(j, "strategy", "split").get<std::string>();
    if (kind == "random")
        return RandomSplit{j.value("n_train", std::size_t{0}), j.value("n_test", std::size_t{0}),
                           j.value("seed", std::uint64_t{0})};
    if (kind == "by_loaded_count")
        return LoadedCountSplit{j.value("threshold", std::size_t{12})};
    if (kind == "by_total_power")
        return TotalPowerSplit{range_of(io::require(j, "train_dbm", "split"), "train_dbm"),
                               range_of(io::require(j, "test_dbm", "split"), "test_dbm")};
    throw Error(ErrorCategory::Schema, "unknown split strategy '" + kind + "'");
}

json split_to_json(const SplitStrategy& s) {
    return std::visit(
        [](const auto& st) -> json {
            using T = std::decay_t<decltype(st)>;
            if constexpr (std::is_same_v<T, RandomSplit>)
                return {{"strategy", "random"}, {"n_train", st.n_train}, {"n_test", st.n_test}, {"seed", st.seed}};
            else if constexpr (std::is_same_v<T, LoadedCountSplit>)
                return {{"strategy", "by_loaded_count"}, {"threshold", st.threshold}};
            else
                return {{"strategy", "by_total_power"},
                        {"train_dbm", {st.train_dbm.first, st.train_dbm.second}},
                        {"test_dbm", {st.test_dbm.first, st.test_dbm.second}}};
        },
        s);
}

}  // namespace edfa::data
