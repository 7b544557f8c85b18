#include "edfa/json_io.hpp"

#include "edfa/error.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace edfa::io {

using nlohmann::json;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCategory::Io, "cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
    out << text;
    if (!out)
        throw Error(ErrorCategory::Io, "write to '" + path + "' failed");
}

json parse_json(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCategory::Schema, origin + ": malformed JSON: " + e.what());
    }
}

json load_json(const std::string& path) {
    return parse_json(read_text(path), path);
}

void check_schema(const json& j, std::string_view expected, const std::string& origin) {
    if (!j.is_object() || !j.contains("schema") || !j["schema"].is_string())
        throw Error(ErrorCategory::Schema,
                    origin + ": missing schema id (expected '" + std::string(expected) + "')");
    const auto found = j["schema"].get<std::string>();
    if (found != expected)
        throw Error(ErrorCategory::Schema, origin + ": schema '" + found + "' does not match expected '" +
                                               std::string(expected) + "'");
}

const json& require(const json& j, std::string_view key, const std::string& origin) {
    const std::string k(key);
    if (!j.is_object() || !j.contains(k))
        throw Error(ErrorCategory::Schema, origin + ": missing required field '" + k + "'");
    return j.at(k);
}

std::vector<double> doubles(const json& j, std::string_view what) {
    if (!j.is_array())
        throw Error(ErrorCategory::Schema, std::string(what) + " must be an array of numbers");
    std::vector<double> v;
    v.reserve(j.size());
    for (const auto& e : j) {
        if (!e.is_number())
            throw Error(ErrorCategory::Schema, std::string(what) + " contains a non-number");
        v.push_back(e.get<double>());
    }
    return v;
}

std::vector<bool> bools(const json& j, std::string_view what) {
    if (!j.is_array())
        throw Error(ErrorCategory::Schema, std::string(what) + " must be an array");
    std::vector<bool> v;
    v.reserve(j.size());
    for (const auto& e : j) {
        if (e.is_boolean())
            v.push_back(e.get<bool>());
        else if (e.is_number_integer())
            v.push_back(e.get<int>() != 0);
        else
            throw Error(ErrorCategory::Schema, std::string(what) + " contains a non-boolean");
    }
    return v;
}

ChannelGrid grid_from_json(const json& j) {
    if (j.contains("frequencies_thz")) {
        auto f = doubles(j["frequencies_thz"], "grid.frequencies_thz");
        const double bw = j.value("bandwidth_ghz", 50.0);
        return ChannelGrid(std::move(f), bw);
    }
    const double first = require(j, "first_thz", "grid").get<double>();
    const double spacing = require(j, "spacing_ghz", "grid").get<double>();
    const auto count = require(j, "count", "grid").get<std::size_t>();
    return ChannelGrid::uniform(first, spacing, count);
}

json grid_to_json(const ChannelGrid& g) {
    return json{{"frequencies_thz", std::vector<double>(g.frequencies().begin(), g.frequencies().end())},
                {"bandwidth_ghz", g.bandwidth_ghz()}};
}

json setting_to_json(const Setting& s) {
    return json{{"mode", std::string(mode_name(s.mode))}, {"setpoint", s.setpoint}};
}

Setting setting_from_json(const json& j) {
    Setting s;
    s.mode = parse_mode(require(j, "mode", "setting").get<std::string>());
    s.setpoint = require(j, "setpoint", "setting").get<double>();
    return s;
}

double round_sig(double v, int digits) {
    if (v == 0.0 || !std::isfinite(v))
        return v;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return std::strtod(buf, nullptr);
}

}  // namespace edfa::io
