#pragma once

#include "edfa/spectral.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>
#include <vector>

namespace edfa::io {

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

nlohmann::json parse_json(const std::string& text, const std::string& origin);
nlohmann::json load_json(const std::string& path);

/// Throws Schema naming both version ids when `j["schema"]` differs.
void check_schema(const nlohmann::json& j, std::string_view expected, const std::string& origin);

/// Fetches a required member, throwing Schema if absent.
const nlohmann::json& require(const nlohmann::json& j, std::string_view key, const std::string& origin);

std::vector<double> doubles(const nlohmann::json& j, std::string_view what);
std::vector<bool> bools(const nlohmann::json& j, std::string_view what);

/// A grid is either {"first_thz", "spacing_ghz", "count"} or
/// {"frequencies_thz": [...], "bandwidth_ghz"}.
ChannelGrid grid_from_json(const nlohmann::json& j);
nlohmann::json grid_to_json(const ChannelGrid& g);

nlohmann::json setting_to_json(const Setting& s);
Setting setting_from_json(const nlohmann::json& j);

/// Rounds to `digits` significant decimal digits.
double round_sig(double v, int digits);

}  // namespace edfa::io
