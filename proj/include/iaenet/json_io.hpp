// File helpers and strict JSON config access.
#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "iaenet/common.hpp"

namespace iaenet {

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  require(static_cast<bool>(is), "cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, std::string_view text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  require(static_cast<bool>(os), "cannot write " + p.string());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  write_text(p, j.dump(2) + "\n");
}

/// Rejects keys outside `allowed` so config typos fail loudly.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view context) {
  require_config(j.is_object(), std::string(context) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    require_config(ok, std::string(context) + ": unknown key '" + key + "'");
  }
}

/// Reads j[key] into `out` when present, converting type errors to ConfigError.
template <class T>
void read_opt(const nlohmann::json& j, std::string_view key, T& out, std::string_view context) {
  auto it = j.find(std::string(key));
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(context) + "." + std::string(key) + ": " + e.what());
  }
}

}  // namespace iaenet
