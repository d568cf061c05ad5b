#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

namespace annoforge {

struct ServerConfig {
  std::filesystem::path data_root;
  std::string host = "127.0.0.1";
  int port = 8080;
  int lock_ttl_minutes = 30;
  double auto_accept_threshold = 0.80;
  double uncertain_low = 0.40;
  double uncertain_high = 0.60;
  double unpredicted_score = 0.15;
  double split_ratio = 0.8;
  std::uint64_t rng_seed = 0;
  bool trust_auto_accept = false;
  int job_abandon_minutes = 60;
  double match_min_iou = 0.0;
  /// Directory with the built UI, served at "/".
  std::optional<std::filesystem::path> static_dir;

  /// Throws Error(ConfigError) naming the offending fields.
  void validate() const;
};

/// Missing keys keep their defaults. Throws Error(ConfigError) for unknown
/// keys and wrong types.
ServerConfig config_from_json(const nlohmann::json& j, ServerConfig base = {});
nlohmann::json to_json(const ServerConfig& c);

/// Reads a JSON config file. Throws Error(ConfigError).
ServerConfig load_config(const std::filesystem::path& path);

}  // namespace annoforge
