#include "annoforge/config.hpp"

#include <set>

#include "annoforge/error.hpp"
#include "annoforge/fsutil.hpp"

using nlohmann::json;

namespace annoforge {

void ServerConfig::validate() const {
  if (data_root.empty()) fail(ErrorCode::ConfigError, "data_root is required");
  std::error_code ec;
  if (!std::filesystem::is_directory(data_root, ec)) {
    fail(ErrorCode::ConfigError, "data_root '" + data_root.string() + "' is not a readable directory");
  }
  if (port < 0 || port > 65535) fail(ErrorCode::ConfigError, "port must be within [0, 65535]");
  if (lock_ttl_minutes < 1) fail(ErrorCode::ConfigError, "lock_ttl_minutes must be positive");
  if (job_abandon_minutes < 1) fail(ErrorCode::ConfigError, "job_abandon_minutes must be positive");
  if (!(uncertain_low >= 0.0 && uncertain_low < uncertain_high && uncertain_high < auto_accept_threshold &&
        auto_accept_threshold <= 1.0)) {
    fail(ErrorCode::ConfigError,
         "thresholds must satisfy 0 <= uncertain_low < uncertain_high < auto_accept_threshold <= 1 (got "
         "uncertain_low=" + json(uncertain_low).dump() + ", uncertain_high=" + json(uncertain_high).dump() +
             ", auto_accept_threshold=" + json(auto_accept_threshold).dump() + ")");
  }
  if (!(unpredicted_score >= 0.0 && unpredicted_score <= 0.5)) {
    fail(ErrorCode::ConfigError, "unpredicted_score must be within [0, 0.5]");
  }
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) fail(ErrorCode::ConfigError, "split_ratio must be within (0, 1)");
  if (!(match_min_iou >= 0.0 && match_min_iou < 1.0)) {
    fail(ErrorCode::ConfigError, "match_min_iou must be within [0, 1)");
  }
  if (static_dir && !std::filesystem::is_directory(*static_dir, ec)) {
    fail(ErrorCode::ConfigError, "static_dir '" + static_dir->string() + "' is not a directory");
  }
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::ConfigError, std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

ServerConfig config_from_json(const json& j, ServerConfig c) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, "config must be a JSON object");
  static const std::set<std::string> known{"data_root",      "host",           "port",
                                           "lock_ttl_minutes", "auto_accept_threshold", "uncertain_low",
                                           "uncertain_high", "unpredicted_score", "split_ratio",
                                           "rng_seed",       "trust_auto_accept", "job_abandon_minutes",
                                           "match_min_iou",  "static_dir"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::ConfigError, "unknown field '" + key + "'");
  }
  std::string root = c.data_root.string();
  read(j, "data_root", root);
  c.data_root = root;
  read(j, "host", c.host);
  read(j, "port", c.port);
  read(j, "lock_ttl_minutes", c.lock_ttl_minutes);
  read(j, "auto_accept_threshold", c.auto_accept_threshold);
  read(j, "uncertain_low", c.uncertain_low);
  read(j, "uncertain_high", c.uncertain_high);
  read(j, "unpredicted_score", c.unpredicted_score);
  read(j, "split_ratio", c.split_ratio);
  read(j, "rng_seed", c.rng_seed);
  read(j, "trust_auto_accept", c.trust_auto_accept);
  read(j, "job_abandon_minutes", c.job_abandon_minutes);
  read(j, "match_min_iou", c.match_min_iou);
  if (j.contains("static_dir") && !j.at("static_dir").is_null()) {
    std::string dir;
    read(j, "static_dir", dir);
    c.static_dir = dir;
  }
  return c;
}

json to_json(const ServerConfig& c) {
  return json{{"data_root", c.data_root.string()},
              {"host", c.host},
              {"port", c.port},
              {"lock_ttl_minutes", c.lock_ttl_minutes},
              {"auto_accept_threshold", c.auto_accept_threshold},
              {"uncertain_low", c.uncertain_low},
              {"uncertain_high", c.uncertain_high},
              {"unpredicted_score", c.unpredicted_score},
              {"split_ratio", c.split_ratio},
              {"rng_seed", c.rng_seed},
              {"trust_auto_accept", c.trust_auto_accept},
              {"job_abandon_minutes", c.job_abandon_minutes},
              {"match_min_iou", c.match_min_iou},
              {"static_dir", c.static_dir ? json(c.static_dir->string()) : json(nullptr)}};
}

ServerConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, e.detail());
  }
  const json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) fail(ErrorCode::ConfigError, path.string() + " is not valid JSON");
  return config_from_json(doc);
}

}  // namespace annoforge
