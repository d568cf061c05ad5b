#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <vector>

#include "json.hpp"

namespace annoforge {

/// Append-only JSON-lines log. Each append is flushed before returning, so a
/// killed process loses at most the record being written; replay ignores a
/// torn final line.
class Journal {
 public:
  explicit Journal(std::filesystem::path path);

  void append(const nlohmann::json& record);

  /// Atomically replaces the file with `records` (compaction).
  void rewrite(const std::vector<nlohmann::json>& records);

  const std::filesystem::path& path() const noexcept { return path_; }

  /// Missing file reads as empty. Throws Error(DataRootCorrupt) for a bad
  /// line that is not the last one.
  static std::vector<nlohmann::json> read_all(const std::filesystem::path& path);

 private:
  void open();

  std::filesystem::path path_;
  std::mutex mu_;
  std::ofstream out_;
};

}  // namespace annoforge
