#include "annoforge/journal.hpp"

#include <sstream>

#include "annoforge/error.hpp"
#include "annoforge/fsutil.hpp"

namespace fs = std::filesystem;

namespace annoforge {

Journal::Journal(fs::path path) : path_(std::move(path)) {
  open();
}

void Journal::open() {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) fail(ErrorCode::IoFailure, "cannot open journal " + path_.string());
}

void Journal::append(const nlohmann::json& record) {
  const std::string line = record.dump() + "\n";
  std::lock_guard lock(mu_);
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) fail(ErrorCode::IoFailure, "journal write failed: " + path_.string());
}

void Journal::rewrite(const std::vector<nlohmann::json>& records) {
  std::string content;
  for (const auto& r : records) content += r.dump() + "\n";
  std::lock_guard lock(mu_);
  out_.close();
  write_file_atomic(path_, content);
  open();
}

std::vector<nlohmann::json> Journal::read_all(const fs::path& path) {
  std::vector<nlohmann::json> records;
  if (!fs::exists(path)) return records;
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      records.push_back(nlohmann::json::parse(lines[i]));
    } catch (const nlohmann::json::parse_error& e) {
      if (i + 1 == lines.size()) break;  // torn tail from an interrupted append
      fail(ErrorCode::DataRootCorrupt, path.string() + ": line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace annoforge
