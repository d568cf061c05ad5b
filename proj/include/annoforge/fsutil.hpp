#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace annoforge {

/// Writes via a sibling temp file and rename, so readers and crash recovery
/// see either the old or the new content. Throws Error(IoFailure).
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Throws Error(IoFailure).
std::string read_file(const std::filesystem::path& path);

}  // namespace annoforge
