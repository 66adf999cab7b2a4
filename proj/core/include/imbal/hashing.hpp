#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace imbal {

/// Lowercase hex SHA-1 of `data`.
std::string sha1_hex(std::string_view data);
/// Git blob object id: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

}  // namespace imbal
