#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace jdapt::io {

std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames, so readers never observe a
/// half-written artifact.
void write_file(const std::filesystem::path& path, std::string_view contents);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace jdapt::io
