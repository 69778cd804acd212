#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace dprof::io {

std::string read_file(const std::filesystem::path& path);

// Writes via a sibling temp file and rename, so readers never observe a
// partially written output.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);

}  // namespace dprof::io
