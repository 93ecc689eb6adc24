#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace fopng {

/// SHA-256 of a byte buffer, lowercase hex.
std::string sha256_hex(const void* data, std::size_t len);

std::string sha256_file_hex(const std::filesystem::path& path);

}  // namespace fopng
