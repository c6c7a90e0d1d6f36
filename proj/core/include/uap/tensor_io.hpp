#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uap/tensor.hpp"

namespace uap {

// UAPT v1 layout, all integers little-endian:
//   "UAPT" | u8 version (=1) | u8 rank | rank x u32 dims | prod(dims) x f64 values
inline constexpr std::uint8_t kUaptVersion = 1;

std::vector<std::uint8_t> encode_uapt(const Tensor& tensor);

/// Throws IntegrityError on bad magic, version, truncation or trailing bytes.
Tensor decode_uapt(std::span<const std::uint8_t> bytes);

void write_uapt(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_uapt(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace uap
