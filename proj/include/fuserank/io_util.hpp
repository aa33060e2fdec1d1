#pragma once

// Byte-level helpers shared by the binary containers and artifact writers.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fuserank::io {

std::uint32_t read_u32_le(std::span<const std::uint8_t> bytes);
void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t value);

std::vector<float> read_f32_le_array(std::span<const std::uint8_t> bytes);
void append_f32_le_array(std::vector<std::uint8_t>& out, std::span<const float> values);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes to "<path>.tmp" and renames over the target, so readers never see
/// a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

}  // namespace fuserank::io
