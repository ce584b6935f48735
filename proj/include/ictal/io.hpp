#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ictal::io {

using Json = nlohmann::ordered_json;

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

Json read_json(const std::filesystem::path& path);
// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);

// Little-endian float32 arrays. `expected` (when nonzero) is checked against
// the stored element count.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
void write_f32(const std::filesystem::path& path, std::span<const double> values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected = 0);

// Little-endian signed integers of 1 or 2 bytes.
void write_codes(const std::filesystem::path& path, std::span<const std::int32_t> codes, int bytes_per_code);
std::vector<std::int32_t> read_codes(const std::filesystem::path& path, int bytes_per_code, std::size_t expected);

}  // namespace ictal::io
