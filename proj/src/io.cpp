#include "ictal/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ictal/error.hpp"

namespace ictal::io {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedField, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_f32(const fs::path& path, std::span<const float> values) {
  std::vector<std::uint8_t> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
    for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<std::uint8_t>(u >> (8 * k));
  }
  write_bytes(path, buf);
}

void write_f32(const fs::path& path, std::span<const double> values) {
  std::vector<float> f(values.begin(), values.end());
  write_f32(path, f);
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
  const auto buf = read_bytes(path);
  if (buf.size() % 4 != 0) fail(ErrorCode::TruncatedFile, path.string() + " is not a float32 array");
  const std::size_t n = buf.size() / 4;
  if (expected && n != expected)
    fail(ErrorCode::ShapeMismatch, path.string() + " holds " + std::to_string(n) + " values, expected " +
                                       std::to_string(expected));
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= std::uint32_t{buf[i * 4 + k]} << (8 * k);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

void write_codes(const fs::path& path, std::span<const std::int32_t> codes, int bytes_per_code) {
  std::vector<std::uint8_t> buf(codes.size() * bytes_per_code);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto u = static_cast<std::uint32_t>(codes[i]);
    for (int k = 0; k < bytes_per_code; ++k) buf[i * bytes_per_code + k] = static_cast<std::uint8_t>(u >> (8 * k));
  }
  write_bytes(path, buf);
}

std::vector<std::int32_t> read_codes(const fs::path& path, int bytes_per_code, std::size_t expected) {
  const auto buf = read_bytes(path);
  if (buf.size() != expected * bytes_per_code)
    fail(ErrorCode::ShapeMismatch, path.string() + " has the wrong number of codes");
  std::vector<std::int32_t> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    if (bytes_per_code == 1) {
      out[i] = static_cast<std::int8_t>(buf[i]);
    } else {
      out[i] = static_cast<std::int16_t>(std::uint16_t{buf[2 * i]} | (std::uint16_t{buf[2 * i + 1]} << 8));
    }
  }
  return out;
}

}  // namespace ictal::io
