// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vclip/error.hpp"

namespace vclip {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v & 0xFF0000u) >> 8) | (v >> 24);
  }
}

}  // namespace detail

// Raw row-major float32 little-endian blob, no header.
inline void write_f32le(const fs::path& path, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    words[i] = detail::to_le(std::bit_cast<std::uint32_t>(values[i]));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw CorruptionError("missing blob: " + path.string());
  if (size != expected_count * sizeof(float)) {
    throw CorruptionError("blob " + path.string() + " has " + std::to_string(size) +
                          " bytes, expected " + std::to_string(expected_count * sizeof(float)));
  }
  std::vector<std::uint32_t> words(expected_count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(size));
  if (!in) throw CorruptionError("short read: " + path.string());
  std::vector<float> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    out[i] = std::bit_cast<float>(detail::to_le(words[i]));
  }
  return out;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing file: " + path.string());
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json(const fs::path& path, const json& j, int indent = 2) {
  write_text(path, j.dump(indent) + "\n");
}

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw RuntimeFailure("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

// Typed field access that turns nlohmann type errors into SchemaError.
template <class V>
V get_field(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(where + ": missing key \"" + key + "\"");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw SchemaError(where + ": bad value for \"" + key + "\": " + e.what());
  }
}

template <class V>
V get_field_or(const json& j, const std::string& key, V fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  return get_field<V>(j, key, where);
}

}  // namespace vclip
