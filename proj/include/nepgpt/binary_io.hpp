#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "nepgpt/error.hpp"

namespace nepgpt {

// 64-bit FNV-1a. Used as the trailing checksum of every binary container and
// as the content hash for line deduplication.
class Fnv1a64 {
 public:
  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view bytes);
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a64(std::string_view bytes);

// Little-endian serialization into an in-memory buffer.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    static_assert(std::endian::native == std::endian::little,
                  "binary formats assume a little-endian host");
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    buffer_.append(raw, sizeof(T));
  }

  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
  // u32 length prefix followed by the raw bytes.
  void put_string(std::string_view s);

  const std::string& buffer() const { return buffer_; }
  std::string& buffer() { return buffer_; }

 private:
  std::string buffer_;
};

// Bounds-checked little-endian reader. Running off the end raises `on_short`.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, ErrorCode on_short)
      : bytes_(bytes), on_short_(on_short) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view get_bytes(std::size_t n);
  std::string get_string();

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const;

  std::string_view bytes_;
  std::size_t pos_ = 0;
  ErrorCode on_short_;
};

std::string read_file(const std::filesystem::path& path);

// Writes through a sibling temporary and renames it into place, so a failed
// write never leaves a partial file at `path`.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

}  // namespace nepgpt
