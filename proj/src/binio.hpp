#pragma once

// Little-endian byte encoding shared by the FEAT, NBRT, SPRW and PCAM formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "fusionrank/error.hpp"

namespace fusionrank::detail {

class ByteWriter {
 public:
  void magic(std::string_view m) { buf_.append(m); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const std::string& bytes() const { return buf_; }
  void reserve(std::size_t n) { buf_.reserve(n); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context)
      : data_(data), context_(std::move(context)) {}

  void expect_magic(std::string_view m) {
    if (data_.size() < m.size() || data_.substr(0, m.size()) != m) {
      throw FormatError(context_ + ": bad magic, expected '" + std::string(m) + "'");
    }
    pos_ = m.size();
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& context() const { return context_; }

  // Payload must be exactly `n` more bytes.
  void expect_remaining(std::uint64_t n) {
    if (remaining() < n) {
      throw TruncationError(context_ + ": payload truncated, expected " + std::to_string(n) +
                            " bytes, found " + std::to_string(remaining()));
    }
    if (remaining() > n) {
      throw TruncationError(context_ + ": payload length mismatch, expected " +
                            std::to_string(n) + " bytes, found " + std::to_string(remaining()));
    }
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw TruncationError(context_ + ": unexpected end of data");
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace fusionrank::detail
