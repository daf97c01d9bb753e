#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pjdm::binio {

/// Little-endian byte sink that is flushed to disk in one piece.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<char>& buffer() const { return buf_; }

 private:
  template <class U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
  }
  std::vector<char> buf_;
};

/// Cursor over a byte buffer; every read past the end throws.
class Reader {
 public:
  Reader(std::vector<char> data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get<std::uint8_t>()); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw std::runtime_error(what_ + ": truncated file");
  }
  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::vector<char> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& data);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace pjdm::binio
