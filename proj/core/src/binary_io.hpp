#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "porenet/error.hpp"

namespace porenet::detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& buffer() { return out_; }

 private:
  std::vector<unsigned char> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> data, std::string what) : data_(data), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw Error(ErrorKind::kFormat, what_ + ": truncated or corrupt file (needed " + std::to_string(n) +
                                          " bytes at offset " + std::to_string(pos_) + ", file has " +
                                          std::to_string(data_.size()) + ")");
    }
  }
  std::uint32_t u32() {
    need(4);
    const unsigned char* b = data_.data() + pos_;
    pos_ += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string fixed(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string str(std::size_t max_len = 4096) {
    const std::uint32_t n = u32();
    if (n > max_len) throw Error(ErrorKind::kFormat, what_ + ": implausible string length " + std::to_string(n));
    return fixed(n);
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const unsigned char> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace porenet::detail
