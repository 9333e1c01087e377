#pragma once

// Little-endian helpers for the binary file formats (edge tensors, feature
// maps, checkpoints).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "textspot/error.hpp"

namespace textspot {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::string module) : buf_(buf), module_(std::move(module)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  void expect_end() const {
    if (!at_end()) throw ShapeError(module_, "trailing bytes in binary file");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw ShapeError(module_, "binary file truncated");
  }
  const std::vector<std::uint8_t>& buf_;
  std::string module_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_bytes_file(const std::string& path, const std::string& module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(module, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes_file(const std::string& path, const std::vector<std::uint8_t>& bytes, const std::string& module) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(module, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace textspot
