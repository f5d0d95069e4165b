#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace seqcount::wire {

// Little-endian binary file helpers shared by the episode and checkpoint
// formats.

class Writer {
 public:
  Writer(const std::string& path, const char* what) : out_(path, std::ios::binary), what_(what) {
    if (!out_) throw std::runtime_error(std::string(what) + ": cannot open '" + path + "'");
  }
  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v & 0xFF),
                               static_cast<std::uint8_t>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF);
    bytes(b, 4);
  }
  void f64(double v) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>((u >> (8 * i)) & 0xFF);
    bytes(b, 8);
  }
  void close_checked() {
    out_.flush();
    if (!out_.good()) throw std::runtime_error(std::string(what_) + ": I/O error while writing");
  }

 private:
  std::ofstream out_;
  const char* what_;
};

class Reader {
 public:
  Reader(const std::string& path, const char* what) : in_(path, std::ios::binary), what_(what) {
    if (!in_) throw std::runtime_error(std::string(what) + ": cannot open '" + path + "'");
  }
  long offset() const { return offset_; }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw std::runtime_error(std::string(what_) + ": truncated file at offset " +
                               std::to_string(offset_));
    offset_ += static_cast<long>(n);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint16_t u16() {
    std::uint8_t b[2];
    bytes(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    std::uint8_t b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }

 private:
  std::ifstream in_;
  long offset_ = 0;
  const char* what_;
};

}  // namespace seqcount::wire
