#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parauni/tensor.hpp"

namespace parauni::binio {

// Little-endian encoder into a byte buffer.
class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v);
  void f64(double v);
  void raw(const std::string& s) { bytes_ += s; }
  void str(const std::string& s);  // u64 length + bytes
  void floats(const std::vector<float>& v);  // u64 count + values
  void tensor(const Tensor& t);  // u32 rank, u64 dims, u64 count, values

  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

// Decoder over a byte buffer. Every read checks the remaining length and
// throws FormatError with the offset of the failed field.
class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32();
  double f64();
  std::string raw(std::size_t n);
  std::string str();
  std::vector<float> floats();
  Tensor tensor();

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n, const char* what) const;
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

// Whole-file helpers; throw IoError.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

// FNV-1a, 64-bit.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace parauni::binio
