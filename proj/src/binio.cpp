#include "parauni/binio.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "parauni/errors.hpp"

namespace parauni::binio {

namespace {
// Guards allocation from a corrupt count field.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;
}  // namespace

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::str(const std::string& s) {
  u64(s.size());
  bytes_ += s;
}

void Writer::floats(const std::vector<float>& v) {
  u64(v.size());
  for (float x : v) f32(x);
}

void Writer::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) u64(d);
  u64(t.numel());
  for (float x : t.data()) f32(x);
}

void Reader::fail(const std::string& what) const { throw FormatError(what, pos_); }

void Reader::need(std::size_t n, const char* what) const {
  if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
}

std::uint8_t Reader::u8() {
  need(1, "u8");
  return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint32_t Reader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(bytes_[pos_++])} << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(bytes_[pos_++])} << (8 * i);
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::raw(std::size_t n) {
  need(n, "bytes");
  std::string s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::string Reader::str() {
  const std::size_t at = pos_;
  const std::uint64_t n = u64();
  if (n > bytes_.size() - pos_) throw FormatError("string length exceeds the file", at);
  return raw(n);
}

std::vector<float> Reader::floats() {
  const std::size_t at = pos_;
  const std::uint64_t n = u64();
  if (n > kMaxElements || n * 4 > bytes_.size() - pos_) throw FormatError("float count exceeds the file", at);
  std::vector<float> v(n);
  for (float& x : v) x = f32();
  return v;
}

Tensor Reader::tensor() {
  const std::size_t at = pos_;
  const std::uint32_t rank = u32();
  if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " is implausible", at);
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape.push_back(u64());
    if (shape.back() > kMaxElements) throw FormatError("tensor dimension too large", at);
    count *= shape.back();
    if (count > kMaxElements) throw FormatError("tensor too large", at);
  }
  const std::size_t count_at = pos_;
  if (u64() != count) throw FormatError("tensor element count disagrees with its shape", count_at);
  if (count * 4 > bytes_.size() - pos_) throw FormatError("truncated tensor data", pos_);
  std::vector<float> data(count);
  for (float& x : data) x = f32();
  return Tensor::from_data(shape, std::move(data));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  // Write to a sibling temp file first so a failed write leaves the old file intact.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move '" + tmp + "' to '" + path + "'");
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace parauni::binio
