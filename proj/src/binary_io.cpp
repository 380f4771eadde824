#include "protoalign/binary_io.hpp"

#include <bit>
#include <limits>

#include "protoalign/error.hpp"

namespace protoalign::io {

namespace {
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;
}

void BinaryWriter::magic(std::string_view four_cc) { os_.write(four_cc.data(), 4); }

void BinaryWriter::u32(std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os_.write(b, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os_.write(b, 8);
}

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(std::string_view s) {
  u64(s.size());
  os_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::matrix(const Matrix& m) {
  u64(m.rows());
  u64(m.cols());
  for (double v : m.data()) f64(v);
}

void BinaryReader::read_bytes(char* dst, std::size_t n) {
  is_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError("unexpected end of binary stream");
}

void BinaryReader::expect_magic(std::string_view four_cc, std::string_view what) {
  char b[4];
  read_bytes(b, 4);
  if (std::string_view(b, 4) != four_cc)
    throw FormatError(std::string(what) + ": bad magic bytes (expected '" + std::string(four_cc) + "')");
}

std::uint32_t BinaryReader::u32() {
  unsigned char b[4];
  read_bytes(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t BinaryReader::u64() {
  unsigned char b[8];
  read_bytes(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (n > kMaxElements) throw FormatError("string length out of range");
  std::string s(n, '\0');
  read_bytes(s.data(), n);
  return s;
}

Matrix BinaryReader::matrix() {
  const std::uint64_t rows = u64();
  const std::uint64_t cols = u64();
  if (cols != 0 && rows > kMaxElements / cols) throw FormatError("matrix dimensions out of range");
  Matrix m(rows, cols);
  for (double& v : m.data()) v = f64();
  return m;
}

}  // namespace protoalign::io
