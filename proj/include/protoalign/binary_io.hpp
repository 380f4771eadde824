#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "protoalign/matrix.hpp"

namespace protoalign::io {

// Little-endian writer, independent of host byte order.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void magic(std::string_view four_cc);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  // rows, cols, then row-major values
  void matrix(const Matrix& m);

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  // Throws FormatError when the next four bytes differ from `four_cc`.
  void expect_magic(std::string_view four_cc, std::string_view what);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Matrix matrix();

 private:
  void read_bytes(char* dst, std::size_t n);
  std::istream& is_;
};

}  // namespace protoalign::io
