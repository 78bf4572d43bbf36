#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "contrastcat/numkernel/matrix.hpp"

namespace ccat {

// Little-endian writer/reader shared by the model and library file formats.

class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  /// u64 rows, u64 cols, row-major f64 data.
  void matrix(const nk::Matrix& m);
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

/// Throws FormatError naming `what` on truncation.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  std::span<const std::uint8_t> bytes(std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  nk::Matrix matrix();
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace ccat
