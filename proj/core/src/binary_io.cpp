#include "contrastcat/util/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "contrastcat/util/error.hpp"

namespace ccat {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

void ByteWriter::u32(std::uint32_t v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  bytes(b);
}

void ByteWriter::u64(std::uint64_t v) {
  std::uint8_t b[8];
  std::memcpy(b, &v, 8);
  bytes(b);
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u64(s.size());
  bytes(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

void ByteWriter::matrix(const nk::Matrix& m) {
  u64(m.rows());
  u64(m.cols());
  for (double v : m.data()) f64(v);
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (n > data_.size() - pos_) {
    throw FormatError(what_ + ": truncated file (needed " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ")");
  }
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  std::memcpy(&v, bytes(4).data(), 4);
  return v;
}

std::uint64_t ByteReader::u64() {
  std::uint64_t v;
  std::memcpy(&v, bytes(8).data(), 8);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint64_t n = u64();
  auto b = bytes(n);
  return std::string(b.begin(), b.end());
}

nk::Matrix ByteReader::matrix() {
  const std::uint64_t rows = u64();
  const std::uint64_t cols = u64();
  if (cols != 0 && rows > (data_.size() - pos_) / 8 / cols) {
    throw FormatError(what_ + ": truncated file (matrix " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " does not fit)");
  }
  std::vector<double> values(rows * cols);
  for (double& v : values) v = f64();
  return nk::Matrix(rows, cols, std::move(values));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write to '" + path + "' failed");
}

}  // namespace ccat
