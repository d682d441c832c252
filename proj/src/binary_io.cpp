#include "stdb/binary_io.hpp"

#include "stdb/errors.hpp"

#include <bit>
#include <cstring>

namespace stdb {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary artifact formats assume a little-endian host");

}  // namespace

BinaryWriter::BinaryWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
  require(out_.good(), ErrorCode::Io, "cannot write " + path);
}

void BinaryWriter::magic(std::string_view tag) { bytes(tag.data(), tag.size()); }

void BinaryWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }

void BinaryWriter::u64(std::uint64_t v) { bytes(&v, sizeof v); }

void BinaryWriter::f64(double v) { bytes(&v, sizeof v); }

void BinaryWriter::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  require(out_.good(), ErrorCode::Io, "write failed on " + path_);
}

BinaryReader::BinaryReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
  require(in_.good(), ErrorCode::Io, "cannot open " + path);
}

void BinaryReader::expect_magic(std::string_view tag) {
  std::string got(tag.size(), '\0');
  bytes(got.data(), got.size());
  require(got == tag, ErrorCode::Io, path_ + " is not a " + std::string(tag) + " file");
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v = 0;
  bytes(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v = 0;
  bytes(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v = 0;
  bytes(&v, sizeof v);
  return v;
}

void BinaryReader::bytes(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(in_.gcount()) == n, ErrorCode::Io, "truncated file " + path_);
}

std::string BinaryReader::line() {
  std::string out;
  std::getline(in_, out);
  require(!in_.fail(), ErrorCode::Io, "truncated file " + path_);
  return out;
}

}  // namespace stdb
