#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>

namespace stdb {

// Little-endian fixed-width primitives for the binary artifact formats.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path);
  void magic(std::string_view tag);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(const void* data, std::size_t n);

 private:
  std::ofstream out_;
  std::string path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path);
  void expect_magic(std::string_view tag);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void bytes(void* data, std::size_t n);
  std::string line();  // up to and excluding '\n'

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace stdb
