#ifndef FCTC_BINIO_HPP
#define FCTC_BINIO_HPP

#include "fctc/common.hpp"

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

// Little-endian binary file helpers. All on-disk formats here are LE; the
// reader assumes a little-endian host (checked once at startup of the CLI).

namespace fctc::binio {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_f64(std::ostream& os, double v) { write_bytes(os, &v, 8); }

inline void write_magic(std::ostream& os, const char magic[4]) {
  write_bytes(os, magic, 4);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  void read_bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError(path_ + ": truncated at byte offset " + std::to_string(offset_));
    }
    offset_ += n;
  }

  std::uint32_t read_u32() {
    std::uint32_t v;
    read_bytes(&v, 4);
    return v;
  }

  double read_f64() {
    double v;
    read_bytes(&v, 8);
    return v;
  }

  void expect_magic(const char magic[4]) {
    char buf[4];
    read_bytes(buf, 4);
    if (std::memcmp(buf, magic, 4) != 0) {
      throw FormatError(path_ + ": bad magic at byte offset 0 (expected \"" +
                        std::string(magic, 4) + "\")");
    }
  }

  std::string read_string() {
    const std::uint32_t n = read_u32();
    std::string s(n, '\0');
    if (n > 0) read_bytes(s.data(), n);
    return s;
  }

  void read_f64_block(double* p, std::size_t n) { read_bytes(p, n * 8); }

  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::istream& is_;
  std::string path_;
  std::size_t offset_ = 0;
};

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return is;
}

}  // namespace fctc::binio

#endif  // FCTC_BINIO_HPP
