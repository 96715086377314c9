#include "kgi/util.hpp"

#include <fstream>

namespace kgi {

std::uint64_t fingerprint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open file for fingerprinting: " + path);
  Fnv64 h;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    std::streamsize got = is.gcount();
    if (got > 0) h.update(buf, static_cast<std::size_t>(got));
  }
  return h.digest();
}

}  // namespace kgi
