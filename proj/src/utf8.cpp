#include "salm/utf8.hpp"

#include "salm/error.hpp"

namespace salm::utf8 {

namespace {

// Returns the length of the sequence starting at s[i], or 0 if invalid.
// Rejects overlong encodings, surrogates and values above U+10FFFF.
std::size_t sequence_length(std::string_view s, std::size_t i) {
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char b0 = byte(i);
  if (b0 < 0x80) return 1;
  if (b0 < 0xC2) return 0;  // continuation byte or overlong lead
  if (b0 < 0xE0) {
    if (i + 1 >= s.size()) return 0;
    return (byte(i + 1) & 0xC0) == 0x80 ? 2 : 0;
  }
  if (b0 < 0xF0) {
    if (i + 2 >= s.size()) return 0;
    const unsigned char b1 = byte(i + 1), b2 = byte(i + 2);
    if ((b1 & 0xC0) != 0x80 || (b2 & 0xC0) != 0x80) return 0;
    if (b0 == 0xE0 && b1 < 0xA0) return 0;  // overlong
    if (b0 == 0xED && b1 >= 0xA0) return 0;  // surrogate
    return 3;
  }
  if (b0 < 0xF5) {
    if (i + 3 >= s.size()) return 0;
    const unsigned char b1 = byte(i + 1), b2 = byte(i + 2), b3 = byte(i + 3);
    if ((b1 & 0xC0) != 0x80 || (b2 & 0xC0) != 0x80 || (b3 & 0xC0) != 0x80) return 0;
    if (b0 == 0xF0 && b1 < 0x90) return 0;  // overlong
    if (b0 == 0xF4 && b1 >= 0x90) return 0;  // > U+10FFFF
    return 4;
  }
  return 0;
}

}  // namespace

long long find_invalid(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t len = sequence_length(s, i);
    if (len == 0) return static_cast<long long>(i);
    i += len;
  }
  return -1;
}

void validate(std::string_view s, const std::string& where) {
  const long long off = find_invalid(s);
  if (off >= 0) {
    throw DataError(where + ": invalid UTF-8 byte sequence at byte offset " +
                    std::to_string(off));
  }
}

std::size_t count_scalars(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size();) {
    const std::size_t len = sequence_length(s, i);
    if (len == 0) {
      throw DataError("invalid UTF-8 byte sequence at byte offset " + std::to_string(i));
    }
    i += len;
    ++n;
  }
  return n;
}

std::vector<std::string> split_scalars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const std::size_t len = sequence_length(s, i);
    if (len == 0) {
      throw DataError("invalid UTF-8 byte sequence at byte offset " + std::to_string(i));
    }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace salm::utf8
