#include "nepgpt/utf8.hpp"

#include <cstdint>

namespace nepgpt::utf8 {
namespace {

// Returns the decoded code point and advances `i`, or U+FFFD after consuming
// the longest prefix that could have started a valid sequence.
char32_t next(std::string_view s, std::size_t& i, bool& bad) {
  auto byte = [&](std::size_t k) { return static_cast<std::uint8_t>(s[k]); };
  std::uint8_t b0 = byte(i);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int need;
  char32_t cp;
  std::uint8_t lo = 0x80, hi = 0xBF;
  if (b0 >= 0xC2 && b0 <= 0xDF) {
    need = 1;
    cp = b0 & 0x1F;
  } else if (b0 >= 0xE0 && b0 <= 0xEF) {
    need = 2;
    cp = b0 & 0x0F;
    if (b0 == 0xE0) lo = 0xA0;
    if (b0 == 0xED) hi = 0x9F;
  } else if (b0 >= 0xF0 && b0 <= 0xF4) {
    need = 3;
    cp = b0 & 0x07;
    if (b0 == 0xF0) lo = 0x90;
    if (b0 == 0xF4) hi = 0x8F;
  } else {
    ++i;
    bad = true;
    return kReplacement;
  }
  std::size_t j = i + 1;
  for (int k = 0; k < need; ++k, ++j) {
    if (j >= s.size()) {
      i = j;
      bad = true;
      return kReplacement;
    }
    std::uint8_t b = byte(j);
    std::uint8_t l = (k == 0) ? lo : 0x80;
    std::uint8_t h = (k == 0) ? hi : 0xBF;
    if (b < l || b > h) {
      i = j;
      bad = true;
      return kReplacement;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i = j;
  return cp;
}

}  // namespace

std::u32string decode(std::string_view bytes, bool* had_errors) {
  std::u32string out;
  out.reserve(bytes.size());
  bool bad = false;
  std::size_t i = 0;
  while (i < bytes.size()) out.push_back(next(bytes, i, bad));
  if (had_errors) *had_errors = bad;
  return out;
}

void append(std::string& out, char32_t cp) {
  if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = kReplacement;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size() * 3);
  for (char32_t cp : cps) append(out, cp);
  return out;
}

std::string encode(char32_t cp) {
  std::string out;
  append(out, cp);
  return out;
}

bool is_valid(std::string_view bytes) {
  bool bad = false;
  std::size_t i = 0;
  while (i < bytes.size() && !bad) next(bytes, i, bad);
  return !bad;
}

std::size_t length(std::string_view bytes) {
  bool bad = false;
  std::size_t i = 0, n = 0;
  while (i < bytes.size()) {
    next(bytes, i, bad);
    ++n;
  }
  return n;
}

}  // namespace nepgpt::utf8
