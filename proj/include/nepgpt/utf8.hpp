#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace nepgpt::utf8 {

inline constexpr char32_t kReplacement = 0xFFFD;

// Decodes UTF-8, replacing each maximal invalid subsequence with U+FFFD.
// `had_errors`, when given, is set if any replacement happened.
std::u32string decode(std::string_view bytes, bool* had_errors = nullptr);

void append(std::string& out, char32_t cp);
std::string encode(std::u32string_view cps);
std::string encode(char32_t cp);

bool is_valid(std::string_view bytes);

// Number of code points; invalid sequences count as one replacement each.
std::size_t length(std::string_view bytes);

}  // namespace nepgpt::utf8
