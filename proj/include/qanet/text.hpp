#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace qanet {

/// A token with byte offsets [begin, end) into the text it came from.
struct Token {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const Token&) const = default;
};

namespace text {

inline bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline bool is_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

/// Length in bytes of the UTF-8 sequence introduced by `lead` (1 for invalid bytes).
inline std::size_t utf8_width(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

/// Splits text into code points, each as its own UTF-8 string.
inline std::vector<std::string> code_points(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const std::size_t w = std::min(utf8_width(static_cast<unsigned char>(s[i])), s.size() - i);
    out.emplace_back(s.substr(i, w));
    i += w;
  }
  return out;
}

inline std::size_t code_point_count(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); i += utf8_width(static_cast<unsigned char>(s[i]))) ++n;
  return n;
}

/// Byte offset of the code point with the given index; s.size() if past the end.
inline std::size_t byte_offset(std::string_view s, std::size_t code_point_index) {
  std::size_t i = 0;
  for (std::size_t cp = 0; cp < code_point_index && i < s.size(); ++cp) {
    i += utf8_width(static_cast<unsigned char>(s[i]));
  }
  return std::min(i, s.size());
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

}  // namespace text

/// Rule tokenizer: split on whitespace, then peel leading and trailing ASCII
/// punctuation off each chunk one character at a time. Interior punctuation
/// (hyphens, apostrophes) stays inside the word.
inline std::vector<Token> tokenize(std::string_view input) {
  std::vector<Token> tokens;
  auto emit = [&](std::size_t b, std::size_t e) { tokens.push_back({std::string(input.substr(b, e - b)), b, e}); };
  std::size_t i = 0;
  while (i < input.size()) {
    while (i < input.size() && text::is_space(static_cast<unsigned char>(input[i]))) ++i;
    if (i >= input.size()) break;
    std::size_t end = i;
    while (end < input.size() && !text::is_space(static_cast<unsigned char>(input[end]))) ++end;
    std::size_t lo = i, hi = end;
    while (lo < hi && text::is_punct(static_cast<unsigned char>(input[lo]))) {
      emit(lo, lo + 1);
      ++lo;
    }
    std::size_t tail = hi;
    while (tail > lo && text::is_punct(static_cast<unsigned char>(input[tail - 1]))) --tail;
    if (tail > lo) emit(lo, tail);
    for (std::size_t p = tail; p < hi; ++p) emit(p, p + 1);
    i = end;
  }
  return tokens;
}

inline std::vector<std::string> token_texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

}  // namespace qanet
