#pragma once

// Rule-based sentence splitting with exact byte offsets.

#include <array>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "qanet/text.hpp"

namespace qanet {

struct Sentence {
  std::size_t begin = 0;  // byte offsets into the paragraph
  std::size_t end = 0;
  std::string text;

  bool operator==(const Sentence&) const = default;
};

namespace detail {

inline constexpr std::array<std::string_view, 33> kAbbreviations = {
    "mr",  "mrs", "ms",  "dr",  "prof", "sr",  "jr",  "st",  "vs",  "etc", "e.g", "i.e",
    "inc", "ltd", "co",  "corp", "mt",  "ft",  "gen", "col", "lt",  "sgt", "capt",
    "jan", "feb", "aug", "sept", "oct", "nov", "dec", "u.s", "fig", "approx"};

inline bool is_closing_quote(std::string_view s, std::size_t i, std::size_t& width) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  if (c == '"' || c == '\'' || c == ')' || c == ']') {
    width = 1;
    return true;
  }
  // U+201D and U+2019
  if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
      (static_cast<unsigned char>(s[i + 2]) == 0x9D || static_cast<unsigned char>(s[i + 2]) == 0x99)) {
    width = 3;
    return true;
  }
  return false;
}

inline bool starts_sentence(std::string_view s, std::size_t i) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  if (std::isupper(c) || c == '"' || c == '\'') return true;
  // U+201C and U+2018
  return c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
         (static_cast<unsigned char>(s[i + 2]) == 0x9C || static_cast<unsigned char>(s[i + 2]) == 0x98);
}

/// True when the period at `dot` closes an abbreviation or a single-letter initial.
inline bool is_abbreviation(std::string_view s, std::size_t dot) {
  std::size_t b = dot;
  while (b > 0 && !text::is_space(s[b - 1])) --b;
  std::string word = text::to_lower(std::string(s.substr(b, dot - b)));
  while (!word.empty() && (word.front() == '(' || word.front() == '"')) word.erase(word.begin());
  if (word.size() == 1 && std::isalpha(static_cast<unsigned char>(word[0]))) return true;
  for (auto a : kAbbreviations) {
    if (word == a) return true;
  }
  return false;
}

}  // namespace detail

/// Splits at . ! ? (plus any closing quotes) followed by whitespace and an
/// uppercase letter or opening quote. Sentences exclude surrounding whitespace;
/// the gaps between them are the separators.
inline std::vector<Sentence> split_sentences(std::string_view paragraph) {
  std::vector<Sentence> out;
  auto emit = [&](std::size_t b, std::size_t e) {
    while (b < e && text::is_space(paragraph[b])) ++b;
    while (e > b && text::is_space(paragraph[e - 1])) --e;
    if (b < e) out.push_back({b, e, std::string(paragraph.substr(b, e - b))});
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < paragraph.size(); ++i) {
    const char c = paragraph[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (c == '.' && detail::is_abbreviation(paragraph, i)) continue;
    std::size_t j = i + 1, w = 0;
    while (j < paragraph.size() && detail::is_closing_quote(paragraph, j, w)) j += w;
    std::size_t k = j;
    while (k < paragraph.size() && text::is_space(paragraph[k])) ++k;
    if (k == j || k == paragraph.size() || !detail::starts_sentence(paragraph, k)) continue;
    emit(start, j);
    start = k;
    i = k - 1;
  }
  emit(start, paragraph.size());
  return out;
}

}  // namespace qanet
