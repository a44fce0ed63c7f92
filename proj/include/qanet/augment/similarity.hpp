#pragma once

// Character-bigram Dice similarity and answer re-alignment inside a
// paraphrased sentence.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qanet/text.hpp"

namespace qanet {

inline constexpr double kDefaultAnswerThreshold = 0.5;

namespace detail {

inline std::map<std::string, std::size_t> bigrams(const std::vector<std::string>& cps) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i + 1 < cps.size(); ++i) ++out[cps[i] + cps[i + 1]];
  return out;
}

}  // namespace detail

/// 2|B(a) & B(b)| / (|B(a)| + |B(b)|) over case-folded character-bigram
/// multisets. Strings under two characters score 1 on exact (case-folded)
/// equality, else 0.
inline double char_2gram_score(std::string_view a, std::string_view b) {
  const auto ca = text::code_points(text::to_lower(a));
  const auto cb = text::code_points(text::to_lower(b));
  if (ca.size() < 2 || cb.size() < 2) return ca == cb ? 1.0 : 0.0;
  const auto ba = detail::bigrams(ca), bb = detail::bigrams(cb);
  std::size_t common = 0;
  for (const auto& [g, n] : ba) {
    const auto it = bb.find(g);
    if (it != bb.end()) common += std::min(n, it->second);
  }
  return 2.0 * static_cast<double>(common) / static_cast<double>(ca.size() - 1 + cb.size() - 1);
}

struct AnswerMatch {
  std::size_t start = 0;  // word indices, inclusive
  std::size_t end = 0;
  std::string text;       // words joined by single spaces
  double score = 0.0;

  bool operator==(const AnswerMatch&) const = default;
};

inline std::string join_words(const std::vector<std::string>& words, std::size_t first, std::size_t last) {
  std::string out;
  for (std::size_t i = first; i <= last; ++i) {
    if (i > first) out += ' ';
    out += words[i];
  }
  return out;
}

/// Finds the span of `sentence` that best matches `answer`. Starts are the words
/// scoring highest against the answer's first word, ends those scoring highest
/// against its last word; among start <= end pairs the span with the highest
/// whole-string score wins (ties: shorter, then leftmost). Returns nothing when
/// the winner scores below threshold.
inline std::optional<AnswerMatch> extract_answer(const std::vector<std::string>& sentence,
                                                 const std::vector<std::string>& answer,
                                                 double threshold = kDefaultAnswerThreshold) {
  if (sentence.empty() || answer.empty()) return std::nullopt;
  auto maximizers = [&](const std::string& target) {
    std::vector<std::size_t> best;
    double top = -1.0;
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      const double s = char_2gram_score(sentence[i], target);
      if (s > top) {
        top = s;
        best.assign(1, i);
      } else if (s == top) {
        best.push_back(i);
      }
    }
    return best;
  };
  const auto starts = maximizers(answer.front());
  const auto ends = maximizers(answer.back());
  const std::string whole = join_words(answer, 0, answer.size() - 1);
  std::optional<AnswerMatch> best;
  for (auto s : starts) {
    for (auto e : ends) {
      if (e < s) continue;
      AnswerMatch m{s, e, join_words(sentence, s, e), 0.0};
      m.score = char_2gram_score(m.text, whole);
      const bool better = !best || m.score > best->score ||
                          (m.score == best->score && (m.end - m.start < best->end - best->start ||
                                                      (m.end - m.start == best->end - best->start && m.start < best->start)));
      if (better) best = std::move(m);
    }
  }
  if (!best || best->score < threshold) return std::nullopt;
  return best;
}

}  // namespace qanet
