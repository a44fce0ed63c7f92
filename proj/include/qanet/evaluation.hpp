#pragma once

// Exact-match and token-F1 scoring compatible with the public SQuAD metric.

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "qanet/error.hpp"
#include "qanet/text.hpp"

namespace qanet {

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c >= 0x80;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && text::is_space(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !text::is_space(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
inline std::string normalize_answer(std::string_view s) {
  std::string lowered = text::to_lower(s);
  std::string no_punct;
  no_punct.reserve(lowered.size());
  for (char c : lowered) {
    if (!text::is_punct(static_cast<unsigned char>(c))) no_punct.push_back(c);
  }
  std::string no_articles;
  no_articles.reserve(no_punct.size());
  for (std::size_t i = 0; i < no_punct.size();) {
    if (!detail::is_word_byte(static_cast<unsigned char>(no_punct[i]))) {
      no_articles.push_back(no_punct[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < no_punct.size() && detail::is_word_byte(static_cast<unsigned char>(no_punct[j]))) ++j;
    const std::string_view word(no_punct.data() + i, j - i);
    if (word == "a" || word == "an" || word == "the") {
      no_articles.push_back(' ');
    } else {
      no_articles.append(word);
    }
    i = j;
  }
  std::string out;
  for (const auto& w : detail::split_whitespace(no_articles)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

inline bool exact_match(std::string_view prediction, std::string_view gold) {
  return normalize_answer(prediction) == normalize_answer(gold);
}

/// Harmonic mean of token precision and recall over normalized tokens.
inline double f1_score(std::string_view prediction, std::string_view gold) {
  const auto pred = detail::split_whitespace(normalize_answer(prediction));
  const auto ref = detail::split_whitespace(normalize_answer(gold));
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

struct ExampleScore {
  std::string id;
  double em = 0.0;
  double f1 = 0.0;
  std::string prediction;
  std::vector<std::string> golds;
};

struct EvalResult {
  double em = 0.0;  // percent
  double f1 = 0.0;  // percent
  std::vector<ExampleScore> records;
};

/// Scores one prediction against all golds, taking the maximum of each metric.
inline ExampleScore score_example(std::string id, std::string prediction, std::vector<std::string> golds) {
  ExampleScore s{std::move(id), 0.0, 0.0, std::move(prediction), std::move(golds)};
  for (const auto& g : s.golds) {
    s.em = std::max(s.em, exact_match(s.prediction, g) ? 1.0 : 0.0);
    s.f1 = std::max(s.f1, f1_score(s.prediction, g));
  }
  return s;
}

/// `golds` pairs each example id with its accepted answers, in dataset order.
inline EvalResult evaluate(const std::map<std::string, std::string>& predictions,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& golds) {
  EvalResult result;
  for (const auto& [id, answers] : golds) {
    auto it = predictions.find(id);
    if (it == predictions.end()) throw Error(ErrorCode::kMissingPrediction, id);
    result.records.push_back(score_example(id, it->second, answers));
  }
  if (result.records.empty()) return result;
  for (const auto& r : result.records) {
    result.em += r.em;
    result.f1 += r.f1;
  }
  result.em = 100.0 * result.em / static_cast<double>(result.records.size());
  result.f1 = 100.0 * result.f1 / static_cast<double>(result.records.size());
  return result;
}

}  // namespace qanet
