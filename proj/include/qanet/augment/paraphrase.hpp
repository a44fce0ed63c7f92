#pragma once

// Round-trip paraphrasing of sentences and whole documents, with the answer
// re-extracted from the paraphrase of the sentence that contains it.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qanet/augment/sentences.hpp"
#include "qanet/augment/similarity.hpp"
#include "qanet/augment/translator.hpp"
#include "qanet/data.hpp"
#include "qanet/random.hpp"

namespace qanet {

struct AugmentOptions {
  std::size_t k = 5;                          // beam width in each direction
  double threshold = kDefaultAnswerThreshold;
  std::size_t max_concurrency = 1;            // parallel translator calls
  bool require_answer_paraphrase = false;     // drop examples whose answer sentence cannot be replaced
};

namespace detail {

inline std::vector<std::vector<std::string>> round_trip(const std::vector<std::string>& sentences,
                                                       const Translator& translator, std::size_t k) {
  const auto forward = checked_translate(translator, sentences, k, Direction::kForward);
  std::vector<std::string> pivots;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < forward.size(); ++i) {
    for (const auto& f : forward[i]) {
      pivots.push_back(f);
      owner.push_back(i);
    }
  }
  const auto back = checked_translate(translator, pivots, k, Direction::kBack);
  std::vector<std::vector<std::string>> out(sentences.size());
  for (std::size_t p = 0; p < back.size(); ++p) {
    auto& list = out[owner[p]];
    for (const auto& b : back[p]) {
      if (b == sentences[owner[p]] || std::find(list.begin(), list.end(), b) != list.end()) continue;
      list.push_back(b);
    }
  }
  return out;
}

}  // namespace detail

/// Paraphrases for each sentence: k forward translations, k back-translations
/// of each, deduplicated in order of appearance with the source removed. At
/// most k*k per sentence. With max_concurrency > 1 the sentences are split into
/// that many contiguous chunks translated in parallel.
inline std::vector<std::vector<std::string>> paraphrase_sentences(const std::vector<std::string>& sentences,
                                                                 const Translator& translator, std::size_t k,
                                                                 std::size_t max_concurrency = 1) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "beam width must be positive");
  const std::size_t workers = std::min(std::max<std::size_t>(max_concurrency, 1), sentences.size());
  if (workers <= 1) return detail::round_trip(sentences, translator, k);
  const std::size_t chunk = (sentences.size() + workers - 1) / workers;
  std::vector<std::future<std::vector<std::vector<std::string>>>> jobs;
  for (std::size_t b = 0; b < sentences.size(); b += chunk) {
    std::vector<std::string> part(sentences.begin() + static_cast<std::ptrdiff_t>(b),
                                  sentences.begin() + static_cast<std::ptrdiff_t>(std::min(b + chunk, sentences.size())));
    jobs.push_back(std::async(std::launch::async, [part = std::move(part), &translator, k] {
      return detail::round_trip(part, translator, k);
    }));
  }
  std::vector<std::vector<std::string>> out;
  for (auto& j : jobs) {
    for (auto& r : j.get()) out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<std::string> paraphrase_sentence(const std::string& sentence, const Translator& translator,
                                                    std::size_t k) {
  return paraphrase_sentences({sentence}, translator, k).front();
}

/// Caches paraphrases per sentence so contexts shared by several questions
/// are translated once.
class Paraphraser {
 public:
  Paraphraser(const Translator& translator, AugmentOptions options) : translator_(translator), options_(options) {}

  const AugmentOptions& options() const { return options_; }

  void prefetch(const std::vector<std::string>& sentences) {
    std::vector<std::string> missing;
    for (const auto& s : sentences) {
      if (!cache_.contains(s) && std::find(missing.begin(), missing.end(), s) == missing.end()) missing.push_back(s);
    }
    if (missing.empty()) return;
    auto results = paraphrase_sentences(missing, translator_, options_.k, options_.max_concurrency);
    for (std::size_t i = 0; i < missing.size(); ++i) cache_.emplace(missing[i], std::move(results[i]));
  }

  const std::vector<std::string>& candidates(const std::string& sentence) {
    if (!cache_.contains(sentence)) prefetch({sentence});
    return cache_.at(sentence);
  }

 private:
  const Translator& translator_;
  AugmentOptions options_;
  std::map<std::string, std::vector<std::string>> cache_;
};

/// A paraphrase of the answer-bearing sentence with its realigned answer.
struct ParaphraseCandidate {
  std::string text;
  std::size_t source_index = 0;
  std::optional<AnswerMatch> answer;
  std::size_t answer_begin = 0;  // byte range of the answer within text
  std::size_t answer_end = 0;
};

/// Byte ranges of the units paraphrased independently: sentences, except that
/// sentences the answer touches are merged into one. Second: index of that unit.
inline std::pair<std::vector<std::pair<std::size_t, std::size_t>>, std::size_t> document_units(
    const QaExample& ex) {
  const std::size_t ab = ex.context_tokens.at(ex.answer_start).begin;
  const std::size_t ae = ex.context_tokens.at(ex.answer_end).end;
  std::vector<std::pair<std::size_t, std::size_t>> units;
  std::size_t answer_unit = 0;
  bool merged = false;
  for (const auto& s : split_sentences(ex.context)) {
    const bool touches = s.begin < ae && ab < s.end;
    if (touches && merged) {
      units.back().second = s.end;
    } else {
      units.emplace_back(s.begin, s.end);
      if (touches) {
        answer_unit = units.size() - 1;
        merged = true;
      }
    }
  }
  return {units, answer_unit};
}

inline std::vector<ParaphraseCandidate> answer_candidates(const std::vector<std::string>& paraphrases,
                                                          const std::string& answer_text, double threshold) {
  const auto answer_words = token_texts(tokenize(answer_text));
  std::vector<ParaphraseCandidate> out;
  for (std::size_t i = 0; i < paraphrases.size(); ++i) {
    ParaphraseCandidate c{paraphrases[i], i, std::nullopt, 0, 0};
    const auto tokens = tokenize(c.text);
    c.answer = extract_answer(token_texts(tokens), answer_words, threshold);
    if (c.answer) {
      c.answer_begin = tokens[c.answer->start].begin;
      c.answer_end = tokens[c.answer->end].end;
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Replaces every unit with a uniformly drawn paraphrase; the answer-bearing
/// unit draws only among paraphrases whose realigned answer survives the
/// threshold. Units with no usable paraphrase stay as they were. The question
/// is copied verbatim.
inline std::optional<QaExample> paraphrase_document(const QaExample& ex, Paraphraser& paraphraser, Rng& rng,
                                                    const std::string& new_id) {
  validate_example(ex);
  const auto [units, answer_unit] = document_units(ex);
  std::vector<std::string> texts;
  for (const auto& [b, e] : units) texts.push_back(ex.context.substr(b, e - b));
  paraphraser.prefetch(texts);
  const std::size_t ab = ex.context_tokens[ex.answer_start].begin;
  const std::size_t ae = ex.context_tokens[ex.answer_end].end;

  std::string context = ex.context.substr(0, units.front().first);
  std::size_t new_ab = 0, new_ae = 0;
  for (std::size_t u = 0; u < units.size(); ++u) {
    const std::size_t at = context.size();
    const auto& pool = paraphraser.candidates(texts[u]);
    if (u == answer_unit) {
      std::vector<ParaphraseCandidate> alive;
      for (auto& c : answer_candidates(pool, ex.answer_text, paraphraser.options().threshold)) {
        if (c.answer) alive.push_back(std::move(c));
      }
      if (alive.empty()) {
        if (paraphraser.options().require_answer_paraphrase) return std::nullopt;
        context += texts[u];
        new_ab = at + (ab - units[u].first);
        new_ae = at + (ae - units[u].first);
      } else {
        const auto& pick = alive[uniform_index(rng, alive.size())];
        context += pick.text;
        new_ab = at + pick.answer_begin;
        new_ae = at + pick.answer_end;
      }
    } else {
      context += pool.empty() ? texts[u] : pool[uniform_index(rng, pool.size())];
    }
    const std::size_t gap_end = u + 1 < units.size() ? units[u + 1].first : ex.context.size();
    context += ex.context.substr(units[u].second, gap_end - units[u].second);
  }
  const std::string answer = context.substr(new_ab, new_ae - new_ab);
  return make_example(new_id, std::move(context), ex.question, new_ab, new_ae, {answer}, ex.title);
}

/// `copies` paraphrased versions of every example for one pivot language, with
/// ids "<id>-<pivot>-<i>". Examples that cannot be rebuilt are skipped.
inline std::vector<QaExample> augment_dataset(const std::vector<QaExample>& examples, Paraphraser& paraphraser,
                                              const std::string& pivot, std::size_t copies, std::uint64_t seed) {
  std::vector<std::string> all;
  for (const auto& ex : examples) {
    for (const auto& [b, e] : document_units(ex).first) all.push_back(ex.context.substr(b, e - b));
  }
  paraphraser.prefetch(all);
  std::vector<QaExample> out;
  for (const auto& ex : examples) {
    for (std::size_t i = 0; i < copies; ++i) {
      Rng rng = make_rng({seed, fnv1a(pivot), fnv1a(ex.id), i});
      auto aug = paraphrase_document(ex, paraphraser, rng, ex.id + "-" + pivot + "-" + std::to_string(i));
      if (aug) out.push_back(std::move(*aug));
    }
  }
  return out;
}

}  // namespace qanet
