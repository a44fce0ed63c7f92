#pragma once

// SQuAD v1.1 ingestion, vocabularies, word vectors and length-bucketed batching.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qanet/error.hpp"
#include "qanet/evaluation.hpp"
#include "qanet/random.hpp"
#include "qanet/tensor.hpp"
#include "qanet/text.hpp"

namespace qanet {

inline constexpr std::size_t kMaxContextTokens = 400;
inline constexpr std::size_t kMaxAnswerTokens = 30;
inline constexpr std::size_t kCharsPerWord = 16;

/// One (document, question, answer) triple. answer_start/answer_end are
/// inclusive token indices into context_tokens.
struct QaExample {
  std::string id;
  std::string title;
  std::string context;
  std::string question;
  std::vector<Token> context_tokens;
  std::vector<Token> question_tokens;
  std::string answer_text;
  std::size_t answer_start = 0;
  std::size_t answer_end = 0;
  std::vector<std::string> gold_answers;

  /// Raw context text covered by the answer span.
  std::string span_text() const {
    const std::size_t b = context_tokens.at(answer_start).begin;
    const std::size_t e = context_tokens.at(answer_end).end;
    return context.substr(b, e - b);
  }
};

/// Throws if the span or the offset/answer round trip is broken.
inline void validate_example(const QaExample& ex) {
  if (ex.context_tokens.empty() || ex.answer_start > ex.answer_end || ex.answer_end >= ex.context_tokens.size()) {
    throw Error(ErrorCode::kUnalignableAnswer, "span (" + std::to_string(ex.answer_start) + "," +
                                                   std::to_string(ex.answer_end) + ") invalid for " + ex.id);
  }
  for (const auto& t : ex.context_tokens) {
    if (t.end > ex.context.size() || ex.context.compare(t.begin, t.end - t.begin, t.text) != 0) {
      throw Error(ErrorCode::kUnalignableAnswer, "token offsets do not match context in " + ex.id);
    }
  }
  if (normalize_answer(ex.span_text()) != normalize_answer(ex.answer_text)) {
    throw Error(ErrorCode::kUnalignableAnswer,
                "span text '" + ex.span_text() + "' does not match answer '" + ex.answer_text + "' in " + ex.id);
  }
}

/// Maps a byte range of the context to the inclusive token span that covers it.
/// Partially covered tokens are included whole.
inline std::optional<std::pair<std::size_t, std::size_t>> covering_span(const std::vector<Token>& tokens,
                                                                         std::size_t begin, std::size_t end) {
  std::optional<std::size_t> first, last;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].end > begin && tokens[i].begin < end) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) return std::nullopt;
  return std::make_pair(*first, *last);
}

/// Builds a validated example; the answer is given as a byte range into context.
/// answer_text is replaced by the covered token text when snapping widened it.
inline QaExample make_example(std::string id, std::string context, std::string question, std::size_t answer_begin,
                              std::size_t answer_end_byte, std::vector<std::string> golds, std::string title = {}) {
  QaExample ex;
  ex.id = std::move(id);
  ex.title = std::move(title);
  ex.context = std::move(context);
  ex.question = std::move(question);
  ex.context_tokens = tokenize(ex.context);
  ex.question_tokens = tokenize(ex.question);
  auto span = covering_span(ex.context_tokens, answer_begin, answer_end_byte);
  if (!span) {
    throw Error(ErrorCode::kUnalignableAnswer, "no token covers the answer of " + ex.id);
  }
  ex.answer_start = span->first;
  ex.answer_end = span->second;
  ex.answer_text = ex.span_text();
  ex.gold_answers = std::move(golds);
  validate_example(ex);
  return ex;
}

struct ParseOptions {
  /// Training splits drop over-long contexts and answers; eval splits keep everything.
  bool training = true;
  std::size_t max_context_len = kMaxContextTokens;
  std::size_t max_answer_len = kMaxAnswerTokens;
};

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::kMalformedJson, where + " is not an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorCode::kMissingField, std::string(key) + " in " + where);
  return *it;
}

inline std::string string_field(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_string()) throw Error(ErrorCode::kMalformedJson, std::string(key) + " in " + where + " is not a string");
  return v.get<std::string>();
}

inline const nlohmann::json& array_field(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_array()) throw Error(ErrorCode::kMalformedJson, std::string(key) + " in " + where + " is not an array");
  return v;
}

}  // namespace detail

/// Parses a SQuAD v1.1 document already loaded as JSON.
inline std::vector<QaExample> parse_qa_json(const nlohmann::json& root, const ParseOptions& options = {}) {
  std::vector<QaExample> out;
  const auto& articles = detail::array_field(root, "data", "root");
  for (std::size_t a = 0; a < articles.size(); ++a) {
    const std::string where_a = "data[" + std::to_string(a) + "]";
    std::string title;
    if (articles[a].is_object() && articles[a].contains("title") && articles[a]["title"].is_string()) {
      title = articles[a]["title"].get<std::string>();
    }
    const auto& paragraphs = detail::array_field(articles[a], "paragraphs", where_a);
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      const std::string where_p = where_a + ".paragraphs[" + std::to_string(p) + "]";
      const std::string context = detail::string_field(paragraphs[p], "context", where_p);
      const auto& qas = detail::array_field(paragraphs[p], "qas", where_p);
      for (std::size_t q = 0; q < qas.size(); ++q) {
        const std::string where_q = where_p + ".qas[" + std::to_string(q) + "]";
        const std::string question = detail::string_field(qas[q], "question", where_q);
        const std::string id = detail::string_field(qas[q], "id", where_q);
        const auto& answers = detail::array_field(qas[q], "answers", where_q);
        if (answers.empty()) throw Error(ErrorCode::kMissingField, "answers of " + id + " is empty");
        std::vector<std::string> golds;
        for (std::size_t k = 0; k < answers.size(); ++k) {
          golds.push_back(detail::string_field(answers[k], "text", where_q + ".answers[" + std::to_string(k) + "]"));
        }
        const auto& start_field = detail::field(answers[0], "answer_start", where_q + ".answers[0]");
        if (!start_field.is_number_integer() || start_field.get<long long>() < 0) {
          throw Error(ErrorCode::kMalformedJson, "answer_start of " + id + " is not a non-negative integer");
        }
        const auto start_cp = start_field.get<std::size_t>();
        const std::size_t begin = text::byte_offset(context, start_cp);
        const std::size_t end = text::byte_offset(context, start_cp + text::code_point_count(golds[0]));
        QaExample ex = make_example(id, context, question, begin, end, golds, title);
        if (options.training) {
          if (ex.context_tokens.size() > options.max_context_len) continue;
          if (ex.answer_end - ex.answer_start + 1 > options.max_answer_len) continue;
        }
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kMalformedJson, path + ": " + e.what());
  }
}

inline std::vector<QaExample> parse_qa_json(const std::string& path, const ParseOptions& options = {}) {
  return parse_qa_json(read_json_file(path), options);
}

/// id -> gold answer texts straight from a SQuAD v1.1 document, without
/// tokenizing or aligning anything.
inline std::vector<std::pair<std::string, std::vector<std::string>>> read_gold_answers(const nlohmann::json& root) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  for (const auto& article : detail::array_field(root, "data", "root")) {
    for (const auto& paragraph : detail::array_field(article, "paragraphs", "article")) {
      for (const auto& qa : detail::array_field(paragraph, "qas", "paragraph")) {
        const std::string id = detail::string_field(qa, "id", "qas entry");
        std::vector<std::string> golds;
        for (const auto& a : detail::array_field(qa, "answers", id)) golds.push_back(detail::string_field(a, "text", id));
        out.emplace_back(id, std::move(golds));
      }
    }
  }
  return out;
}

/// Serializes examples in the SQuAD v1.1 schema, one paragraph per distinct
/// (title, context) in first-seen order.
inline nlohmann::json to_qa_json(const std::vector<QaExample>& examples) {
  nlohmann::json data = nlohmann::json::array();
  std::map<std::string, std::size_t> article_index;
  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> paragraph_index;
  for (const auto& ex : examples) {
    auto [ait, new_article] = article_index.try_emplace(ex.title, data.size());
    if (new_article) data.push_back({{"title", ex.title}, {"paragraphs", nlohmann::json::array()}});
    auto& paragraphs = data[ait->second]["paragraphs"];
    auto [pit, new_paragraph] =
        paragraph_index.try_emplace({ex.title, ex.context}, std::make_pair(ait->second, paragraphs.size()));
    if (new_paragraph) paragraphs.push_back({{"context", ex.context}, {"qas", nlohmann::json::array()}});
    const std::size_t begin = ex.context_tokens.at(ex.answer_start).begin;
    nlohmann::json answers = nlohmann::json::array();
    answers.push_back({{"text", ex.answer_text},
                       {"answer_start", text::code_point_count(std::string_view(ex.context).substr(0, begin))}});
    paragraphs[pit->second.second]["qas"].push_back(
        {{"id", ex.id}, {"question", ex.question}, {"answers", answers}});
  }
  return {{"version", "1.1"}, {"data", data}};
}

inline void write_qa_json(const std::vector<QaExample>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << to_qa_json(examples).dump(1) << '\n';
}

inline std::vector<std::pair<std::string, std::vector<std::string>>> gold_answers(
    const std::vector<QaExample>& examples) {
  std::vector<std::pair<std::string, std::vector<std::string>>> golds;
  golds.reserve(examples.size());
  for (const auto& ex : examples) golds.emplace_back(ex.id, ex.gold_answers);
  return golds;
}

inline EvalResult evaluate(const std::map<std::string, std::string>& predictions,
                           const std::vector<QaExample>& examples) {
  return evaluate(predictions, gold_answers(examples));
}

// ---------------------------------------------------------------------------
// Vocabularies

/// Token <-> index bijection with PAD = 0 and UNK = 1 reserved.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() {
    add("<PAD>");
    add("<UNK>");
  }

  explicit Vocabulary(const std::vector<std::string>& tokens) {
    if (tokens.size() < 2 || tokens[0] != "<PAD>" || tokens[1] != "<UNK>") {
      throw Error(ErrorCode::kInvalidArgument, "vocabulary must start with <PAD>, <UNK>");
    }
    for (const auto& t : tokens) add(t);
  }

  /// Index of the token, adding it if new.
  int add(const std::string& token) {
    auto [it, inserted] = index_.try_emplace(token, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  bool contains(const std::string& token) const { return index_.contains(token); }

  /// Exact match, then lowercase match, else UNK.
  int lookup(const std::string& token) const {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    if (auto it = index_.find(text::to_lower(token)); it != index_.end()) return it->second;
    return kUnk;
  }

  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> tokens_;
};

struct WordVectors {
  Vocabulary vocab;
  Tensor table;  // [V x dim]; PAD row zero, UNK row random
};

inline constexpr double kUnkInitScale = 0.1;

/// Reads "token v1 ... v_dim" lines. PAD is zero, UNK is drawn from a seeded normal.
inline WordVectors load_word_vectors(std::istream& in, std::size_t dim, std::uint64_t seed) {
  WordVectors wv;
  std::vector<double> values(2 * dim, 0.0);
  Rng rng = make_rng({seed, 0x756e6bULL});
  for (std::size_t c = 0; c < dim; ++c) values[dim + c] = kUnkInitScale * normal(rng);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> row;
    std::string item;
    while (fields >> item) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || !std::isfinite(v)) {
        throw Error(ErrorCode::kBadVectorLine, "line " + std::to_string(line_no) + ": '" + item + "'");
      }
      row.push_back(v);
    }
    if (row.size() != dim) {
      throw Error(ErrorCode::kDimensionMismatch, "line " + std::to_string(line_no) + " has " +
                                                     std::to_string(row.size()) + " values, expected " +
                                                     std::to_string(dim));
    }
    if (wv.vocab.contains(token)) continue;
    wv.vocab.add(token);
    values.insert(values.end(), row.begin(), row.end());
  }
  wv.table = Tensor({wv.vocab.size(), dim}, std::move(values));
  return wv;
}

inline WordVectors load_word_vectors(const std::string& path, std::size_t dim, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return load_word_vectors(in, dim, seed);
}

/// Random vectors for every word seen in the examples, for runs without a vector file.
inline WordVectors random_word_vectors(const std::vector<QaExample>& examples, std::size_t dim, std::uint64_t seed) {
  std::ostringstream synthetic;
  Vocabulary seen;
  for (const auto& ex : examples) {
    for (const auto* tokens : {&ex.context_tokens, &ex.question_tokens}) {
      for (const auto& t : *tokens) seen.add(t.text);
    }
  }
  Rng rng = make_rng({seed, 0x776f7264ULL});
  for (std::size_t i = 2; i < seen.size(); ++i) {
    synthetic << seen.token(static_cast<int>(i));
    for (std::size_t c = 0; c < dim; ++c) synthetic << ' ' << normal(rng);
    synthetic << '\n';
  }
  std::istringstream in(synthetic.str());
  return load_word_vectors(in, dim, seed);
}

/// Character vocabulary (code points) over contexts and questions, in first-seen order.
inline Vocabulary build_char_vocab(const std::vector<QaExample>& examples) {
  Vocabulary chars;
  for (const auto& ex : examples) {
    for (const auto* tokens : {&ex.context_tokens, &ex.question_tokens}) {
      for (const auto& t : *tokens) {
        for (const auto& cp : text::code_points(t.text)) chars.add(cp);
      }
    }
  }
  return chars;
}

// ---------------------------------------------------------------------------
// Batching

/// Padded ids for one batch. Row-major: context_ids is [size x context_len],
/// context_chars is [size x context_len x kCharsPerWord]; masks are 1 on real tokens.
struct Batch {
  std::size_t size = 0;
  std::size_t context_len = 0;
  std::size_t question_len = 0;
  std::vector<int> context_ids, context_chars, question_ids, question_chars;
  std::vector<std::uint8_t> context_mask, question_mask;
  std::vector<std::array<int, 2>> spans;
  std::vector<std::uint8_t> has_label;
  std::vector<std::size_t> example_index;
};

struct BatchOptions {
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t max_context_len = kMaxContextTokens;
  std::size_t bucket_width = 10;
};

namespace detail {

inline void encode_word(const std::string& word, const Vocabulary& chars, int* out) {
  const auto cps = text::code_points(word);
  for (std::size_t c = 0; c < kCharsPerWord; ++c) {
    out[c] = c < cps.size() ? chars.lookup(cps[c]) : Vocabulary::kPad;
  }
}

}  // namespace detail

/// Pads the selected examples into one batch; contexts are cut at max_context_len.
inline Batch make_batch(const std::vector<QaExample>& examples, const std::vector<std::size_t>& indices,
                        const Vocabulary& words, const Vocabulary& chars,
                        std::size_t max_context_len = kMaxContextTokens) {
  Batch b;
  b.size = indices.size();
  for (auto i : indices) {
    b.context_len = std::max(b.context_len, std::min(examples[i].context_tokens.size(), max_context_len));
    b.question_len = std::max(b.question_len, examples[i].question_tokens.size());
  }
  const std::size_t n = b.context_len, m = b.question_len;
  b.context_ids.assign(b.size * n, Vocabulary::kPad);
  b.context_chars.assign(b.size * n * kCharsPerWord, Vocabulary::kPad);
  b.context_mask.assign(b.size * n, 0);
  b.question_ids.assign(b.size * m, Vocabulary::kPad);
  b.question_chars.assign(b.size * m * kCharsPerWord, Vocabulary::kPad);
  b.question_mask.assign(b.size * m, 0);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto& ex = examples[indices[r]];
    const std::size_t len = std::min(ex.context_tokens.size(), max_context_len);
    for (std::size_t t = 0; t < len; ++t) {
      b.context_ids[r * n + t] = words.lookup(ex.context_tokens[t].text);
      detail::encode_word(ex.context_tokens[t].text, chars, &b.context_chars[(r * n + t) * kCharsPerWord]);
      b.context_mask[r * n + t] = 1;
    }
    for (std::size_t t = 0; t < ex.question_tokens.size(); ++t) {
      b.question_ids[r * m + t] = words.lookup(ex.question_tokens[t].text);
      detail::encode_word(ex.question_tokens[t].text, chars, &b.question_chars[(r * m + t) * kCharsPerWord]);
      b.question_mask[r * m + t] = 1;
    }
    const bool labeled = ex.answer_start < len;
    b.has_label.push_back(labeled ? 1 : 0);
    b.spans.push_back({labeled ? static_cast<int>(ex.answer_start) : -1,
                       labeled ? static_cast<int>(std::min(ex.answer_end, len - 1)) : -1});
    b.example_index.push_back(indices[r]);
  }
  return b;
}

/// Shuffles by seed, groups into context-length buckets (stable, shortest
/// first), and cuts consecutive batches of batch_size.
inline std::vector<Batch> make_batches(const std::vector<QaExample>& examples, const Vocabulary& words,
                                       const Vocabulary& chars, const BatchOptions& options) {
  if (examples.empty()) throw Error(ErrorCode::kEmptyDataset, "no examples to batch");
  if (options.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be positive");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng({options.seed, 0x62617463ULL});
  shuffle(std::span<std::size_t>(order), rng);
  const std::size_t width = std::max<std::size_t>(options.bucket_width, 1);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::min(examples[a].context_tokens.size(), options.max_context_len) / width <
           std::min(examples[b].context_tokens.size(), options.max_context_len) / width;
  });
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < order.size(); i += options.batch_size) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(i),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(i + options.batch_size, order.size())));
    batches.push_back(make_batch(examples, idx, words, chars, options.max_context_len));
  }
  return batches;
}

}  // namespace qanet
