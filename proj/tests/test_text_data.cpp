#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "qanet/data.hpp"
#include "qanet/evaluation.hpp"
#include "qanet/random.hpp"

using namespace qanet;

namespace {

using GoldList = std::vector<std::pair<std::string, std::vector<std::string>>>;

const std::string kData = QANET_TEST_DATA;

std::vector<std::string> texts(std::string_view s) { return token_texts(tokenize(s)); }

nlohmann::json one_paragraph(const std::string& context, const std::string& answer, std::size_t start) {
  return {{"data",
           {{{"title", "t"},
             {"paragraphs",
              {{{"context", context},
                {"qas", {{{"id", "q1"}, {"question", "what?"}, {"answers", {{{"text", answer}, {"answer_start", start}}}}}}}}}}}}}};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(Tokenize, SplitsPunctuation) {
  EXPECT_EQ(texts("Hello, world."), (std::vector<std::string>{"Hello", ",", "world", "."}));
}

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, KeepsHyphenatedWordsWhole) {
  EXPECT_EQ(texts("(Pre-Professional) state-of-the-art!"),
            (std::vector<std::string>{"(", "Pre-Professional", ")", "state-of-the-art", "!"}));
}

TEST(Tokenize, OffsetsRoundTripOnRandomAscii) {
  Rng rng = make_rng({21});
  const std::string alphabet = "abcXYZ019 .,;!?'\"-()\t\n";
  for (int it = 0; it < 500; ++it) {
    std::string s;
    const std::size_t len = uniform_index(rng, 40);
    for (std::size_t i = 0; i < len; ++i) s += alphabet[uniform_index(rng, alphabet.size())];
    std::size_t prev_end = 0;
    for (const auto& t : tokenize(s)) {
      EXPECT_EQ(s.substr(t.begin, t.end - t.begin), t.text);
      EXPECT_GE(t.begin, prev_end);
      for (char c : t.text) EXPECT_FALSE(text::is_space(static_cast<unsigned char>(c)));
      prev_end = t.end;
    }
  }
}

TEST(Parse, CharacterOffsetMapsToTokenSpan) {
  const auto ex = parse_qa_json(one_paragraph("the cat sat", "cat", 4));
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].answer_start, 1u);
  EXPECT_EQ(ex[0].answer_end, 1u);
}

TEST(Parse, CodePointOffsetsHandleMultibyteText) {
  const std::string ctx = "Zürich café is near the Limmat river";
  const auto ex = parse_qa_json(one_paragraph(ctx, "Limmat", 24));
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].span_text(), "Limmat");
}

TEST(Parse, MidTokenAnswerSnapsToCoveringToken) {
  const auto ex = parse_qa_json(one_paragraph("the 1990s were loud", "990s", 5));
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].span_text(), "1990s");
  EXPECT_EQ(ex[0].answer_text, "1990s");
}

TEST(Parse, LongContextDroppedOnlyForTraining) {
  std::string ctx = "answer";
  for (int i = 0; i < 400; ++i) ctx += " w";
  ASSERT_EQ(tokenize(ctx).size(), 401u);
  EXPECT_TRUE(parse_qa_json(one_paragraph(ctx, "answer", 0), {true}).empty());
  EXPECT_EQ(parse_qa_json(one_paragraph(ctx, "answer", 0), {false}).size(), 1u);
}

TEST(Parse, LongAnswerDroppedForTraining) {
  std::string answer = "a0";
  for (int i = 1; i < 31; ++i) answer += " a" + std::to_string(i);
  EXPECT_TRUE(parse_qa_json(one_paragraph("x " + answer, answer, 2), {true}).empty());
}

TEST(Parse, EmptyAnswersIsMissingField) {
  auto j = one_paragraph("the cat sat", "cat", 4);
  j["data"][0]["paragraphs"][0]["qas"][0]["answers"] = nlohmann::json::array();
  EXPECT_EQ(code_of([&] { parse_qa_json(j); }), ErrorCode::kMissingField);
}

TEST(Parse, MissingKeysAndBadJson) {
  EXPECT_EQ(code_of([] { parse_qa_json(nlohmann::json{{"nodata", 1}}); }), ErrorCode::kMissingField);
  EXPECT_EQ(code_of([] { read_json_file(kData + "/vectors_300d.txt"); }), ErrorCode::kMalformedJson);
}

TEST(Parse, AnswerOutsideContextIsUnalignable) {
  EXPECT_EQ(code_of([] { parse_qa_json(one_paragraph("the cat", "zzz", 40)); }), ErrorCode::kUnalignableAnswer);
}

TEST(Parse, FixtureFileSatisfiesSpanInvariants) {
  const auto examples = parse_qa_json(kData + "/tiny_squad.json");
  ASSERT_EQ(examples.size(), 8u);
  for (const auto& ex : examples) {
    EXPECT_LE(ex.answer_start, ex.answer_end);
    EXPECT_LT(ex.answer_end, ex.context_tokens.size());
    EXPECT_EQ(normalize_answer(ex.span_text()), normalize_answer(ex.answer_text)) << ex.id;
    for (const auto& t : ex.context_tokens) EXPECT_EQ(ex.context.substr(t.begin, t.end - t.begin), t.text);
  }
  EXPECT_EQ(examples[1].gold_answers, (std::vector<std::string>{"Denver Broncos", "Broncos"}));
}

TEST(Parse, WriteThenReadRoundTrips) {
  const auto examples = parse_qa_json(kData + "/tiny_squad.json");
  const auto again = parse_qa_json(to_qa_json(examples));
  ASSERT_EQ(again.size(), examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    EXPECT_EQ(again[i].id, examples[i].id);
    EXPECT_EQ(again[i].context, examples[i].context);
    EXPECT_EQ(again[i].answer_start, examples[i].answer_start);
    EXPECT_EQ(again[i].answer_end, examples[i].answer_end);
  }
}

TEST(Vocabulary, ReservedIndicesAndBijection) {
  Vocabulary v;
  EXPECT_EQ(v.lookup("<PAD>"), Vocabulary::kPad);
  EXPECT_EQ(v.lookup("<UNK>"), Vocabulary::kUnk);
  const int cat = v.add("cat");
  EXPECT_EQ(v.add("cat"), cat);
  EXPECT_EQ(v.lookup("Cat"), cat);
  EXPECT_EQ(v.lookup("dog"), Vocabulary::kUnk);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.lookup(v.token(static_cast<int>(i))), static_cast<int>(i));
}

TEST(WordVectors, TwoWordFileGivesFourRows) {
  const auto wv = load_word_vectors(kData + "/vectors_300d.txt", 300, 1);
  EXPECT_EQ(wv.vocab.size(), 4u);
  EXPECT_EQ(wv.table.shape(), (Shape{4, 300}));
  for (std::size_t c = 0; c < 300; ++c) EXPECT_EQ(wv.table.at(0, c), 0.0);
  double unk_norm = 0.0;
  for (std::size_t c = 0; c < 300; ++c) unk_norm += std::abs(wv.table.at(1, c));
  EXPECT_GT(unk_norm, 0.0);
  EXPECT_EQ(load_word_vectors(kData + "/vectors_300d.txt", 300, 1).table.values(), wv.table.values());
}

TEST(WordVectors, BadLinesAreReported) {
  std::istringstream bad_float("cat 0.1 x 0.3\n");
  EXPECT_EQ(code_of([&] { load_word_vectors(bad_float, 3, 0); }), ErrorCode::kBadVectorLine);
  std::istringstream short_row("cat 0.1 0.2\n");
  EXPECT_EQ(code_of([&] { load_word_vectors(short_row, 3, 0); }), ErrorCode::kDimensionMismatch);
}

TEST(Batching, ThreeExamplesBatchSizeTwo) {
  const auto examples = parse_qa_json(kData + "/tiny_squad.json");
  const std::vector<QaExample> three(examples.begin(), examples.begin() + 3);
  const auto wv = random_word_vectors(three, 4, 0);
  const auto batches = make_batches(three, wv.vocab, build_char_vocab(three), {2, 7});
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[0].size, 2u);
  EXPECT_EQ(batches[1].size, 1u);
}

TEST(Batching, LongWordsTruncatedToSixteenChars) {
  const auto ex = make_example("w", "abcdefghijklmnopqrst end", "q", 0, 20, {"abcdefghijklmnopqrst"});
  const std::vector<QaExample> one{ex};
  const auto wv = random_word_vectors(one, 4, 0);
  const auto chars = build_char_vocab(one);
  const Batch b = make_batch(one, {0}, wv.vocab, chars);
  ASSERT_EQ(b.context_chars.size(), b.context_len * kCharsPerWord);
  for (std::size_t c = 0; c < kCharsPerWord; ++c) {
    EXPECT_EQ(b.context_chars[c], chars.lookup(std::string(1, static_cast<char>('a' + c))));
  }
  EXPECT_EQ(b.context_chars[kCharsPerWord + 3], Vocabulary::kPad);  // "end" is padded after 3 chars
}

TEST(Batching, SameSeedSameOrderAndMasksMarkRealTokens) {
  const auto examples = parse_qa_json(kData + "/tiny_squad.json");
  const auto wv = random_word_vectors(examples, 4, 0);
  const auto chars = build_char_vocab(examples);
  const auto a = make_batches(examples, wv.vocab, chars, {3, 99});
  const auto b = make_batches(examples, wv.vocab, chars, {3, 99});
  ASSERT_EQ(a.size(), b.size());
  std::multiset<std::size_t> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].example_index, b[i].example_index);
    EXPECT_EQ(a[i].context_ids, b[i].context_ids);
    for (std::size_t r = 0; r < a[i].size; ++r) {
      const auto& ex = examples[a[i].example_index[r]];
      seen.insert(a[i].example_index[r]);
      for (std::size_t t = 0; t < a[i].context_len; ++t) {
        EXPECT_EQ(a[i].context_mask[r * a[i].context_len + t], t < ex.context_tokens.size() ? 1 : 0);
      }
      ASSERT_TRUE(a[i].has_label[r]);
      EXPECT_EQ(a[i].context_mask[r * a[i].context_len + static_cast<std::size_t>(a[i].spans[r][0])], 1);
      EXPECT_EQ(a[i].context_mask[r * a[i].context_len + static_cast<std::size_t>(a[i].spans[r][1])], 1);
    }
  }
  EXPECT_EQ(seen.size(), examples.size());
}

TEST(Batching, EmptyDatasetThrows) {
  EXPECT_EQ(code_of([] { make_batches({}, Vocabulary(), Vocabulary(), {}); }), ErrorCode::kEmptyDataset);
}

TEST(Batching, EvalTruncationClipsSpans) {
  std::string ctx;
  for (int i = 0; i < 10; ++i) ctx += "w" + std::to_string(i) + " ";
  ctx.pop_back();
  const std::vector<QaExample> one{make_example("t", ctx, "q", ctx.find("w7"), ctx.find("w9") + 2, {"w7 w8 w9"})};
  const auto wv = random_word_vectors(one, 4, 0);
  const Batch b = make_batch(one, {0}, wv.vocab, build_char_vocab(one), 8);
  EXPECT_EQ(b.context_len, 8u);
  EXPECT_EQ(b.spans[0][0], 7);
  EXPECT_EQ(b.spans[0][1], 7);
  const Batch lost = make_batch(one, {0}, wv.vocab, build_char_vocab(one), 5);
  EXPECT_FALSE(lost.has_label[0]);
}

// Evaluation

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_answer("The Cat!"), "cat");
  EXPECT_EQ(normalize_answer(""), "");
  EXPECT_EQ(normalize_answer("  a  theory of  AN   apple "), "theory of apple");
}

TEST(Normalize, IdempotentOnRandomStrings) {
  Rng rng = make_rng({22});
  const std::vector<std::string> pieces{"the", "The", "a", "An", "cat", "!", ",", " ", "  ", "U.S.", "x-y", "é", "'s"};
  for (int it = 0; it < 500; ++it) {
    std::string s;
    for (std::size_t i = 0, n = uniform_index(rng, 8); i < n; ++i) s += pieces[uniform_index(rng, pieces.size())];
    const std::string once = normalize_answer(s);
    EXPECT_EQ(normalize_answer(once), once) << s;
  }
}

TEST(F1, Examples) {
  EXPECT_DOUBLE_EQ(f1_score("Denver Broncos", "Denver Broncos"), 1.0);
  EXPECT_DOUBLE_EQ(f1_score("the cat", "cat"), 1.0);
  EXPECT_DOUBLE_EQ(f1_score("big cat", "cat sat"), 0.5);
  EXPECT_DOUBLE_EQ(f1_score("", ""), 1.0);
  EXPECT_DOUBLE_EQ(f1_score("", "cat"), 0.0);
}

TEST(Evaluate, HandScoredFixtures) {
  const auto fixtures = read_json_file(kData + "/metric_fixtures.json");
  std::map<std::string, std::string> predictions;
  std::vector<std::pair<std::string, std::vector<std::string>>> golds;
  for (const auto& c : fixtures["cases"]) {
    predictions[c["id"]] = c["prediction"];
    golds.emplace_back(c["id"], c["golds"].get<std::vector<std::string>>());
  }
  const EvalResult r = evaluate(predictions, golds);
  ASSERT_EQ(r.records.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& c = fixtures["cases"][i];
    const double f1 = c["f1"][0].get<double>() / c["f1"][1].get<double>();
    EXPECT_EQ(r.records[i].em, c["em"].get<double>()) << c["id"];
    EXPECT_NEAR(r.records[i].f1, f1, 1e-12) << c["id"];
  }
  EXPECT_DOUBLE_EQ(r.em, 50.0);
  EXPECT_NEAR(r.f1, 69.5, 1e-9);
}

TEST(Evaluate, AllCorrectIsHundred) {
  const std::map<std::string, std::string> predictions{{"a", "x y"}, {"b", "z"}};
  const GoldList golds{{"a", {"x y"}}, {"b", {"q", "z"}}};
  const auto r = evaluate(predictions, golds);
  EXPECT_DOUBLE_EQ(r.em, 100.0);
  EXPECT_DOUBLE_EQ(r.f1, 100.0);
}

TEST(Evaluate, MissingPrediction) {
  const std::map<std::string, std::string> predictions{{"a", "x"}};
  const GoldList golds{{"a", {"x"}}, {"b", {"y"}}};
  EXPECT_EQ(code_of([&] { evaluate(predictions, golds); }), ErrorCode::kMissingPrediction);
}

TEST(Evaluate, ExactMatchImpliesFullF1AndCaseArticleInvariance) {
  Rng rng = make_rng({23});
  const std::vector<std::string> words{"the", "a", "cat", "Cat", "dog", "sat", "an", "mat", "!"};
  for (int it = 0; it < 300; ++it) {
    std::string p, g;
    for (std::size_t i = 0, n = uniform_index(rng, 5); i < n; ++i) p += words[uniform_index(rng, words.size())] + " ";
    for (std::size_t i = 0, n = uniform_index(rng, 5); i < n; ++i) g += words[uniform_index(rng, words.size())] + " ";
    const auto s = score_example("x", p, {g});
    if (s.em == 1.0) {
      EXPECT_EQ(s.f1, 1.0);
    }
    EXPECT_LE(s.em, s.f1);
    const auto shouted = score_example("x", "The " + text::to_lower(p), {g});
    EXPECT_EQ(shouted.em, s.em);
    EXPECT_EQ(shouted.f1, s.f1);
  }
}
