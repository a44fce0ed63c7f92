#pragma once

// Round-trip translation boundary and an offline deterministic translator.

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qanet/error.hpp"
#include "qanet/text.hpp"

namespace qanet {

enum class Direction { kForward, kBack };

inline const char* direction_name(Direction d) { return d == Direction::kForward ? "forward" : "back"; }

/// Translates each text into at most `beam` alternatives, in request order.
/// Implementations must be safe to call from several threads at once.
class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::vector<std::vector<std::string>> translate(const std::vector<std::string>& texts, std::size_t beam,
                                                          Direction direction) const = 0;
};

/// Calls the translator and enforces the response shape.
inline std::vector<std::vector<std::string>> checked_translate(const Translator& translator,
                                                               const std::vector<std::string>& texts,
                                                               std::size_t beam, Direction direction) {
  if (texts.empty()) return {};
  auto out = translator.translate(texts, beam, direction);
  if (out.size() != texts.size()) {
    throw Error(ErrorCode::kTranslatorProtocolError, "translator returned " + std::to_string(out.size()) +
                                                         " results for " + std::to_string(texts.size()) + " texts");
  }
  for (const auto& alternatives : out) {
    if (alternatives.size() > beam) {
      throw Error(ErrorCode::kTranslatorProtocolError, "translator returned " + std::to_string(alternatives.size()) +
                                                           " alternatives for beam " + std::to_string(beam));
    }
  }
  return out;
}

/// Offline translator. Scripted entries answer exact inputs; otherwise each
/// direction emits the input followed by single-word synonym substitutions and,
/// when enabled, the clause-swapped form "B, A" of "A, B". With no rules it is
/// the identity.
class MockTranslator : public Translator {
 public:
  using Script = std::map<std::string, std::vector<std::string>>;

  MockTranslator() = default;

  MockTranslator& synonyms(std::map<std::string, std::vector<std::string>> table) {
    synonyms_ = std::move(table);
    return *this;
  }
  MockTranslator& clause_reorder(bool on) {
    reorder_ = on;
    return *this;
  }
  MockTranslator& script(Direction direction, Script script) {
    (direction == Direction::kForward ? forward_ : back_) = std::move(script);
    return *this;
  }

  std::vector<std::vector<std::string>> translate(const std::vector<std::string>& texts, std::size_t beam,
                                                  Direction direction) const override {
    const Script& script = direction == Direction::kForward ? forward_ : back_;
    std::vector<std::vector<std::string>> out;
    for (const auto& t : texts) {
      std::vector<std::string> alts;
      if (auto it = script.find(t); it != script.end()) {
        alts = it->second;
      } else {
        alts = variants(t);
      }
      if (alts.size() > beam) alts.resize(beam);
      out.push_back(std::move(alts));
    }
    return out;
  }

 private:
  std::vector<std::string> variants(const std::string& sentence) const {
    std::vector<std::string> out{sentence};
    auto push = [&](std::string s) {
      for (const auto& o : out) {
        if (o == s) return;
      }
      out.push_back(std::move(s));
    };
    const auto tokens = tokenize(sentence);
    for (const auto& tok : tokens) {
      auto it = synonyms_.find(text::to_lower(tok.text));
      if (it == synonyms_.end()) continue;
      for (const auto& syn : it->second) {
        push(sentence.substr(0, tok.begin) + syn + sentence.substr(tok.end));
      }
    }
    if (reorder_) {
      const auto comma = sentence.find(", ");
      if (comma != std::string::npos) {
        std::string tail = sentence.substr(comma + 2);
        std::string terminal;
        if (!tail.empty() && (tail.back() == '.' || tail.back() == '!' || tail.back() == '?')) {
          terminal = tail.back();
          tail.pop_back();
        }
        push(tail + ", " + sentence.substr(0, comma) + terminal);
      }
    }
    return out;
  }

  std::map<std::string, std::vector<std::string>> synonyms_;
  bool reorder_ = false;
  Script forward_, back_;
};

/// Mock rules from JSON: {"synonyms": {word: [..]}, "clause_reorder": bool,
/// "forward": {text: [..]}, "back": {text: [..]}}; every key optional.
inline MockTranslator mock_translator_from_json(const nlohmann::json& j) {
  MockTranslator mock;
  try {
    if (j.contains("synonyms")) mock.synonyms(j.at("synonyms").get<std::map<std::string, std::vector<std::string>>>());
    if (j.contains("clause_reorder")) mock.clause_reorder(j.at("clause_reorder").get<bool>());
    if (j.contains("forward")) mock.script(Direction::kForward, j.at("forward").get<MockTranslator::Script>());
    if (j.contains("back")) mock.script(Direction::kBack, j.at("back").get<MockTranslator::Script>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedJson, std::string("mock translator rules: ") + e.what());
  }
  return mock;
}

}  // namespace qanet
