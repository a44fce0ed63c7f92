#pragma once

// Small end-to-end fixtures: a 12-token context, 6-token question model at d=16.

#include <string>
#include <vector>

#include "qanet/model.hpp"

namespace qanet::testing {

inline ModelConfig toy_model_config() {
  ModelConfig c;
  c.word_dim = 8;
  c.char_dim = 6;
  c.char_kernel = 3;
  c.d = 16;
  c.heads = 1;
  c.embedding_blocks = 1;
  c.model_blocks = 1;
  return c;
}

inline std::vector<QaExample> toy_examples() {
  const std::string context = "the quick brown fox jumps over the lazy dog near a river";
  const std::string question = "what does the fox jump ?";
  const auto begin = context.find("over"), end = context.find(" near");
  return {make_example("toy0", context, question, begin, end, {"over the lazy dog"})};
}

struct ToyModel {
  std::vector<QaExample> examples;
  WordVectors words;
  QANet model;
  Batch batch;
};

inline ToyModel make_toy_model(std::uint64_t seed = 11) {
  auto examples = toy_examples();
  auto words = random_word_vectors(examples, toy_model_config().word_dim, seed);
  QANet model(toy_model_config(), words, build_char_vocab(examples), seed);
  Batch batch = make_batch(examples, {0}, words.vocab, model.chars());
  return {std::move(examples), std::move(words), std::move(model), std::move(batch)};
}

}  // namespace qanet::testing
