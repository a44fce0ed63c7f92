#pragma once

// Synthetic extractive QA data over a closed vocabulary "w0".."w{V-1}". The
// question repeats the two context words right before the answer, so a model
// can locate the span by matching.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qanet/data.hpp"
#include "qanet/random.hpp"

namespace qanet {

struct SyntheticOptions {
  std::size_t examples = 50;
  std::size_t vocab = 200;
  std::size_t min_context = 12;
  std::size_t max_context = 30;
  std::size_t max_answer = 3;
  std::uint64_t seed = 0;
};

inline std::vector<QaExample> synthetic_dataset(const SyntheticOptions& options) {
  if (options.vocab < 2 || options.min_context < 4 || options.max_context < options.min_context ||
      options.max_answer == 0) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic dataset options");
  }
  Rng rng = make_rng({options.seed, 0x73796eULL});
  std::vector<QaExample> out;
  for (std::size_t i = 0; i < options.examples; ++i) {
    const std::size_t len =
        options.min_context + static_cast<std::size_t>(uniform_index(rng, options.max_context - options.min_context + 1));
    std::vector<std::string> words;
    for (std::size_t t = 0; t < len; ++t) words.push_back("w" + std::to_string(uniform_index(rng, options.vocab)));
    const std::size_t answer_len = 1 + static_cast<std::size_t>(uniform_index(rng, std::min(options.max_answer, len - 2)));
    const std::size_t start = 2 + static_cast<std::size_t>(uniform_index(rng, len - 2 - answer_len + 1));
    std::string context;
    std::size_t begin = 0, end = 0;
    for (std::size_t t = 0; t < len; ++t) {
      if (t) context += ' ';
      if (t == start) begin = context.size();
      context += words[t];
      if (t == start + answer_len - 1) end = context.size();
    }
    const std::string question = "which follows " + words[start - 2] + " " + words[start - 1] + " ?";
    const std::string answer = context.substr(begin, end - begin);
    out.push_back(make_example("syn" + std::to_string(i), context, question, begin, end, {answer}, "synthetic"));
  }
  return out;
}

}  // namespace qanet
