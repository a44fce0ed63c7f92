#pragma once

// Input embedding: frozen word vectors (trainable UNK row), character
// convolution with max pooling, a 1x1 projection to the model width and a
// two-layer highway network.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qanet/data.hpp"
#include "qanet/parameters.hpp"
#include "qanet/tensor.hpp"

namespace qanet {

struct EmbeddingConfig {
  std::size_t word_dim = 300;
  std::size_t char_dim = 200;
  std::size_t char_kernel = 5;
  std::size_t d = 128;
  std::size_t highway_layers = 2;
  double word_dropout = 0.1;
  double char_dropout = 0.05;
};

inline constexpr double kHighwayGateBias = -2.0;

struct HighwayLayer {
  Tensor gate_weight, gate_bias, transform_weight, transform_bias;
};

class EmbeddingLayer {
 public:
  EmbeddingLayer() = default;

  /// Registers parameters under `prefix`. The word table's UNK row becomes
  /// the initial value of the separate trainable UNK vector.
  EmbeddingLayer(const EmbeddingConfig& config, const Tensor& word_table, std::size_t char_vocab, Rng& rng,
                 ParameterSet& params, const std::string& prefix = "embedding")
      : config_(config) {
    if (word_table.rank() != 2 || word_table.dim(1) != config.word_dim || word_table.dim(0) < 2) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "word table " + shape_string(word_table.shape()) + " for word_dim " + std::to_string(config.word_dim));
    }
    const std::size_t wd = config.word_dim, cd = config.char_dim, d = config.d;
    std::vector<double> frozen = word_table.values();
    std::vector<double> unk(frozen.begin() + static_cast<std::ptrdiff_t>(wd),
                            frozen.begin() + static_cast<std::ptrdiff_t>(2 * wd));
    std::fill(frozen.begin() + static_cast<std::ptrdiff_t>(wd), frozen.begin() + static_cast<std::ptrdiff_t>(2 * wd), 0.0);
    word_table_ = params.add(prefix + ".word_table", Tensor(word_table.shape(), std::move(frozen)), false);
    unk_ = params.add(prefix + ".unk", Tensor({1, wd}, std::move(unk)));
    char_table_ = params.add(prefix + ".char_table", init::normal(rng, {char_vocab, cd}, 0.1));
    char_depth_ = params.add(prefix + ".char_conv.depth", init::glorot(rng, {config.char_kernel, cd}, config.char_kernel, 1));
    char_point_ = params.add(prefix + ".char_conv.point", init::matrix(rng, cd, cd));
    char_bias_ = params.add(prefix + ".char_conv.bias", Tensor::zeros({cd}));
    proj_ = params.add(prefix + ".projection.weight", init::matrix(rng, wd + cd, d));
    proj_bias_ = params.add(prefix + ".projection.bias", Tensor::zeros({d}));
    for (std::size_t i = 0; i < config.highway_layers; ++i) {
      const std::string p = prefix + ".highway" + std::to_string(i);
      HighwayLayer h;
      h.gate_weight = params.add(p + ".gate.weight", init::matrix(rng, d, d));
      h.gate_bias = params.add(p + ".gate.bias", Tensor::full({d}, kHighwayGateBias));
      h.transform_weight = params.add(p + ".transform.weight", init::matrix(rng, d, d));
      h.transform_bias = params.add(p + ".transform.bias", Tensor::zeros({d}));
      highway_.push_back(h);
    }
  }

  const EmbeddingConfig& config() const { return config_; }
  const std::vector<HighwayLayer>& highway() const { return highway_; }

  /// word_ids: [len]; char_ids: [len x kCharsPerWord]; mask: [len]. Returns [len x d]
  /// with padded rows zeroed.
  Tensor forward(std::span<const int> word_ids, std::span<const int> char_ids, std::span<const std::uint8_t> mask,
                 const ForwardMode& mode) const {
    const std::size_t len = word_ids.size();
    if (char_ids.size() != len * kCharsPerWord || mask.size() != len) {
      throw Error(ErrorCode::kDimensionMismatch, "embedding inputs: " + std::to_string(len) + " words, " +
                                                     std::to_string(char_ids.size()) + " char ids, " +
                                                     std::to_string(mask.size()) + " mask entries");
    }
    std::vector<double> unk_flags(len);
    for (std::size_t i = 0; i < len; ++i) unk_flags[i] = word_ids[i] == Vocabulary::kUnk ? 1.0 : 0.0;
    Tensor words = add(embedding_lookup(word_table_, word_ids), mul(Tensor({len, 1}, std::move(unk_flags)), unk_));
    words = dropout(words, config_.word_dropout, mode);

    Tensor chars = embedding_lookup(char_table_, char_ids);
    chars = dropout(chars, config_.char_dropout, mode);
    chars = reshape(chars, {len, kCharsPerWord, config_.char_dim});
    chars = relu(depthwise_separable_conv1d(chars, char_depth_, char_point_, char_bias_));
    chars = max_over_axis(chars, 1);

    Tensor x = linear(concat({words, chars}, 1), proj_, proj_bias_);
    for (const auto& h : highway_) {
      Tensor gate = sigmoid(linear(x, h.gate_weight, h.gate_bias));
      Tensor transform = relu(linear(x, h.transform_weight, h.transform_bias));
      // g * T(x) + (1 - g) * x
      x = add(mul(gate, transform), mul(add_scalar(scale(gate, -1.0), 1.0), x));
    }
    return mul(x, mask_column(mask));
  }

 private:
  EmbeddingConfig config_;
  Tensor word_table_, unk_, char_table_, char_depth_, char_point_, char_bias_, proj_, proj_bias_;
  std::vector<HighwayLayer> highway_;
};

}  // namespace qanet
