#pragma once

// Encoder block: positional encoding, then [conv x N, self-attention,
// feed-forward], each sublayer computed as x + f(layernorm(x)) and subject to
// stochastic depth during training.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qanet/parameters.hpp"
#include "qanet/tensor.hpp"

namespace qanet {

struct EncoderConfig {
  std::size_t d = 128;
  std::size_t heads = 8;
  std::size_t conv_layers = 4;
  std::size_t kernel = 7;
  std::size_t blocks = 1;
  double survival_last = 0.9;
  double dropout = 0.1;

  static EncoderConfig embedding_encoder() { return {128, 8, 4, 7, 1, 0.9, 0.1}; }
  static EncoderConfig model_encoder() { return {128, 8, 2, 5, 7, 0.9, 0.1}; }

  std::size_t sublayers_per_block() const { return conv_layers + 2; }
  std::size_t total_sublayers() const { return blocks * sublayers_per_block(); }
};

inline Tensor positional_encoding(std::size_t len, std::size_t d) {
  if (d % 2 != 0) throw Error(ErrorCode::kOddDimension, "positional encoding width " + std::to_string(d));
  std::vector<double> v(len * d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      v[pos * d + 2 * i] = std::sin(angle);
      v[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({len, d}, std::move(v));
}

/// Survival probability of sublayer l (1-based) out of L: 1 - (l/L)(1 - p_L).
inline double survival_probability(std::size_t l, std::size_t total, double survival_last) {
  return 1.0 - (static_cast<double>(l) / static_cast<double>(total)) * (1.0 - survival_last);
}

struct LayerNormParams {
  Tensor gain, bias;
};

struct AttentionParams {
  Tensor query, key, value, output;  // each [d x d]
};

struct MultiHeadResult {
  Tensor output;                 // [len x d]
  std::vector<Tensor> weights;   // per head, [len x len]
};

/// Scaled dot-product attention over all positions with padded keys excluded.
inline MultiHeadResult multi_head_self_attention_detailed(const Tensor& x, const AttentionParams& p,
                                                          std::size_t heads, std::span<const std::uint8_t> mask) {
  if (x.rank() != 2) throw Error(ErrorCode::kDimensionMismatch, "attention input " + shape_string(x.shape()));
  const std::size_t len = x.dim(0), d = x.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorCode::kDimensionMismatch, "width " + std::to_string(d) + " not divisible by " +
                                                   std::to_string(heads) + " heads");
  }
  if (mask.size() != len) throw Error(ErrorCode::kDimensionMismatch, "attention mask length");
  const std::size_t dk = d / heads;
  std::vector<std::uint8_t> keep(len * len);
  for (std::size_t q = 0; q < len; ++q) {
    for (std::size_t k = 0; k < len; ++k) keep[q * len + k] = mask[k];
  }
  const Tensor qs = matmul(x, p.query), ks = matmul(x, p.key), vs = matmul(x, p.value);
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dk));
  MultiHeadResult result;
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice(qs, 1, h * dk, dk), kh = slice(ks, 1, h * dk, dk), vh = slice(vs, 1, h * dk, dk);
    Tensor logits = scale(matmul(qh, transpose(kh)), scale_factor);
    logits = masked_fill(logits, keep, -std::numeric_limits<double>::infinity());
    Tensor w = softmax(logits, 1);
    outs.push_back(matmul(w, vh));
    result.weights.push_back(w);
  }
  result.output = matmul(heads == 1 ? outs[0] : concat(outs, 1), p.output);
  return result;
}

inline Tensor multi_head_self_attention(const Tensor& x, const AttentionParams& p, std::size_t heads,
                                        std::span<const std::uint8_t> mask) {
  return multi_head_self_attention_detailed(x, p, heads, mask).output;
}

/// x + dropout(f(layernorm(x))), or x alone when the survival draw fails.
inline Tensor residual_sublayer(const Tensor& x, const LayerNormParams& ln,
                                const std::function<Tensor(const Tensor&)>& f, double survival_prob,
                                double dropout_rate, const ForwardMode& mode) {
  if (mode.training && !bernoulli(*mode.rng, survival_prob)) return x;
  Tensor y = f(layernorm(x, ln.gain, ln.bias));
  y = dropout(y, dropout_rate, mode);
  return add(x, y);
}

struct ConvSublayer {
  LayerNormParams ln;
  Tensor depth, point, bias;
};

struct AttentionSublayer {
  LayerNormParams ln;
  AttentionParams attn;
};

struct FeedForwardSublayer {
  LayerNormParams ln;
  Tensor w1, b1, w2, b2;
};

struct EncoderBlockParams {
  std::vector<ConvSublayer> convs;
  AttentionSublayer attention;
  FeedForwardSublayer ffn;
};

/// A stack of encoder blocks sharing one config. Calling forward several
/// times reuses the same weights.
class EncoderStack {
 public:
  EncoderStack() = default;

  EncoderStack(const EncoderConfig& config, Rng& rng, ParameterSet& params, const std::string& prefix)
      : config_(config) {
    if (config.kernel % 2 == 0) throw Error(ErrorCode::kEvenKernel, "encoder kernel " + std::to_string(config.kernel));
    if (config.heads == 0 || config.d % config.heads != 0) {
      throw Error(ErrorCode::kDimensionMismatch, "d not divisible by heads");
    }
    const std::size_t d = config.d;
    auto layer_norm = [&](const std::string& name) {
      return LayerNormParams{params.add(name + ".ln.gain", Tensor::full({d}, 1.0)),
                             params.add(name + ".ln.bias", Tensor::zeros({d}))};
    };
    for (std::size_t b = 0; b < config.blocks; ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      EncoderBlockParams block;
      for (std::size_t c = 0; c < config.conv_layers; ++c) {
        const std::string cp = bp + ".conv" + std::to_string(c);
        ConvSublayer conv;
        conv.ln = layer_norm(cp);
        conv.depth = params.add(cp + ".depth", init::glorot(rng, {config.kernel, d}, config.kernel, 1));
        conv.point = params.add(cp + ".point", init::matrix(rng, d, d));
        conv.bias = params.add(cp + ".bias", Tensor::zeros({d}));
        block.convs.push_back(conv);
      }
      const std::string ap = bp + ".attention";
      block.attention.ln = layer_norm(ap);
      block.attention.attn = {params.add(ap + ".query", init::matrix(rng, d, d)),
                              params.add(ap + ".key", init::matrix(rng, d, d)),
                              params.add(ap + ".value", init::matrix(rng, d, d)),
                              params.add(ap + ".output", init::matrix(rng, d, d))};
      const std::string fp = bp + ".ffn";
      block.ffn.ln = layer_norm(fp);
      block.ffn.w1 = params.add(fp + ".w1", init::matrix(rng, d, d));
      block.ffn.b1 = params.add(fp + ".b1", Tensor::zeros({d}));
      block.ffn.w2 = params.add(fp + ".w2", init::matrix(rng, d, d));
      block.ffn.b2 = params.add(fp + ".b2", Tensor::zeros({d}));
      blocks_.push_back(std::move(block));
    }
  }

  const EncoderConfig& config() const { return config_; }
  const std::vector<EncoderBlockParams>& blocks() const { return blocks_; }

  /// x: [len x d]; mask: [len] with 1 on real positions.
  Tensor forward(const Tensor& x, std::span<const std::uint8_t> mask, const ForwardMode& mode) const {
    if (x.rank() != 2 || x.dim(1) != config_.d || mask.size() != x.dim(0)) {
      throw Error(ErrorCode::kDimensionMismatch, "encoder input " + shape_string(x.shape()) + " with mask of " +
                                                     std::to_string(mask.size()));
    }
    const std::size_t len = x.dim(0);
    const Tensor pe = positional_encoding(len, config_.d);
    const Tensor keep = mask_column(mask);
    const std::size_t total = config_.total_sublayers();
    std::size_t l = 0;
    Tensor h = x;
    for (const auto& block : blocks_) {
      h = add(h, pe);
      for (const auto& conv : block.convs) {
        h = residual_sublayer(
            h, conv.ln,
            [&](const Tensor& in) {
              // Padded positions are zeroed on both sides of the convolution.
              return mul(relu(depthwise_separable_conv1d(mul(in, keep), conv.depth, conv.point, conv.bias)), keep);
            },
            survival_probability(++l, total, config_.survival_last), config_.dropout, mode);
      }
      h = residual_sublayer(
          h, block.attention.ln,
          [&](const Tensor& in) { return multi_head_self_attention(in, block.attention.attn, config_.heads, mask); },
          survival_probability(++l, total, config_.survival_last), config_.dropout, mode);
      h = residual_sublayer(
          h, block.ffn.ln,
          [&](const Tensor& in) {
            return linear(relu(linear(in, block.ffn.w1, block.ffn.b1)), block.ffn.w2, block.ffn.b2);
          },
          survival_probability(++l, total, config_.survival_last), config_.dropout, mode);
    }
    return h;
  }

 private:
  EncoderConfig config_;
  std::vector<EncoderBlockParams> blocks_;
};

}  // namespace qanet
