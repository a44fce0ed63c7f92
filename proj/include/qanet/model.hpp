#pragma once

// The full reading-comprehension network: embedding, shared embedding
// encoder, context-query attention, three passes through one shared model
// encoder stack, and the span output layer.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qanet/cq_attention.hpp"
#include "qanet/data.hpp"
#include "qanet/embedding.hpp"
#include "qanet/encoder.hpp"
#include "qanet/parameters.hpp"
#include "qanet/span_output.hpp"

namespace qanet {

struct ModelConfig {
  std::size_t word_dim = 300;
  std::size_t char_dim = 200;
  std::size_t char_kernel = 5;
  std::size_t d = 128;
  std::size_t heads = 8;
  std::size_t embedding_conv_layers = 4;
  std::size_t embedding_kernel = 7;
  std::size_t embedding_blocks = 1;
  std::size_t model_conv_layers = 2;
  std::size_t model_kernel = 5;
  std::size_t model_blocks = 7;
  std::size_t highway_layers = 2;
  double survival_last = 0.9;
  double word_dropout = 0.1;
  double char_dropout = 0.05;
  double layer_dropout = 0.1;
  std::size_t max_context_len = kMaxContextTokens;
  std::size_t max_answer_len = kMaxAnswerTokens;

  EmbeddingConfig embedding() const {
    return {word_dim, char_dim, char_kernel, d, highway_layers, word_dropout, char_dropout};
  }
  EncoderConfig embedding_encoder() const {
    return {d, heads, embedding_conv_layers, embedding_kernel, embedding_blocks, survival_last, layer_dropout};
  }
  EncoderConfig model_encoder() const {
    return {d, heads, model_conv_layers, model_kernel, model_blocks, survival_last, layer_dropout};
  }

  bool operator==(const ModelConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, word_dim, char_dim, char_kernel, d, heads,
                                                embedding_conv_layers, embedding_kernel, embedding_blocks,
                                                model_conv_layers, model_kernel, model_blocks, highway_layers,
                                                survival_last, word_dropout, char_dropout, layer_dropout,
                                                max_context_len, max_answer_len)

inline constexpr std::size_t kModelEncoderPasses = 3;

/// One unpadded-or-padded example side: ids, char ids and mask.
struct SideInput {
  std::span<const int> word_ids;
  std::span<const int> char_ids;
  std::span<const std::uint8_t> mask;
};

struct ForwardTrace {
  Tensor context, query;  // embedding encoder outputs
  AttentionMatrices attention;
  Tensor m0, m1, m2;
  SpanDistributions dist;
};

class QANet {
 public:
  QANet(const ModelConfig& config, const WordVectors& words, Vocabulary chars, std::uint64_t seed)
      : config_(config), words_(words.vocab), chars_(std::move(chars)) {
    Rng rng = make_rng({seed, 0x716e6574ULL});
    embedding_ = EmbeddingLayer(config.embedding(), words.table, chars_.size(), rng, params_, "embedding");
    embedding_encoder_ = EncoderStack(config.embedding_encoder(), rng, params_, "embedding_encoder");
    const std::size_t d = config.d;
    trilinear_ = {params_.add("attention.w_q", init::glorot(rng, {d}, d, 1)),
                  params_.add("attention.w_c", init::glorot(rng, {d}, d, 1)),
                  params_.add("attention.w_qc", init::glorot(rng, {d}, d, 1))};
    fusion_ = params_.add("fusion.weight", init::matrix(rng, 4 * d, d));
    fusion_bias_ = params_.add("fusion.bias", Tensor::zeros({d}));
    model_encoder_ = EncoderStack(config.model_encoder(), rng, params_, "model_encoder");
    start_weight_ = params_.add("output.start", init::glorot(rng, {2 * d}, 2 * d, 1));
    end_weight_ = params_.add("output.end", init::glorot(rng, {2 * d}, 2 * d, 1));
  }

  QANet(const QANet&) = delete;
  QANet& operator=(const QANet&) = delete;
  QANet(QANet&&) = default;
  QANet& operator=(QANet&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Vocabulary& words() const { return words_; }
  const Vocabulary& chars() const { return chars_; }

  ForwardTrace forward_trace(const SideInput& context, const SideInput& question, const ForwardMode& mode) const {
    ForwardTrace t;
    const Tensor c_emb = embedding_.forward(context.word_ids, context.char_ids, context.mask, mode);
    const Tensor q_emb = embedding_.forward(question.word_ids, question.char_ids, question.mask, mode);
    t.context = embedding_encoder_.forward(c_emb, context.mask, mode);
    t.query = embedding_encoder_.forward(q_emb, question.mask, mode);
    t.attention = context_query_attention(t.context, t.query, trilinear_, context.mask, question.mask);
    const Tensor fused = linear(fuse(t.context, t.attention.a, t.attention.b), fusion_, fusion_bias_);
    t.m0 = model_encoder_.forward(fused, context.mask, mode);
    t.m1 = model_encoder_.forward(t.m0, context.mask, mode);
    t.m2 = model_encoder_.forward(t.m1, context.mask, mode);
    t.dist = span_distributions(t.m0, t.m1, t.m2, start_weight_, end_weight_, context.mask);
    return t;
  }

  SpanDistributions forward(const SideInput& context, const SideInput& question, const ForwardMode& mode) const {
    return forward_trace(context, question, mode).dist;
  }

  SpanDistributions forward_row(const Batch& batch, std::size_t row, const ForwardMode& mode) const {
    const std::size_t n = batch.context_len, m = batch.question_len, cw = kCharsPerWord;
    const SideInput context{std::span(batch.context_ids).subspan(row * n, n),
                            std::span(batch.context_chars).subspan(row * n * cw, n * cw),
                            std::span(batch.context_mask).subspan(row * n, n)};
    const SideInput question{std::span(batch.question_ids).subspan(row * m, m),
                             std::span(batch.question_chars).subspan(row * m * cw, m * cw),
                             std::span(batch.question_mask).subspan(row * m, m)};
    return forward(context, question, mode);
  }

  /// Mean span loss over the labeled rows of a batch.
  Tensor batch_loss(const Batch& batch, const ForwardMode& mode) const {
    std::vector<Tensor> losses;
    for (std::size_t r = 0; r < batch.size; ++r) {
      if (!batch.has_label[r]) continue;
      const auto dist = forward_row(batch, r, mode);
      const auto mask = std::span(batch.context_mask).subspan(r * batch.context_len, batch.context_len);
      losses.push_back(span_loss(dist, static_cast<std::size_t>(batch.spans[r][0]),
                                 static_cast<std::size_t>(batch.spans[r][1]), mask));
    }
    if (losses.empty()) throw Error(ErrorCode::kEmptyDataset, "batch has no labeled rows");
    Tensor total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
    return scale(total, 1.0 / static_cast<double>(losses.size()));
  }

  std::vector<SpanPrediction> predict(const Batch& batch) const {
    std::vector<SpanPrediction> out;
    for (std::size_t r = 0; r < batch.size; ++r) {
      const auto dist = forward_row(batch, r, ForwardMode::eval());
      std::size_t len = 0;
      while (len < batch.context_len && batch.context_mask[r * batch.context_len + len]) ++len;
      out.push_back(dp_span_inference(dist.p1.data().first(len), dist.p2.data().first(len), config_.max_answer_len));
    }
    return out;
  }

 private:
  ModelConfig config_;
  Vocabulary words_;
  Vocabulary chars_;
  ParameterSet params_;
  EmbeddingLayer embedding_;
  EncoderStack embedding_encoder_;
  TrilinearWeights trilinear_;
  Tensor fusion_, fusion_bias_;
  EncoderStack model_encoder_;
  Tensor start_weight_, end_weight_;
};

/// Answer text for a predicted token span of an example's context.
inline std::string span_answer(const QaExample& ex, const SpanPrediction& p) {
  const std::size_t b = ex.context_tokens.at(p.start).begin;
  const std::size_t e = ex.context_tokens.at(p.end).end;
  return ex.context.substr(b, e - b);
}

/// id -> answer string, using the model's current parameters.
inline std::map<std::string, std::string> predict_answers(const QANet& model, const std::vector<QaExample>& examples,
                                                          std::size_t batch_size = 32) {
  std::map<std::string, std::string> out;
  std::vector<std::size_t> idx;
  auto flush = [&] {
    if (idx.empty()) return;
    const Batch batch = make_batch(examples, idx, model.words(), model.chars(), model.config().max_context_len);
    const auto preds = model.predict(batch);
    for (std::size_t r = 0; r < idx.size(); ++r) out[examples[idx[r]].id] = span_answer(examples[idx[r]], preds[r]);
    idx.clear();
  };
  for (std::size_t i = 0; i < examples.size(); ++i) {
    idx.push_back(i);
    if (idx.size() == batch_size) flush();
  }
  flush();
  return out;
}

}  // namespace qanet
