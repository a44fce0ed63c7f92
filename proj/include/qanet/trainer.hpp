#pragma once

// Training loop: seeded batching (or ratio-mixed sampling over augmented
// pools), Adam with EMA, line-delimited JSON metrics and resumable
// checkpoints.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qanet/augment/sampler.hpp"
#include "qanet/checkpoint.hpp"
#include "qanet/data.hpp"
#include "qanet/model.hpp"
#include "qanet/optim.hpp"

namespace qanet {

struct TrainConfig {
  ModelConfig model;
  OptimizerConfig optim;
  std::size_t batch_size = 32;
  std::size_t steps = 150000;
  std::size_t checkpoint_every = 1000;  // 0 disables periodic checkpoints
  std::size_t eval_every = 1000;        // 0 evaluates only after the last step
  std::uint64_t seed = 0;
  MixRatio mix;

  bool operator==(const TrainConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, model, optim, batch_size, steps, checkpoint_every,
                                                eval_every, seed, mix)

/// Training pools. The pivot pools hold back-translated examples and switch
/// batching to the mixed sampler when either is non-empty.
struct TrainData {
  std::vector<QaExample> train;
  std::vector<QaExample> pivot1;
  std::vector<QaExample> pivot2;
  std::vector<QaExample> dev;
};

/// Fingerprint over everything that changes the trajectory.
inline std::uint64_t config_hash(const TrainConfig& config) {
  nlohmann::json j = config;
  j.erase("steps");
  j.erase("checkpoint_every");
  j.erase("eval_every");
  return fnv1a(j.dump());
}

namespace detail {

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << v;
  return out.str();
}

}  // namespace detail

inline constexpr const char* kParamPrefix = "param/";
inline constexpr const char* kMomentPrefix = "adam_m/";
inline constexpr const char* kVariancePrefix = "adam_v/";
inline constexpr const char* kShadowPrefix = "ema/";

/// Copies checkpoint tensors named prefix + parameter name into params,
/// checking every shape.
inline void load_parameters(ParameterSet& params, const Checkpoint& ckpt, const std::string& prefix,
                            bool trainable_only = false) {
  for (auto& p : params.items()) {
    if (trainable_only && !p.trainable) continue;
    const auto& t = ckpt.get(prefix + p.name);
    if (t.shape != p.tensor.shape()) {
      throw Error(ErrorCode::kCheckpointMismatch, "tensor " + prefix + p.name + " has shape " + shape_string(t.shape) +
                                                      ", model expects " + shape_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(t.values.begin(), t.values.end(), dst.begin());
  }
}

/// Rebuilds a model from a checkpoint. With use_ema the shadow weights replace
/// the trainable parameters.
inline QANet load_model(const Checkpoint& ckpt, bool use_ema = true) {
  const auto& meta = ckpt.meta;
  if (!meta.contains("config") || !meta.contains("word_vocab") || !meta.contains("char_vocab")) {
    throw Error(ErrorCode::kCheckpointMismatch, "checkpoint metadata lacks config or vocabularies");
  }
  const TrainConfig config = meta.at("config").get<TrainConfig>();
  WordVectors words{Vocabulary(meta.at("word_vocab").get<std::vector<std::string>>()), {}};
  const auto& table = ckpt.get(std::string(kParamPrefix) + "embedding.word_table");
  const std::size_t expected_rows = words.vocab.size();
  if (table.shape != Shape{expected_rows, config.model.word_dim}) {
    throw Error(ErrorCode::kCheckpointMismatch, "tensor param/embedding.word_table has shape " +
                                                    shape_string(table.shape) + " for a vocabulary of " +
                                                    std::to_string(expected_rows));
  }
  std::vector<double> values = table.values;
  // The UNK row lives in the separate trainable vector; restore it for construction.
  const auto& unk = ckpt.get(std::string(kParamPrefix) + "embedding.unk");
  if (unk.values.size() != config.model.word_dim) {
    throw Error(ErrorCode::kCheckpointMismatch, "tensor param/embedding.unk has shape " + shape_string(unk.shape));
  }
  std::copy(unk.values.begin(), unk.values.end(), values.begin() + static_cast<std::ptrdiff_t>(config.model.word_dim));
  words.table = Tensor(table.shape, std::move(values));
  QANet model(config.model, words, Vocabulary(meta.at("char_vocab").get<std::vector<std::string>>()), config.seed);
  load_parameters(model.params(), ckpt, kParamPrefix);
  if (use_ema) load_parameters(model.params(), ckpt, kShadowPrefix, true);
  return model;
}

class Trainer {
 public:
  /// words supplies the frozen vectors; chars the character vocabulary.
  Trainer(TrainConfig config, TrainData data, const WordVectors& words, Vocabulary chars)
      : config_(std::move(config)),
        data_(std::move(data)),
        model_(config_.model, words, std::move(chars), config_.seed),
        adam_(AdamState::for_parameters(model_.params())),
        ema_(EmaState::for_parameters(model_.params())) {
    if (data_.train.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
    if (config_.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be positive");
    if (!data_.pivot1.empty() || !data_.pivot2.empty()) {
      sampler_sizes_ = {data_.train.size(), data_.pivot1.size(), data_.pivot2.size()};
      MixedSampler probe(*sampler_sizes_, config_.mix, config_.seed);  // validates weights against pools
      (void)probe;
    }
  }

  const TrainConfig& config() const { return config_; }
  QANet& model() { return model_; }
  const QANet& model() const { return model_; }
  const AdamState& adam() const { return adam_; }
  const EmaState& ema() const { return ema_; }
  std::size_t step() const { return adam_.step; }

  /// The batch consumed by the given step (1-based).
  Batch batch_for_step(std::size_t step) {
    if (sampler_sizes_) {
      MixedSampler sampler(*sampler_sizes_, config_.mix, seed_for(step, 0x6d78ULL));
      std::vector<QaExample> picked;
      for (std::size_t i = 0; i < config_.batch_size; ++i) {
        const PoolDraw d = sampler.next();
        picked.push_back(pool(d.pool)[d.index]);
      }
      std::vector<std::size_t> idx(picked.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      return make_batch(picked, idx, model_.words(), model_.chars(), config_.model.max_context_len);
    }
    const std::size_t per_epoch = (data_.train.size() + config_.batch_size - 1) / config_.batch_size;
    const std::size_t epoch = (step - 1) / per_epoch;
    if (!epoch_batches_ || epoch_ != epoch) {
      BatchOptions options;
      options.batch_size = config_.batch_size;
      options.seed = seed_for(epoch, 0x65706fULL);
      options.max_context_len = config_.model.max_context_len;
      epoch_batches_ = make_batches(data_.train, model_.words(), model_.chars(), options);
      epoch_order_.resize(epoch_batches_->size());
      std::iota(epoch_order_.begin(), epoch_order_.end(), std::size_t{0});
      Rng rng = make_rng({config_.seed, epoch, 0x6f72646572ULL});
      shuffle(std::span<std::size_t>(epoch_order_), rng);
      epoch_ = epoch;
    }
    return (*epoch_batches_)[epoch_order_[(step - 1) % per_epoch]];
  }

  /// One optimizer step; returns the batch loss before the update.
  double train_step() {
    const std::size_t next = adam_.step + 1;
    const Batch batch = batch_for_step(next);
    Rng rng = make_rng({config_.seed, next, 0x64726f70ULL});
    model_.params().zero_grad();
    const Tensor loss = model_.batch_loss(batch, ForwardMode::train(rng));
    backward(loss);
    adam_step(model_.params(), adam_, config_.optim);
    ema_update(ema_, model_.params(), config_.optim.ema_decay);
    return loss.item();
  }

  /// EM/F1 of the shadow weights on examples.
  EvalResult evaluate_shadow(const std::vector<QaExample>& examples) {
    ShadowScope scope(model_.params(), ema_);
    return evaluate(predict_answers(model_, examples, config_.batch_size), gold_answers(examples));
  }

  Checkpoint checkpoint() const {
    Checkpoint ckpt;
    ckpt.meta["step"] = adam_.step;
    ckpt.meta["seed"] = config_.seed;
    ckpt.meta["config"] = config_;
    ckpt.meta["config_hash"] = detail::hex64(config_hash(config_));
    ckpt.meta["word_vocab"] = model_.words().tokens();
    ckpt.meta["char_vocab"] = model_.chars().tokens();
    const auto& items = model_.params().items();
    for (const auto& p : items) ckpt.tensors.push_back({kParamPrefix + p.name, p.tensor.shape(), p.tensor.values()});
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!items[i].trainable) continue;
      ckpt.tensors.push_back({kMomentPrefix + items[i].name, items[i].tensor.shape(), adam_.m[i]});
      ckpt.tensors.push_back({kVariancePrefix + items[i].name, items[i].tensor.shape(), adam_.v[i]});
      ckpt.tensors.push_back({kShadowPrefix + items[i].name, items[i].tensor.shape(), ema_.shadow[i]});
    }
    return ckpt;
  }

  /// Restores parameters, optimizer moments, EMA shadow and step counter.
  void restore(const Checkpoint& ckpt) {
    const std::string expected = detail::hex64(config_hash(config_));
    const std::string found = ckpt.meta.value("config_hash", std::string());
    if (found != expected) {
      throw Error(ErrorCode::kCheckpointMismatch, "checkpoint config hash " + found + " does not match " + expected);
    }
    auto& params = model_.params();
    load_parameters(params, ckpt, kParamPrefix);
    auto& items = params.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!items[i].trainable) continue;
      adam_.m[i] = ckpt.get(kMomentPrefix + items[i].name).values;
      adam_.v[i] = ckpt.get(kVariancePrefix + items[i].name).values;
      ema_.shadow[i] = ckpt.get(kShadowPrefix + items[i].name).values;
      if (adam_.m[i].size() != items[i].tensor.size() || adam_.v[i].size() != items[i].tensor.size() ||
          ema_.shadow[i].size() != items[i].tensor.size()) {
        throw Error(ErrorCode::kCheckpointMismatch, "optimizer state for " + items[i].name);
      }
    }
    adam_.step = ckpt.meta.at("step").get<std::size_t>();
    epoch_batches_.reset();
  }

  /// Runs until config.steps, appending metrics to out_dir/metrics.jsonl and
  /// writing checkpoints (ckpt-<step>.qnck periodically, final.qnck at the end).
  /// on_record sees each metrics record as it is written.
  void fit(const std::filesystem::path& out_dir,
           const std::function<void(const nlohmann::json&)>& on_record = {}) {
    std::filesystem::create_directories(out_dir);
    const auto log_path = out_dir / "metrics.jsonl";
    truncate_log(log_path, adam_.step);
    std::ofstream log(log_path, std::ios::app);
    if (!log) throw Error(ErrorCode::kIoError, "cannot open " + log_path.string());
    while (adam_.step < config_.steps) {
      const double loss = train_step();
      const std::size_t s = adam_.step;
      nlohmann::json record{{"step", s}, {"loss", loss}, {"lr", lr_schedule(s, config_.optim)}};
      const bool last = s == config_.steps;
      if (!data_.dev.empty() && ((config_.eval_every != 0 && s % config_.eval_every == 0) || last)) {
        const EvalResult r = evaluate_shadow(data_.dev);
        record["dev_em"] = r.em;
        record["dev_f1"] = r.f1;
      }
      log << record.dump() << '\n';
      log.flush();
      if (!log) throw Error(ErrorCode::kIoError, "failed writing " + log_path.string());
      if (on_record) on_record(record);
      if (config_.checkpoint_every != 0 && s % config_.checkpoint_every == 0) {
        write_checkpoint((out_dir / checkpoint_name(s)).string(), checkpoint());
      }
    }
    write_checkpoint((out_dir / "final.qnck").string(), checkpoint());
  }

  static std::string checkpoint_name(std::size_t step) {
    std::string digits = std::to_string(step);
    if (digits.size() < 8) digits.insert(0, 8 - digits.size(), '0');
    return "ckpt-" + digits + ".qnck";
  }

 private:
  std::uint64_t seed_for(std::uint64_t a, std::uint64_t salt) const {
    Rng rng = make_rng({config_.seed, a, salt});
    return rng();
  }

  const std::vector<QaExample>& pool(std::size_t p) const {
    return p == 0 ? data_.train : p == 1 ? data_.pivot1 : data_.pivot2;
  }

  /// Keeps only records with step <= keep_through so a resumed run rewrites
  /// the tail instead of duplicating it.
  static void truncate_log(const std::filesystem::path& path, std::size_t keep_through) {
    if (!std::filesystem::exists(path)) return;
    std::vector<std::string> kept;
    if (keep_through > 0) {
      std::ifstream in(path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.value("step", std::size_t{0}) <= keep_through) kept.push_back(line);
      }
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot rewrite " + path.string());
    for (const auto& l : kept) out << l << '\n';
  }

  TrainConfig config_;
  TrainData data_;
  QANet model_;
  AdamState adam_;
  EmaState ema_;
  std::optional<std::array<std::size_t, 3>> sampler_sizes_;
  std::optional<std::vector<Batch>> epoch_batches_;
  std::vector<std::size_t> epoch_order_;
  std::size_t epoch_ = 0;
};

}  // namespace qanet
