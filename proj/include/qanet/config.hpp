#pragma once

// Run configuration for the command-line tool: a flat JSON object whose
// dotted keys ("model.d", "optim.beta1", ...) address nested settings.
// Unset keys keep the defaults below.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qanet/augment/http_translator.hpp"
#include "qanet/augment/paraphrase.hpp"
#include "qanet/error.hpp"
#include "qanet/trainer.hpp"

namespace qanet {

struct AugmentConfig {
  std::size_t k = 5;
  double threshold = kDefaultAnswerThreshold;
  std::size_t copies = 1;
  std::size_t max_concurrency = 1;
  bool require_answer_paraphrase = false;
  std::vector<std::string> pivots = {"fr", "de"};
  double connect_timeout_s = 5.0;
  double read_timeout_s = 60.0;
  std::size_t retries = 3;
  double retry_backoff_s = 0.5;

  AugmentOptions options() const { return {k, threshold, max_concurrency, require_answer_paraphrase}; }
  HttpTranslatorOptions http() const { return {connect_timeout_s, read_timeout_s, retries, retry_backoff_s}; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, k, threshold, copies, max_concurrency,
                                                require_answer_paraphrase, pivots, connect_timeout_s, read_timeout_s,
                                                retries, retry_backoff_s)

struct PathsConfig {
  std::string train;          // SQuAD-format training file
  std::string dev;            // optional, scored during training
  std::string word_vectors;   // optional GloVe-style text file; random vectors otherwise
  std::string pivot1_train;   // optional back-translated pools mixed by mix.*
  std::string pivot2_train;
  std::string out_dir = "runs/qanet";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PathsConfig, train, dev, word_vectors, pivot1_train, pivot2_train,
                                                out_dir)

struct RunConfig {
  TrainConfig train;
  AugmentConfig augment;
  PathsConfig paths;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.train.model},
       {"optim", c.train.optim},
       {"mix", c.train.mix},
       {"train",
        {{"batch_size", c.train.batch_size},
         {"steps", c.train.steps},
         {"checkpoint_every", c.train.checkpoint_every},
         {"eval_every", c.train.eval_every},
         {"seed", c.train.seed}}},
       {"augment", c.augment},
       {"paths", c.paths}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c.train.model = j.at("model").get<ModelConfig>();
  c.train.optim = j.at("optim").get<OptimizerConfig>();
  c.train.mix = j.at("mix").get<MixRatio>();
  const auto& t = j.at("train");
  c.train.batch_size = t.at("batch_size").get<std::size_t>();
  c.train.steps = t.at("steps").get<std::size_t>();
  c.train.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
  c.train.eval_every = t.at("eval_every").get<std::size_t>();
  c.train.seed = t.at("seed").get<std::uint64_t>();
  c.augment = j.at("augment").get<AugmentConfig>();
  c.paths = j.at("paths").get<PathsConfig>();
}

/// {"a": {"b": 1}} -> {"a.b": 1}. Settings nest one level deep; arrays are leaves.
inline nlohmann::json flatten_config(const nlohmann::json& nested) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, value] : nested.items()) {
    if (value.is_object()) {
      for (const auto& [sub, v] : value.items()) out[key + "." + sub] = v;
    } else {
      out[key] = value;
    }
  }
  return out;
}

inline nlohmann::json unflatten_config(const nlohmann::json& flat) {
  nlohmann::json nested = nlohmann::json::object();
  for (const auto& [key, value] : flat.items()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      nested[key] = value;
    } else {
      nested[key.substr(0, dot)][key.substr(dot + 1)] = value;
    }
  }
  return nested;
}

namespace detail {

inline void check_override(const std::string& key, const nlohmann::json& current, const nlohmann::json& value) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::kInvalidArgument, "config key " + key + ": " + why + " (got " + value.dump() + ")");
  };
  if (current.is_number_unsigned() || current.is_number_integer()) {
    if (!value.is_number_integer() && !value.is_number_unsigned()) fail("expected an integer");
    if (current.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
      fail("expected a non-negative integer");
    }
  } else if (current.is_number_float()) {
    if (!value.is_number()) fail("expected a number");
  } else if (current.is_boolean()) {
    if (!value.is_boolean()) fail("expected true or false");
  } else if (current.is_string()) {
    if (!value.is_string()) fail("expected a string");
  } else if (current.is_array()) {
    if (!value.is_array()) fail("expected a list");
  }
}

}  // namespace detail

/// Applies flat overrides onto a config; unknown keys and type changes are errors.
inline RunConfig apply_overrides(const RunConfig& base, const nlohmann::json& overrides) {
  if (!overrides.is_object()) throw Error(ErrorCode::kInvalidArgument, "config must be a JSON object");
  nlohmann::json flat = flatten_config(nlohmann::json(base));
  for (const auto& [key, value] : overrides.items()) {
    if (!flat.contains(key)) throw Error(ErrorCode::kInvalidArgument, "unknown config key " + key);
    detail::check_override(key, flat[key], value);
    flat[key] = value;
  }
  try {
    return unflatten_config(flat).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
}

/// Accepts flat ("model.d") or nested ({"model": {"d"}}) keys.
inline RunConfig load_run_config(const std::string& path, const RunConfig& base = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open config " + path);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kMalformedJson, "config " + path + " is not valid JSON");
  return apply_overrides(base, flatten_config(j));
}

/// "key=value": value is read as JSON when it parses, else as a string.
inline RunConfig apply_assignment(const RunConfig& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::kInvalidArgument, "override must look like key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  auto value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  return apply_overrides(base, nlohmann::json{{key, value}});
}

inline nlohmann::json config_echo(const RunConfig& c) { return flatten_config(nlohmann::json(c)); }

}  // namespace qanet
