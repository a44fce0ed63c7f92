// qanet: train, predict, evaluate, augment and bench from the command line.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qanet/qanet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qanet;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat JSON config (falls back to $QANET_CONFIG)");
    cmd->add_option("--set", overrides, "override one setting, key=value")->take_all();
    cmd->add_option("--seed", seed, "training seed (train.seed)");
  }

  RunConfig resolve() const {
    RunConfig config;
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv("QANET_CONFIG")) path = env;
    }
    if (!path.empty()) config = load_run_config(path);
    for (const auto& o : overrides) config = apply_assignment(config, o);
    if (seed) config.train.seed = *seed;
    std::cerr << "config " << config_echo(config).dump() << '\n';
    return config;
  }
};

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "failed writing " + path);
}

std::vector<QaExample> load_optional(const std::string& path, const ParseOptions& options) {
  return path.empty() ? std::vector<QaExample>{} : parse_qa_json(path, options);
}

int run_train(const ConfigFlags& flags, const std::string& resume) {
  const RunConfig config = flags.resolve();
  const auto& model = config.train.model;
  if (config.paths.train.empty()) throw Error(ErrorCode::kInvalidArgument, "paths.train is not set");
  const ParseOptions train_parse{true, model.max_context_len, model.max_answer_len};
  const ParseOptions eval_parse{false, model.max_context_len, model.max_answer_len};
  TrainData data;
  data.train = parse_qa_json(config.paths.train, train_parse);
  if (data.train.empty()) throw Error(ErrorCode::kEmptyDataset, config.paths.train + " has no usable examples");
  data.pivot1 = load_optional(config.paths.pivot1_train, train_parse);
  data.pivot2 = load_optional(config.paths.pivot2_train, train_parse);
  data.dev = load_optional(config.paths.dev, eval_parse);

  std::vector<QaExample> all = data.train;
  for (const auto* pool : {&data.pivot1, &data.pivot2, &data.dev}) all.insert(all.end(), pool->begin(), pool->end());
  const WordVectors words = config.paths.word_vectors.empty()
                                ? random_word_vectors(all, model.word_dim, config.train.seed)
                                : load_word_vectors(config.paths.word_vectors, model.word_dim, config.train.seed);
  Trainer trainer(config.train, std::move(data), words, build_char_vocab(all));
  if (!resume.empty()) {
    trainer.restore(read_checkpoint(resume));
    std::cerr << "resumed at step " << trainer.step() << '\n';
  }
  const fs::path out_dir = config.paths.out_dir;
  fs::create_directories(out_dir);
  write_json((out_dir / "config.json").string(), config_echo(config));
  trainer.fit(out_dir, [](const json& record) {
    if (record.contains("dev_em") || record["step"].get<std::size_t>() % 100 == 0) std::cerr << record.dump() << '\n';
  });
  std::cerr << "wrote " << (out_dir / "final.qnck").string() << '\n';
  return 0;
}

int run_predict(const std::string& checkpoint, const std::string& data_path, const std::string& out, bool live) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  const QANet model = load_model(ckpt, !live);
  const auto examples =
      parse_qa_json(data_path, ParseOptions{false, model.config().max_context_len, model.config().max_answer_len});
  const auto predictions = predict_answers(model, examples);
  const json j(predictions);
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(out, j);
  }
  return 0;
}

int run_evaluate(const std::string& pred_path, const std::string& gold_path, bool per_example) {
  const auto predictions = read_json_file(pred_path).get<std::map<std::string, std::string>>();
  const EvalResult r = evaluate(predictions, read_gold_answers(read_json_file(gold_path)));
  json j{{"exact_match", r.em}, {"f1", r.f1}, {"count", r.records.size()}};
  if (per_example) {
    j["per_example"] = json::array();
    for (const auto& s : r.records) {
      j["per_example"].push_back(
          {{"id", s.id}, {"prediction", s.prediction}, {"golds", s.golds}, {"exact_match", s.em}, {"f1", s.f1}});
    }
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct AugmentFlags {
  std::string data, out, mock_rules;
  std::vector<std::string> urls;
  bool mock = false;
  std::optional<std::size_t> k, copies;
  std::optional<double> threshold;
  std::vector<std::string> pivots;
};

int run_augment(const ConfigFlags& flags, const AugmentFlags& a) {
  RunConfig config = flags.resolve();
  if (a.k) config.augment.k = *a.k;
  if (a.threshold) config.augment.threshold = *a.threshold;
  if (a.copies) config.augment.copies = *a.copies;
  if (!a.pivots.empty()) config.augment.pivots = a.pivots;
  const auto& pivots = config.augment.pivots;
  if (pivots.empty()) throw Error(ErrorCode::kInvalidArgument, "no pivot languages");
  if (a.mock == !a.urls.empty()) throw Error(ErrorCode::kInvalidArgument, "pass exactly one of --mock or --translator-url");
  if (!a.urls.empty() && a.urls.size() != 1 && a.urls.size() != pivots.size()) {
    throw Error(ErrorCode::kInvalidArgument, "give one --translator-url, or one per pivot");
  }
  const auto examples = parse_qa_json(a.data, ParseOptions{false, kMaxContextTokens, kMaxAnswerTokens});

  std::vector<QaExample> combined;
  for (std::size_t p = 0; p < pivots.size(); ++p) {
    std::unique_ptr<Translator> translator;
    if (a.mock) {
      translator = std::make_unique<MockTranslator>(a.mock_rules.empty() ? MockTranslator()
                                                                         : mock_translator_from_json(read_json_file(a.mock_rules)));
    } else {
      translator = std::make_unique<HttpTranslator>(a.urls.size() == 1 ? a.urls[0] : a.urls[p], config.augment.http());
    }
    Paraphraser paraphraser(*translator, config.augment.options());
    auto augmented = augment_dataset(examples, paraphraser, pivots[p], config.augment.copies, config.train.seed);
    std::cerr << pivots[p] << ": " << augmented.size() << " examples from " << examples.size() << '\n';
    if (pivots.size() > 1) {
      const fs::path out(a.out);
      write_qa_json(augmented, (out.parent_path() / (out.stem().string() + "." + pivots[p] + out.extension().string())).string());
    }
    combined.insert(combined.end(), augmented.begin(), augmented.end());
  }
  write_qa_json(combined, a.out);
  return 0;
}

int run_bench(const ConfigFlags& flags, bool as_json, std::size_t iterations, std::size_t context_len) {
  const RunConfig config = flags.resolve();
  const auto& model_config = config.train.model;
  SyntheticOptions options;
  options.examples = config.train.batch_size;
  options.min_context = context_len;
  options.max_context = context_len;
  options.seed = config.train.seed;
  const auto examples = synthetic_dataset(options);
  const WordVectors words = random_word_vectors(examples, model_config.word_dim, config.train.seed);
  QANet model(model_config, words, build_char_vocab(examples), config.train.seed);
  std::vector<std::size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Batch batch = make_batch(examples, idx, words.vocab, model.chars(), model_config.max_context_len);

  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::duration d) { return std::chrono::duration<double>(d).count(); };
  const auto t0 = clock::now();
  for (std::size_t i = 0; i < iterations; ++i) (void)model.predict(batch);
  const double forward_s = seconds(clock::now() - t0);
  auto& params = model.params();
  const auto t1 = clock::now();
  for (std::size_t i = 0; i < iterations; ++i) {
    Rng rng = make_rng({config.train.seed, i});
    params.zero_grad();
    backward(model.batch_loss(batch, ForwardMode::train(rng)));
  }
  const double train_s = seconds(clock::now() - t1);
  const double n = static_cast<double>(iterations * batch.size);
  const json report{{"batch_size", batch.size},
                    {"context_len", context_len},
                    {"iterations", iterations},
                    {"trainable_parameters", model.params().trainable_count()},
                    {"forward_examples_per_s", n / forward_s},
                    {"forward_backward_examples_per_s", n / train_s},
                    {"forward_batches_per_s", static_cast<double>(iterations) / forward_s},
                    {"forward_backward_batches_per_s", static_cast<double>(iterations) / train_s}};
  if (as_json) {
    std::cout << report.dump(2) << '\n';
  } else {
    std::cout << "parameters            " << report["trainable_parameters"] << "\n"
              << "forward               " << report["forward_examples_per_s"].get<double>() << " examples/s\n"
              << "forward+backward      " << report["forward_backward_examples_per_s"].get<double>() << " examples/s\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QANet reading comprehension with back-translation augmentation"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  std::string resume;
  auto* train = app.add_subcommand("train", "train a model and write checkpoints plus metrics.jsonl");
  train_flags.attach(train);
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  std::string checkpoint, data_path, out_path;
  bool live = false;
  auto* predict = app.add_subcommand("predict", "write id -> answer JSON using the EMA weights");
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--data", data_path, "SQuAD v1.1 file")->required();
  predict->add_option("--out", out_path, "output file (stdout when omitted)");
  predict->add_flag("--live-weights", live, "use the raw trained weights instead of the EMA shadow");

  std::string pred_path, gold_path;
  bool per_example = false;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score predictions; prints EM/F1 JSON");
  evaluate_cmd->add_option("--pred", pred_path)->required();
  evaluate_cmd->add_option("--gold", gold_path)->required();
  evaluate_cmd->add_flag("--per-example", per_example);

  ConfigFlags augment_flags;
  AugmentFlags aug;
  auto* augment = app.add_subcommand("augment", "paraphrase documents by round-trip translation");
  augment_flags.attach(augment);
  augment->add_option("--data", aug.data)->required();
  augment->add_option("--out", aug.out)->required();
  auto* url_opt = augment->add_option("--translator-url", aug.urls, "translation service base URL (one, or one per pivot)");
  auto* mock_opt = augment->add_flag("--mock", aug.mock, "use the offline mock translator");
  url_opt->excludes(mock_opt);
  augment->add_option("--mock-rules", aug.mock_rules, "JSON rules for the mock translator")->needs(mock_opt);
  augment->add_option("--k", aug.k, "beam width");
  augment->add_option("--threshold", aug.threshold, "minimum answer similarity");
  augment->add_option("--copies", aug.copies, "paraphrased copies per example and pivot");
  augment->add_option("--pivot", aug.pivots, "pivot language tags, in pool order");

  ConfigFlags bench_flags;
  bool as_json = false;
  std::size_t iterations = 5, context_len = 100;
  auto* bench = app.add_subcommand("bench", "report forward and training throughput");
  bench_flags.attach(bench);
  bench->add_flag("--json", as_json);
  bench->add_option("--iterations", iterations)->check(CLI::PositiveNumber);
  bench->add_option("--context-len", context_len)->check(CLI::Range(4, 400));

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed()) return run_train(train_flags, resume);
    if (predict->parsed()) return run_predict(checkpoint, data_path, out_path, live);
    if (evaluate_cmd->parsed()) return run_evaluate(pred_path, gold_path, per_example);
    if (augment->parsed()) return run_augment(augment_flags, aug);
    if (bench->parsed()) return run_bench(bench_flags, as_json, iterations, context_len);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
