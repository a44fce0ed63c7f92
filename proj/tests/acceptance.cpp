// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "qanet/qanet.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"
#include "support/toy.hpp"

using namespace qanet;
using namespace qanet::testing;
namespace fs = std::filesystem;

namespace {

const std::string kData = QANET_TEST_DATA;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome gradient_gate() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  auto track = [&](const std::string& name, const GradCheckResult& r) {
    if (r.max_rel_error > worst || std::isinf(r.max_rel_error)) {
      worst = r.max_rel_error;
      where = name + " (" + r.worst + ")";
    }
  };
  std::size_t cases = 0;
  for (const auto& op : primitive_cases()) {
    Rng rng = make_rng({0xacc1ULL, fnv1a(op.name)});
    for (int i = 0; i < 20; ++i, ++cases) track(op.name, op.run(rng));
  }
  for (const auto& layer : layer_cases()) {
    Rng rng = make_rng({0xacc2ULL, fnv1a(layer.name)});
    for (int i = 0; i < 5; ++i, ++cases) track(layer.name, layer.run(rng));
  }
  auto toy = make_toy_model();
  std::vector<Tensor> inputs;
  for (const auto& p : toy.model.params().items()) {
    if (p.trainable) inputs.push_back(p.tensor);
  }
  track("toy model", grad_check([&] { return toy.model.batch_loss(toy.batch, ForwardMode::eval()); }, inputs, 3, 1));
  ++cases;
  const double elapsed = seconds_since(t0);
  const bool pass = worst < 1e-4 && elapsed < 120.0;
  return {pass, std::to_string(cases) + " checks, max rel err " + fmt(worst) + (worst >= 1e-4 ? " at " + where : "") +
                    ", " + fmt(elapsed, 3) + " s"};
}

Outcome normalization_invariants() {
  Rng rng = make_rng({0xacc3ULL});
  double worst = 0.0;
  bool masked_zero = true;
  for (int it = 0; it < 100; ++it) {
    const std::size_t n = random_dim(rng, 1, 30), m = random_dim(rng, 1, 12), d = random_dim(rng, 1, 6);
    const Tensor c = random_tensor(rng, {n, d}, -3, 3), q = random_tensor(rng, {m, d}, -3, 3);
    const TrilinearWeights w{random_tensor(rng, {d}), random_tensor(rng, {d}), random_tensor(rng, {d})};
    const auto cm = cases::random_mask(rng, n, 1), qm = cases::random_mask(rng, m, 1);
    const auto att = context_query_attention(c, q, w, cm, qm);
    for (std::size_t i = 0; i < n; ++i) {
      if (!cm[i]) continue;
      double total = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        total += att.s_row.at(i, j);
        masked_zero = masked_zero && (qm[j] || att.s_row.at(i, j) == 0.0);
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (!qm[j]) continue;
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        total += att.s_col.at(i, j);
        masked_zero = masked_zero && (cm[i] || att.s_col.at(i, j) == 0.0);
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
    const Tensor m0 = random_tensor(rng, {n, d}, -3, 3), m1 = random_tensor(rng, {n, d}, -3, 3),
                 m2 = random_tensor(rng, {n, d}, -3, 3);
    const auto dist = span_distributions(m0, m1, m2, random_tensor(rng, {2 * d}), random_tensor(rng, {2 * d}), cm);
    double t1 = 0.0, t2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      t1 += dist.p1[i];
      t2 += dist.p2[i];
      masked_zero = masked_zero && (cm[i] || (dist.p1[i] == 0.0 && dist.p2[i] == 0.0));
    }
    worst = std::max({worst, std::abs(t1 - 1.0), std::abs(t2 - 1.0)});
  }
  return {worst <= 1e-9 && masked_zero,
          "100 instances, max |sum-1| " + fmt(worst) + ", masked entries " + (masked_zero ? "all zero" : "NOT zero")};
}

Outcome dp_oracle() {
  Rng rng = make_rng({0xacc4ULL});
  std::size_t mismatches = 0;
  for (int it = 0; it < 1000; ++it) {
    const std::size_t n = random_dim(rng, 1, 400);
    const double temperature = uniform(rng, 0.1, 10.0);
    auto draw = [&] {
      std::vector<double> logits(n);
      for (double& v : logits) v = normal(rng) * temperature;
      return softmax(Tensor({n}, logits), 0).values();
    };
    const auto p1 = draw(), p2 = draw();
    SpanPrediction best{0, 0, -1.0};
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t e = s; e < n && e < s + 30; ++e) {
        if (p1[s] * p2[e] > best.score) best = {s, e, p1[s] * p2[e]};
      }
    }
    if (!(dp_span_inference(p1, p2, 30) == best)) ++mismatches;
  }
  return {mismatches == 0, "1000 instances, " + std::to_string(mismatches) + " mismatches"};
}

Outcome table_one() {
  const auto paraphrase = token_texts(
      tokenize("All departments in the College of Science offer PHD programs with the exception of the Department of "
               "Preparatory Studies ."));
  const auto m = extract_answer(paraphrase, token_texts(tokenize("Department of Pre-Professional Studies")));
  const std::string got = m ? m->text : "<none>";
  const auto ex = parse_qa_json(kData + "/departments.json").at(0);
  const auto mock = mock_translator_from_json(read_json_file(kData + "/departments_mock.json"));
  Paraphraser paraphraser(mock, {});
  Rng rng = make_rng({1});
  const auto doc = paraphrase_document(ex, paraphraser, rng, "departments-fr-0");
  const std::string doc_answer = doc ? doc->answer_text : "<none>";
  const bool pass = got == "Department of Preparatory Studies" && doc_answer == got;
  return {pass, "extracted \"" + got + "\" (score " + (m ? fmt(m->score, 3) : "-") + "), document answer \"" +
                    doc_answer + "\""};
}

Outcome beam_arithmetic() {
  const std::string sentence = "The committee approved the plan, after a long debate.";
  MockTranslator::Script forward, back;
  for (int i = 0; i < 5; ++i) {
    const std::string pivot = "pivot " + std::to_string(i);
    forward[sentence].push_back(pivot);
    for (int j = 0; j < 5; ++j) back[pivot].push_back("Paraphrase " + std::to_string(i * 5 + j) + ".");
  }
  MockTranslator mock;
  mock.script(Direction::kForward, forward).script(Direction::kBack, back);
  const std::size_t at_five = paraphrase_sentence(sentence, mock, 5).size();
  const std::size_t at_one = paraphrase_sentence(sentence, mock, 1).size();
  return {at_five == 25 && at_one <= 1,
          "k=5 gives " + std::to_string(at_five) + " candidates, k=1 gives " + std::to_string(at_one)};
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto examples = synthetic_dataset({50, 200, 12, 30, 3, 0});
  TrainConfig config;
  config.model.d = 32;
  config.model.heads = 2;
  config.model.word_dim = 32;
  config.model.char_dim = 16;
  config.model.model_blocks = 2;
  config.optim.learning_rate = 0.003;
  config.optim.ema_decay = 0.99;
  config.batch_size = 16;
  config.steps = 500;
  config.seed = 7;
  const auto words = random_word_vectors(examples, config.model.word_dim, 1);
  Trainer trainer(config, {examples, {}, {}, {}}, words, build_char_vocab(examples));
  double loss = 0.0;
  while (trainer.step() < config.steps) loss = trainer.train_step();
  const EvalResult r = trainer.evaluate_shadow(examples);
  const double elapsed = seconds_since(t0);
  return {r.em >= 95.0 && elapsed <= 300.0, "train EM " + fmt(r.em, 4) + "% (F1 " + fmt(r.f1, 4) + "), last loss " +
                                                fmt(loss, 3) + ", " + fmt(elapsed, 3) + " s"};
}

Outcome stochastic_depth() {
  const double last = survival_probability(12, 12, 0.9);
  const Tensor x({1, 2}, {0.25, -0.5});
  const LayerNormParams ln{Tensor::full({2}, 1.0), Tensor::zeros({2})};
  bool pass = last == 0.9;
  std::string detail = "p_L " + fmt(last, 6);
  for (double p : {0.9, 0.95, 1.0}) {
    Rng rng = make_rng({0xacc7ULL, static_cast<std::uint64_t>(p * 100)});
    int kept = 0;
    for (int i = 0; i < 10000; ++i) {
      const Tensor y = residual_sublayer(x, ln, [](const Tensor& in) { return in; }, p, 0.0, ForwardMode::train(rng));
      if (y.node_id() != x.node_id()) ++kept;
    }
    const double rate = kept / 10000.0;
    pass = pass && std::abs(rate - p) <= 0.02;
    detail += ", p=" + fmt(p, 3) + " observed " + fmt(rate, 4);
  }
  return {pass, detail};
}

Outcome sampler_statistics() {
  MixedSampler sampler({1000, 500, 500}, MixRatio{}, 0xacc8ULL);
  std::array<double, 3> counts{};
  for (int i = 0; i < 100000; ++i) counts[sampler.next().pool] += 1.0;
  const std::array<double, 3> target{0.6, 0.2, 0.2};
  bool pass = true;
  std::string detail = "frequencies";
  for (std::size_t p = 0; p < 3; ++p) {
    const double f = counts[p] / 100000.0;
    pass = pass && std::abs(f - target[p]) <= 0.01;
    detail += " " + fmt(f, 4);
  }
  return {pass, detail};
}

Outcome metric_fixtures() {
  const auto fixtures = read_json_file(kData + "/metric_fixtures.json");
  std::map<std::string, std::string> predictions;
  std::vector<std::pair<std::string, std::vector<std::string>>> golds;
  for (const auto& c : fixtures["cases"]) {
    predictions[c["id"]] = c["prediction"];
    golds.emplace_back(c["id"], c["golds"].get<std::vector<std::string>>());
  }
  const EvalResult r = evaluate(predictions, golds);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& c = fixtures["cases"][i];
    const double f1 = c["f1"][0].get<double>() / c["f1"][1].get<double>();
    if (r.records[i].em == c["em"].get<double>() && r.records[i].f1 == f1) ++exact;
  }
  const bool pass = exact == 20 && r.records.size() == 20;
  return {pass, std::to_string(exact) + "/20 cases exact, EM " + fmt(r.em) + " F1 " + fmt(r.f1)};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("qanet-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  TrainConfig config;
  config.model = toy_model_config();
  config.batch_size = 4;
  config.steps = 20;
  config.checkpoint_every = 10;
  config.eval_every = 10;
  config.seed = 3;
  const auto train = synthetic_dataset({12, 40, 8, 14, 2, 5});
  const std::vector<QaExample> dev(train.begin(), train.begin() + 4);
  const auto words = random_word_vectors(train, config.model.word_dim, 2);
  const auto chars = build_char_vocab(train);
  auto run = [&](const fs::path& dir) { Trainer(config, {train, {}, {}, dev}, words, chars).fit(dir); };
  run(root / "a");
  run(root / "b");
  const bool same_ckpt = slurp(root / "a" / "final.qnck") == slurp(root / "b" / "final.qnck") &&
                         slurp(root / "a" / "ckpt-00000010.qnck") == slurp(root / "b" / "ckpt-00000010.qnck");
  const bool same_log = slurp(root / "a" / "metrics.jsonl") == slurp(root / "b" / "metrics.jsonl");

  fs::create_directories(root / "c");
  Trainer resumed(config, {train, {}, {}, dev}, words, chars);
  resumed.restore(read_checkpoint((root / "a" / "ckpt-00000010.qnck").string()));
  resumed.fit(root / "c");
  std::vector<std::string> full_tail, resumed_lines;
  {
    std::ifstream a(root / "a" / "metrics.jsonl"), c(root / "c" / "metrics.jsonl");
    std::string line;
    while (std::getline(a, line)) {
      if (nlohmann::json::parse(line)["step"].get<std::size_t>() > 10) full_tail.push_back(line);
    }
    while (std::getline(c, line)) resumed_lines.push_back(line);
  }
  const bool same_trace = !full_tail.empty() && full_tail == resumed_lines &&
                          slurp(root / "c" / "final.qnck") == slurp(root / "a" / "final.qnck");
  fs::remove_all(root);
  return {same_ckpt && same_log && same_trace, std::string("checkpoints ") + (same_ckpt ? "identical" : "DIFFER") +
                                                   ", logs " + (same_log ? "identical" : "DIFFER") +
                                                   ", resumed trace " + (same_trace ? "identical" : "DIFFERS")};
}

Outcome closed_forms() {
  const OptimizerConfig defaults;
  bool lr_ok = true;
  for (std::size_t s = 1000; s <= 5000; ++s) lr_ok = lr_ok && lr_schedule(s, defaults) == 0.001;

  // One Adam step on a scalar with constant unit gradient, at lr 0.001.
  OptimizerConfig config;
  config.warmup_steps = 0;
  ParameterSet params;
  Tensor theta = params.add("theta", Tensor({1}, {0.0}));
  AdamState state = AdamState::for_parameters(params);
  params.zero_grad();
  theta.mutable_grad()[0] = 1.0;
  adam_step(params, state, config);
  const double lr = lr_schedule(1, config);
  const double adam_gap = std::abs(-theta[0] - lr);

  ParameterSet p;
  p.add("w", Tensor({1}, {0.7}));
  EmaState ema{{{-1.3}}};
  double ema_gap = 0.0;
  for (int k = 1; k <= 2000; ++k) {
    ema_update(ema, p, defaults.ema_decay);
    ema_gap = std::max(ema_gap, std::abs(ema.shadow[0][0] - (0.7 + (-1.3 - 0.7) * std::pow(defaults.ema_decay, k))));
  }
  const bool pass = lr_ok && adam_gap <= 1e-12 && ema_gap <= 1e-12;
  return {pass, std::string("lr(>=1000) ") + (lr_ok ? "exact" : "WRONG") + ", Adam |step - lr| " + fmt(adam_gap, 3) +
                    " (tolerance 1e-12), EMA max gap " + fmt(ema_gap, 3)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient gate", gradient_gate},
      {"normalization invariants", normalization_invariants},
      {"span inference oracle", dp_oracle},
      {"paraphrased answer realignment", table_one},
      {"beam arithmetic", beam_arithmetic},
      {"overfit smoke test", overfit},
      {"stochastic depth survival", stochastic_depth},
      {"sampler statistics", sampler_statistics},
      {"metric fixtures", metric_fixtures},
      {"determinism", determinism},
      {"schedule and optimizer closed forms", closed_forms},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << criteria.size() - static_cast<std::size_t>(failures) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
