#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "qanet/config.hpp"
#include "qanet/synthetic.hpp"
#include "qanet/trainer.hpp"
#include "support/toy.hpp"

using namespace qanet;
using namespace qanet::testing;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("qanet-test-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct TinySetup {
  TrainConfig config;
  TrainData data;
  WordVectors words;
  Vocabulary chars;

  Trainer make() const { return Trainer(config, data, words, chars); }
};

TinySetup tiny_setup(std::size_t steps = 6) {
  TinySetup s;
  s.config.model = toy_model_config();
  s.config.batch_size = 3;
  s.config.steps = steps;
  s.config.checkpoint_every = 3;
  s.config.eval_every = 3;
  s.config.seed = 5;
  s.data.train = synthetic_dataset({8, 20, 6, 10, 2, 3});
  s.data.dev = std::vector<QaExample>(s.data.train.begin(), s.data.train.begin() + 3);
  s.words = random_word_vectors(s.data.train, s.config.model.word_dim, 1);
  s.chars = build_char_vocab(s.data.train);
  return s;
}

ParameterSet scalar_parameter(double value) {
  ParameterSet params;
  params.add("theta", Tensor({1}, {value}));
  return params;
}

void set_grad(ParameterSet& params, double g) {
  params.zero_grad();
  params.items()[0].tensor.mutable_grad()[0] = g;
}

}  // namespace

TEST(LrSchedule, Endpoints) {
  const OptimizerConfig config;
  EXPECT_EQ(lr_schedule(1000, config), 0.001);
  EXPECT_EQ(lr_schedule(5000, config), 0.001);
  EXPECT_NEAR(lr_schedule(1, config), 0.001 * std::log(2.0) / std::log(1001.0), 1e-18);
  EXPECT_NEAR(lr_schedule(1, config), 1.003e-4, 1e-7);
}

TEST(LrSchedule, NonDecreasing) {
  const OptimizerConfig config;
  for (std::size_t s = 1; s < 2000; ++s) EXPECT_LE(lr_schedule(s, config), lr_schedule(s + 1, config));
}

TEST(Adam, UnitGradientStepIsLearningRateOverOnePlusEpsilon) {
  OptimizerConfig config;
  config.warmup_steps = 0;
  auto params = scalar_parameter(0.0);
  auto state = AdamState::for_parameters(params);
  set_grad(params, 1.0);
  adam_step(params, state, config);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(params.items()[0].tensor[0], -config.learning_rate / (1.0 + config.epsilon), 1e-18);
  EXPECT_NEAR(params.items()[0].tensor[0], -0.001, 1e-9);
}

TEST(Adam, ZeroGradientsWithoutDecayLeaveParameters) {
  OptimizerConfig config;
  config.weight_decay = 0.0;
  auto params = scalar_parameter(2.5);
  auto state = AdamState::for_parameters(params);
  for (int i = 0; i < 5; ++i) {
    set_grad(params, 0.0);
    adam_step(params, state, config);
  }
  EXPECT_EQ(params.items()[0].tensor[0], 2.5);
}

TEST(Adam, WeightDecayIsAddedToGradient) {
  OptimizerConfig config;
  config.warmup_steps = 0;
  config.weight_decay = 0.5;
  auto params = scalar_parameter(2.0);
  auto state = AdamState::for_parameters(params);
  set_grad(params, 0.0);
  adam_step(params, state, config);
  EXPECT_EQ(state.m[0][0], (1.0 - config.beta1) * 1.0);
  EXPECT_LT(params.items()[0].tensor[0], 2.0);
}

TEST(Adam, QuadraticLossDecreases) {
  OptimizerConfig config;
  config.warmup_steps = 0;
  config.learning_rate = 0.05;
  ParameterSet params;
  Tensor theta = params.add("theta", Tensor({3}, {4.0, -2.0, 0.5}));
  auto state = AdamState::for_parameters(params);
  auto loss = [&] { return sum(mul(add_scalar(theta, -1.0), add_scalar(theta, -1.0))); };
  const double before = loss().item();
  double previous = before;
  for (int i = 0; i < 100; ++i) {
    params.zero_grad();
    backward(loss());
    adam_step(params, state, config);
    const double now = loss().item();
    EXPECT_LE(now, previous + 1e-9);
    previous = now;
  }
  EXPECT_LT(previous, 0.1 * before);
}

TEST(Adam, MissingGradientThrowsAndFrozenParametersStay) {
  ParameterSet params;
  params.add("live", Tensor({2}, {1.0, 2.0}));
  params.add("frozen", Tensor({2}, {3.0, 4.0}), false);
  auto state = AdamState::for_parameters(params);
  EXPECT_EQ(code_of([&] { adam_step(params, state, {}); }), ErrorCode::kMissingGradient);
  params.zero_grad();
  params.items()[0].tensor.mutable_grad()[0] = 1.0;
  adam_step(params, state, {});
  EXPECT_EQ(params.items()[1].tensor.values(), (std::vector<double>{3.0, 4.0}));
  EXPECT_NE(params.items()[0].tensor[0], 1.0);
}

TEST(Ema, GeometricClosedForm) {
  auto params = scalar_parameter(0.7);
  EmaState ema{{{-1.3}}};
  const double decay = 0.9999;
  for (int k = 1; k <= 500; ++k) {
    ema_update(ema, params, decay);
    if (k % 50 == 0) {
      EXPECT_NEAR(ema.shadow[0][0], 0.7 + (-1.3 - 0.7) * std::pow(decay, k), 1e-12);
    }
  }
}

TEST(Ema, InitialShadowIsAFixedPoint) {
  auto params = scalar_parameter(1.25);
  auto ema = EmaState::for_parameters(params);
  for (int k = 0; k < 100; ++k) ema_update(ema, params, 0.9999);
  EXPECT_EQ(ema.shadow[0][0], 1.25);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint ckpt;
  ckpt.meta = {{"step", 12}, {"note", "x"}};
  ckpt.tensors.push_back({"a", {2, 2}, {1.0, -0.0, std::numeric_limits<double>::denorm_min(), 1e300}});
  ckpt.tensors.push_back({"b", {}, {std::nan("")}});
  const std::string bytes = serialize_checkpoint(ckpt);
  EXPECT_EQ(bytes.substr(0, 8), "QANETCKP");
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.meta, ckpt.meta);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_EQ(back.tensors[0].shape, (Shape{2, 2}));
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, CorruptionIsDetected) {
  Checkpoint ckpt;
  ckpt.tensors.push_back({"a", {3}, {1, 2, 3}});
  const std::string bytes = serialize_checkpoint(ckpt);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of([&] { deserialize_checkpoint(bad_magic); }), ErrorCode::kCheckpointMismatch);
  EXPECT_EQ(code_of([&] { deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)); }), ErrorCode::kCheckpointMismatch);
  EXPECT_EQ(code_of([&] { deserialize_checkpoint(bytes + "x"); }), ErrorCode::kCheckpointMismatch);
  std::string bad_header = bytes;
  bad_header[16] = '!';
  EXPECT_EQ(code_of([&] { deserialize_checkpoint(bad_header); }), ErrorCode::kMalformedJson);
  EXPECT_EQ(code_of([] { read_checkpoint("/nonexistent/ckpt.qnck"); }), ErrorCode::kIoError);
  EXPECT_EQ(code_of([&] { ckpt.get("missing"); }), ErrorCode::kCheckpointMismatch);
}

TEST(Trainer, SameSeedGivesBitwiseIdenticalState) {
  const auto setup = tiny_setup();
  auto a = setup.make();
  auto b = setup.make();
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a.train_step(), b.train_step());
  EXPECT_EQ(serialize_checkpoint(a.checkpoint()), serialize_checkpoint(b.checkpoint()));
}

TEST(Trainer, DifferentSeedsDiverge) {
  auto setup = tiny_setup();
  auto a = setup.make();
  setup.config.seed = 6;
  auto b = setup.make();
  EXPECT_NE(a.train_step(), b.train_step());
}

TEST(Trainer, ResumeReproducesLossTrace) {
  const auto setup = tiny_setup();
  auto full = setup.make();
  std::vector<double> trace;
  for (int i = 0; i < 6; ++i) trace.push_back(full.train_step());

  auto first = setup.make();
  for (int i = 0; i < 3; ++i) EXPECT_EQ(first.train_step(), trace[static_cast<std::size_t>(i)]);
  const std::string saved = serialize_checkpoint(first.checkpoint());

  auto resumed = setup.make();
  resumed.restore(deserialize_checkpoint(saved));
  EXPECT_EQ(resumed.step(), 3u);
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(resumed.train_step(), trace[i]);
  EXPECT_EQ(serialize_checkpoint(resumed.checkpoint()), serialize_checkpoint(full.checkpoint()));
}

TEST(Trainer, RestoreRejectsDifferentConfig) {
  auto setup = tiny_setup();
  const auto ckpt = setup.make().checkpoint();
  setup.config.optim.learning_rate = 0.01;
  auto other = setup.make();
  EXPECT_EQ(code_of([&] { other.restore(ckpt); }), ErrorCode::kCheckpointMismatch);
  setup.config.optim.learning_rate = 0.001;
  setup.config.steps = 99;  // run length does not change the trajectory
  auto longer = setup.make();
  EXPECT_NO_THROW(longer.restore(ckpt));
}

TEST(Trainer, FrozenWordRowsNeverChange) {
  const auto setup = tiny_setup();
  auto trainer = setup.make();
  const auto before = trainer.model().params().get("embedding.word_table").values();
  const auto unk_before = trainer.model().params().get("embedding.unk").values();
  for (int i = 0; i < 4; ++i) trainer.train_step();
  EXPECT_EQ(trainer.model().params().get("embedding.word_table").values(), before);
  EXPECT_NE(trainer.model().params().get("embedding.unk").values(), unk_before);
}

TEST(Trainer, FitWritesLogsAndCheckpoints) {
  const auto setup = tiny_setup();
  const fs::path dir = scratch_dir("fit");
  auto trainer = setup.make();
  std::vector<nlohmann::json> records;
  trainer.fit(dir, [&](const nlohmann::json& r) { records.push_back(r); });
  EXPECT_TRUE(fs::exists(dir / "ckpt-00000003.qnck"));
  EXPECT_TRUE(fs::exists(dir / "ckpt-00000006.qnck"));
  EXPECT_TRUE(fs::exists(dir / "final.qnck"));
  ASSERT_EQ(records.size(), 6u);
  EXPECT_TRUE(records[2].contains("dev_em"));
  EXPECT_FALSE(records[3].contains("dev_f1"));
  EXPECT_TRUE(records[5].contains("dev_f1"));
  std::ifstream log(dir / "metrics.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) EXPECT_EQ(nlohmann::json::parse(line), records[n++]);
  EXPECT_EQ(n, 6u);
  fs::remove_all(dir);
}

TEST(Trainer, FitResumeRewritesTailIdentically) {
  const auto setup = tiny_setup();
  const fs::path full_dir = scratch_dir("full"), part_dir = scratch_dir("part");
  setup.make().fit(full_dir);
  auto resumed = setup.make();
  fs::copy_file(full_dir / "metrics.jsonl", part_dir / "metrics.jsonl");
  resumed.restore(read_checkpoint((full_dir / "ckpt-00000003.qnck").string()));
  resumed.fit(part_dir);
  EXPECT_EQ(slurp(part_dir / "metrics.jsonl"), slurp(full_dir / "metrics.jsonl"));
  EXPECT_EQ(slurp(part_dir / "final.qnck"), slurp(full_dir / "final.qnck"));
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST(Trainer, LoggedLearningRateReachesTargetAtWarmupEnd) {
  auto setup = tiny_setup(1000);
  setup.config.checkpoint_every = 0;
  setup.config.eval_every = 0;
  setup.config.model.embedding_conv_layers = 1;
  setup.data.dev.clear();
  const fs::path dir = scratch_dir("lr");
  auto trainer = setup.make();
  double lr_1000 = 0.0, lr_1 = 0.0;
  trainer.fit(dir, [&](const nlohmann::json& r) {
    if (r["step"] == 1) lr_1 = r["lr"].get<double>();
    if (r["step"] == 1000) lr_1000 = r["lr"].get<double>();
  });
  EXPECT_EQ(lr_1000, 0.001);
  EXPECT_NEAR(lr_1, 1.003e-4, 1e-7);
  fs::remove_all(dir);
}

TEST(Trainer, MixedSamplerDrawsFromPivotPools) {
  auto setup = tiny_setup();
  setup.data.pivot1 = synthetic_dataset({4, 20, 6, 10, 2, 31});
  setup.data.pivot2 = synthetic_dataset({4, 20, 6, 10, 2, 32});
  for (auto& ex : setup.data.pivot1) ex.id = "p1-" + ex.id;
  for (auto& ex : setup.data.pivot2) ex.id = "p2-" + ex.id;
  setup.config.batch_size = 40;
  auto a = setup.make();
  auto b = setup.make();
  const Batch x = a.batch_for_step(1), y = b.batch_for_step(1);
  EXPECT_EQ(x.context_ids, y.context_ids);
  EXPECT_EQ(x.size, 40u);
  EXPECT_NO_THROW(a.train_step());
}

TEST(Trainer, PositiveWeightOnEmptyPoolThrows) {
  auto setup = tiny_setup();
  setup.data.pivot1 = synthetic_dataset({4, 20, 6, 10, 2, 31});
  EXPECT_EQ(code_of([&] { setup.make(); }), ErrorCode::kEmptyWeightedPool);
  setup.config.mix.pivot2 = 0;
  EXPECT_NO_THROW(setup.make());
}

TEST(Trainer, EmptyTrainingSetThrows) {
  auto setup = tiny_setup();
  setup.data.train.clear();
  EXPECT_EQ(code_of([&] { setup.make(); }), ErrorCode::kEmptyDataset);
}

TEST(LoadModel, RebuildsLiveAndShadowWeights) {
  const auto setup = tiny_setup();
  auto trainer = setup.make();
  for (int i = 0; i < 3; ++i) trainer.train_step();
  const auto ckpt = trainer.checkpoint();
  const QANet live = load_model(ckpt, false);
  EXPECT_EQ(live.params().snapshot(), trainer.model().params().snapshot());
  const QANet shadow = load_model(ckpt, true);
  const auto& items = shadow.params().items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].trainable) {
      EXPECT_EQ(items[i].tensor.values(), trainer.ema().shadow[i]) << items[i].name;
    }
  }
}

TEST(LoadModel, ShapeMismatchNamesTheTensor) {
  const auto setup = tiny_setup();
  auto ckpt = setup.make().checkpoint();
  for (auto& t : ckpt.tensors) {
    if (t.name == "param/fusion.weight") t.shape = {t.shape[1], t.shape[0]};
  }
  const std::string msg = error_text([&] { load_model(ckpt, false); });
  EXPECT_NE(msg.find("param/fusion.weight"), std::string::npos) << msg;
  EXPECT_EQ(code_of([&] { load_model(ckpt, false); }), ErrorCode::kCheckpointMismatch);
}

TEST(Config, AssignmentsOverrideTypedFields) {
  RunConfig c;
  c = apply_assignment(c, "model.d=64");
  c = apply_assignment(c, "optim.learning_rate=1");
  c = apply_assignment(c, "paths.train=data/train.json");
  c = apply_assignment(c, "augment.pivots=[\"fr\"]");
  EXPECT_EQ(c.train.model.d, 64u);
  EXPECT_EQ(c.train.optim.learning_rate, 1.0);
  EXPECT_EQ(c.paths.train, "data/train.json");
  EXPECT_EQ(c.augment.pivots, (std::vector<std::string>{"fr"}));
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  const RunConfig c;
  EXPECT_EQ(code_of([&] { apply_assignment(c, "model.depth=3"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { apply_assignment(c, "train.steps=many"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { apply_assignment(c, "train.steps=-4"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { apply_assignment(c, "train.steps=1.5"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { apply_assignment(c, "augment.require_answer_paraphrase=1"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { apply_assignment(c, "no_equals_sign"); }), ErrorCode::kInvalidArgument);
}

TEST(Config, FlatAndNestedFilesAgree) {
  const fs::path dir = scratch_dir("config");
  std::ofstream(dir / "flat.json") << R"({"model.d": 32, "train.steps": 7, "paths.out_dir": "x"})";
  std::ofstream(dir / "nested.json") << R"({"model": {"d": 32}, "train": {"steps": 7}, "paths": {"out_dir": "x"}})";
  std::ofstream(dir / "broken.json") << "{";
  const auto flat = load_run_config((dir / "flat.json").string());
  const auto nested = load_run_config((dir / "nested.json").string());
  EXPECT_EQ(config_echo(flat), config_echo(nested));
  EXPECT_EQ(flat.train.steps, 7u);
  EXPECT_EQ(code_of([&] { load_run_config((dir / "broken.json").string()); }), ErrorCode::kMalformedJson);
  EXPECT_EQ(code_of([&] { load_run_config((dir / "absent.json").string()); }), ErrorCode::kIoError);
  fs::remove_all(dir);
}

TEST(Config, EchoRoundTrips) {
  RunConfig c;
  c.train.seed = 17;
  c.augment.k = 3;
  const auto back = apply_overrides(RunConfig{}, config_echo(c));
  EXPECT_EQ(back.train, c.train);
  EXPECT_EQ(back.augment.k, 3u);
}
