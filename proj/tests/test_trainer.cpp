#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>

#include "rnnt/trainer.hpp"

using namespace rnnt;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(FusionKind kind = FusionKind::kGating) {
  TrainConfig c;
  c.model.fusion = FusionSpec{kind, 8, 8, 8, requires_rank(kind) ? 4u : 0u, false};
  c.model.encoder_hidden = 8;
  c.model.prediction_hidden = 8;
  c.model.embed_dim = 8;
  c.model.vocab_size = c.task.vocab_size;
  c.model.feature_width = c.task.features();
  c.batch_size = 4;
  c.total_steps = 8;
  c.eval_every = 4;
  c.n_train = 50;
  c.n_dev = 6;
  c.seed = 3;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rnnt_trainer_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Checkpoint random_checkpoint(std::uint64_t seed) {
  CounterRng rng(seed, 0x636b70ULL);
  Checkpoint c;
  c.step = rng.uniform_int(0, 100000);
  for (int i = 0; i < 4; ++i) {
    Shape shape(rng.uniform_int(0, 3));
    for (auto& e : shape) e = rng.uniform_int(1, 4);
    Tensor t(shape);
    for (double& v : t.data) v = rng.normal() * 1e3;
    c.tensors.push_back({"tensor." + std::to_string(i), t});
  }
  c.tensors[0].value.data[0] = -0.0;
  return c;
}

}  // namespace

TEST(Adam, FirstStepHasUnitNormalizedMagnitude) {
  Tensor p = Tensor::scalar(0.0);
  AdamMoments m{Tensor::scalar(0.0), Tensor::scalar(0.0)};
  adam_step(p, Tensor::scalar(1.0), m, 1, AdamConfig{});
  EXPECT_NEAR(p.data[0], -9.99999990e-4, 1e-12);
  EXPECT_DOUBLE_EQ(p.data[0], -1e-3 / (1.0 + 1e-8));

  const double first = p.data[0];
  adam_step(p, Tensor::scalar(1.0), m, 2, AdamConfig{});
  EXPECT_LE(std::abs(p.data[0] - first), std::abs(first) * (1.0 + 1e-6));
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p = Tensor::matrix(2, 2, {1.0, -2.0, 3.0, 0.5});
  const Tensor before = p;
  AdamMoments m{Tensor({2, 2}), Tensor({2, 2})};
  for (std::uint64_t s = 1; s <= 3; ++s) adam_step(p, Tensor({2, 2}), m, s, AdamConfig{});
  EXPECT_TRUE(bitwise_equal(p, before));
}

TEST(Adam, Errors) {
  Tensor p({2});
  AdamMoments m{Tensor({2}), Tensor({2})};
  EXPECT_THROW(adam_step(p, Tensor({3}), m, 1, AdamConfig{}), DimensionError);
  EXPECT_THROW(adam_step(p, Tensor({2}), m, 0, AdamConfig{}), ConfigError);
  AdamConfig bad;
  bad.beta1 = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = AdamConfig{};
  bad.learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Checkpoint c = random_checkpoint(seed);
    const std::string bytes = serialize(c);
    EXPECT_EQ(deserialize(bytes), c);
    EXPECT_EQ(serialize(deserialize(bytes)), bytes);
  }
  const fs::path dir = scratch_dir("roundtrip");
  fs::create_directories(dir);
  const Checkpoint c = random_checkpoint(99);
  save_checkpoint(dir / "c.bin", c);
  EXPECT_EQ(load_checkpoint(dir / "c.bin"), c);
  fs::remove_all(dir);
}

TEST(Checkpoint, HeaderLayout) {
  Checkpoint c;
  c.step = 7;
  c.tensors.push_back({"w", Tensor::matrix(1, 1, {1.0})});
  const std::string b = serialize(c);
  EXPECT_EQ(b.substr(0, 4), "RNTJ");
  EXPECT_EQ(b.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(b.substr(8, 4), std::string("\x02\x00\x00\x00", 4));
  // step entry: name len 9, "meta.step", rank 0, one f64 payload
  EXPECT_EQ(b.size(), 12u + (2 + 9 + 1 + 8) + (2 + 1 + 1 + 16 + 8));
}

TEST(Checkpoint, CorruptionIsReportedWithOffsets) {
  const std::string good = serialize(random_checkpoint(4));

  std::string bad_magic = good;
  bad_magic[1] = 'X';
  try {
    deserialize(bad_magic);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  std::string bad_version = good;
  bad_version[4] = 9;
  try {
    deserialize(bad_version);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }

  try {
    deserialize(good + std::string(3, '\0'));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), good.size());
  }

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1})
    EXPECT_THROW(deserialize(good.substr(0, cut)), FormatError) << cut;
}

TEST(Metrics, NumberFormatting) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(format_number(12345678.25), "12345678.2");
  EXPECT_EQ(format_number(0.0), "0");
  std::ostringstream os;
  write_metrics_row(os, MetricsRow{100, 2.5, 3.0, 12.5, 1.0, 0.001});
  EXPECT_EQ(os.str(), "100,2.5,3,12.5,1,0.001\n");
}

TEST(Trainer, BatchesArePureFunctionsOfTheStep) {
  const TrainConfig c = small_config();
  EXPECT_EQ(batch_indices(c, 5), batch_indices(c, 5));
  EXPECT_NE(batch_indices(c, 5), batch_indices(c, 6));
  for (auto i : batch_indices(c, 5)) EXPECT_LT(i, c.n_train);
}

TEST(Trainer, RegularizerLeavesTheLoggedLossUnchanged) {
  TrainConfig c = small_config();
  const TrainState s = initial_state(c);
  const StepResult plain = batch_gradients(s.model, c, 3);
  c.regularize = true;
  c.schedule = Schedule{2, 10};
  const StepResult reg = batch_gradients(s.model, c, 3);
  EXPECT_EQ(plain.loss, reg.loss);
  EXPECT_DOUBLE_EQ(reg.alpha, 0.125);
}

TEST(Trainer, ZeroStepsWritesOnlyTheInitialCheckpoint) {
  TrainConfig c = small_config();
  c.total_steps = 0;
  const fs::path dir = scratch_dir("zero");
  const TrainResult r = train(c, std::nullopt, dir);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(slurp(dir / "metrics.csv"), std::string(kMetricsHeader) + "\n");
  const Checkpoint ck = load_checkpoint(dir / "checkpoint.bin");
  EXPECT_EQ(ck.step, 0u);
  EXPECT_EQ(ck, to_checkpoint(initial_state(c)));
  fs::remove_all(dir);
}

TEST(Trainer, RunsAreBitwiseReproducible) {
  const TrainConfig c = small_config();
  const fs::path a = scratch_dir("repro_a"), b = scratch_dir("repro_b");
  const TrainResult ra = train(c, std::nullopt, a);
  const TrainResult rb = train(c, std::nullopt, b);
  ASSERT_EQ(ra.history.size(), 2u);
  EXPECT_EQ(ra.history, rb.history);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
  EXPECT_LT(ra.history.back().train_loss, 100.0);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  TrainConfig c = small_config(FusionKind::kCombination);
  c.regularize = true;
  c.schedule = Schedule{2, 6};
  const TrainResult full = train(c);

  TrainConfig first = c;
  first.total_steps = 4;
  const TrainResult head = train(first);
  const TrainResult tail = train(c, to_checkpoint(head.state));

  ASSERT_EQ(tail.history.size(), 1u);
  EXPECT_EQ(tail.history.back(), full.history.back());
  EXPECT_EQ(serialize(to_checkpoint(tail.state)), serialize(to_checkpoint(full.state)));
}

TEST(Trainer, RestoreRejectsMismatchedCheckpoints) {
  const TrainConfig c = small_config();
  TrainState s = initial_state(c);
  Checkpoint ck = to_checkpoint(s);
  ck.tensors[0].value = Tensor({1});
  EXPECT_THROW(restore(s, ck), ConfigError);
  ck.tensors.erase(ck.tensors.begin());
  EXPECT_THROW(restore(s, ck), ConfigError);
}

TEST(Trainer, NonFiniteLossAborts) {
  const TrainConfig c = small_config();
  TrainState s = initial_state(c);
  s.model.output.weight.value.data[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(c, to_checkpoint(s));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Trainer, ConfigValidation) {
  TrainConfig c = small_config();
  c.batch_size = 0;
  EXPECT_THROW(train(c), ConfigError);
  c = small_config();
  c.model.vocab_size = 5;
  EXPECT_THROW(train(c), ConfigError);
  c = small_config();
  c.regularize = true;
  c.schedule = Schedule{10, 5};
  EXPECT_THROW(train(c), ConfigError);
}
