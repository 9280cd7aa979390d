#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rnnt/layers.hpp"

using namespace rnnt;

namespace {

void randomize(Parameter& p, CounterRng& rng, double scale = 0.5) {
  for (double& v : p.value.data) v = rng.uniform(-scale, scale);
}

template <typename Params>
void randomize_all(Params& params, std::uint64_t seed) {
  CounterRng rng(seed, 0x6c6179ULL);
  params.visit([&](Parameter& p) { randomize(p, rng); });
}

// Single-layer LSTM over a sequence, written from the gate equations.
std::vector<oracle::Vec> lstm_oracle(const LstmLayer& layer, const std::vector<oracle::Vec>& xs) {
  const std::size_t h = layer.w_recurrent.value.shape[1];
  const auto wi = oracle::from_tensor(layer.w_input.value);
  const auto wr = oracle::from_tensor(layer.w_recurrent.value);
  const auto& b = layer.bias.value.data;
  oracle::Vec hid(h, 0.0), cell(h, 0.0);
  std::vector<oracle::Vec> out;
  for (const auto& x : xs) {
    const oracle::Vec a = oracle::matvec(wi, x), r = oracle::matvec(wr, hid);
    auto pre = [&](std::size_t gate, std::size_t k) { return a[gate * h + k] + r[gate * h + k] + b[gate * h + k]; };
    for (std::size_t k = 0; k < h; ++k) {
      const double i = oracle::sigmoid(pre(0, k)), f = oracle::sigmoid(pre(1, k));
      const double g = std::tanh(pre(2, k)), o = oracle::sigmoid(pre(3, k));
      cell[k] = f * cell[k] + i * g;
      hid[k] = o * std::tanh(cell[k]);
    }
    out.push_back(hid);
  }
  return out;
}

}  // namespace

TEST(Layers, VocabularyIds) {
  const Vocabulary v{8};
  EXPECT_EQ(v.blank(), 0u);
  EXPECT_EQ(v.start(), 9u);
  EXPECT_EQ(v.output_width(), 9u);
  EXPECT_EQ(v.embedding_rows(), 10u);
  EXPECT_FALSE(v.is_subword(0));
  EXPECT_TRUE(v.is_subword(1));
  EXPECT_TRUE(v.is_subword(8));
  EXPECT_FALSE(v.is_subword(9));
}

TEST(Layers, LstmSequenceMatchesGateEquations) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    LstmParams p = LstmParams::make("t", 3, 4, 1);
    randomize_all(p, seed);
    CounterRng rng(seed, 1);
    std::vector<oracle::Vec> xs;
    for (int t = 0; t < 5; ++t) xs.push_back(oracle::random_vec(rng, 3));
    const auto expect = lstm_oracle(p.layers[0], xs);

    Graph g;
    const Tensor& out = g.value(lstm_sequence(g, p, g.input(oracle::to_tensor(xs))));
    for (std::size_t t = 0; t < xs.size(); ++t)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out.at(t, k), expect[t][k], 1e-14);
  }
}

TEST(Layers, LstmStepAgreesWithSequence) {
  LstmParams p = LstmParams::make("t", 3, 5, 2);
  randomize_all(p, 3);
  CounterRng rng(3, 2);
  Tensor xs({4, 3});
  for (double& v : xs.data) v = rng.uniform(-1, 1);

  Graph g;
  const Tensor seq = g.value(lstm_sequence(g, p, g.input(xs)));
  std::vector<LstmState> states;
  for (std::size_t l = 0; l < 2; ++l) states.push_back(lstm_zero_state(g, 5));
  for (std::size_t t = 0; t < 4; ++t) {
    NodeId x = g.input(Tensor({1, 3}, std::vector<double>(xs.data.begin() + t * 3, xs.data.begin() + t * 3 + 3)));
    for (std::size_t l = 0; l < 2; ++l) {
      states[l] = lstm_step(g, p.layers[l], states[l], x);
      x = states[l].hidden;
    }
    for (std::size_t k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(g.value(x).data[k], seq.at(t, k));
  }
}

TEST(Layers, LstmStepRejectsWrongWidths) {
  LstmParams p = LstmParams::make("t", 3, 4, 1);
  Graph g;
  const LstmState s = lstm_zero_state(g, 4);
  EXPECT_THROW(lstm_step(g, p.layers[0], s, g.input(Tensor({1, 2}))), DimensionError);
  EXPECT_THROW(lstm_step(g, p.layers[0], lstm_zero_state(g, 3), g.input(Tensor({1, 3}))), DimensionError);
}

TEST(Layers, LstmInitialization) {
  LstmParams p = LstmParams::make("t", 6, 4, 1);
  p.initialize(11);
  const auto& b = p.layers[0].bias.value.data;
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(b[j], (j >= 4 && j < 8) ? 1.0 : 0.0) << j;
  const double limit = std::sqrt(6.0 / (6.0 + 16.0));
  for (double v : p.layers[0].w_input.value.data) EXPECT_LE(std::abs(v), limit);
  LstmParams q = LstmParams::make("t", 6, 4, 1);
  q.initialize(11);
  EXPECT_TRUE(bitwise_equal(p.layers[0].w_input.value, q.layers[0].w_input.value));
}

TEST(Layers, EncoderIsCausal) {
  EncoderParams p = EncoderParams::make(5, 2, 6, 2, 4);
  p.initialize(2);
  CounterRng rng(2, 3);
  Tensor x({10, 5});
  for (double& v : x.data) v = rng.uniform(-1, 1);
  Graph g1;
  const Tensor base = g1.value(encode(g1, x, p));
  ASSERT_EQ(base.shape, (Shape{5, 4}));
  // Perturbing input frame 6 may change encoder rows 3.. but not rows 0..2.
  Tensor y = x;
  for (std::size_t f = 0; f < 5; ++f) y.at(6, f) += 0.7;
  Graph g2;
  const Tensor moved = g2.value(encode(g2, y, p));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(moved.at(t, k), base.at(t, k));
  double diff = 0.0;
  for (std::size_t k = 0; k < 4; ++k) diff += std::abs(moved.at(3, k) - base.at(3, k));
  EXPECT_GT(diff, 0.0);
}

TEST(Layers, EncoderStackingDropsTrailingFrames) {
  EncoderParams p = EncoderParams::make(3, 3, 4, 1, 2);
  p.initialize(1);
  EXPECT_EQ(encoded_length(8, 3), 2u);
  Tensor x({8, 3}, 0.25);
  Graph g;
  EXPECT_EQ(g.value(encode(g, x, p)).shape, (Shape{2, 2}));
}

TEST(Layers, EncoderValidatesInput) {
  EncoderParams p = EncoderParams::make(3, 2, 4, 1, 2);
  Graph g;
  EXPECT_THROW(encode(g, Tensor({4, 2}), p), ValidationError);
  EXPECT_THROW(encode(g, Tensor({1, 3}), p), ValidationError);
  EXPECT_THROW(EncoderParams::make(3, 0, 4, 1, 2), ConfigError);
}

TEST(Layers, PredictionStatesArePrefixConsistent) {
  PredictionParams p = PredictionParams::make(Vocabulary{6}, 5, 7, 2, 4);
  p.initialize(9);
  const LabelSequence full{3, 1, 6, 2};
  Graph g;
  const Tensor all = g.value(predict_states(g, full, p));
  ASSERT_EQ(all.shape, (Shape{5, 4}));
  for (std::size_t n = 0; n <= full.size(); ++n) {
    Graph gp;
    const LabelSequence prefix(full.begin(), full.begin() + n);
    const Tensor part = gp.value(predict_states(gp, prefix, p));
    for (std::size_t u = 0; u <= n; ++u)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(part.at(u, k), all.at(u, k));
  }
}

TEST(Layers, PredictionStreamMatchesBatchStates) {
  PredictionParams p = PredictionParams::make(Vocabulary{6}, 5, 7, 2, 4);
  p.initialize(4);
  const LabelSequence labels{2, 2, 5};
  Graph g;
  const Tensor batch = g.value(predict_states(g, labels, p));
  PredictionStream s(g, p);
  for (std::size_t u = 0; u <= labels.size(); ++u) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(g.value(s.output()).data[k], batch.at(u, k), 1e-15);
    if (u < labels.size()) s.advance(labels[u]);
  }
  EXPECT_THROW(s.advance(0), ValidationError);
}

TEST(Layers, PredictionRejectsOutOfRangeLabels) {
  PredictionParams p = PredictionParams::make(Vocabulary{4}, 3, 3, 1, 3);
  Graph g;
  EXPECT_THROW(predict_states(g, {1, 0}, p), ValidationError);
  EXPECT_THROW(predict_states(g, {5}, p), ValidationError);
  EXPECT_NO_THROW(predict_states(g, {}, p));
}

TEST(Layers, ZeroParametersGiveZeroStates) {
  EncoderParams enc = EncoderParams::make(4, 2, 5, 2, 3);
  Tensor x({10, 4}, 0.75);
  Graph g;
  const Tensor h = g.value(encode(g, x, enc));
  EXPECT_EQ(h.shape, (Shape{5, 3}));
  for (double v : h.data) EXPECT_EQ(v, 0.0);

  EncoderParams unstacked = EncoderParams::make(4, 1, 5, 1, 3);
  EXPECT_EQ(g.value(encode(g, x, unstacked)).shape, (Shape{10, 3}));

  LstmParams p = LstmParams::make("t", 3, 4, 1);
  const LstmState s = lstm_step(g, p.layers[0], lstm_zero_state(g, 4), g.input(Tensor({1, 3}, 2.0)));
  for (double v : g.value(s.hidden).data) EXPECT_EQ(v, 0.0);
  for (double v : g.value(s.cell).data) EXPECT_EQ(v, 0.0);
}

TEST(Layers, SaturatedForgetGateKeepsTheCell) {
  LstmParams p = LstmParams::make("t", 2, 3, 1);
  for (std::size_t k = 0; k < 3; ++k) p.layers[0].bias.value.data[3 + k] = 20.0;
  Graph g;
  LstmState s{g.input(Tensor({1, 3})), g.input(Tensor::matrix(1, 3, {0.5, -0.25, 0.125}))};
  for (int t = 0; t < 5; ++t) s = lstm_step(g, p.layers[0], s, g.input(Tensor({1, 2}, 1.0)));
  const Tensor& c = g.value(s.cell);
  const double expect[] = {0.5, -0.25, 0.125};
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(c.data[k], expect[k], 1e-8);
}

TEST(Layers, ScalarCellByHand) {
  LstmParams p = LstmParams::make("t", 1, 1, 1);
  p.layers[0].w_input.value = Tensor::matrix(4, 1, {0.5, -0.25, 0.75, 1.0});
  p.layers[0].w_recurrent.value = Tensor::matrix(4, 1, {0.1, 0.2, -0.3, 0.4});
  p.layers[0].bias.value = Tensor({4}, std::vector<double>{0.0, 1.0, 0.1, -0.2});
  const double x = 0.8, h0 = -0.5, c0 = 0.3;
  const double i = oracle::sigmoid(0.5 * x + 0.1 * h0), f = oracle::sigmoid(-0.25 * x + 0.2 * h0 + 1.0);
  const double cand = std::tanh(0.75 * x - 0.3 * h0 + 0.1), o = oracle::sigmoid(1.0 * x + 0.4 * h0 - 0.2);
  const double c1 = f * c0 + i * cand, h1 = o * std::tanh(c1);

  Graph g;
  const LstmState s = lstm_step(g, p.layers[0], LstmState{g.input(Tensor::matrix(1, 1, {h0})), g.input(Tensor::matrix(1, 1, {c0}))},
                                g.input(Tensor::matrix(1, 1, {x})));
  EXPECT_NEAR(g.value(s.cell).data[0], c1, 1e-12);
  EXPECT_NEAR(g.value(s.hidden).data[0], h1, 1e-12);
}

TEST(Layers, PredictionEdgeCases) {
  PredictionParams p = PredictionParams::make(Vocabulary{5}, 4, 6, 1, 3);
  p.initialize(2);
  Graph g;
  EXPECT_EQ(g.value(predict_states(g, {}, p)).shape, (Shape{1, 3}));

  // With zero LSTM weights every row is the same constant state.
  p.lstm.visit([](Parameter& q) { std::fill(q.value.data.begin(), q.value.data.end(), 0.0); });
  Graph fresh;
  const Tensor rows = fresh.value(predict_states(fresh, {1, 4, 2}, p));
  for (std::size_t u = 1; u < 4; ++u)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(rows.at(u, k), rows.at(0, k));
}

TEST(Layers, PrefixConsistencyOnRandomSequences) {
  PredictionParams p = PredictionParams::make(Vocabulary{7}, 5, 6, 2, 4);
  p.initialize(13);
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    CounterRng rng(trial, 0x707265ULL);
    LabelSequence full(rng.uniform_int(0, 6));
    for (auto& y : full) y = rng.uniform_int(1, 7);
    const std::size_t n = rng.uniform_int(0, full.size());
    Graph g;
    const Tensor all = g.value(predict_states(g, full, p));
    const Tensor part = g.value(predict_states(g, LabelSequence(full.begin(), full.begin() + n), p));
    for (std::size_t u = 0; u <= n; ++u)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(part.at(u, k), all.at(u, k));
  }
}

TEST(Layers, FiniteDifferenceGradients) {
  EncoderParams enc = EncoderParams::make(3, 2, 4, 2, 3);
  PredictionParams pred = PredictionParams::make(Vocabulary{4}, 3, 4, 1, 3);
  enc.initialize(5);
  pred.initialize(6);
  CounterRng rng(5, 7);
  Tensor x({7, 3});
  for (double& v : x.data) v = rng.uniform(-1, 1);
  const Tensor probe_e = oracle::to_tensor(oracle::random_mat(rng, 3, 3)), probe_p = oracle::to_tensor(oracle::random_mat(rng, 4, 3));
  std::vector<Parameter*> params;
  enc.visit([&](Parameter& q) { params.push_back(&q); });
  pred.visit([&](Parameter& q) { params.push_back(&q); });
  const GradCheckReport rep = finite_difference_check(
      [&](auto& g) {
        const NodeId a = g.sum(g.hadamard(encode(g, x, enc), g.input(probe_e)));
        const NodeId b = g.sum(g.hadamard(predict_states(g, {2, 4, 1}, pred), g.input(probe_p)));
        return g.add(a, b);
      },
      params, 1e-5);
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst_parameter << "[" << rep.worst_index << "]";
  EXPECT_GT(rep.checked, 100u);
}
