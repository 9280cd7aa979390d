#pragma once

// Acoustic encoder and prediction network.
//
// Label ids: 0 is blank, 1..V are subwords, V+1 is the start symbol y0. The
// output layer covers ids 0..V; only the embedding table has a row for y0.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rnnt/autodiff.hpp"
#include "rnnt/random.hpp"

namespace rnnt {

using Label = std::size_t;
using LabelSequence = std::vector<Label>;

struct Vocabulary {
  std::size_t size = 0;  // |V|, excluding blank and start symbol

  static constexpr Label blank() { return 0; }
  Label start() const { return size + 1; }
  /// Width of the output distribution: subwords plus blank.
  std::size_t output_width() const { return size + 1; }
  std::size_t embedding_rows() const { return size + 2; }
  bool is_subword(Label y) const { return y >= 1 && y <= size; }
};

// ---------------------------------------------------------------------------
// LSTM

/// Gate rows are stacked as [input, forget, candidate, output], each `hidden`
/// wide.
struct LstmLayer {
  Parameter w_input;      // 4H x In
  Parameter w_recurrent;  // 4H x H
  Parameter bias;         // 4H
};

struct LstmParams {
  std::size_t input_width = 0;
  std::size_t hidden = 0;
  std::vector<LstmLayer> layers;
  bool has_projection = false;
  Parameter projection;  // D_out x H, present iff has_projection

  std::size_t output_width() const {
    return has_projection ? projection.value.shape[0] : hidden;
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& l : layers) {
      f(l.w_input);
      f(l.w_recurrent);
      f(l.bias);
    }
    if (has_projection) f(projection);
  }

  static LstmParams make(const std::string& prefix, std::size_t input_width, std::size_t hidden,
                         std::size_t num_layers, std::size_t projection_width = 0) {
    LstmParams p;
    p.input_width = input_width;
    p.hidden = hidden;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::size_t in = l == 0 ? input_width : hidden;
      const std::string base = prefix + ".l" + std::to_string(l);
      p.layers.push_back(LstmLayer{{base + ".w_input", Tensor({4 * hidden, in})},
                                   {base + ".w_recurrent", Tensor({4 * hidden, hidden})},
                                   {base + ".bias", Tensor({4 * hidden})}});
    }
    if (projection_width > 0) {
      p.has_projection = true;
      p.projection = {prefix + ".projection", Tensor({projection_width, hidden})};
    }
    return p;
  }

  /// Glorot-uniform weights; zero biases except forget gate = 1.
  void initialize(std::uint64_t seed) {
    for (auto& l : layers) {
      glorot_uniform(l.w_input.value, l.w_input.value.shape[1], 4 * hidden,
                     CounterRng(seed, hash_name(l.w_input.name)));
      glorot_uniform(l.w_recurrent.value, hidden, 4 * hidden,
                     CounterRng(seed, hash_name(l.w_recurrent.name)));
      for (std::size_t j = 0; j < 4 * hidden; ++j)
        l.bias.value.data[j] = (j >= hidden && j < 2 * hidden) ? 1.0 : 0.0;
    }
    if (has_projection)
      glorot_uniform(projection.value, hidden, projection.value.shape[0],
                     CounterRng(seed, hash_name(projection.name)));
  }
};

struct LstmState {
  NodeId hidden;
  NodeId cell;
};

template <AnyGraph G>

LstmState lstm_zero_state(G& g, std::size_t hidden) {
  return {g.input(Tensor({1, hidden})), g.input(Tensor({1, hidden}))};
}

namespace detail {

// Gate nonlinearities and state update from the 1 x 4H pre-activation row.
template <AnyGraph G>
LstmState lstm_cell(G& g, NodeId pre, NodeId cell, std::size_t hidden) {
  const NodeId i = g.sigmoid(g.slice(pre, 1, 0, hidden));
  const NodeId f = g.sigmoid(g.slice(pre, 1, hidden, 2 * hidden));
  const NodeId cand = g.tanh(g.slice(pre, 1, 2 * hidden, 3 * hidden));
  const NodeId o = g.sigmoid(g.slice(pre, 1, 3 * hidden, 4 * hidden));
  const NodeId c = g.add(g.hadamard(f, cell), g.hadamard(i, cand));
  return {g.hadamard(o, g.tanh(c)), c};
}

template <AnyGraph G>

NodeId lstm_preactivation(G& g, const LstmLayer& layer, NodeId input_proj, NodeId hidden) {
  return g.add(g.add(input_proj, g.matmul(hidden, g.parameter(layer.w_recurrent), false, true)),
               g.parameter(layer.bias));
}

}  // namespace detail

/// One step of a single LSTM layer. `input` is 1 x In; returns the new state,
/// whose `hidden` member is the layer output.
template <AnyGraph G>
LstmState lstm_step(G& g, const LstmLayer& layer, LstmState state, NodeId input) {
  const std::size_t hidden = layer.w_recurrent.value.shape[1];
  const auto& x = g.value(input);
  const auto& h = g.value(state.hidden);
  const auto& c = g.value(state.cell);
  if (x.rank() != 2 || x.shape[0] != 1 || x.shape[1] != layer.w_input.value.shape[1])
    throw DimensionError("lstm_step: input " + to_string(x.shape) + " does not match layer width " +
                         std::to_string(layer.w_input.value.shape[1]));
  if (h.shape != Shape{1, hidden} || c.shape != Shape{1, hidden})
    throw DimensionError("lstm_step: state " + to_string(h.shape) + "/" + to_string(c.shape) +
                         " does not match hidden width " + std::to_string(hidden));
  const NodeId proj = g.matmul(input, g.parameter(layer.w_input), false, true);
  return detail::lstm_cell(g, detail::lstm_preactivation(g, layer, proj, state.hidden), state.cell, hidden);
}

/// Runs the full stack over the rows of `inputs` (N x In) from a zero state
/// and returns N x output_width.
template <AnyGraph G>
NodeId lstm_sequence(G& g, const LstmParams& p, NodeId inputs) {
  const auto& x = g.value(inputs);
  if (x.rank() != 2 || x.shape[1] != p.input_width)
    throw DimensionError("lstm: input " + to_string(x.shape) + " does not match width " +
                         std::to_string(p.input_width));
  const std::size_t steps = x.shape[0];
  NodeId layer_in = inputs;
  for (const LstmLayer& layer : p.layers) {
    // Input projections for all steps at once; rows are independent.
    const NodeId proj = g.matmul(layer_in, g.parameter(layer.w_input), false, true);
    LstmState s = lstm_zero_state(g, p.hidden);
    std::vector<NodeId> outs;
    outs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const NodeId pre = detail::lstm_preactivation(g, layer, g.slice(proj, 0, t, t + 1), s.hidden);
      s = detail::lstm_cell(g, pre, s.cell, p.hidden);
      outs.push_back(s.hidden);
    }
    layer_in = g.concat(outs, 0);
  }
  if (p.has_projection) layer_in = g.matmul(layer_in, g.parameter(p.projection), false, true);
  return layer_in;
}

// ---------------------------------------------------------------------------
// Acoustic encoder

struct EncoderParams {
  std::size_t feature_width = 0;
  std::size_t stack = 1;  // frame-stacking (time reduction) factor
  LstmParams lstm;
  Parameter output;  // D_enc x H

  std::size_t output_width() const { return output.value.shape[0]; }

  template <typename F>
  void visit(F&& f) {
    lstm.visit(f);
    f(output);
  }

  static EncoderParams make(std::size_t feature_width, std::size_t stack, std::size_t hidden,
                            std::size_t num_layers, std::size_t d_enc) {
    if (stack < 1) throw ConfigError("encoder: stacking factor must be >= 1");
    EncoderParams p;
    p.feature_width = feature_width;
    p.stack = stack;
    p.lstm = LstmParams::make("encoder.lstm", feature_width * stack, hidden, num_layers);
    p.output = {"encoder.output", Tensor({d_enc, hidden})};
    return p;
  }

  void initialize(std::uint64_t seed) {
    lstm.initialize(seed);
    glorot_uniform(output.value, lstm.hidden, output_width(), CounterRng(seed, hash_name(output.name)));
  }
};

/// Number of encoder frames produced from `input_frames` input frames.
inline std::size_t encoded_length(std::size_t input_frames, std::size_t stack) {
  return input_frames / stack;
}

/// features (T_in x F) -> h_enc (T x D_enc) with T = floor(T_in / stack).
/// Encoder row t sees only stacked frames up to and including (t+1)*stack - 1.
template <AnyGraph G>
NodeId encode(G& g, const Tensor& features, const EncoderParams& p) {
  if (features.rank() != 2 || features.size() == 0 || features.shape[0] == 0)
    throw ValidationError("encode: empty feature matrix");
  if (features.shape[1] != p.feature_width)
    throw ValidationError("encode: feature width " + std::to_string(features.shape[1]) +
                          " does not match configured width " + std::to_string(p.feature_width));
  if (features.shape[0] < p.stack)
    throw ValidationError("encode: " + std::to_string(features.shape[0]) +
                          " frames is fewer than the stacking factor " + std::to_string(p.stack));
  const std::size_t frames = encoded_length(features.shape[0], p.stack);
  NodeId x = g.input(features);
  if (frames * p.stack != features.shape[0]) x = g.slice(x, 0, 0, frames * p.stack);
  x = g.reshape(x, {frames, p.stack * p.feature_width});
  const NodeId h = lstm_sequence(g, p.lstm, x);
  return g.matmul(h, g.parameter(p.output), false, true);
}

// ---------------------------------------------------------------------------
// Prediction network

struct PredictionParams {
  Vocabulary vocab;
  Parameter embedding;  // (|V|+2) x E
  LstmParams lstm;      // projects to D_pred

  std::size_t output_width() const { return lstm.output_width(); }

  template <typename F>
  void visit(F&& f) {
    f(embedding);
    lstm.visit(f);
  }

  static PredictionParams make(Vocabulary vocab, std::size_t embed_dim, std::size_t hidden,
                               std::size_t num_layers, std::size_t d_pred) {
    PredictionParams p;
    p.vocab = vocab;
    p.embedding = {"prediction.embedding", Tensor({vocab.embedding_rows(), embed_dim})};
    p.lstm = LstmParams::make("prediction.lstm", embed_dim, hidden, num_layers, d_pred);
    return p;
  }

  void initialize(std::uint64_t seed) {
    const auto& s = embedding.value.shape;
    glorot_uniform(embedding.value, s[0], s[1], CounterRng(seed, hash_name(embedding.name)));
    lstm.initialize(seed);
  }
};

inline void validate_labels(const LabelSequence& labels, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!vocab.is_subword(labels[i]))
      throw ValidationError("label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                            " is outside the vocabulary [1," + std::to_string(vocab.size) + "]");
}

/// h_pred ((U+1) x D_pred): row 0 has consumed only y0; row u has consumed
/// y0, y1, ..., y_u. Rows are a prefix-stable function of `labels`.
template <AnyGraph G>
NodeId predict_states(G& g, const LabelSequence& labels, const PredictionParams& p) {
  validate_labels(labels, p.vocab);
  std::vector<std::size_t> ids;
  ids.reserve(labels.size() + 1);
  ids.push_back(p.vocab.start());
  ids.insert(ids.end(), labels.begin(), labels.end());
  const NodeId emb = g.index_select(g.parameter(p.embedding), std::move(ids));
  return lstm_sequence(g, p.lstm, emb);
}

/// Incremental prediction network for decoding: feeds one label at a time.
class PredictionStream {
 public:
  PredictionStream(Graph& g, const PredictionParams& p) : g_(g), p_(p) {
    for (std::size_t l = 0; l < p.lstm.layers.size(); ++l) states_.push_back(lstm_zero_state(g, p.lstm.hidden));
    output_ = feed(p.vocab.start());
  }

  /// Current 1 x D_pred representation.
  NodeId output() const { return output_; }

  void advance(Label y) {
    if (!p_.vocab.is_subword(y)) throw ValidationError("prediction stream: label out of range");
    output_ = feed(y);
  }

 private:
  NodeId feed(Label y) {
    NodeId x = g_.index_select(g_.parameter(p_.embedding), {y});
    for (std::size_t l = 0; l < p_.lstm.layers.size(); ++l) {
      states_[l] = lstm_step(g_, p_.lstm.layers[l], states_[l], x);
      x = states_[l].hidden;
    }
    if (p_.lstm.has_projection) x = g_.matmul(x, g_.parameter(p_.lstm.projection), false, true);
    return x;
  }

  Graph& g_;
  const PredictionParams& p_;
  std::vector<LstmState> states_;
  NodeId output_ = 0;
};

}  // namespace rnnt
