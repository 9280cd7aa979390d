#pragma once

#include <cstdint>
#include <functional>
#include <type_traits>

#include "rnnt/joint_fusion.hpp"
#include "rnnt/layers.hpp"
#include "rnnt/transducer.hpp"

namespace rnnt {

struct ModelConfig {
  std::size_t vocab_size = 8;
  std::size_t feature_width = 12;
  std::size_t stack = 1;
  std::size_t encoder_layers = 2;
  std::size_t encoder_hidden = 64;
  std::size_t prediction_layers = 1;
  std::size_t prediction_hidden = 64;
  std::size_t embed_dim = 0;  // 0 -> D_pred
  FusionSpec fusion{FusionKind::kFcAdd, 32, 32, 32, 0, false};

  std::size_t embedding_width() const { return embed_dim == 0 ? fusion.d_pred : embed_dim; }
};

/// Acoustic encoder, prediction network, joint network and output layer.
struct TransducerModel {
  ModelConfig config;
  EncoderParams encoder;
  PredictionParams prediction;
  FusionParams joint;
  OutputLayerParams output;

  TransducerModel() = default;
  explicit TransducerModel(const ModelConfig& c)
      : config(c),
        encoder(EncoderParams::make(c.feature_width, c.stack, c.encoder_hidden, c.encoder_layers, c.fusion.d_enc)),
        prediction(PredictionParams::make(Vocabulary{c.vocab_size}, c.embedding_width(), c.prediction_hidden,
                                          c.prediction_layers, c.fusion.d_pred)),
        joint(FusionParams::make(c.fusion)),
        output(OutputLayerParams::make(Vocabulary{c.vocab_size}.output_width(), c.fusion.d_joint)) {
    if (c.vocab_size < 1) throw ConfigError("model: vocabulary must contain at least one subword");
  }

  Vocabulary vocab() const { return prediction.vocab; }

  void initialize(std::uint64_t seed) {
    encoder.initialize(seed);
    prediction.initialize(seed);
    joint.initialize(seed);
    output.initialize(seed);
  }

  /// Visits every parameter in a fixed order: encoder, prediction, joint, output.
  template <typename F>
  void visit(F&& f) {
    encoder.visit(f);
    prediction.visit(f);
    joint.visit(f);
    output.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<TransducerModel*>(this)->visit([&](const Parameter& p) { f(p); });
  }

  /// Parameters that belong to the prediction network (embedding included).
  bool is_prediction_parameter(const Parameter& p) const { return p.name.starts_with("prediction."); }
};

/// Transform applied to h_pred before it enters the joint network.
template <typename G>
using BasicPredictionHook = std::function<NodeId(G&, NodeId)>;
using PredictionHook = BasicPredictionHook<Graph>;

struct UtteranceNodes {
  NodeId h_enc;
  NodeId h_pred;  // after the hook
  NodeId logprobs;
  NodeId loss;
};

/// Full forward pass for one utterance up to the transducer loss.
template <AnyGraph G>
UtteranceNodes utterance_forward(G& g, const TransducerModel& model, const Tensor& features,
                                 const LabelSequence& labels, const BasicPredictionHook<std::type_identity_t<G>>& hook = {}) {
  UtteranceNodes n{};
  n.h_enc = encode(g, features, model.encoder);
  n.h_pred = predict_states(g, labels, model.prediction);
  if (hook) n.h_pred = hook(g, n.h_pred);
  n.logprobs = build_lattice(g, n.h_enc, n.h_pred, model.joint, model.output);
  LatticeLayout layout{g.value(n.h_enc).shape[0], model.output.output_width(), Vocabulary::blank(), labels};
  n.loss = rnnt_neg_log_likelihood(g, n.logprobs, layout);
  return n;
}

/// Lattice of the full pipeline as a T x (U+1) x K tensor.
inline LogProbLattice model_lattice(const TransducerModel& model, const Tensor& features, const LabelSequence& labels) {
  Graph g;
  const NodeId h_enc = encode(g, features, model.encoder);
  const NodeId h_pred = predict_states(g, labels, model.prediction);
  const NodeId lp = build_lattice(g, h_enc, h_pred, model.joint, model.output);
  const std::size_t frames = g.value(h_enc).shape[0];
  return {Tensor({frames, labels.size() + 1, model.output.output_width()}, g.value(lp).data), Vocabulary::blank(),
          labels};
}

/// The text-only distribution obtained by feeding h_enc = 0 to the joint
/// network: (U+1) x K log-probabilities, row u conditioned on y_1..y_u.
inline Tensor internal_lm_logprobs(const LabelSequence& labels, const TransducerModel& model) {
  Graph g;
  const NodeId zero_enc = g.input(Tensor({1, model.config.fusion.d_enc}));
  const NodeId h_pred = predict_states(g, labels, model.prediction);
  return g.value(build_lattice(g, zero_enc, h_pred, model.joint, model.output));
}

}  // namespace rnnt
