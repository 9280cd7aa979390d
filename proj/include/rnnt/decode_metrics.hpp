#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "rnnt/model.hpp"

namespace rnnt {

struct Hypothesis {
  LabelSequence labels;
  double log_prob = 0.0;  // sum of the chosen outputs' log-probabilities
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Greedy transducer search over `frames` encoder steps. `scorer` provides
///   std::vector<double> logprobs(std::size_t t)  // distribution at (t, current history)
///   void advance(Label y)                        // extend the history with y
/// At each frame, non-blank argmax symbols are emitted (at most
/// `max_symbols_per_frame` of them) until blank wins or the cap is hit.
template <typename Scorer>
Hypothesis greedy_search(Scorer& scorer, std::size_t frames, std::size_t max_symbols_per_frame) {
  if (max_symbols_per_frame == 0) throw ConfigError("greedy decode: max_symbols_per_frame must be >= 1");
  Hypothesis hyp;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t emitted = 0; emitted < max_symbols_per_frame; ++emitted) {
      const std::vector<double> lp = scorer.logprobs(t);
      const std::size_t k = argmax(lp);
      hyp.log_prob += lp[k];
      if (k == Vocabulary::blank()) break;
      hyp.labels.push_back(k);
      scorer.advance(k);
    }
  }
  return hyp;
}

namespace detail {

class ModelScorer {
 public:
  ModelScorer(const TransducerModel& model, const Tensor& features)
      : model_(model), h_enc_(encode(g_, features, model.encoder)), stream_(g_, model.prediction) {}

  std::size_t frames() const { return g_.value(h_enc_).shape[0]; }

  std::vector<double> logprobs(std::size_t t) {
    const NodeId row = g_.slice(h_enc_, 0, t, t + 1);
    const NodeId lp = build_lattice(g_, row, stream_.output(), model_.joint, model_.output);
    return g_.value(lp).data;
  }
  void advance(Label y) { stream_.advance(y); }

 private:
  const TransducerModel& model_;
  Graph g_;
  NodeId h_enc_;
  PredictionStream stream_;
};

}  // namespace detail

inline Hypothesis greedy_decode(const TransducerModel& model, const Tensor& features,
                                std::size_t max_symbols_per_frame = 3) {
  detail::ModelScorer scorer(model, features);
  return greedy_search(scorer, scorer.frames(), max_symbols_per_frame);
}

/// Levenshtein distance with unit insert/delete/substitute costs.
template <typename Seq>
std::size_t edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = std::size(ref), m = std::size(hyp);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// 100 * total edit distance / total reference length.
template <typename Seq>
double wer(std::span<const Seq> refs, std::span<const Seq> hyps) {
  if (refs.size() != hyps.size())
    throw ValidationError("wer: " + std::to_string(refs.size()) + " references but " + std::to_string(hyps.size()) +
                          " hypotheses");
  std::size_t errors = 0, words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    errors += edit_distance(refs[i], hyps[i]);
    words += std::size(refs[i]);
  }
  if (words == 0) throw ValidationError("wer: total reference length is zero");
  return 100.0 * static_cast<double>(errors) / static_cast<double>(words);
}

template <typename Seq>
double wer(const std::vector<Seq>& refs, const std::vector<Seq>& hyps) {
  return wer(std::span<const Seq>(refs), std::span<const Seq>(hyps));
}

}  // namespace rnnt
