#pragma once

// Alignment lattice and the transducer negative log-likelihood.
//
// Lattice cell (t, u), 0 <= t < T and 0 <= u <= U, holds the log-distribution
// over K outputs after seeing frames 0..t and labels y_1..y_u. A blank moves
// to (t+1, u); label y_{u+1} moves to (t, u+1). Every complete alignment ends
// with the blank emitted from (T-1, U).

#include <cmath>
#include <cstdint>
#include <vector>

#include "rnnt/autodiff.hpp"
#include "rnnt/joint_fusion.hpp"
#include "rnnt/layers.hpp"

namespace rnnt {

/// Shape and targets of a lattice whose log-probabilities live in a graph
/// node of shape (T*(U+1)) x K, rows ordered (t, u).
struct LatticeLayout {
  std::size_t frames = 0;  // T
  std::size_t classes = 0; // K
  Label blank = Vocabulary::blank();
  LabelSequence labels;    // y_1..y_U, each in [0, K) and != blank

  std::size_t label_count() const { return labels.size(); }
  std::size_t cells() const { return frames * (labels.size() + 1); }
  std::size_t row(std::size_t t, std::size_t u) const { return t * (labels.size() + 1) + u; }

  void validate() const {
    if (frames == 0) throw ValidationError("lattice: T must be at least 1");
    if (classes < 2) throw ValidationError("lattice: K must be at least 2");
    if (blank >= classes) throw ValidationError("lattice: blank id out of range");
    for (Label y : labels)
      if (y >= classes || y == blank) throw ValidationError("lattice: target label " + std::to_string(y) + " invalid");
  }
};

/// Dense T x (U+1) x K log-probability grid with its targets.
struct LogProbLattice {
  Tensor grid;  // T x (U+1) x K
  Label blank = Vocabulary::blank();
  LabelSequence labels;

  LatticeLayout layout() const {
    if (grid.rank() != 3 || grid.shape[1] != labels.size() + 1)
      throw DimensionError("lattice: grid " + to_string(grid.shape) + " does not match U=" +
                           std::to_string(labels.size()));
    return {grid.shape[0], grid.shape[2], blank, labels};
  }
  double logp(std::size_t t, std::size_t u, std::size_t k) const {
    return grid.data[(t * grid.shape[1] + u) * grid.shape[2] + k];
  }
  /// Flattened (T*(U+1)) x K view of the grid.
  Tensor rows() const { return Tensor({grid.shape[0] * grid.shape[1], grid.shape[2]}, grid.data); }
};

/// Cell (t, u) = output_logprobs(fuse(h_enc[t], h_pred[u])); returns the
/// (T*(U+1)) x K node.
template <AnyGraph G>
NodeId build_lattice(G& g, NodeId h_enc, NodeId h_pred, const FusionParams& fusion,
                     const OutputLayerParams& out) {
  return output_logprobs(g, fuse(g, fusion, h_enc, h_pred), out);
}

inline LogProbLattice build_lattice(const Tensor& h_enc, const Tensor& h_pred, const FusionParams& fusion,
                                    const OutputLayerParams& out, const LabelSequence& labels) {
  Graph g;
  const NodeId lp = build_lattice(g, g.input(h_enc), g.input(h_pred), fusion, out);
  const std::size_t frames = h_enc.shape[0];
  const std::size_t k = out.output_width();
  return {Tensor({frames, h_pred.shape[0], k}, g.value(lp).data), Vocabulary::blank(), labels};
}

/// -log P(y | x) by the forward recursion in log space, built as graph nodes
/// so that backward() gives exact gradients with respect to `logprobs`.
///
///   alpha(0, 0) = 0
///   alpha(t, u) = lse(alpha(t-1, u) + blank(t-1, u), alpha(t, u-1) + label(t, u-1))
///   loss        = -(alpha(T-1, U) + blank(T-1, U))
template <AnyGraph G>
NodeId rnnt_neg_log_likelihood(G& g, NodeId logprobs, const LatticeLayout& layout) {
  layout.validate();
  const auto& lp = g.value(logprobs);
  if (lp.rank() != 2 || lp.shape[0] != layout.cells() || lp.shape[1] != layout.classes)
    throw DimensionError("rnnt loss: log-probabilities " + to_string(lp.shape) + " do not match lattice " +
                         std::to_string(layout.cells()) + "x" + std::to_string(layout.classes));
  const std::size_t T = layout.frames, U = layout.label_count(), K = layout.classes;

  // Gather the only two entries each cell contributes.
  const NodeId flat = g.reshape(logprobs, {layout.cells() * K, 1});
  std::vector<std::size_t> blank_idx, label_idx;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      blank_idx.push_back(layout.row(t, u) * K + layout.blank);
      if (u < U) label_idx.push_back(layout.row(t, u) * K + layout.labels[u]);
    }
  const NodeId blanks = g.index_select(flat, std::move(blank_idx));
  const std::optional<NodeId> emits =
      U > 0 ? std::optional<NodeId>(g.index_select(flat, std::move(label_idx))) : std::nullopt;
  auto blank_at = [&](std::size_t t, std::size_t u) { return g.slice(blanks, 0, layout.row(t, u), layout.row(t, u) + 1); };
  auto emit_at = [&](std::size_t t, std::size_t u) {
    const std::size_t i = t * U + u;
    return g.slice(*emits, 0, i, i + 1);
  };

  std::vector<NodeId> alpha(T * (U + 1));
  auto A = [&](std::size_t t, std::size_t u) -> NodeId& { return alpha[t * (U + 1) + u]; };
  A(0, 0) = g.input(Tensor({1, 1}));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      std::optional<NodeId> from_blank, from_label;
      if (t > 0) from_blank = g.add(A(t - 1, u), blank_at(t - 1, u));
      if (u > 0) from_label = g.add(A(t, u - 1), emit_at(t, u - 1));
      if (from_blank && from_label) A(t, u) = g.logsumexp2(*from_blank, *from_label);
      else A(t, u) = from_blank ? *from_blank : *from_label;
    }
  return g.scale(g.add(A(T - 1, U), blank_at(T - 1, U)), -1.0);
}

inline double rnnt_neg_log_likelihood(const LogProbLattice& lattice) {
  Graph g;
  return g.value(rnnt_neg_log_likelihood(g, g.input(lattice.rows()), lattice.layout())).data[0];
}

struct EnumerationResult {
  double neg_log_likelihood = 0.0;
  std::uint64_t generated = 0;  // all interleavings of T blanks and U labels
  std::uint64_t complete = 0;   // those ending with a blank (valid alignments)
};

/// Largest T + U accepted by enumerate_paths.
inline constexpr std::size_t kEnumerationLimit = 14;

/// Brute-force oracle: generates every interleaving of T blanks and U labels,
/// multiplies cell probabilities along each one that ends on the final blank,
/// sums, and returns -log of the sum. Interleavings that end with a label would
/// need a frame past T and contribute nothing.
inline EnumerationResult enumerate_paths(const LogProbLattice& lattice) {
  const LatticeLayout layout = lattice.layout();
  layout.validate();
  const std::size_t T = layout.frames, U = layout.label_count();
  if (T + U > kEnumerationLimit)
    throw SizeError("enumerate_paths: T+U=" + std::to_string(T + U) + " exceeds the limit of " +
                    std::to_string(kEnumerationLimit));

  EnumerationResult r;
  double total = 0.0;
  std::vector<bool> is_label(T + U);
  // Walk every subset of U label positions among T+U slots in lexicographic order.
  std::vector<std::size_t> pos(U);
  for (std::size_t i = 0; i < U; ++i) pos[i] = i;
  while (true) {
    std::fill(is_label.begin(), is_label.end(), false);
    for (std::size_t p : pos) is_label[p] = true;
    ++r.generated;
    if (!is_label.back()) {
      ++r.complete;
      double log_path = 0.0;
      std::size_t t = 0, u = 0;
      for (bool label : is_label) {
        if (label) {
          log_path += lattice.logp(t, u, layout.labels[u]);
          ++u;
        } else {
          log_path += lattice.logp(t, u, layout.blank);
          ++t;
        }
      }
      total += std::exp(log_path);
    }
    // next combination
    std::size_t i = U;
    while (i > 0 && pos[i - 1] == T + U - U + (i - 1)) --i;
    if (i == 0) break;
    ++pos[i - 1];
    for (std::size_t j = i; j < U; ++j) pos[j] = pos[j - 1] + 1;
  }
  r.neg_log_likelihood = -std::log(total);
  return r;
}

}  // namespace rnnt
