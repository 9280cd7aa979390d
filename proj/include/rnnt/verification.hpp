#pragma once

// Self-checks shared by the CLI (`gradcheck`, `oracle`) and the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rnnt/autodiff.hpp"
#include "rnnt/model.hpp"
#include "rnnt/random.hpp"
#include "rnnt/transducer.hpp"

namespace rnnt {

/// A small end-to-end problem: every width is 8, T = 3 encoder frames,
/// U = 2 target labels.
struct ToyProblem {
  TransducerModel model;
  Tensor features;
  LabelSequence labels;
};

inline ModelConfig toy_model_config(FusionKind kind) {
  ModelConfig c;
  c.vocab_size = 4;
  c.feature_width = 6;
  c.stack = 1;
  c.encoder_layers = 2;
  c.encoder_hidden = 8;
  c.prediction_layers = 1;
  c.prediction_hidden = 8;
  c.embed_dim = 8;
  c.fusion = FusionSpec{kind, 8, 8, 8, requires_rank(kind) ? 8u : 0u, false};
  return c;
}

inline ToyProblem make_toy_problem(FusionKind kind, std::uint64_t seed) {
  ToyProblem p{TransducerModel(toy_model_config(kind)), Tensor({3, 6}), {}};
  p.model.initialize(seed);
  CounterRng rng(seed, 0x746f79ULL);
  for (double& v : p.features.data) v = rng.uniform(-1.0, 1.0);
  for (int u = 0; u < 2; ++u) p.labels.push_back(rng.uniform_int(1, p.model.config.vocab_size));
  return p;
}

/// Finite-difference check of every model parameter on the toy problem.
inline GradCheckReport gradcheck_toy(FusionKind kind, std::uint64_t seed, double step = 1e-5) {
  ToyProblem p = make_toy_problem(kind, seed);
  std::vector<Parameter*> params;
  p.model.visit([&](Parameter& q) { params.push_back(&q); });
  return finite_difference_check(
      [&](auto& g) { return utterance_forward(g, p.model, p.features, p.labels).loss; }, params, step);
}

/// Lattice with T x (U+1) independent random log-distributions over K classes;
/// blank is class 0 and the targets are drawn from 1..K-1.
inline LogProbLattice random_lattice(CounterRng& rng, std::size_t frames, std::size_t labels, std::size_t classes) {
  LogProbLattice l;
  l.grid = Tensor({frames, labels + 1, classes});
  l.blank = 0;
  for (std::size_t u = 0; u < labels; ++u) l.labels.push_back(rng.uniform_int(1, classes - 1));
  for (std::size_t cell = 0; cell < frames * (labels + 1); ++cell) {
    double* row = &l.grid.data[cell * classes];
    for (std::size_t k = 0; k < classes; ++k) row[k] = rng.uniform(-3.0, 3.0);
    const double mx = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t k = 0; k < classes; ++k) s += std::exp(row[k] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < classes; ++k) row[k] -= lse;
  }
  return l;
}

struct OracleReport {
  double max_abs_deviation = 0.0;
  std::size_t trials = 0;
};

/// Dynamic programming versus path enumeration on random lattices with
/// T <= 4, U <= 3, K <= 5.
inline OracleReport oracle_agreement(std::size_t trials, std::uint64_t seed) {
  OracleReport r;
  for (std::size_t i = 0; i < trials; ++i) {
    CounterRng rng(seed, 0x6f7261636c65ULL, i);
    const std::size_t frames = rng.uniform_int(1, 4);
    const std::size_t labels = rng.uniform_int(0, 3);
    const std::size_t classes = rng.uniform_int(2, 5);
    const LogProbLattice l = random_lattice(rng, frames, labels, classes);
    const double dp = rnnt_neg_log_likelihood(l);
    const double brute = enumerate_paths(l).neg_log_likelihood;
    r.max_abs_deviation = std::max(r.max_abs_deviation, std::abs(dp - brute));
    ++r.trials;
  }
  return r;
}

}  // namespace rnnt
