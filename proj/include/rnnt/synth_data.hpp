#pragma once

// Procedural transduction corpus. Each label is rendered as a run of frames
// carrying its one-hot code plus Gaussian noise; optional silence (noise-only)
// runs separate labels. Utterance i is a pure function of (seed, i).

#include <cstdint>
#include <ostream>
#include <string>

#include "rnnt/layers.hpp"
#include "rnnt/random.hpp"

namespace rnnt {

struct TaskConfig {
  std::size_t vocab_size = 8;
  std::size_t feature_width = 0;  // 0 -> vocab_size + 4
  std::size_t frames_min = 1;
  std::size_t frames_max = 1;
  double noise_std = 0.0;
  double silence_prob = 0.0;
  std::size_t label_min = 2;
  std::size_t label_max = 5;
  std::uint64_t seed = 1;

  std::size_t features() const { return feature_width == 0 ? vocab_size + 4 : feature_width; }

  void validate() const {
    if (vocab_size < 1) throw ConfigError("task: vocab_size must be >= 1");
    if (features() < vocab_size)
      throw ConfigError("task: feature_width " + std::to_string(features()) + " is smaller than vocab_size " +
                        std::to_string(vocab_size));
    if (frames_min < 1 || frames_min > frames_max) throw ConfigError("task: need 1 <= frames_min <= frames_max");
    if (label_min < 1 || label_min > label_max) throw ConfigError("task: need 1 <= label_min <= label_max");
    if (!(noise_std >= 0.0)) throw ConfigError("task: noise_std must be >= 0");
    if (!(silence_prob >= 0.0 && silence_prob <= 1.0)) throw ConfigError("task: silence_prob must lie in [0,1]");
  }
};

struct Utterance {
  Tensor features;  // T_in x F
  LabelSequence labels;
};

namespace detail {
enum : std::uint64_t { kLabelStream = 1, kFrameStream = 2, kNoiseStream = 3 };
}

inline Utterance generate(const TaskConfig& c, std::uint64_t index) {
  c.validate();
  CounterRng label_rng(c.seed, index, detail::kLabelStream);
  CounterRng frame_rng(c.seed, index, detail::kFrameStream);
  CounterRng noise_rng(c.seed, index, detail::kNoiseStream);

  Utterance u;
  const std::size_t length = label_rng.uniform_int(c.label_min, c.label_max);
  for (std::size_t i = 0; i < length; ++i) u.labels.push_back(label_rng.uniform_int(1, c.vocab_size));

  // Frame plan: label id per frame, 0 for silence.
  std::vector<Label> plan;
  for (std::size_t i = 0; i < length; ++i) {
    if (i > 0 && c.silence_prob > 0.0 && frame_rng.uniform() < c.silence_prob) {
      const std::size_t gap = frame_rng.uniform_int(c.frames_min, c.frames_max);
      plan.insert(plan.end(), gap, Label{0});
    }
    const std::size_t run = frame_rng.uniform_int(c.frames_min, c.frames_max);
    plan.insert(plan.end(), run, u.labels[i]);
  }

  const std::size_t width = c.features();
  u.features = Tensor({plan.size(), width});
  for (std::size_t t = 0; t < plan.size(); ++t) {
    if (plan[t] != 0) u.features.at(t, plan[t] - 1) = 1.0;
    if (c.noise_std > 0.0)
      for (std::size_t f = 0; f < width; ++f) u.features.at(t, f) += c.noise_std * noise_rng.normal();
  }
  return u;
}

struct IndexRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
  std::uint64_t size() const { return end - begin; }
  bool contains(std::uint64_t i) const { return i >= begin && i < end; }
};

struct CorpusSplit {
  IndexRange train;
  IndexRange dev;
};

inline CorpusSplit split(std::uint64_t n_train, std::uint64_t n_dev) {
  if (n_train < 1 || n_dev < 1) throw ConfigError("split: train and dev sizes must be >= 1");
  return {{0, n_train}, {n_train, n_train + n_dev}};
}

/// One feature row per line, then a final line with the labels.
inline void write_csv(std::ostream& os, const Utterance& u) {
  const auto old_precision = os.precision(17);
  for (std::size_t t = 0; t < u.features.rows(); ++t) {
    for (std::size_t f = 0; f < u.features.cols(); ++f) os << (f ? "," : "") << u.features.at(t, f);
    os << '\n';
  }
  for (std::size_t i = 0; i < u.labels.size(); ++i) os << (i ? "," : "") << u.labels[i];
  os << '\n';
  os.precision(old_precision);
}

}  // namespace rnnt
