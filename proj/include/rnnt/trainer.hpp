#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rnnt/decode_metrics.hpp"
#include "rnnt/model.hpp"
#include "rnnt/regularizer.hpp"
#include "rnnt/synth_data.hpp"

namespace rnnt {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw ConfigError("adam: beta1 and beta2 must lie in (0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
  }
};

struct AdamMoments {
  Tensor first;
  Tensor second;
};

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
inline void adam_step(Tensor& param, const Tensor& grad, AdamMoments& moments, std::uint64_t step,
                      const AdamConfig& c) {
  if (step < 1) throw ConfigError("adam: step must be >= 1");
  if (grad.shape != param.shape || moments.first.shape != param.shape || moments.second.shape != param.shape)
    throw DimensionError("adam: gradient " + to_string(grad.shape) + " or moments do not match parameter " +
                         to_string(param.shape));
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data[i];
    double& m = moments.first.data[i];
    double& v = moments.second.data[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    param.data[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "RNTJ" | u32 version | u32 entry count |
//   per entry: u16 name length | name bytes | u8 rank | u64 extents[rank] | f64 payload
//
// All integers and doubles are little-endian.

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  bool operator==(const NamedTensor& o) const { return name == o.name && bitwise_equal(value, o.value); }
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr const char* kStepEntry = "meta.step";

  std::uint64_t step = 0;
  std::vector<NamedTensor> tensors;

  bool operator==(const Checkpoint&) const = default;

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.value;
    return nullptr;
  }
};

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  std::uint64_t le(int bytes, const char* what) {
    if (pos_ + bytes > b_.size()) throw FormatError(std::string("truncated ") + what, pos_);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += bytes;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    if (pos_ + n > b_.size()) throw FormatError(std::string("truncated ") + what, pos_);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

inline void encode_entry(std::string& out, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff) throw ConfigError("checkpoint: tensor name too long");
  if (t.rank() > 0xff) throw ConfigError("checkpoint: tensor rank too large");
  put_le(out, name.size(), 2);
  out += name;
  put_le(out, t.rank(), 1);
  for (auto e : t.shape) put_le(out, e, 8);
  for (double v : t.data) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
}

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
  std::string out = "RNTJ";
  detail::put_le(out, Checkpoint::kVersion, 4);
  detail::put_le(out, c.tensors.size() + 1, 4);
  detail::encode_entry(out, Checkpoint::kStepEntry, Tensor::scalar(static_cast<double>(c.step)));
  for (const auto& t : c.tensors) detail::encode_entry(out, t.name, t.value);
  return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.str(std::min<std::size_t>(4, bytes.size()), "magic") != "RNTJ") throw FormatError("bad magic", 0);
  const std::size_t version_at = r.pos();
  if (const auto v = r.le(4, "version"); v != Checkpoint::kVersion)
    throw FormatError("unsupported version " + std::to_string(v), version_at);
  const std::uint64_t count = r.le(4, "entry count");

  Checkpoint c;
  bool have_step = false;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::size_t name_len = r.le(2, "name length");
    std::string name = r.str(name_len, "name");
    const std::size_t rank = r.le(1, "rank");
    Shape shape(rank);
    for (auto& x : shape) {
      const std::size_t at = r.pos();
      x = r.le(8, "extent");
      if (x == 0 || x > bytes.size()) throw FormatError("invalid extent for '" + name + "'", at);
    }
    const std::size_t n = numel(shape);
    if (n > (r.size() - r.pos()) / 8) throw FormatError("truncated payload for '" + name + "'", r.pos());
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(r.le(8, "payload"));
    if (name == Checkpoint::kStepEntry) {
      c.step = static_cast<std::uint64_t>(data.at(0));
      have_step = true;
    } else {
      c.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    }
  }
  if (r.pos() != r.size()) throw FormatError("trailing bytes after final entry", r.pos());
  if (!have_step) throw FormatError("missing step entry", r.pos());
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize(c);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  ModelConfig model;
  TaskConfig task;
  AdamConfig adam;
  Schedule schedule;
  bool regularize = false;
  std::size_t batch_size = 16;
  std::uint64_t total_steps = 2000;
  std::uint64_t eval_every = 100;
  std::uint64_t n_train = 1000;
  std::uint64_t n_dev = 100;
  std::size_t max_symbols = 3;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  std::uint64_t seed = 1;

  void validate() const {
    adam.validate();
    task.validate();
    if (regularize) schedule.validate();
    model.fusion.validate();
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    if (max_symbols < 1) throw ConfigError("train: max_symbols must be >= 1");
    if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0");
    split(n_train, n_dev);
    if (model.vocab_size != task.vocab_size) throw ConfigError("train: model and task vocabularies differ");
    if (model.feature_width != task.features()) throw ConfigError("train: model and task feature widths differ");
    if (task.label_min * task.frames_min < model.stack)
      throw ConfigError("train: shortest utterance is shorter than the stacking factor");
  }

  /// Task config with the experiment seed applied.
  TaskConfig seeded_task() const {
    TaskConfig t = task;
    t.seed = seed;
    return t;
  }
};

struct MetricsRow {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_wer = 0.0;
  double alpha = 1.0;
  double lr = 0.0;
  bool operator==(const MetricsRow&) const = default;
};

inline constexpr const char* kMetricsHeader = "step,train_loss,dev_loss,dev_wer,alpha,lr";

/// 9 significant digits, independent of the global locale.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.step << ',' << format_number(r.train_loss) << ',' << format_number(r.dev_loss) << ','
     << format_number(r.dev_wer) << ',' << format_number(r.alpha) << ',' << format_number(r.lr) << '\n';
}

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainState {
  TransducerModel model;
  std::vector<AdamMoments> moments;  // parallel to model.visit order
  std::uint64_t step = 0;
};

inline TrainState initial_state(const TrainConfig& c) {
  TrainState s{TransducerModel(c.model), {}, 0};
  s.model.initialize(splitmix64(c.seed ^ 0x6d6f64656cULL));
  s.model.visit([&](const Parameter& p) { s.moments.push_back({Tensor(p.value.shape), Tensor(p.value.shape)}); });
  return s;
}

inline Checkpoint to_checkpoint(const TrainState& s) {
  Checkpoint c;
  c.step = s.step;
  s.model.visit([&](const Parameter& p) { c.tensors.push_back({p.name, p.value}); });
  std::size_t i = 0;
  s.model.visit([&](const Parameter& p) {
    c.tensors.push_back({"adam.m/" + p.name, s.moments[i].first});
    c.tensors.push_back({"adam.v/" + p.name, s.moments[i].second});
    ++i;
  });
  return c;
}

/// Restores parameters (and moments, when present) into a state built from
/// the same configuration.
inline void restore(TrainState& s, const Checkpoint& c) {
  auto take = [&](const std::string& name, Tensor& dst, bool required) {
    const Tensor* t = c.find(name);
    if (!t) {
      if (required) throw ConfigError("checkpoint is missing tensor '" + name + "'");
      return;
    }
    if (t->shape != dst.shape)
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + to_string(t->shape) + ", expected " +
                        to_string(dst.shape));
    dst = *t;
  };
  std::size_t i = 0;
  s.model.visit([&](Parameter& p) {
    take(p.name, p.value, true);
    take("adam.m/" + p.name, s.moments[i].first, false);
    take("adam.v/" + p.name, s.moments[i].second, false);
    ++i;
  });
  s.step = c.step;
}

/// Training-set indices for step m; a pure function of (seed, m).
inline std::vector<std::uint64_t> batch_indices(const TrainConfig& c, std::uint64_t m) {
  const CounterRng rng(c.seed, 0x6261746368ULL, m);
  std::vector<std::uint64_t> idx(c.batch_size);
  for (std::size_t j = 0; j < c.batch_size; ++j) idx[j] = rng.at(j) % c.n_train;
  return idx;
}

struct EvalResult {
  double loss = 0.0;
  double wer = 0.0;
  std::vector<Hypothesis> hypotheses;
};

inline EvalResult evaluate(const TransducerModel& model, const TrainConfig& c) {
  const TaskConfig task = c.seeded_task();
  const IndexRange dev = split(c.n_train, c.n_dev).dev;
  EvalResult r;
  std::vector<LabelSequence> refs, hyps;
  for (std::uint64_t i = dev.begin; i < dev.end; ++i) {
    const Utterance u = generate(task, i);
    Graph g;
    r.loss += g.value(utterance_forward(g, model, u.features, u.labels).loss).data[0];
    Hypothesis h = greedy_decode(model, u.features, c.max_symbols);
    refs.push_back(u.labels);
    hyps.push_back(h.labels);
    r.hypotheses.push_back(std::move(h));
  }
  r.loss /= static_cast<double>(dev.size());
  r.wer = wer(refs, hyps);
  return r;
}

struct StepResult {
  double loss = 0.0;
  double alpha = 1.0;
  std::vector<Tensor> grads;  // mean over the batch, model.visit order
};

/// Mean loss and gradients over the batch for step m (no update).
inline StepResult batch_gradients(const TransducerModel& model, const TrainConfig& c, std::uint64_t m) {
  const TaskConfig task = c.seeded_task();
  StepResult r;
  r.alpha = c.regularize ? alpha_at(m, c.schedule) : 1.0;
  const PredictionHook hook = [&](Graph& g, NodeId h) {
    return c.regularize ? apply_regularizer(g, h, m, c.schedule) : h;
  };
  model.visit([&](const Parameter& p) { r.grads.emplace_back(p.value.shape); });

  const auto indices = batch_indices(c, m);
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Utterance u = generate(task, indices[j]);
    Graph g;
    const NodeId loss = utterance_forward(g, model, u.features, u.labels, hook).loss;
    const double value = g.value(loss).data[0];
    if (!std::isfinite(value))
      throw TrainingError("non-finite loss at step " + std::to_string(m) + ", batch position " + std::to_string(j) +
                          " (utterance " + std::to_string(indices[j]) + ")");
    r.loss += value;
    const GradientMap grads = g.backward(loss);
    std::size_t i = 0;
    model.visit([&](const Parameter& p) {
      if (auto id = g.find_parameter(p)) {
        const Tensor& gp = grads.at(*id);
        for (std::size_t k = 0; k < gp.size(); ++k) r.grads[i].data[k] += gp.data[k];
      }
      ++i;
    });
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  r.loss *= inv;
  for (auto& t : r.grads)
    for (double& v : t.data) v *= inv;
  return r;
}

struct TrainResult {
  std::vector<MetricsRow> history;
  TrainState state;
};

/// Runs steps state.step+1 .. total_steps. When `out_dir` is set, writes
/// metrics.csv there as rows are produced and checkpoint.bin at the end.
inline TrainResult train(const TrainConfig& c, std::optional<Checkpoint> resume = std::nullopt,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  c.validate();
  TrainResult result{{}, initial_state(c)};
  TrainState& s = result.state;
  if (resume) restore(s, *resume);

  std::ofstream metrics;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    metrics.open(*out_dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + (*out_dir / "metrics.csv").string());
    metrics << kMetricsHeader << '\n';
  }

  while (s.step < c.total_steps) {
    const std::uint64_t m = s.step + 1;
    StepResult r = batch_gradients(s.model, c, m);

    if (c.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& t : r.grads)
        for (double v : t.data) sq += v * v;
      const double norm = std::sqrt(sq);
      if (norm > c.clip_norm)
        for (auto& t : r.grads)
          for (double& v : t.data) v *= c.clip_norm / norm;
    }

    std::size_t i = 0;
    s.model.visit([&](Parameter& p) {
      adam_step(p.value, r.grads[i], s.moments[i], m, c.adam);
      ++i;
    });
    s.step = m;

    if (m % c.eval_every == 0 || m == c.total_steps) {
      const EvalResult ev = evaluate(s.model, c);
      MetricsRow row{m, r.loss, ev.loss, ev.wer, r.alpha, c.adam.learning_rate};
      result.history.push_back(row);
      if (out_dir) {
        write_metrics_row(metrics, row);
        metrics.flush();
      }
    }
  }
  if (out_dir) save_checkpoint(*out_dir / "checkpoint.bin", to_checkpoint(s));
  return result;
}

}  // namespace rnnt
