#pragma once

// Joint-network fusion structures and the output layer.
//
// Every fusion works on a grid: h_enc holds T rows, h_pred holds P rows, and
// the result holds T*P rows ordered (t, u) row-major. Maps that touch only one
// modality run on the un-expanded rows; index-select then broadcasts them onto
// the grid.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rnnt/autodiff.hpp"
#include "rnnt/random.hpp"

namespace rnnt {

enum class FusionKind { kFcAdd, kFcMul, kGating, kBilinearFull, kBilinearLowRank, kCombination };

inline constexpr FusionKind kAllFusionKinds[] = {FusionKind::kFcAdd,           FusionKind::kFcMul,
                                                 FusionKind::kGating,          FusionKind::kBilinearFull,
                                                 FusionKind::kBilinearLowRank, FusionKind::kCombination};

inline std::string_view to_string(FusionKind k) {
  switch (k) {
    case FusionKind::kFcAdd: return "fc-add";
    case FusionKind::kFcMul: return "fc-mul";
    case FusionKind::kGating: return "gating";
    case FusionKind::kBilinearFull: return "bilinear-full";
    case FusionKind::kBilinearLowRank: return "bilinear-lowrank";
    case FusionKind::kCombination: return "combination";
  }
  return "?";
}

inline FusionKind parse_fusion_kind(std::string_view s) {
  for (FusionKind k : kAllFusionKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown fusion kind '" + std::string(s) +
                    "' (expected fc-add, fc-mul, gating, bilinear-full, bilinear-lowrank or combination)");
}

inline constexpr bool requires_rank(FusionKind k) {
  return k == FusionKind::kBilinearLowRank || k == FusionKind::kCombination;
}
inline constexpr bool has_gate(FusionKind k) {
  return k == FusionKind::kGating || k == FusionKind::kCombination;
}

struct FusionSpec {
  FusionKind kind = FusionKind::kFcAdd;
  std::size_t d_enc = 0;
  std::size_t d_pred = 0;
  std::size_t d_joint = 0;
  std::size_t d_rank = 0;  // only for bilinear-lowrank and combination
  bool bias = false;
  // Upper bound on D_enc * D_pred * D_joint for bilinear-full.
  std::uint64_t bilinear_cap = std::uint64_t{1} << 22;

  void validate() const {
    if (d_enc == 0 || d_pred == 0 || d_joint == 0)
      throw ConfigError("fusion: D_enc, D_pred and D_joint must be positive");
    if (requires_rank(kind) && d_rank == 0)
      throw ConfigError("fusion: " + std::string(to_string(kind)) + " requires a positive D_rank");
    if (!requires_rank(kind) && d_rank != 0)
      throw ConfigError("fusion: D_rank is only meaningful for bilinear-lowrank and combination");
    if (kind == FusionKind::kBilinearFull &&
        static_cast<std::uint64_t>(d_enc) * d_pred * d_joint > bilinear_cap)
      throw ConfigError("fusion: bilinear-full tensor " + std::to_string(d_enc) + "x" + std::to_string(d_pred) +
                        "x" + std::to_string(d_joint) + " exceeds the cap of " + std::to_string(bilinear_cap) +
                        " weights");
  }
};

/// Exact number of scalar joint-network parameters for `spec`.
inline std::uint64_t param_count(const FusionSpec& spec) {
  const std::uint64_t e = spec.d_enc, p = spec.d_pred, j = spec.d_joint, r = spec.d_rank;
  std::uint64_t n = 0;
  switch (spec.kind) {
    case FusionKind::kFcAdd:
    case FusionKind::kFcMul: n = j * (e + p); break;
    case FusionKind::kGating: n = 2 * j * (e + p); break;
    case FusionKind::kBilinearFull: n = e * p * j; break;
    case FusionKind::kBilinearLowRank: n = e * r + p * r + j * r + j * (e + p); break;
    case FusionKind::kCombination: n = 2 * j * (e + p) + e * r + j * r + j * r + j * (e + p); break;
  }
  if (spec.bias) n += j * (has_gate(spec.kind) ? 2 : 1);
  return n;
}

/// Output-layer weights: K x D_joint.
inline std::uint64_t output_layer_param_count(std::uint64_t d_joint, std::uint64_t output_width) {
  return d_joint * output_width;
}

/// Joint-network weights. Which members are live depends on the kind; `visit`
/// only reports live ones.
///
///   fc-add, fc-mul      : enc, pred                           (W_joint_1, W_joint_2)
///   gating              : enc, pred, gate_enc, gate_pred      (+ W_gate_1, W_gate_2)
///   bilinear-full       : bilinear  (D_enc x D_pred x D_joint; slice [:, :, d] is W_bi_d)
///   bilinear-lowrank    : low_enc, low_pred, proj, enc, pred  (enc/pred are the shortcuts)
///   combination         : gating set + low_enc, low_pred (D_joint x D_rank), proj,
///                         shortcut_enc, shortcut_pred
struct FusionParams {
  FusionSpec spec;
  Parameter enc, pred;
  Parameter gate_enc, gate_pred;
  Parameter bilinear;
  Parameter low_enc, low_pred, proj;
  Parameter shortcut_enc, shortcut_pred;
  Parameter bias, gate_bias;

  template <typename F>
  void visit(F&& f) {
    const FusionKind k = spec.kind;
    if (k != FusionKind::kBilinearFull) {
      f(enc);
      f(pred);
    }
    if (has_gate(k)) {
      f(gate_enc);
      f(gate_pred);
    }
    if (k == FusionKind::kBilinearFull) f(bilinear);
    if (requires_rank(k)) {
      f(low_enc);
      f(low_pred);
      f(proj);
    }
    if (k == FusionKind::kCombination) {
      f(shortcut_enc);
      f(shortcut_pred);
    }
    if (spec.bias) {
      f(bias);
      if (has_gate(k)) f(gate_bias);
    }
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<FusionParams*>(this)->visit([&](const Parameter& p) { f(p); });
  }

  std::uint64_t size() const {
    std::uint64_t n = 0;
    visit([&](const Parameter& p) { n += p.value.size(); });
    return n;
  }

  /// Zero-valued parameters with the shapes required by `spec`.
  static FusionParams make(const FusionSpec& spec) {
    spec.validate();
    const std::size_t e = spec.d_enc, p = spec.d_pred, j = spec.d_joint, r = spec.d_rank;
    FusionParams f;
    f.spec = spec;
    const FusionKind k = spec.kind;
    if (k != FusionKind::kBilinearFull) {
      f.enc = {"joint.enc", Tensor({j, e})};
      f.pred = {"joint.pred", Tensor({j, p})};
    }
    if (has_gate(k)) {
      f.gate_enc = {"joint.gate_enc", Tensor({j, e})};
      f.gate_pred = {"joint.gate_pred", Tensor({j, p})};
    }
    if (k == FusionKind::kBilinearFull) f.bilinear = {"joint.bilinear", Tensor({e, p, j})};
    if (requires_rank(k)) {
      f.low_enc = {"joint.low_enc", Tensor({e, r})};
      f.low_pred = {"joint.low_pred", Tensor({k == FusionKind::kCombination ? j : p, r})};
      f.proj = {"joint.proj", Tensor({j, r})};
    }
    if (k == FusionKind::kCombination) {
      f.shortcut_enc = {"joint.shortcut_enc", Tensor({j, e})};
      f.shortcut_pred = {"joint.shortcut_pred", Tensor({j, p})};
    }
    if (spec.bias) {
      f.bias = {"joint.bias", Tensor({j})};
      if (has_gate(k)) f.gate_bias = {"joint.gate_bias", Tensor({j})};
    }
    return f;
  }

  /// Glorot-uniform weights (rows = fan-out), zero biases.
  void initialize(std::uint64_t seed) {
    visit([&](Parameter& p) {
      const CounterRng rng(seed, hash_name(p.name));
      const Shape& s = p.value.shape;
      if (s.size() == 1) {
        for (double& v : p.value.data) v = 0.0;
      } else if (&p == &bilinear) {
        glorot_uniform(p.value, s[0] * s[1], s[2], rng);
      } else if (&p == &low_enc || &p == &low_pred) {
        glorot_uniform(p.value, s[0], s[1], rng);  // stored input x rank
      } else {
        glorot_uniform(p.value, s[1], s[0], rng);
      }
    });
  }
};

namespace detail {

inline std::vector<std::size_t> grid_rows_enc(std::size_t t_rows, std::size_t p_rows) {
  std::vector<std::size_t> idx;
  idx.reserve(t_rows * p_rows);
  for (std::size_t t = 0; t < t_rows; ++t)
    for (std::size_t u = 0; u < p_rows; ++u) idx.push_back(t);
  return idx;
}

inline std::vector<std::size_t> grid_rows_pred(std::size_t t_rows, std::size_t p_rows) {
  std::vector<std::size_t> idx;
  idx.reserve(t_rows * p_rows);
  for (std::size_t t = 0; t < t_rows; ++t)
    for (std::size_t u = 0; u < p_rows; ++u) idx.push_back(u);
  return idx;
}

// x (N x In) times W^T for W stored Out x In.
template <AnyGraph G>
NodeId linear(G& g, NodeId x, const Parameter& w) {
  return g.matmul(x, g.parameter(w), false, true);
}

}  // namespace detail

/// Per-fusion graph builder over a (T x P) grid.
template <AnyGraph G>
class FusionGrid {
 public:
  FusionGrid(G& g, const FusionParams& params, NodeId h_enc, NodeId h_pred)
      : g_(g), p_(params), enc_(h_enc), pred_(h_pred) {
    const auto& e = g.value(h_enc);
    const auto& d = g.value(h_pred);
    const FusionSpec& s = params.spec;
    if (e.rank() != 2 || e.shape[1] != s.d_enc)
      throw DimensionError("fusion: h_enc " + to_string(e.shape) + " does not have width D_enc=" +
                           std::to_string(s.d_enc));
    if (d.rank() != 2 || d.shape[1] != s.d_pred)
      throw DimensionError("fusion: h_pred " + to_string(d.shape) + " does not have width D_pred=" +
                           std::to_string(s.d_pred));
    t_rows_ = e.shape[0];
    p_rows_ = d.shape[0];
  }

  std::size_t rows() const { return t_rows_ * p_rows_; }

  NodeId expand_enc(NodeId x) { return g_.index_select(x, detail::grid_rows_enc(t_rows_, p_rows_)); }
  NodeId expand_pred(NodeId x) { return g_.index_select(x, detail::grid_rows_pred(t_rows_, p_rows_)); }

  NodeId with_bias(NodeId x, const Parameter& b) { return p_.spec.bias ? g_.add(x, g_.parameter(b)) : x; }

  /// tanh(W1 h_enc + W2 h_pred)
  NodeId fc_add() {
    const NodeId a = expand_enc(detail::linear(g_, enc_, p_.enc));
    const NodeId b = expand_pred(detail::linear(g_, pred_, p_.pred));
    return g_.tanh(with_bias(g_.add(a, b), p_.bias));
  }

  /// tanh(W1 h_enc (.) W2 h_pred)
  NodeId fc_mul() {
    const NodeId a = expand_enc(detail::linear(g_, enc_, p_.enc));
    const NodeId b = expand_pred(detail::linear(g_, pred_, p_.pred));
    return g_.tanh(with_bias(g_.hadamard(a, b), p_.bias));
  }

  /// g (.) tanh(W1 h_enc) + (1 - g) (.) tanh(W2 h_pred),
  /// g = sigmoid(Wg1 h_enc + Wg2 h_pred)
  NodeId gating() {
    const NodeId gate_pre = g_.add(expand_enc(detail::linear(g_, enc_, p_.gate_enc)),
                                   expand_pred(detail::linear(g_, pred_, p_.gate_pred)));
    const NodeId gate = g_.sigmoid(with_bias(gate_pre, p_.gate_bias));
    const NodeId a = expand_enc(g_.tanh(detail::linear(g_, enc_, p_.enc)));
    const NodeId b = expand_pred(g_.tanh(detail::linear(g_, pred_, p_.pred)));
    const NodeId ones = g_.input(typename G::Value({rows(), p_.spec.d_joint}, 1.0));
    return g_.add(g_.hadamard(gate, a), g_.hadamard(g_.sub(ones, gate), b));
  }

  /// Element d = h_enc^T W_bi_d h_pred, no output nonlinearity.
  NodeId bilinear_full() {
    const FusionSpec& s = p_.spec;
    s.validate();
    // A[t, p*Dj + d] = sum_i h_enc[t, i] W[i, p, d]
    const NodeId w = g_.reshape(g_.parameter(p_.bilinear), {s.d_enc, s.d_pred * s.d_joint});
    const NodeId a = g_.matmul(enc_, w);
    std::vector<NodeId> blocks;
    blocks.reserve(t_rows_);
    for (std::size_t t = 0; t < t_rows_; ++t) {
      const NodeId at = g_.reshape(g_.slice(a, 0, t, t + 1), {s.d_pred, s.d_joint});
      blocks.push_back(g_.matmul(pred_, at));
    }
    return with_bias(g_.concat(blocks, 0), p_.bias);
  }

  /// tanh(W_proj (tanh(W_low1^T h_enc) (.) tanh(W_low2^T h_pred)) + W1 h_enc + W2 h_pred)
  NodeId bilinear_lowrank() {
    const NodeId l1 = expand_enc(g_.tanh(g_.matmul(enc_, g_.parameter(p_.low_enc))));
    const NodeId l2 = expand_pred(g_.tanh(g_.matmul(pred_, g_.parameter(p_.low_pred))));
    const NodeId pooled = detail::linear(g_, g_.hadamard(l1, l2), p_.proj);
    const NodeId shortcut_a = expand_enc(detail::linear(g_, enc_, p_.enc));
    const NodeId shortcut_b = expand_pred(detail::linear(g_, pred_, p_.pred));
    return g_.tanh(with_bias(g_.add(g_.add(pooled, shortcut_a), shortcut_b), p_.bias));
  }

  /// Low-rank pooling of h_enc with the gating output h_gate, then the same
  /// shortcut-and-tanh transform with dedicated shortcut matrices.
  NodeId combination() {
    const NodeId h_gate = gating();
    const NodeId l1 = expand_enc(g_.tanh(g_.matmul(enc_, g_.parameter(p_.low_enc))));
    const NodeId l2 = g_.tanh(g_.matmul(h_gate, g_.parameter(p_.low_pred)));
    const NodeId pooled = detail::linear(g_, g_.hadamard(l1, l2), p_.proj);
    const NodeId shortcut_a = expand_enc(detail::linear(g_, enc_, p_.shortcut_enc));
    const NodeId shortcut_b = expand_pred(detail::linear(g_, pred_, p_.shortcut_pred));
    return g_.tanh(with_bias(g_.add(g_.add(pooled, shortcut_a), shortcut_b), p_.bias));
  }

  NodeId fuse() {
    switch (p_.spec.kind) {
      case FusionKind::kFcAdd: return fc_add();
      case FusionKind::kFcMul: return fc_mul();
      case FusionKind::kGating: return gating();
      case FusionKind::kBilinearFull: return bilinear_full();
      case FusionKind::kBilinearLowRank: return bilinear_lowrank();
      case FusionKind::kCombination: return combination();
    }
    throw ConfigError("fusion: unknown kind");
  }

 private:
  G& g_;
  const FusionParams& p_;
  NodeId enc_, pred_;
  std::size_t t_rows_ = 0, p_rows_ = 0;
};

/// h_joint for every (t, u) pair of h_enc (T x D_enc) and h_pred (P x D_pred);
/// returns (T*P) x D_joint.
template <AnyGraph G>
NodeId fuse(G& g, const FusionParams& params, NodeId h_enc, NodeId h_pred) {
  return FusionGrid(g, params, h_enc, h_pred).fuse();
}

namespace detail {

inline Tensor as_row(const Tensor& v) { return Tensor({1, v.size()}, v.data); }

}  // namespace detail

/// Single-pair convenience: fuses one acoustic vector with one text vector.
/// Returns a rank-1 tensor of width D_joint.
inline Tensor fuse(const FusionParams& params, const Tensor& h_enc, const Tensor& h_pred) {
  Graph g;
  const NodeId out = fuse(g, params, g.input(detail::as_row(h_enc)), g.input(detail::as_row(h_pred)));
  return Tensor({params.spec.d_joint}, g.value(out).data);
}

// ---------------------------------------------------------------------------
// Output layer

struct OutputLayerParams {
  Parameter weight;  // K x D_joint

  std::size_t output_width() const { return weight.value.shape[0]; }

  template <typename F>
  void visit(F&& f) {
    f(weight);
  }

  static OutputLayerParams make(std::size_t output_width, std::size_t d_joint) {
    if (output_width < 2) throw ConfigError("output layer: K must be at least 2");
    return {{"output.weight", Tensor({output_width, d_joint})}};
  }

  void initialize(std::uint64_t seed) {
    glorot_uniform(weight.value, weight.value.shape[1], weight.value.shape[0],
                   CounterRng(seed, hash_name(weight.name)));
  }
};

/// Row-wise log-softmax(W_out h_joint) for N x D_joint input; N x K output.
template <AnyGraph G>
NodeId output_logprobs(G& g, NodeId h_joint, const OutputLayerParams& out) {
  const auto& h = g.value(h_joint);
  if (h.rank() != 2 || h.shape[1] != out.weight.value.shape[1])
    throw DimensionError("output layer: h_joint " + to_string(h.shape) + " does not have width D_joint=" +
                         std::to_string(out.weight.value.shape[1]));
  return g.log_softmax(g.matmul(h_joint, g.parameter(out.weight), false, true));
}

inline Tensor output_logprobs(const OutputLayerParams& out, const Tensor& h_joint) {
  Graph g;
  const NodeId lp = output_logprobs(g, g.input(detail::as_row(h_joint)), out);
  return Tensor({out.output_width()}, g.value(lp).data);
}

}  // namespace rnnt
