#pragma once

// Tape-based reverse-mode differentiation over dense tensors. Training uses
// `Graph` (double); `ExtendedGraph` evaluates the same ops in long double.
//
// A Graph owns its nodes; node handles are indices into the tape, so inputs
// always precede the nodes that consume them and the tape is acyclic by
// construction. Parameters live outside any graph and are bound by reference,
// which lets several graphs (one per utterance) read the same weights.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rnnt/tensor.hpp"

namespace rnnt {

enum class OpKind {
  kInput,
  kParameter,
  kMatMul,
  kAdd,
  kSub,
  kHadamard,
  kScale,
  kTanh,
  kSigmoid,
  kLogSoftmax,
  kConcat,
  kSlice,
  kReshape,
  kScaleGradient,
  kSum,
  kIndexSelect,
};

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kHadamard: return "hadamard";
    case OpKind::kScale: return "scale";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLogSoftmax: return "log-softmax";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kReshape: return "reshape";
    case OpKind::kScaleGradient: return "scale-gradient";
    case OpKind::kSum: return "sum";
    case OpKind::kIndexSelect: return "index-select";
  }
  return "?";
}

/// A named trainable tensor. Graphs bind parameters by address, so a
/// Parameter must outlive every graph that references it.
struct Parameter {
  std::string name;
  Tensor value;
};

using NodeId = std::size_t;


/// Per-op attributes; only the fields relevant to an op-kind are read.
struct OpAttrs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  double scalar = 0.0;
  std::vector<std::size_t> indices;
  Shape shape;
};

template <typename T>
class BasicGraph {
 public:
  using Scalar = T;
  using Value = BasicTensor<T>;
  /// Parameter node id -> accumulated dLoss/dParameter.
  using Gradients = std::map<NodeId, Value>;

  BasicGraph() = default;
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;
  BasicGraph(BasicGraph&&) = default;
  BasicGraph& operator=(BasicGraph&&) = default;

  NodeId input(Value value) {
    return push(Node{OpKind::kInput, {}, {}, std::move(value), nullptr, false});
  }
  template <typename U>
    requires(!std::is_same_v<U, T>)
  NodeId input(const BasicTensor<U>& value) {
    return input(Value(value));
  }

  /// Binds `p` into this graph. Binding the same parameter twice returns the
  /// existing node so that its gradient accumulates in one place.
  NodeId parameter(const Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    const NodeId id = push(Node{OpKind::kParameter, {}, {}, Value(p.value), &p, true});
    bound_.emplace(&p, id);
    return id;
  }

  /// Generic entry point: builds a node of `kind` over `inputs` and computes
  /// its value eagerly.
  NodeId forward(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs = {});

  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
    OpAttrs at;
    at.trans_a = trans_a;
    at.trans_b = trans_b;
    return binary(OpKind::kMatMul, a, b, std::move(at));
  }
  NodeId add(NodeId a, NodeId b) { return binary(OpKind::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(OpKind::kSub, a, b); }
  NodeId hadamard(NodeId a, NodeId b) { return binary(OpKind::kHadamard, a, b); }
  NodeId scale(NodeId x, double factor) {
    OpAttrs at;
    at.scalar = factor;
    return unary(OpKind::kScale, x, std::move(at));
  }
  NodeId tanh(NodeId x) { return unary(OpKind::kTanh, x); }
  NodeId sigmoid(NodeId x) { return unary(OpKind::kSigmoid, x); }
  NodeId log_softmax(NodeId x) { return unary(OpKind::kLogSoftmax, x); }
  NodeId concat(std::span<const NodeId> xs, std::size_t axis = 0) {
    OpAttrs at;
    at.axis = axis;
    return forward(OpKind::kConcat, xs, std::move(at));
  }
  NodeId slice(NodeId x, std::size_t axis, std::size_t begin, std::size_t end) {
    OpAttrs at;
    at.axis = axis;
    at.begin = begin;
    at.end = end;
    return unary(OpKind::kSlice, x, std::move(at));
  }
  NodeId reshape(NodeId x, Shape shape) {
    OpAttrs at;
    at.shape = std::move(shape);
    return unary(OpKind::kReshape, x, std::move(at));
  }
  /// Forward identity; backward multiplies the upstream gradient by `alpha`.
  NodeId scale_gradient(NodeId x, double alpha) {
    OpAttrs at;
    at.scalar = alpha;
    return unary(OpKind::kScaleGradient, x, std::move(at));
  }
  NodeId sum(NodeId x) { return unary(OpKind::kSum, x); }
  /// Gathers rows (axis 0) in the given order; indices may repeat.
  NodeId index_select(NodeId x, std::vector<std::size_t> indices) {
    OpAttrs at;
    at.indices = std::move(indices);
    return unary(OpKind::kIndexSelect, x, std::move(at));
  }

  /// log(exp(a) + exp(b)) for single-element nodes, expressed through
  /// log-softmax: lse(a, b) = a - log_softmax([a, b])[0].
  NodeId logsumexp2(NodeId a, NodeId b) {
    const NodeId pair[] = {reshape(a, {1, 1}), reshape(b, {1, 1})};
    const NodeId ls = log_softmax(concat(pair, 1));
    return sub(reshape(a, {1, 1}), slice(ls, 1, 0, 1));
  }

  const Value& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  const Parameter* bound_parameter(NodeId id) const { return nodes_.at(id).param; }
  /// Node bound to `p`, if any.
  std::optional<NodeId> find_parameter(const Parameter& p) const {
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    return std::nullopt;
  }

  /// Reverse accumulation from a single-element `loss`. Returns gradients for
  /// every parameter node reachable from it. Does not mutate the graph, so
  /// repeated calls give identical maps.
  Gradients backward(NodeId loss) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    Value value;
    const Parameter* param;
    bool needs_grad;
  };

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }
  NodeId unary(OpKind k, NodeId x, OpAttrs at = {}) {
    const NodeId in[] = {x};
    return forward(k, in, std::move(at));
  }
  NodeId binary(OpKind k, NodeId a, NodeId b, OpAttrs at = {}) {
    const NodeId in[] = {a, b};
    return forward(k, in, std::move(at));
  }

  [[noreturn]] static void shape_error(OpKind k, const std::string& what) {
    throw DimensionError(std::string(op_name(k)) + ": " + what);
  }

  Value compute(OpKind k, std::span<const NodeId> in, const OpAttrs& at) const;
  void propagate(const Node& n, const Value& g, std::vector<std::optional<Value>>& grads) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> bound_;
};

namespace detail {

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

// b broadcasts against a when b's shape equals a trailing block of a's shape.
inline bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

// C (n x m) += op(A) * op(B), with op optionally transposing. Each output
// element accumulates over the inner index in ascending order.
template <typename T>
void gemm_acc(const BasicTensor<T>& a, bool ta, const BasicTensor<T>& b, bool tb, BasicTensor<T>& c) {
  const std::size_t n = c.shape[0], m = c.shape[1];
  const std::size_t k = ta ? a.shape[0] : a.shape[1];
  const std::size_t lda = a.shape[1], ldb = b.shape[1];
  const T* A = a.data.data();
  const T* B = b.data.data();
  T* C = c.data.data();
  if (!ta && !tb) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T av = A[i * lda + p];
        const T* brow = B + p * ldb;
        T* crow = C + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const T* arow = A + i * lda;
        const T* brow = B + j * ldb;
        T acc = C[i * m + j];
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        C[i * m + j] = acc;
      }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < n; ++i) {
        const T av = A[p * lda + i];
        const T* brow = B + p * ldb;
        T* crow = C + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t p = 0; p < k; ++p) C[i * m + j] += A[p * lda + i] * B[j * ldb + p];
  }
}

}  // namespace detail

template <typename T>
NodeId BasicGraph<T>::forward(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs) {
  if (kind == OpKind::kInput || kind == OpKind::kParameter)
    throw ConfigError("forward: leaves are created with input()/parameter()");
  for (NodeId id : inputs)
    if (id >= nodes_.size()) throw DimensionError(std::string(op_name(kind)) + ": unknown input node");
  Value v = compute(kind, inputs, attrs);
  bool needs = false;
  for (NodeId id : inputs) needs = needs || nodes_[id].needs_grad;
  return push(Node{kind, std::vector<NodeId>(inputs.begin(), inputs.end()), std::move(attrs),
                   std::move(v), nullptr, needs});
}

template <typename T>
auto BasicGraph<T>::compute(OpKind k, std::span<const NodeId> in, const OpAttrs& at) const -> Value {
  auto arg = [&](std::size_t i) -> const Value& { return nodes_[in[i]].value; };
  const std::size_t expected = [&]() -> std::size_t {
    switch (k) {
      case OpKind::kMatMul:
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kHadamard: return 2;
      case OpKind::kConcat: return in.empty() ? 1 : in.size();
      default: return 1;
    }
  }();
  if (in.size() != expected)
    shape_error(k, "expected " + std::to_string(expected) + " inputs, got " + std::to_string(in.size()));

  switch (k) {
    case OpKind::kMatMul: {
      const Value& a = arg(0);
      const Value& b = arg(1);
      if (a.rank() != 2 || b.rank() != 2)
        shape_error(k, "operands must be rank 2, got " + to_string(a.shape) + " and " + to_string(b.shape));
      const std::size_t n = at.trans_a ? a.shape[1] : a.shape[0];
      const std::size_t ka = at.trans_a ? a.shape[0] : a.shape[1];
      const std::size_t kb = at.trans_b ? b.shape[1] : b.shape[0];
      const std::size_t m = at.trans_b ? b.shape[0] : b.shape[1];
      if (ka != kb)
        shape_error(k, "inner extents differ: " + to_string(a.shape) + (at.trans_a ? "^T" : "") + " * " +
                           to_string(b.shape) + (at.trans_b ? "^T" : ""));
      Value c({n, m});
      detail::gemm_acc(a, at.trans_a, b, at.trans_b, c);
      return c;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kHadamard: {
      const Value& a = arg(0);
      const Value& b = arg(1);
      if (!detail::broadcastable(a.shape, b.shape))
        shape_error(k, "cannot broadcast " + to_string(b.shape) + " onto " + to_string(a.shape));
      Value c = a;
      const std::size_t nb = b.size();
      for (std::size_t i = 0; i < c.size(); ++i) {
        const T bv = b.data[i % nb];
        if (k == OpKind::kAdd) c.data[i] += bv;
        else if (k == OpKind::kSub) c.data[i] -= bv;
        else c.data[i] *= bv;
      }
      return c;
    }
    case OpKind::kScale: {
      Value c = arg(0);
      for (T& v : c.data) v *= at.scalar;
      return c;
    }
    case OpKind::kTanh: {
      Value c = arg(0);
      for (T& v : c.data) v = std::tanh(v);
      return c;
    }
    case OpKind::kSigmoid: {
      Value c = arg(0);
      for (T& v : c.data) v = 1.0 / (1.0 + std::exp(-v));
      return c;
    }
    case OpKind::kLogSoftmax: {
      Value c = arg(0);
      const std::size_t width = c.cols();
      for (std::size_t r = 0; r < c.size() / width; ++r) {
        T* row = &c.data[r * width];
        const T mx = *std::max_element(row, row + width);
        T s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += std::exp(row[j] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < width; ++j) row[j] -= lse;
      }
      return c;
    }
    case OpKind::kConcat: {
      if (in.empty()) shape_error(k, "no inputs");
      const Shape& s0 = arg(0).shape;
      if (at.axis >= s0.size()) shape_error(k, "axis out of range for " + to_string(s0));
      Shape out = s0;
      out[at.axis] = 0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const Shape& si = arg(i).shape;
        bool ok = si.size() == s0.size();
        for (std::size_t d = 0; ok && d < si.size(); ++d) ok = d == at.axis || si[d] == s0[d];
        if (!ok) shape_error(k, "extents " + to_string(si) + " do not conform to " + to_string(s0));
        out[at.axis] += si[at.axis];
      }
      Value c(out);
      const auto ov = detail::axis_view(out, at.axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const Value& x = arg(i);
        const auto xv = detail::axis_view(x.shape, at.axis);
        const std::size_t chunk = xv.extent * xv.inner;
        for (std::size_t o = 0; o < xv.outer; ++o)
          std::copy_n(&x.data[o * chunk], chunk, &c.data[o * ov.extent * ov.inner + offset * ov.inner]);
        offset += xv.extent;
      }
      return c;
    }
    case OpKind::kSlice: {
      const Value& x = arg(0);
      if (at.axis >= x.rank() || at.begin >= at.end || at.end > x.shape[at.axis])
        shape_error(k, "range [" + std::to_string(at.begin) + "," + std::to_string(at.end) + ") on axis " +
                           std::to_string(at.axis) + " invalid for " + to_string(x.shape));
      Shape out = x.shape;
      out[at.axis] = at.end - at.begin;
      Value c(out);
      const auto xv = detail::axis_view(x.shape, at.axis);
      const std::size_t chunk = (at.end - at.begin) * xv.inner;
      for (std::size_t o = 0; o < xv.outer; ++o)
        std::copy_n(&x.data[(o * xv.extent + at.begin) * xv.inner], chunk, &c.data[o * chunk]);
      return c;
    }
    case OpKind::kReshape: {
      const Value& x = arg(0);
      if (numel(at.shape) != x.size())
        shape_error(k, "cannot reshape " + to_string(x.shape) + " to " + to_string(at.shape));
      return Value(at.shape, x.data);
    }
    case OpKind::kScaleGradient: {
      if (!std::isfinite(at.scalar) || at.scalar < 0.0 || at.scalar > 1.0)
        throw ConfigError("scale-gradient: alpha must lie in [0,1], got " + std::to_string(at.scalar));
      return arg(0);
    }
    case OpKind::kSum: {
      T s = 0.0;
      for (T v : arg(0).data) s += v;
      return Value::scalar(s);
    }
    case OpKind::kIndexSelect: {
      const Value& x = arg(0);
      if (x.rank() == 0) shape_error(k, "cannot select rows of a scalar");
      if (at.indices.empty()) shape_error(k, "empty index list");
      Shape out = x.shape;
      out[0] = at.indices.size();
      Value c(out);
      const std::size_t inner = x.size() / x.shape[0];
      for (std::size_t i = 0; i < at.indices.size(); ++i) {
        if (at.indices[i] >= x.shape[0])
          shape_error(k, "row " + std::to_string(at.indices[i]) + " out of range for " + to_string(x.shape));
        std::copy_n(&x.data[at.indices[i] * inner], inner, &c.data[i * inner]);
      }
      return c;
    }
    case OpKind::kInput:
    case OpKind::kParameter: break;
  }
  shape_error(k, "unsupported op");
}

template <typename T>
void BasicGraph<T>::propagate(const Node& n, const Value& g, std::vector<std::optional<Value>>& grads) const {
  auto grad_of = [&](std::size_t i) -> Value* {
    const NodeId id = n.inputs[i];
    if (!nodes_[id].needs_grad) return nullptr;
    if (!grads[id]) grads[id].emplace(nodes_[id].value.shape);
    return &*grads[id];
  };
  auto in = [&](std::size_t i) -> const Value& { return nodes_[n.inputs[i]].value; };

  switch (n.kind) {
    case OpKind::kMatMul: {
      const Value& a = in(0);
      const Value& b = in(1);
      // C = op(A) op(B)
      if (Value* ga = grad_of(0)) {
        // dA = dC op(B)^T, or (op(B) dC^T) when A was transposed.
        if (!n.attrs.trans_a) detail::gemm_acc(g, false, b, !n.attrs.trans_b, *ga);
        else detail::gemm_acc(b, n.attrs.trans_b, g, true, *ga);
      }
      if (Value* gb = grad_of(1)) {
        // dB = op(A)^T dC, or (dC^T op(A)) when B was transposed.
        if (!n.attrs.trans_b) detail::gemm_acc(a, !n.attrs.trans_a, g, false, *gb);
        else detail::gemm_acc(g, true, a, n.attrs.trans_a, *gb);
      }
      return;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kHadamard: {
      const Value& a = in(0);
      const Value& b = in(1);
      const std::size_t nb = b.size();
      if (Value* ga = grad_of(0)) {
        for (std::size_t i = 0; i < g.size(); ++i)
          ga->data[i] += n.kind == OpKind::kHadamard ? g.data[i] * b.data[i % nb] : g.data[i];
      }
      if (Value* gb = grad_of(1)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          T d = g.data[i];
          if (n.kind == OpKind::kSub) d = -d;
          else if (n.kind == OpKind::kHadamard) d *= a.data[i];
          gb->data[i % nb] += d;
        }
      }
      return;
    }
    case OpKind::kScale:
    case OpKind::kScaleGradient:
      if (Value* gx = grad_of(0))
        for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += n.attrs.scalar * g.data[i];
      return;
    case OpKind::kTanh:
      if (Value* gx = grad_of(0))
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T y = n.value.data[i];
          gx->data[i] += g.data[i] * (1.0 - y * y);
        }
      return;
    case OpKind::kSigmoid:
      if (Value* gx = grad_of(0))
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T y = n.value.data[i];
          gx->data[i] += g.data[i] * y * (1.0 - y);
        }
      return;
    case OpKind::kLogSoftmax:
      if (Value* gx = grad_of(0)) {
        const std::size_t width = n.value.cols();
        for (std::size_t r = 0; r < g.size() / width; ++r) {
          T gs = 0.0;
          for (std::size_t j = 0; j < width; ++j) gs += g.data[r * width + j];
          for (std::size_t j = 0; j < width; ++j) {
            const std::size_t i = r * width + j;
            gx->data[i] += g.data[i] - std::exp(n.value.data[i]) * gs;
          }
        }
      }
      return;
    case OpKind::kConcat: {
      const auto ov = detail::axis_view(n.value.shape, n.attrs.axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const auto xv = detail::axis_view(in(i).shape, n.attrs.axis);
        if (Value* gx = grad_of(i)) {
          const std::size_t chunk = xv.extent * xv.inner;
          for (std::size_t o = 0; o < xv.outer; ++o)
            for (std::size_t j = 0; j < chunk; ++j)
              gx->data[o * chunk + j] += g.data[o * ov.extent * ov.inner + offset * ov.inner + j];
        }
        offset += xv.extent;
      }
      return;
    }
    case OpKind::kSlice:
      if (Value* gx = grad_of(0)) {
        const auto xv = detail::axis_view(in(0).shape, n.attrs.axis);
        const std::size_t chunk = (n.attrs.end - n.attrs.begin) * xv.inner;
        for (std::size_t o = 0; o < xv.outer; ++o)
          for (std::size_t j = 0; j < chunk; ++j)
            gx->data[(o * xv.extent + n.attrs.begin) * xv.inner + j] += g.data[o * chunk + j];
      }
      return;
    case OpKind::kReshape:
      if (Value* gx = grad_of(0))
        for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i];
      return;
    case OpKind::kSum:
      if (Value* gx = grad_of(0))
        for (T& v : gx->data) v += g.data[0];
      return;
    case OpKind::kIndexSelect:
      if (Value* gx = grad_of(0)) {
        const std::size_t inner = gx->size() / gx->shape[0];
        for (std::size_t i = 0; i < n.attrs.indices.size(); ++i)
          for (std::size_t j = 0; j < inner; ++j)
            gx->data[n.attrs.indices[i] * inner + j] += g.data[i * inner + j];
      }
      return;
    case OpKind::kInput:
    case OpKind::kParameter: return;
  }
}

template <typename T>
auto BasicGraph<T>::backward(NodeId loss) const -> Gradients {
  if (loss >= nodes_.size()) throw DimensionError("backward: unknown loss node");
  if (nodes_[loss].value.size() != 1)
    throw DimensionError("backward: loss must be scalar, got " + to_string(nodes_[loss].value.shape));

  std::vector<std::optional<Value>> grads(loss + 1);
  std::vector<char> reachable(loss + 1, 0);
  reachable[loss] = 1;
  grads[loss].emplace(nodes_[loss].value.shape, 1.0);

  Gradients out;
  for (NodeId id = loss + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    const Node& n = nodes_[id];
    for (NodeId src : n.inputs) reachable[src] = 1;
    if (n.kind == OpKind::kParameter) {
      out.emplace(id, grads[id] ? std::move(*grads[id]) : Value(n.value.shape));
      continue;
    }
    if (!n.needs_grad || !grads[id]) continue;
    propagate(n, *grads[id], grads);
    grads[id].reset();
  }
  return out;
}

using Graph = BasicGraph<double>;
using ExtendedGraph = BasicGraph<long double>;
using GradientMap = Graph::Gradients;

template <typename G>
concept AnyGraph = std::is_same_v<G, BasicGraph<typename G::Scalar>>;

/// Gradient for `p` from a map produced by `graph.backward`, or zeros when the
/// parameter is not reachable.
template <typename T>
BasicTensor<T> gradient_for(const BasicGraph<T>& graph, const typename BasicGraph<T>::Gradients& grads,
                            const Parameter& p) {
  if (auto id = graph.find_parameter(p)) {
    if (auto it = grads.find(*id); it != grads.end()) return it->second;
  }
  return BasicTensor<T>(p.value.shape);
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients against central differences
/// (L(p+h) - L(p-h)) / 2h for every scalar of every parameter in `params`.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
///
/// `loss_fn` builds the scalar loss into the graph it is handed and must be
/// deterministic. Analytic gradients always come from a double `Graph`. When
/// `loss_fn` also accepts an `ExtendedGraph&` (a generic lambda), the
/// perturbed losses are evaluated in long double, so the difference quotient
/// is not limited by the spacing of doubles near L.
template <typename LossFn>
GradCheckReport finite_difference_check(LossFn&& loss_fn, std::span<Parameter* const> params, double step) {
  if (!(step > 0.0)) throw ConfigError("finite_difference_check: step must be positive");
  std::vector<Tensor> analytic;
  {
    Graph g;
    const NodeId loss = loss_fn(g);
    const GradientMap grads = g.backward(loss);
    for (Parameter* p : params) analytic.push_back(gradient_for(g, grads, *p));
  }
  auto eval = [&]() -> long double {
    if constexpr (std::is_invocable_r_v<NodeId, LossFn&, ExtendedGraph&>) {
      ExtendedGraph g;
      return g.value(loss_fn(g)).data[0];
    } else {
      Graph g;
      return g.value(loss_fn(g)).data[0];
    }
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + step;
      const long double plus = eval();
      p.value.data[i] = saved - step;
      const long double minus = eval();
      p.value.data[i] = saved;

      const double numeric = static_cast<double>((plus - minus) / (2.0L * step));
      const double a = analytic[pi].data[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (++report.checked == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = p.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace rnnt
