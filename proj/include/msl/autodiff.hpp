#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "msl/tensor.hpp"

namespace msl {

using NodeId = std::size_t;

class Recording;

/// Handle to a tensor recorded on a Recording.
class Var {
 public:
  Var() = default;
  Var(Recording* rec, NodeId id) : rec_(rec), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  NodeId id() const { return id_; }
  Recording& recording() const;
  bool valid() const { return rec_ != nullptr; }

 private:
  Recording* rec_ = nullptr;
  NodeId id_ = 0;
};

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  relu,
  tanh,
  matmul,
  batched_matmul,
  add_bias,
  reshape,
  permute,
  softmax_rows,
  log_softmax_rows,
  layer_norm,
  embedding,
  cross_entropy,
  sum,
  mean,
  conv2d,
};

std::string_view op_name(OpKind kind);

/// Gradients keyed by node id. Every stored tensor matches its node's shape.
class GradStore {
 public:
  bool contains(NodeId id) const { return id < grads_.size() && grads_[id].has_value(); }
  bool contains(const Var& v) const { return contains(v.id()); }
  const Tensor& at(NodeId id) const;
  const Tensor& at(const Var& v) const { return at(v.id()); }
  std::size_t size() const;

 private:
  friend class Recording;
  std::vector<std::optional<Tensor>> grads_;
};

/// Append-only record of forward operations for reverse-mode differentiation.
///
/// Each node's inputs reference strictly earlier nodes, so node order is a
/// topological order. A Recording is confined to one thread.
class Recording {
 public:
  /// Accumulates `grad_out` into the gradients of the inputs. Entries of
  /// `grad_in` are null for inputs that do not require a gradient.
  using Backward = std::function<void(const Recording& rec, const Tensor& grad_out,
                                      std::span<Tensor* const> grad_in)>;

  Recording() = default;
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, Backward backward);

  /// Reverse sweep from a scalar root. Returns the gradient of every leaf that
  /// requires one; nodes are visited in decreasing id order.
  GradStore backward(const Var& root) const;

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// Elementwise. Binary operands must have equal shapes, or `b` must hold a
// single value which is broadcast against `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var relu(const Var& a);
Var tanh(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }

/// [m x k] * [k x n].
Var matmul(const Var& a, const Var& b);

/// Per-group product of [g x m x k] and [g x k x n] (or [g x n x k] when
/// `transpose_b`).
Var batched_matmul(const Var& a, const Var& b, bool transpose_b = false);

/// Adds a length-n bias to every row of a tensor whose last dimension is n.
Var add_bias(const Var& a, const Var& bias);

Var reshape(const Var& a, Shape shape);

/// General axis permutation; output axis i is input axis perm[i].
Var permute(const Var& a, std::vector<Index> perm);

/// Softmax over the last dimension with max-subtraction.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

/// Normalizes over the last dimension, then applies gain and bias.
Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);

/// Row gather from a [V x d] table; result is [ids.size() x d].
Var embedding(const Var& table, std::span<const int> ids);

/// Mean of -log softmax(logits)[label] over positions whose label differs
/// from `ignore_index`. Result is rank-0.
Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::optional<int> ignore_index = std::nullopt);

Var sum(const Var& a);
Var mean(const Var& a);

/// Stride-1 same-padded convolution of [b x c_in x h x w] with an odd-sized
/// kernel [c_out x c_in x kh x kw] plus per-channel bias.
Var conv2d(const Var& x, const Var& weight, const Var& bias);

/// Multiplies by a fixed mask with keep-probability 1-p and scales the kept
/// entries by 1/(1-p). The mask is a deterministic function of `seed`.
Var dropout(const Var& a, double p, std::uint64_t seed);

}  // namespace msl
