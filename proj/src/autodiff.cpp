#include "msl/autodiff.hpp"

#include <algorithm>

namespace msl {

const Tensor& Var::value() const { return recording().value(id_); }

bool Var::requires_grad() const { return recording().requires_grad(id_); }

Recording& Var::recording() const {
  if (!rec_) throw ContractError("use of an unbound Var");
  return *rec_;
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::matmul: return "matmul";
    case OpKind::batched_matmul: return "batched_matmul";
    case OpKind::add_bias: return "add_bias";
    case OpKind::reshape: return "reshape";
    case OpKind::permute: return "permute";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::log_softmax_rows: return "log_softmax_rows";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::embedding: return "embedding";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::conv2d: return "conv2d";
  }
  return "unknown";
}

const Tensor& GradStore::at(NodeId id) const {
  if (!contains(id)) throw ContractError("no gradient stored for node " + std::to_string(id));
  return *grads_[id];
}

std::size_t GradStore::size() const {
  return static_cast<std::size_t>(
      std::count_if(grads_.begin(), grads_.end(), [](const auto& g) { return g.has_value(); }));
}

Var Recording::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Recording::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, Backward backward) {
  const NodeId id = nodes_.size();
  bool needs_grad = false;
  for (NodeId in : inputs) {
    if (in >= id) throw ContractError("node input must reference an earlier node");
    needs_grad = needs_grad || nodes_[in].requires_grad;
  }
  if (!needs_grad) backward = nullptr;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), needs_grad, std::move(backward)});
  return Var(this, id);
}

GradStore Recording::backward(const Var& root) const {
  if (&root.recording() != this) throw ContractError("backward root belongs to another recording");
  const NodeId root_id = root.id();
  const Tensor& root_value = nodes_.at(root_id).value;
  if (root_value.size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + to_string(root_value.shape()));
  }

  std::vector<std::optional<Tensor>> grads(root_id + 1);
  if (nodes_[root_id].requires_grad) grads[root_id] = Tensor::full(root_value.shape(), 1.0);

  std::vector<Tensor*> grad_in;
  for (NodeId id = root_id + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!grads[id] || !node.backward) continue;
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const NodeId in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in] = Tensor::zeros(nodes_[in].value.shape());
      grad_in[k] = &*grads[in];
    }
    node.backward(*this, *grads[id], grad_in);
    if (node.kind != OpKind::leaf) grads[id].reset();
  }

  GradStore store;
  store.grads_.resize(root_id + 1);
  for (NodeId id = 0; id <= root_id; ++id) {
    const Node& node = nodes_[id];
    if (node.kind != OpKind::leaf || !node.requires_grad) continue;
    store.grads_[id] = grads[id] ? std::move(*grads[id]) : Tensor::zeros(node.value.shape());
  }
  return store;
}

}  // namespace msl
