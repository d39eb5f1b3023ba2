#pragma once

#include <vector>

#include "coloc/tensor.hpp"

namespace coloc {

enum class OpKind {
  Leaf,
  MatMul,
  Transpose,
  Reshape,
  SliceRow,
  Element,
  StackRows,
  StackScalars,
  Im2Col,
  AddRowVec,
  Add,
  Sub,
  Mul,
  Relu,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Neg,
  Sum,
  MaxOverSpatial,
  MeanMasked,
  LogSumExp,
};

const char* op_name(OpKind op);

// Reverse-mode autodiff tape. Operations append nodes in topological
// order; backward() replays them in exact reverse order. One tape per
// graph, single-threaded; independent tapes may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a copy of t as a leaf, honoring t.requires_grad.
  Tensor leaf(const Tensor& t);
  // Leaf with requires_grad forced off.
  Tensor constant(Tensor t);
  Tensor constant(double v) { return constant(Tensor::scalar(v)); }

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor reshape(const Tensor& a, std::vector<int> shape);
  Tensor slice_row(const Tensor& m, int row);
  Tensor element(const Tensor& m, int i, int j);
  Tensor stack_rows(const std::vector<Tensor>& rows);
  Tensor stack_scalars(const std::vector<Tensor>& xs);
  // Unfolds an HxWxC image into one row of k*k*C patch values per
  // output position of a valid convolution with the given stride.
  Tensor im2col(const Tensor& x, int kernel, int stride);
  Tensor add_rowvec(const Tensor& m, const Tensor& v);

  // Elementwise binary ops; shapes must match exactly or one side must
  // be a single element (scalar-with-tensor broadcasting only).
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);

  Tensor relu(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor neg(const Tensor& a);

  Tensor scale(const Tensor& a, double c) { return mul(a, constant(c)); }
  Tensor add_scalar(const Tensor& a, double c) { return add(a, constant(c)); }

  Tensor sum(const Tensor& a);
  // [R x C x D] -> [D]; out[d] = max over (r,c). The subgradient goes to
  // the first argmax in row-major order.
  Tensor max_over_spatial(const Tensor& a);
  // Mean of t over positions where mask==1; mask entries must be 0 or 1
  // with at least one 1. No gradient flows through the mask.
  Tensor mean_masked(const Tensor& t, const Tensor& mask);
  // Overflow-safe log(sum(exp(t))) of a rank-1 tensor.
  Tensor log_sum_exp(const Tensor& t);

  // Accumulates gradients for every node reachable from the scalar loss.
  void backward(const Tensor& loss);

  bool has_grad(const Tensor& t) const;
  const Tensor& grad(const Tensor& t) const;
  const Tensor& grad(NodeId id) const;

  // Gradients of all requires_grad leaves, keyed by node id.
  std::vector<std::pair<NodeId, Tensor>> leaf_gradients() const;

  std::size_t num_nodes() const { return nodes_.size(); }

  // Testing hook: scales the gradient contributions of one op kind so a
  // deliberately wrong backward rule can be simulated.
  void inject_backward_fault(OpKind op, double factor) {
    fault_op_ = op;
    fault_factor_ = factor;
    fault_armed_ = true;
  }

 private:
  struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;  // empty until backward touches it
    bool requires_grad = false;
    std::vector<int> aux;  // op-specific: argmax indices, dims, ...
  };

  NodeId push(Node node, Tensor* out);
  const Node& node_at(NodeId id) const;
  Tensor checked_input(const Tensor& t);
  void accumulate(NodeId id, const double* g, int n);
  void backward_step(const Node& node);

  std::vector<Node> nodes_;
  bool fault_armed_ = false;
  OpKind fault_op_ = OpKind::Leaf;
  double fault_factor_ = 1.0;
};

}  // namespace coloc
