#include "coloc/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "coloc/errors.hpp"

namespace coloc {

namespace {

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * m;
    const double* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::SliceRow: return "slice_row";
    case OpKind::Element: return "element";
    case OpKind::StackRows: return "stack_rows";
    case OpKind::StackScalars: return "stack_scalars";
    case OpKind::Im2Col: return "im2col";
    case OpKind::AddRowVec: return "add_rowvec";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Neg: return "neg";
    case OpKind::Sum: return "sum";
    case OpKind::MaxOverSpatial: return "max_over_spatial";
    case OpKind::MeanMasked: return "mean_masked";
    case OpKind::LogSumExp: return "log_sum_exp";
  }
  return "?";
}

NodeId Tape::push(Node node, Tensor* out) {
  if (nodes_.size() >= static_cast<std::size_t>(INT32_MAX)) throw Error("tape full");
#ifndef NDEBUG
  // Forward ops on finite inputs must stay finite.
  if (node.op != OpKind::Leaf && !node.value.all_finite()) {
    bool inputs_finite = true;
    for (NodeId id : node.inputs) inputs_finite = inputs_finite && nodes_[static_cast<std::size_t>(id)].value.all_finite();
    if (inputs_finite) throw DomainError(std::string("non-finite output from ") + op_name(node.op));
  }
#endif
  const NodeId id = static_cast<NodeId>(nodes_.size());
  if (out != nullptr) {
    *out = node.value;
    out->node = id;
    out->owner = this;
    out->requires_grad = node.requires_grad;
  }
  nodes_.push_back(std::move(node));
  return id;
}

const Tape::Node& Tape::node_at(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw IndexError("invalid tape node id " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)];
}

Tensor Tape::checked_input(const Tensor& t) {
  if (t.node != kNoNode) {
    if (t.owner != this) throw ConfigError("input tensor belongs to a different tape");
    return t;
  }
  if (t.requires_grad) throw ConfigError("requires_grad tensor must be registered with leaf() before use");
  Tensor copy = t;
  Node node;
  node.op = OpKind::Leaf;
  node.value = copy;
  node.requires_grad = false;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::leaf(const Tensor& t) {
  if (t.owner != nullptr && t.owner != this) throw ConfigError("tensor belongs to a different tape");
  Node node;
  node.op = OpKind::Leaf;
  node.value = t;
  node.value.node = kNoNode;
  node.value.owner = nullptr;
  node.requires_grad = t.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::constant(Tensor t) {
  t.requires_grad = false;
  t.node = kNoNode;
  t.owner = nullptr;
  return leaf(t);
}

Tensor Tape::matmul(const Tensor& a_in, const Tensor& b_in) {
  const Tensor a = checked_input(a_in);
  const Tensor b = checked_input(b_in);
  if (a.rank() < 1 || a.rank() > 2 || b.rank() < 1 || b.rank() > 2) {
    throw ShapeError("matmul expects rank 1 or 2 operands, got " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  // Rank-1 operands act as a row vector on the left, column vector on the right.
  const int m = a.rank() == 2 ? a.dim(0) : 1;
  const int ka = a.rank() == 2 ? a.dim(1) : a.dim(0);
  const int kb = b.rank() == 2 ? b.dim(0) : b.dim(0);
  const int n = b.rank() == 2 ? b.dim(1) : 1;
  if (ka != kb) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  std::vector<int> out_shape;
  if (a.rank() == 2) out_shape.push_back(m);
  if (b.rank() == 2) out_shape.push_back(n);
  Tensor value(out_shape);
  gemm_nn(a.data(), b.data(), value.data(), m, ka, n);

  Node node;
  node.op = OpKind::MatMul;
  node.inputs = {a.node, b.node};
  node.value = std::move(value);
  node.requires_grad = a.requires_grad || b.requires_grad;
  node.aux = {m, ka, n};
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::transpose(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  if (a.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_to_string(a.shape()));
  const int r = a.dim(0), c = a.dim(1);
  Tensor value({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) value.at(j, i) = a.data()[static_cast<std::size_t>(i) * c + j];
  Node node;
  node.op = OpKind::Transpose;
  node.inputs = {a.node};
  node.value = std::move(value);
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::reshape(const Tensor& a_in, std::vector<int> shape) {
  const Tensor a = checked_input(a_in);
  {
    long long want = 1;
    for (int d : shape) want *= d;
    if (want != a.size()) throw ShapeError("reshape of " + shape_to_string(a.shape()) + " to " + shape_to_string(shape) + " changes element count");
  }
  Tensor value(std::move(shape), a.values());
  Node node;
  node.op = OpKind::Reshape;
  node.inputs = {a.node};
  node.value = std::move(value);
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::slice_row(const Tensor& m_in, int row) {
  const Tensor m = checked_input(m_in);
  if (m.rank() != 2) throw ShapeError("slice_row expects rank 2, got " + shape_to_string(m.shape()));
  if (row < 0 || row >= m.dim(0)) throw IndexError("row " + std::to_string(row) + " out of range for " + shape_to_string(m.shape()));
  const int c = m.dim(1);
  Tensor value({c});
  std::memcpy(value.data(), m.data() + static_cast<std::size_t>(row) * c, sizeof(double) * static_cast<std::size_t>(c));
  Node node;
  node.op = OpKind::SliceRow;
  node.inputs = {m.node};
  node.value = std::move(value);
  node.requires_grad = m.requires_grad;
  node.aux = {row};
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::element(const Tensor& m_in, int i, int j) {
  const Tensor m = checked_input(m_in);
  if (m.rank() != 2) throw ShapeError("element expects rank 2, got " + shape_to_string(m.shape()));
  if (i < 0 || i >= m.dim(0) || j < 0 || j >= m.dim(1)) {
    throw IndexError("element (" + std::to_string(i) + "," + std::to_string(j) + ") out of range for " + shape_to_string(m.shape()));
  }
  Tensor value = Tensor::scalar(m.at(i, j));
  Node node;
  node.op = OpKind::Element;
  node.inputs = {m.node};
  node.value = std::move(value);
  node.requires_grad = m.requires_grad;
  node.aux = {i, j};
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows on empty list");
  Node node;
  node.op = OpKind::StackRows;
  const int c = rows.front().rank() == 1 ? rows.front().dim(0) : -1;
  if (c < 0) throw ShapeError("stack_rows expects rank-1 rows, got " + shape_to_string(rows.front().shape()));
  Tensor value({static_cast<int>(rows.size()), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor r = checked_input(rows[i]);
    if (r.rank() != 1 || r.dim(0) != c) {
      throw ShapeError("stack_rows row " + std::to_string(i) + " has shape " + shape_to_string(r.shape()) + ", expected [" + std::to_string(c) + "]");
    }
    std::memcpy(value.data() + i * static_cast<std::size_t>(c), r.data(), sizeof(double) * static_cast<std::size_t>(c));
    node.inputs.push_back(r.node);
    node.requires_grad = node.requires_grad || r.requires_grad;
  }
  node.value = std::move(value);
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("stack_scalars on empty list");
  Node node;
  node.op = OpKind::StackScalars;
  Tensor value({static_cast<int>(xs.size())});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor x = checked_input(xs[i]);
    if (x.size() != 1) throw ShapeError("stack_scalars element " + std::to_string(i) + " has shape " + shape_to_string(x.shape()));
    value.data()[i] = x.data()[0];
    node.inputs.push_back(x.node);
    node.requires_grad = node.requires_grad || x.requires_grad;
  }
  node.value = std::move(value);
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::im2col(const Tensor& x_in, int kernel, int stride) {
  const Tensor x = checked_input(x_in);
  if (x.rank() != 3) throw ShapeError("im2col expects rank 3, got " + shape_to_string(x.shape()));
  if (kernel < 1 || stride < 1) throw ConfigError("im2col kernel and stride must be positive");
  const int h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  if (h < kernel || w < kernel || (h - kernel) % stride != 0 || (w - kernel) % stride != 0) {
    throw ShapeError("im2col: input " + shape_to_string(x.shape()) + " not divisible by kernel " + std::to_string(kernel) + " stride " +
                     std::to_string(stride));
  }
  const int oh = (h - kernel) / stride + 1;
  const int ow = (w - kernel) / stride + 1;
  const int patch = kernel * kernel * ch;
  Tensor value({oh * ow, patch});
  double* out_p = value.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int dy = 0; dy < kernel; ++dy) {
        const double* src = x.data() + (static_cast<std::size_t>(oy * stride + dy) * w + static_cast<std::size_t>(ox * stride)) * ch;
        std::memcpy(out_p, src, sizeof(double) * static_cast<std::size_t>(kernel * ch));
        out_p += kernel * ch;
      }
    }
  }
  Node node;
  node.op = OpKind::Im2Col;
  node.inputs = {x.node};
  node.value = std::move(value);
  node.requires_grad = x.requires_grad;
  node.aux = {h, w, ch, kernel, stride, oh, ow};
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::add_rowvec(const Tensor& m_in, const Tensor& v_in) {
  const Tensor m = checked_input(m_in);
  const Tensor v = checked_input(v_in);
  if (m.rank() != 2 || v.rank() != 1 || m.dim(1) != v.dim(0)) {
    throw ShapeError("add_rowvec shapes disagree: " + shape_to_string(m.shape()) + " and " + shape_to_string(v.shape()));
  }
  const int r = m.dim(0), c = m.dim(1);
  Tensor value({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) value.data()[static_cast<std::size_t>(i) * c + j] = m.data()[static_cast<std::size_t>(i) * c + j] + v.data()[j];
  Node node;
  node.op = OpKind::AddRowVec;
  node.inputs = {m.node, v.node};
  node.value = std::move(value);
  node.requires_grad = m.requires_grad || v.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

namespace {

enum class BinKind { Add, Sub, Mul };

void check_broadcast(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return;
  if (a.size() == 1 || b.size() == 1) return;
  throw ShapeError("incompatible elementwise shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) +
                   " (only scalar-with-tensor broadcasting is supported)");
}

}  // namespace

Tensor Tape::add(const Tensor& a_in, const Tensor& b_in) {
  const Tensor a = checked_input(a_in);
  const Tensor b = checked_input(b_in);
  check_broadcast(a, b);
  Tensor value(a.size() >= b.size() ? a.shape() : b.shape());
  const bool sa = a.size() == 1, sb = b.size() == 1;
  for (int i = 0; i < value.size(); ++i) value.data()[i] = a.data()[sa ? 0 : i] + b.data()[sb ? 0 : i];
  Node node;
  node.op = OpKind::Add;
  node.inputs = {a.node, b.node};
  node.value = std::move(value);
  node.requires_grad = a.requires_grad || b.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::sub(const Tensor& a_in, const Tensor& b_in) {
  const Tensor a = checked_input(a_in);
  const Tensor b = checked_input(b_in);
  check_broadcast(a, b);
  Tensor value(a.size() >= b.size() ? a.shape() : b.shape());
  const bool sa = a.size() == 1, sb = b.size() == 1;
  for (int i = 0; i < value.size(); ++i) value.data()[i] = a.data()[sa ? 0 : i] - b.data()[sb ? 0 : i];
  Node node;
  node.op = OpKind::Sub;
  node.inputs = {a.node, b.node};
  node.value = std::move(value);
  node.requires_grad = a.requires_grad || b.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::mul(const Tensor& a_in, const Tensor& b_in) {
  const Tensor a = checked_input(a_in);
  const Tensor b = checked_input(b_in);
  check_broadcast(a, b);
  Tensor value(a.size() >= b.size() ? a.shape() : b.shape());
  const bool sa = a.size() == 1, sb = b.size() == 1;
  for (int i = 0; i < value.size(); ++i) value.data()[i] = a.data()[sa ? 0 : i] * b.data()[sb ? 0 : i];
  Node node;
  node.op = OpKind::Mul;
  node.inputs = {a.node, b.node};
  node.value = std::move(value);
  node.requires_grad = a.requires_grad || b.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

namespace {

template <typename F>
Tensor unary_forward(const Tensor& a, F&& f) {
  Tensor value(a.shape());
  for (int i = 0; i < a.size(); ++i) value.data()[i] = f(a.data()[i]);
  return value;
}

}  // namespace

Tensor Tape::relu(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  Node node;
  node.op = OpKind::Relu;
  node.inputs = {a.node};
  node.value = unary_forward(a, [](double x) { return x > 0.0 ? x : 0.0; });
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::tanh(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  Node node;
  node.op = OpKind::Tanh;
  node.inputs = {a.node};
  node.value = unary_forward(a, [](double x) { return std::tanh(x); });
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::sigmoid(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  Node node;
  node.op = OpKind::Sigmoid;
  node.inputs = {a.node};
  node.value = unary_forward(a, [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::exp(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  Node node;
  node.op = OpKind::Exp;
  node.inputs = {a.node};
  node.value = unary_forward(a, [](double x) { return std::exp(x); });
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::log(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  for (int i = 0; i < a.size(); ++i) {
    if (a.data()[i] <= 0.0) throw DomainError("log of non-positive value " + std::to_string(a.data()[i]));
  }
  Node node;
  node.op = OpKind::Log;
  node.inputs = {a.node};
  node.value = unary_forward(a, [](double x) { return std::log(x); });
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::neg(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  Node node;
  node.op = OpKind::Neg;
  node.inputs = {a.node};
  node.value = unary_forward(a, [](double x) { return -x; });
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::sum(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  double acc = 0.0;
  for (int i = 0; i < a.size(); ++i) acc += a.data()[i];
  Node node;
  node.op = OpKind::Sum;
  node.inputs = {a.node};
  node.value = Tensor::scalar(acc);
  node.requires_grad = a.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::max_over_spatial(const Tensor& a_in) {
  const Tensor a = checked_input(a_in);
  if (a.rank() != 3) throw ShapeError("max_over_spatial expects rank 3, got " + shape_to_string(a.shape()));
  const int spatial = a.dim(0) * a.dim(1);
  const int depth = a.dim(2);
  Tensor value({depth});
  std::vector<int> argmax(static_cast<std::size_t>(depth), 0);
  for (int d = 0; d < depth; ++d) value.data()[d] = a.data()[d];
  for (int sp = 1; sp < spatial; ++sp) {
    const double* row = a.data() + static_cast<std::size_t>(sp) * depth;
    for (int d = 0; d < depth; ++d) {
      // strict > keeps the first row-major argmax on ties
      if (row[d] > value.data()[d]) {
        value.data()[d] = row[d];
        argmax[static_cast<std::size_t>(d)] = sp;
      }
    }
  }
  Node node;
  node.op = OpKind::MaxOverSpatial;
  node.inputs = {a.node};
  node.value = std::move(value);
  node.requires_grad = a.requires_grad;
  node.aux = std::move(argmax);
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::mean_masked(const Tensor& t_in, const Tensor& mask_in) {
  const Tensor t = checked_input(t_in);
  const Tensor mask = checked_input(mask_in);
  if (t.rank() != 1 || mask.rank() != 1 || t.dim(0) != mask.dim(0)) {
    throw ShapeError("mean_masked shapes disagree: " + shape_to_string(t.shape()) + " and " + shape_to_string(mask.shape()));
  }
  int n_valid = 0;
  double acc = 0.0;
  for (int i = 0; i < t.size(); ++i) {
    const double m = mask.data()[i];
    if (m != 0.0 && m != 1.0) throw DomainError("mean_masked mask entries must be 0 or 1, got " + std::to_string(m));
    if (m == 1.0) {
      acc += t.data()[i];
      ++n_valid;
    }
  }
  if (n_valid == 0) throw DomainError("mean_masked over empty caption: mask has no valid entries");
  Node node;
  node.op = OpKind::MeanMasked;
  node.inputs = {t.node, mask.node};
  node.value = Tensor::scalar(acc / n_valid);
  node.requires_grad = t.requires_grad;
  node.aux = {n_valid};
  Tensor out;
  push(std::move(node), &out);
  return out;
}

Tensor Tape::log_sum_exp(const Tensor& t_in) {
  const Tensor t = checked_input(t_in);
  if (t.rank() != 1 || t.dim(0) < 1) throw ShapeError("log_sum_exp expects non-empty rank 1, got " + shape_to_string(t.shape()));
  double m = t.data()[0];
  for (int i = 1; i < t.size(); ++i) m = std::max(m, t.data()[i]);
  double acc = 0.0;
  for (int i = 0; i < t.size(); ++i) acc += std::exp(t.data()[i] - m);
  Node node;
  node.op = OpKind::LogSumExp;
  node.inputs = {t.node};
  node.value = Tensor::scalar(m + std::log(acc));
  node.requires_grad = t.requires_grad;
  Tensor out;
  push(std::move(node), &out);
  return out;
}

void Tape::accumulate(NodeId id, const double* g, int n) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) node.grad = Tensor::zeros(node.value.shape());
  double* dst = node.grad.data();
  for (int i = 0; i < n; ++i) dst[i] += g[i];
}

void Tape::backward_step(const Node& node) {
  Tensor scaled;
  const Tensor* gp = &node.grad;
  if (fault_armed_ && node.op == fault_op_) {
    scaled = node.grad;
    for (int i = 0; i < scaled.size(); ++i) scaled.data()[i] *= fault_factor_;
    gp = &scaled;
  }
  const Tensor& g = *gp;
  const auto in = [&](std::size_t i) -> const Node& { return nodes_[static_cast<std::size_t>(node.inputs[i])]; };
  const auto wants = [&](std::size_t i) { return in(i).requires_grad; };

  switch (node.op) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul: {
      const int m = node.aux[0], k = node.aux[1], n = node.aux[2];
      const Tensor& a = in(0).value;
      const Tensor& b = in(1).value;
      if (wants(0)) {
        Tensor da = Tensor::zeros(a.shape());
        gemm_nt(g.data(), b.data(), da.data(), m, n, k);  // dA = dC * B^T
        accumulate(node.inputs[0], da.data(), da.size());
      }
      if (wants(1)) {
        Tensor db = Tensor::zeros(b.shape());
        gemm_tn(a.data(), g.data(), db.data(), k, m, n);  // dB = A^T * dC
        accumulate(node.inputs[1], db.data(), db.size());
      }
      break;
    }
    case OpKind::Transpose: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        const int r = a.dim(0), c = a.dim(1);
        Tensor da({r, c});
        for (int i = 0; i < c; ++i)
          for (int j = 0; j < r; ++j) da.data()[static_cast<std::size_t>(j) * c + i] = g.data()[static_cast<std::size_t>(i) * r + j];
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::Reshape:
      if (wants(0)) accumulate(node.inputs[0], g.data(), g.size());
      break;
    case OpKind::SliceRow: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor da = Tensor::zeros(a.shape());
        const int c = a.dim(1);
        std::memcpy(da.data() + static_cast<std::size_t>(node.aux[0]) * c, g.data(), sizeof(double) * static_cast<std::size_t>(c));
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::Element: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor da = Tensor::zeros(a.shape());
        da.data()[static_cast<std::size_t>(node.aux[0]) * a.dim(1) + node.aux[1]] = g.data()[0];
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::StackRows: {
      const int c = node.value.dim(1);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        if (wants(i)) accumulate(node.inputs[i], g.data() + i * static_cast<std::size_t>(c), c);
      }
      break;
    }
    case OpKind::StackScalars: {
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        if (wants(i)) accumulate(node.inputs[i], g.data() + i, 1);
      }
      break;
    }
    case OpKind::Im2Col: {
      if (wants(0)) {
        const int h = node.aux[0], w = node.aux[1], ch = node.aux[2];
        const int kernel = node.aux[3], stride = node.aux[4], oh = node.aux[5], ow = node.aux[6];
        Tensor da = Tensor::zeros({h, w, ch});
        const double* gp2 = g.data();
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            for (int dy = 0; dy < kernel; ++dy) {
              double* dst = da.data() + (static_cast<std::size_t>(oy * stride + dy) * w + static_cast<std::size_t>(ox * stride)) * ch;
              for (int t = 0; t < kernel * ch; ++t) dst[t] += gp2[t];
              gp2 += kernel * ch;
            }
          }
        }
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::AddRowVec: {
      if (wants(0)) accumulate(node.inputs[0], g.data(), g.size());
      if (wants(1)) {
        const int r = node.value.dim(0), c = node.value.dim(1);
        Tensor dv = Tensor::zeros({c});
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) dv.data()[j] += g.data()[static_cast<std::size_t>(i) * c + j];
        accumulate(node.inputs[1], dv.data(), c);
      }
      break;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = in(0).value;
      const Tensor& b = in(1).value;
      const bool sa = a.size() == 1, sb = b.size() == 1;
      if (wants(0)) {
        Tensor da = Tensor::zeros(a.shape());
        for (int i = 0; i < g.size(); ++i) {
          double d = g.data()[i];
          if (node.op == OpKind::Mul) d *= b.data()[sb ? 0 : i];
          da.data()[sa ? 0 : i] += d;
        }
        accumulate(node.inputs[0], da.data(), da.size());
      }
      if (wants(1)) {
        Tensor db = Tensor::zeros(b.shape());
        for (int i = 0; i < g.size(); ++i) {
          double d = g.data()[i];
          if (node.op == OpKind::Sub) d = -d;
          if (node.op == OpKind::Mul) d = g.data()[i] * a.data()[sa ? 0 : i];
          db.data()[sb ? 0 : i] += d;
        }
        accumulate(node.inputs[1], db.data(), db.size());
      }
      break;
    }
    case OpKind::Relu: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor da(a.shape());
        for (int i = 0; i < a.size(); ++i) da.data()[i] = a.data()[i] > 0.0 ? g.data()[i] : 0.0;
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::Tanh: {
      if (wants(0)) {
        const Tensor& y = node.value;
        Tensor da(y.shape());
        for (int i = 0; i < y.size(); ++i) da.data()[i] = g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::Sigmoid: {
      if (wants(0)) {
        const Tensor& y = node.value;
        Tensor da(y.shape());
        for (int i = 0; i < y.size(); ++i) da.data()[i] = g.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::Exp: {
      if (wants(0)) {
        const Tensor& y = node.value;
        Tensor da(y.shape());
        for (int i = 0; i < y.size(); ++i) da.data()[i] = g.data()[i] * y.data()[i];
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::Log: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor da(a.shape());
        for (int i = 0; i < a.size(); ++i) da.data()[i] = g.data()[i] / a.data()[i];
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::Neg: {
      if (wants(0)) {
        Tensor da(in(0).value.shape());
        for (int i = 0; i < da.size(); ++i) da.data()[i] = -g.data()[i];
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::Sum: {
      if (wants(0)) {
        Tensor da = Tensor::full(in(0).value.shape(), g.data()[0]);
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::MaxOverSpatial: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        const int depth = a.dim(2);
        Tensor da = Tensor::zeros(a.shape());
        for (int d = 0; d < depth; ++d) {
          da.data()[static_cast<std::size_t>(node.aux[static_cast<std::size_t>(d)]) * depth + d] = g.data()[d];
        }
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::MeanMasked: {
      if (wants(0)) {
        const Tensor& mask = in(1).value;
        const double inv = 1.0 / node.aux[0];
        Tensor da(mask.shape());
        for (int i = 0; i < mask.size(); ++i) da.data()[i] = g.data()[0] * mask.data()[i] * inv;
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
    case OpKind::LogSumExp: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        const double y = node.value.data()[0];
        Tensor da(a.shape());
        for (int i = 0; i < a.size(); ++i) da.data()[i] = g.data()[0] * std::exp(a.data()[i] - y);
        accumulate(node.inputs[0], da.data(), da.size());
      }
      break;
    }
  }
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward expects a scalar loss, got " + shape_to_string(loss.shape()));
  if (loss.node == kNoNode || loss.owner != this) throw ConfigError("loss tensor is not on this tape");
  for (Node& n : nodes_) n.grad = Tensor();
  Node& ln = nodes_[static_cast<std::size_t>(loss.node)];
  ln.grad = Tensor::full(ln.value.shape(), 1.0);
  if (!ln.requires_grad) return;  // nothing depends on any leaf
  for (NodeId id = loss.node; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0 || !n.requires_grad) continue;
    backward_step(n);
  }
}

bool Tape::has_grad(const Tensor& t) const {
  return t.node != kNoNode && t.owner == this && node_at(t.node).grad.size() != 0;
}

const Tensor& Tape::grad(const Tensor& t) const {
  if (t.node == kNoNode || t.owner != this) throw ConfigError("tensor is not on this tape");
  return grad(t.node);
}

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = node_at(id);
  if (n.grad.size() == 0) throw DomainError("no gradient recorded for node " + std::to_string(id) + "; run backward() first");
  return n.grad;
}

std::vector<std::pair<NodeId, Tensor>> Tape::leaf_gradients() const {
  std::vector<std::pair<NodeId, Tensor>> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == OpKind::Leaf && n.requires_grad && n.grad.size() != 0) out.emplace_back(static_cast<NodeId>(i), n.grad);
  }
  return out;
}

}  // namespace coloc
