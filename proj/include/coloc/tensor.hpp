#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace coloc {

class Tape;

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

std::string shape_to_string(const std::vector<int>& shape);

// Dense row-major tensor of 64-bit floats. Rank 0 (scalar) through 3.
// A tensor optionally carries a handle onto the tape that produced it;
// off-tape tensors are plain values.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor from(std::vector<int> shape, std::initializer_list<double> v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int size() const { return size_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& at(int i);
  double& at(int i, int j);
  double& at(int i, int j, int k);
  double at(int i) const;
  double at(int i, int j) const;
  double at(int i, int j, int k) const;

  // Value of a single-element tensor.
  double item() const;

  bool all_finite() const;

  bool requires_grad = false;

  // Handle into the tape that recorded this tensor, if any.
  NodeId node = kNoNode;
  const Tape* owner = nullptr;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
  int size_ = 0;
};

}  // namespace coloc
