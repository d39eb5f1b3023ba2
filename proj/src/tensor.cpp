#include "coloc/tensor.hpp"

#include <cmath>

#include "coloc/errors.hpp"

namespace coloc {

namespace {

int checked_size(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(shape));
    n *= d;
    if (n > (1LL << 30)) throw ShapeError("tensor too large: " + shape_to_string(shape));
  }
  return static_cast<int>(n);
}

}  // namespace

std::string shape_to_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  size_ = checked_size(shape_);
  data_.assign(static_cast<std::size_t>(size_), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  size_ = checked_size(shape_);
  if (static_cast<std::size_t>(size_) != data_.size()) {
    throw ShapeError("shape " + shape_to_string(shape_) + " does not match data length " + std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::initializer_list<double> v) {
  return Tensor(std::move(shape), std::vector<double>(v));
}

double& Tensor::at(int i) {
  if (rank() != 1 || i < 0 || i >= shape_[0]) throw IndexError("index " + std::to_string(i) + " invalid for " + shape_to_string(shape_));
  return data_[static_cast<std::size_t>(i)];
}

double& Tensor::at(int i, int j) {
  if (rank() != 2 || i < 0 || i >= shape_[0] || j < 0 || j >= shape_[1]) {
    throw IndexError("index (" + std::to_string(i) + "," + std::to_string(j) + ") invalid for " + shape_to_string(shape_));
  }
  return data_[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j)];
}

double& Tensor::at(int i, int j, int k) {
  if (rank() != 3 || i < 0 || i >= shape_[0] || j < 0 || j >= shape_[1] || k < 0 || k >= shape_[2]) {
    throw IndexError("index (" + std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k) + ") invalid for " + shape_to_string(shape_));
  }
  return data_[(static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j)) * static_cast<std::size_t>(shape_[2]) +
               static_cast<std::size_t>(k)];
}

double Tensor::at(int i) const { return const_cast<Tensor*>(this)->at(i); }
double Tensor::at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }
double Tensor::at(int i, int j, int k) const { return const_cast<Tensor*>(this)->at(i, j, k); }

double Tensor::item() const {
  if (size_ != 1) throw ShapeError("item() on non-scalar tensor " + shape_to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace coloc
