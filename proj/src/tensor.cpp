#include "deferkit/tensor.hpp"

#include <cmath>
#include <numeric>

#include "deferkit/errors.hpp"

namespace deferkit {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  data_.assign(n, fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data_[0] = v;
  return t;
}

Tensor Tensor::vector(std::vector<double> v) {
  Tensor t;
  t.shape_ = {v.size()};
  t.data_ = std::move(v);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  if (v.size() != rows * cols)
    throw ContractError("Tensor::matrix: data length does not match rows*cols");
  Tensor t;
  t.shape_ = {rows, cols};
  t.data_ = std::move(v);
  return t;
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ContractError("Tensor::rows: rank-2 tensor required");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ContractError("Tensor::cols: rank-2 tensor required");
  return shape_[1];
}

double& Tensor::at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

double Tensor::at2(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("Tensor::item: scalar tensor required");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double v) { data_.assign(data_.size(), v); }

std::size_t Tensor::argmax_lowest_tie() const {
  if (data_.empty()) throw ContractError("argmax of empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < data_.size(); ++i)
    if (data_[i] > data_[best]) best = i;
  return best;
}

double linf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace deferkit
