// Copyright 2026 The voxrecon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied. See the License for the specific language governing
// permissions and limitations under the License.

#ifndef VOXRECON_TENSOR_HPP
#define VOXRECON_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "voxrecon/errors.hpp"

namespace voxrecon {

/// Dense N-dimensional array of doubles, row-major with the last axis
/// fastest. Carries images (C x H x W), activations, and gradients.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {
    for (std::size_t e : shape_)
      if (e == 0) throw data_error("Tensor: zero extent in shape");
  }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t;
    if (count(shape) != data.size())
      throw data_error("Tensor: shape/data size mismatch (" +
                       std::to_string(count(shape)) + " vs " +
                       std::to_string(data.size()) + ")");
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Rank-3 accessors for the common channels x rows x cols layout.
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  Tensor reshaped(std::vector<std::size_t> new_shape) const {
    if (count(new_shape) != data_.size())
      throw data_error("Tensor::reshaped: element count mismatch");
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void require_finite(const char* context) const {
    if (!all_finite()) throw numeric_error(std::string(context) + ": non-finite value");
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
  double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

  double squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "Tensor::operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "Tensor::operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
  }

private:
  void require_same_shape(const Tensor& o, const char* context) const {
    if (shape_ != o.shape_)
      throw data_error(std::string(context) + ": shape mismatch");
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw data_error("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

} // namespace voxrecon

#endif // VOXRECON_TENSOR_HPP
