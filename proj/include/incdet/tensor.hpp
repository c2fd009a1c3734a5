#pragma once

#include <cassert>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace incdet {

/// Dense row-major double tensor. Rank is 1..4; feature maps use (C,H,W) and
/// conv kernels (OC,IC,KH,KW).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, 0.0);
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // (C,H,W)
  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  // (OC,IC,KH,KW)
  double& at4(int o, int i, int ky, int kx) {
    return data_[((static_cast<std::size_t>(o) * shape_[1] + i) * shape_[2] + ky) * shape_[3] + kx];
  }
  double at4(int o, int i, int ky, int kx) const {
    return data_[((static_cast<std::size_t>(o) * shape_[1] + i) * shape_[2] + ky) * shape_[3] + kx];
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  void add_scaled(const Tensor& o, double s) {
    assert(same_shape(o));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace incdet
