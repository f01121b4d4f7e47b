#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gaisim {

/// Dense row-major tensor of doubles with an optional gradient buffer.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until allocated, else same length as data

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);

  static Tensor scalar(double v);
  static Tensor from(std::vector<int> s, std::vector<double> values);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  // 1-d / 2-d / 3-d element access
  double& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
  double operator()(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double& at3(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at3(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  void ensure_grad();
  void zero_grad();
  bool has_grad() const { return !grad.empty(); }
  bool all_finite() const;
};

std::int64_t shape_numel(const std::vector<int>& shape);
bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_str(const std::vector<int>& shape);

}  // namespace gaisim
