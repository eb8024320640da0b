#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace vwapsig {

// Dense row-major matrix of doubles. Vectors are 1xN, scalars 1x1.
struct Tensor {
  std::vector<std::size_t> shape;  // {rows, cols}
  std::vector<double> v;

  Tensor() : shape{0, 0} {}
  Tensor(std::size_t r, std::size_t c) : shape{r, c}, v(r * c, 0.0) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> data)
      : shape{r, c}, v(std::move(data)) {
    if (v.size() != r * c) throw std::invalid_argument("Tensor: data size != rows*cols");
  }

  static Tensor scalar(double x) { return Tensor(1, 1, {x}); }
  static Tensor row(std::vector<double> x) {
    const std::size_t n = x.size();
    return Tensor(1, n, std::move(x));
  }
  static Tensor full(std::size_t r, std::size_t c, double x) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
  }

  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  double& at(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }
  double* row_ptr(std::size_t i) { return v.data() + i * shape[1]; }
  const double* row_ptr(std::size_t i) const { return v.data() + i * shape[1]; }

  double item() const {
    assert(v.size() == 1);
    return v[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const {
    return "(" + std::to_string(rows()) + "x" + std::to_string(cols()) + ")";
  }
};

inline void check_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

}  // namespace vwapsig
