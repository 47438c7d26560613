#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cppap/errors.hpp"

namespace cppap {

// Dense row-major float64 tensor. Immutable by convention once built into a
// graph; plain value semantics otherwise.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  // Uniform on [lo, hi).
  static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi,
                        std::mt19937_64& rng);
  // Glorot-uniform given fan_in/fan_out.
  static Tensor glorot(std::vector<std::size_t> shape, std::size_t fan_in,
                       std::size_t fan_out, std::mt19937_64& rng);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  double item() const;  // requires size()==1

  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  // Throws NumericError naming `what` if any entry is NaN/Inf.
  void check_finite(const std::string& what) const;

  static std::size_t count(const std::vector<std::size_t>& shape);
  static std::string shape_str(const std::vector<std::size_t>& shape);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace cppap
