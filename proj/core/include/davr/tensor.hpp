#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace davr {

// Dense row-major tensor of doubles. Images and feature maps use [N,C,H,W].
// Compute runs in double; parameters are kept at values exactly representable
// in 32-bit floats (see quantize_f32) so checkpoints round-trip bit-exactly.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape, double fill = 0.0);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor from_vector(std::vector<int64_t> shape, std::vector<double> values);

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-d and 4-d element access. Bounds are the caller's responsibility.
  double& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at2(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(double v);
  Tensor reshaped(std::vector<int64_t> new_shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double sum() const;
  double mean() const;
  double min() const;
  double max() const;
  bool all_finite() const;

  std::string shape_str() const;

private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

// Round every element to its nearest float32 value (kept in double storage).
void quantize_f32(Tensor& t);

// General matrix multiply: C = A(m,k) * B(k,n), optionally accumulating into C.
// Parallelized over rows; bitwise deterministic regardless of thread count.
void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
          bool accumulate = false);
// C = A^T(m,k with A stored k-major) ... explicit transposed variants.
void gemm_at(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate = false);  // C(m,n) = A(k,m)^T * B(k,n)
void gemm_bt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate = false);  // C(m,n) = A(m,k) * B(n,k)^T

}  // namespace davr
