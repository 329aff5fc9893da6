#include "davr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace davr {

namespace {
int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor Tensor::from_vector(std::vector<int64_t> shape, std::vector<double> values) {
  Tensor t;
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("Tensor::from_vector: shape does not match value count");
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw std::invalid_argument("Tensor::reshaped: element count mismatch (" + shape_str() + ")");
  Tensor t = *this;
  t.shape_ = std::move(new_shape);
  return t;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(numel()); }

double Tensor::min() const {
  double m = std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::min(m, v);
  return m;
}

double Tensor::max() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::max(m, v);
  return m;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << "]";
  return os.str();
}

void quantize_f32(Tensor& t) {
  double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<double>(static_cast<float>(p[i]));
}

void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
          bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (int64_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_at(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (int64_t l = 0; l < k; ++l) {
      const double av = a[l * m + i];
      if (av == 0.0) continue;
      const double* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_bt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (int64_t l = 0; l < k; ++l) s += arow[l] * brow[l];
      if (accumulate)
        crow[j] += s;
      else
        crow[j] = s;
    }
  }
}

}  // namespace davr
