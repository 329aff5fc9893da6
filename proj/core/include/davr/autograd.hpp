#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "davr/rng.hpp"
#include "davr/tensor.hpp"

namespace davr {

// Reverse-mode automatic differentiation over a dynamically built DAG.
// Every forward op records a closure that scatters the node's gradient into
// its parents; backward() replays the closures in reverse creation order.
// Gradients through shared parameters (the DAN stem, siamese branches)
// accumulate naturally because the same node appears as a parent twice.

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  int64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this node's grad

  bool has_grad() const { return !grad.empty(); }
  void accumulate(const Tensor& delta);
  void ensure_grad();
};

class Var {
public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = false);
  static Var scalar(double v) { return leaf(Tensor::scalar(v)); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Vars are shared handles; mutating the stored tensor through a const
  // handle is deliberate (optimizers, checkpoint loads).
  Tensor& mutable_value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<int64_t>& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  double item() const { return node_->value[0]; }
  std::shared_ptr<Node> node() const { return node_; }
  void zero_grad() const { node_->grad = Tensor(); }

private:
  std::shared_ptr<Node> node_;
};

// Runs the reverse pass from a scalar loss. Seeds d(loss)/d(loss) = 1.
void backward(const Var& loss);

// Disables graph construction (forward values only) while alive.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};
bool grad_enabled();

// ---- elementwise / broadcasting ----
// Binary ops broadcast numpy-style (trailing dims aligned, size-1 stretched).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh_act(const Var& x);
Var sigmoid(const Var& x);
Var abs_act(const Var& x);
Var square(const Var& x);
Var sqrt_act(const Var& x);

// ---- reductions ----
Var sum_all(const Var& x);
Var mean_all(const Var& x);
// Mean over the axes listed in `axes`, kept as size-1 dims.
Var mean_axes_keepdim(const Var& x, const std::vector<int>& axes);

// ---- shape ----
Var reshape(const Var& x, std::vector<int64_t> shape);
Var concat(const std::vector<Var>& parts, int axis);
Var detach(const Var& x);

// ---- linear algebra / layers ----
Var matmul(const Var& a, const Var& b);                      // [m,k]x[k,n]
Var linear(const Var& x, const Var& w, const Var& b);        // x[N,D], w[O,D], b[O]
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
                     int output_pad);
Var maxpool2d(const Var& x, int kernel, int stride, int pad);

// Global average pool [N,C,H,W] -> [N,C].
Var global_avg_pool(const Var& x);

// Row-wise softmax over [N,C].
Var softmax_rows(const Var& x);
// Mean softmax cross-entropy of logits [N,C] against integer labels.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

// Per-image gram matrices: [N,C,H,W] -> [N,C,C], G_n = F_n F_n^T (unnormalized).
Var gram_batch(const Var& x);

// Inverted dropout; identity when !training or p == 0.
Var dropout(const Var& x, double p, Rng& rng, bool training);

// im2col/col2im exposed for reuse and tests.
void im2col(const double* img, int64_t c, int64_t h, int64_t w, int kh, int kw, int stride,
            int pad, double* cols);
void col2im(const double* cols, int64_t c, int64_t h, int64_t w, int kh, int kw, int stride,
            int pad, double* img, bool accumulate);
void conv_out_size(int64_t h, int64_t w, int kh, int kw, int stride, int pad, int64_t* ho,
                   int64_t* wo);

}  // namespace davr
