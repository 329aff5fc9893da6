#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "davr/autograd.hpp"
#include "davr/rng.hpp"
#include "davr/tensor.hpp"

namespace davr {

struct NamedParam {
  std::string name;
  Var var;
};

// Non-trainable state (batch-norm running statistics). Shared so layer copies
// stay aliased, like the Var-held parameters.
struct NamedBuffer {
  std::string name;
  std::shared_ptr<Tensor> tensor;
};

// All parameters are snapped to float32-representable values after init and
// after every optimizer step: checkpoints serialize raw f32 and must reload
// into a bit-identical model.
Var make_param(Tensor init);
void init_normal(Tensor& t, Rng& rng, double mean, double stddev);
void init_kaiming_conv(Tensor& t, Rng& rng);  // fan_in from [Cout,Cin,kh,kw]

struct Conv2dLayer {
  Var w, b;
  int stride = 1, pad = 0;

  static Conv2dLayer create(int64_t cin, int64_t cout, int kernel, int stride, int pad, Rng& rng,
                            double wstd = 0.02);
  static Conv2dLayer create_kaiming(int64_t cin, int64_t cout, int kernel, int stride, int pad,
                                    Rng& rng);
  Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct ConvTranspose2dLayer {
  Var w, b;
  int stride = 2, pad = 1, output_pad = 1;

  static ConvTranspose2dLayer create(int64_t cin, int64_t cout, int kernel, int stride, int pad,
                                     int output_pad, Rng& rng, double wstd = 0.02);
  Var forward(const Var& x) const { return conv_transpose2d(x, w, b, stride, pad, output_pad); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct LinearLayer {
  Var w, b;

  static LinearLayer create(int64_t in, int64_t out, Rng& rng, double wstd);
  static LinearLayer create_kaiming(int64_t in, int64_t out, Rng& rng);
  Var forward(const Var& x) const { return linear(x, w, b); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct InstanceNormLayer {
  Var gamma, beta;
  double eps = 1e-5;

  static InstanceNormLayer create(int64_t channels);
  Var forward(const Var& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct BatchNormLayer {
  Var gamma, beta;
  std::shared_ptr<Tensor> running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormLayer create(int64_t channels);
  Var forward(const Var& x, bool training) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) const;
};

// ---------------------------------------------------------------------------
// optimizers (state keyed by parameter name so it serializes with checkpoints)
// ---------------------------------------------------------------------------

class AdamOptimizer {
public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<NamedParam>& params);
  static void zero_grad(const std::vector<NamedParam>& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  std::map<std::string, Tensor> export_state() const;
  void import_state(const std::map<std::string, Tensor>& state);

private:
  struct Slot {
    Tensor m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

class SgdOptimizer {
public:
  SgdOptimizer(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<NamedParam>& params);
  static void zero_grad(const std::vector<NamedParam>& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  std::map<std::string, Tensor> export_state() const;
  void import_state(const std::map<std::string, Tensor>& state);

private:
  double lr_, momentum_, weight_decay_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace davr
