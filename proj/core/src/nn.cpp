#include "davr/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace davr {

Var make_param(Tensor init) {
  quantize_f32(init);
  return Var::leaf(std::move(init), true);
}

void init_normal(Tensor& t, Rng& rng, double mean, double stddev) {
  double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.normal(mean, stddev);
}

void init_kaiming_conv(Tensor& t, Rng& rng) {
  const auto& s = t.shape();
  double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
  init_normal(t, rng, 0.0, std::sqrt(2.0 / fan_in));
}

Conv2dLayer Conv2dLayer::create(int64_t cin, int64_t cout, int kernel, int stride, int pad,
                                Rng& rng, double wstd) {
  Conv2dLayer l;
  Tensor w({cout, cin, kernel, kernel});
  init_normal(w, rng, 0.0, wstd);
  l.w = make_param(std::move(w));
  l.b = make_param(Tensor({cout}));
  l.stride = stride;
  l.pad = pad;
  return l;
}

Conv2dLayer Conv2dLayer::create_kaiming(int64_t cin, int64_t cout, int kernel, int stride,
                                        int pad, Rng& rng) {
  Conv2dLayer l;
  Tensor w({cout, cin, kernel, kernel});
  init_kaiming_conv(w, rng);
  l.w = make_param(std::move(w));
  l.b = make_param(Tensor({cout}));
  l.stride = stride;
  l.pad = pad;
  return l;
}

void Conv2dLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".weight", w});
  out.push_back({prefix + ".bias", b});
}

ConvTranspose2dLayer ConvTranspose2dLayer::create(int64_t cin, int64_t cout, int kernel,
                                                  int stride, int pad, int output_pad, Rng& rng,
                                                  double wstd) {
  ConvTranspose2dLayer l;
  Tensor w({cin, cout, kernel, kernel});
  init_normal(w, rng, 0.0, wstd);
  l.w = make_param(std::move(w));
  l.b = make_param(Tensor({cout}));
  l.stride = stride;
  l.pad = pad;
  l.output_pad = output_pad;
  return l;
}

void ConvTranspose2dLayer::collect(const std::string& prefix,
                                   std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".weight", w});
  out.push_back({prefix + ".bias", b});
}

LinearLayer LinearLayer::create(int64_t in, int64_t out, Rng& rng, double wstd) {
  LinearLayer l;
  Tensor w({out, in});
  init_normal(w, rng, 0.0, wstd);
  l.w = make_param(std::move(w));
  l.b = make_param(Tensor({out}));
  return l;
}

LinearLayer LinearLayer::create_kaiming(int64_t in, int64_t out, Rng& rng) {
  return create(in, out, rng, std::sqrt(2.0 / static_cast<double>(in)));
}

void LinearLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".weight", w});
  out.push_back({prefix + ".bias", b});
}

InstanceNormLayer InstanceNormLayer::create(int64_t channels) {
  InstanceNormLayer l;
  l.gamma = make_param(Tensor::full({channels}, 1.0));
  l.beta = make_param(Tensor({channels}));
  return l;
}

Var InstanceNormLayer::forward(const Var& x) const {
  int64_t c = x.shape()[1];
  Var mu = mean_axes_keepdim(x, {2, 3});
  Var xc = sub(x, mu);
  Var var = mean_axes_keepdim(square(xc), {2, 3});
  Var norm = div(xc, sqrt_act(add_scalar(var, eps)));
  Var g4 = reshape(gamma, {1, c, 1, 1});
  Var b4 = reshape(beta, {1, c, 1, 1});
  return add(mul(norm, g4), b4);
}

void InstanceNormLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

BatchNormLayer BatchNormLayer::create(int64_t channels) {
  BatchNormLayer l;
  l.gamma = make_param(Tensor::full({channels}, 1.0));
  l.beta = make_param(Tensor({channels}));
  l.running_mean = std::make_shared<Tensor>(Tensor({channels}));
  l.running_var = std::make_shared<Tensor>(Tensor::full({channels}, 1.0));
  return l;
}

Var BatchNormLayer::forward(const Var& x, bool training) const {
  int64_t c = x.shape()[1];
  Var g4 = reshape(gamma, {1, c, 1, 1});
  Var b4 = reshape(beta, {1, c, 1, 1});
  if (training) {
    Var mu = mean_axes_keepdim(x, {0, 2, 3});
    Var xc = sub(x, mu);
    Var var = mean_axes_keepdim(square(xc), {0, 2, 3});
    // running statistics update; not part of the gradient graph
    for (int64_t i = 0; i < c; ++i) {
      (*running_mean)[i] = (1.0 - momentum) * (*running_mean)[i] + momentum * mu.value()[i];
      (*running_var)[i] = (1.0 - momentum) * (*running_var)[i] + momentum * var.value()[i];
    }
    quantize_f32(*running_mean);
    quantize_f32(*running_var);
    Var norm = div(xc, sqrt_act(add_scalar(var, eps)));
    return add(mul(norm, g4), b4);
  }
  Tensor mu_t = running_mean->reshaped({1, c, 1, 1});
  Tensor sd_t({1, c, 1, 1});
  for (int64_t i = 0; i < c; ++i) sd_t[i] = std::sqrt((*running_var)[i] + eps);
  Var norm = div(sub(x, Var::leaf(std::move(mu_t))), Var::leaf(std::move(sd_t)));
  return add(mul(norm, g4), b4);
}

void BatchNormLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNormLayer::collect_buffers(const std::string& prefix,
                                     std::vector<NamedBuffer>& out) const {
  out.push_back({prefix + ".running_mean", running_mean});
  out.push_back({prefix + ".running_var", running_var});
}

// ---------------------------------------------------------------------------

void AdamOptimizer::step(const std::vector<NamedParam>& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const NamedParam& p : params) {
    if (!p.var.node()->has_grad()) continue;
    Slot& slot = slots_[p.name];
    Tensor& value = p.var.mutable_value();
    if (slot.m.empty()) {
      slot.m = Tensor(value.shape());
      slot.v = Tensor(value.shape());
    }
    const double* g = p.var.grad().data();
    double* m = slot.m.data();
    double* v = slot.v.data();
    double* w = value.data();
    for (int64_t i = 0; i < value.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    quantize_f32(value);
  }
}

void AdamOptimizer::zero_grad(const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) p.var.node()->grad = Tensor();
}

std::map<std::string, Tensor> AdamOptimizer::export_state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, slot] : slots_) {
    out["adam.m." + name] = slot.m;
    out["adam.v." + name] = slot.v;
  }
  out["adam.t"] = Tensor::scalar(static_cast<double>(t_));
  return out;
}

void AdamOptimizer::import_state(const std::map<std::string, Tensor>& state) {
  slots_.clear();
  t_ = 0;
  for (const auto& [name, tensor] : state) {
    if (name == "adam.t") {
      t_ = static_cast<int64_t>(tensor[0]);
    } else if (name.rfind("adam.m.", 0) == 0) {
      slots_[name.substr(7)].m = tensor;
    } else if (name.rfind("adam.v.", 0) == 0) {
      slots_[name.substr(7)].v = tensor;
    }
  }
}

void SgdOptimizer::step(const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) {
    if (!p.var.node()->has_grad()) continue;
    Tensor& value = p.var.mutable_value();
    Tensor& vel = velocity_[p.name];
    if (vel.empty()) vel = Tensor(value.shape());
    const double* g = p.var.grad().data();
    double* v = vel.data();
    double* w = value.data();
    for (int64_t i = 0; i < value.numel(); ++i) {
      double grad = g[i] + weight_decay_ * w[i];
      v[i] = momentum_ * v[i] + grad;
      w[i] -= lr_ * v[i];
    }
    quantize_f32(value);
  }
}

void SgdOptimizer::zero_grad(const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) p.var.node()->grad = Tensor();
}

std::map<std::string, Tensor> SgdOptimizer::export_state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : velocity_) out["sgd.v." + name] = v;
  return out;
}

void SgdOptimizer::import_state(const std::map<std::string, Tensor>& state) {
  velocity_.clear();
  for (const auto& [name, tensor] : state)
    if (name.rfind("sgd.v.", 0) == 0) velocity_[name.substr(6)] = tensor;
}

}  // namespace davr
