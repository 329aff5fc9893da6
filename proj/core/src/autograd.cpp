#include "davr/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace davr {

namespace {

std::atomic<int64_t> g_node_counter{0};
thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_node(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = ++g_node_counter;
  return n;
}

void wire(const std::shared_ptr<Node>& n, std::vector<Var> parents,
          std::function<void(Node&)> backprop) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || p.requires_grad();
  if (!g_grad_enabled || !needs) return;
  n->requires_grad = true;
  for (const Var& p : parents) n->parents.push_back(p.node());
  n->backprop = std::move(backprop);
}

}  // namespace

void Node::ensure_grad() {
  if (grad.empty()) grad = Tensor(value.shape());
}

void Node::accumulate(const Tensor& delta) {
  ensure_grad();
  double* g = grad.data();
  const double* d = delta.data();
  for (int64_t i = 0; i < grad.numel(); ++i) g[i] += d[i];
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = make_node(std::move(value));
  n->requires_grad = requires_grad && g_grad_enabled;
  return Var(n);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  Node* root = loss.node().get();
  if (!root->requires_grad) return;
  root->ensure_grad();
  root->grad[0] += 1.0;

  // Reverse pass in decreasing creation order; ids are strictly increasing so
  // every node runs after all of its consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
  for (Node* n : order) {
    if (n->backprop && n->has_grad()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// broadcasting
// ---------------------------------------------------------------------------

namespace {

struct BroadcastPlan {
  std::vector<int64_t> out_shape;
  std::vector<int64_t> stride_a;  // 0 on broadcast axes
  std::vector<int64_t> stride_b;
  bool same_shape = false;
};

BroadcastPlan plan_broadcast(const std::vector<int64_t>& sa, const std::vector<int64_t>& sb) {
  BroadcastPlan p;
  if (sa == sb) {
    p.out_shape = sa;
    p.same_shape = true;
    return p;
  }
  size_t nd = std::max(sa.size(), sb.size());
  std::vector<int64_t> a(nd, 1), b(nd, 1);
  std::copy(sa.begin(), sa.end(), a.begin() + (nd - sa.size()));
  std::copy(sb.begin(), sb.end(), b.begin() + (nd - sb.size()));
  p.out_shape.resize(nd);
  for (size_t i = 0; i < nd; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
      throw std::invalid_argument("broadcast: incompatible shapes");
    p.out_shape[i] = std::max(a[i], b[i]);
  }
  p.stride_a.assign(nd, 0);
  p.stride_b.assign(nd, 0);
  int64_t ra = 1, rb = 1;
  for (size_t i = nd; i-- > 0;) {
    if (a[i] != 1) {
      p.stride_a[i] = ra;
      ra *= a[i];
    }
    if (b[i] != 1) {
      p.stride_b[i] = rb;
      rb *= b[i];
    }
  }
  return p;
}

// Applies fwd elementwise with broadcasting; records backward using the two
// partial-derivative callbacks evaluated on forward inputs.
template <class F, class DA, class DB>
Var broadcast_binary(const Var& a, const Var& b, F fwd, DA dfda, DB dfdb) {
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
  Tensor out(plan.out_shape);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  int64_t n = out.numel();

  if (plan.same_shape) {
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    auto node = make_node(std::move(out));
    wire(node, {a, b}, [a, b, dfda, dfdb](Node& self) {
      const double* g = self.grad.data();
      const double* xa = a.value().data();
      const double* xb = b.value().data();
      int64_t count = self.grad.numel();
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        double* ga = a.node()->grad.data();
        for (int64_t i = 0; i < count; ++i) ga[i] += g[i] * dfda(xa[i], xb[i]);
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        double* gb = b.node()->grad.data();
        for (int64_t i = 0; i < count; ++i) gb[i] += g[i] * dfdb(xa[i], xb[i]);
      }
    });
    return Var(node);
  }

  // odometer iteration over the broadcast output
  size_t nd = plan.out_shape.size();
  std::vector<int64_t> idx(nd, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < n; ++i) {
    po[i] = fwd(pa[ia], pb[ib]);
    for (size_t d = nd; d-- > 0;) {
      idx[d]++;
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out_shape[d]) break;
      idx[d] = 0;
      ia -= plan.stride_a[d] * plan.out_shape[d];
      ib -= plan.stride_b[d] * plan.out_shape[d];
    }
  }
  auto node = make_node(std::move(out));
  wire(node, {a, b}, [a, b, plan, dfda, dfdb](Node& self) {
    const double* g = self.grad.data();
    const double* xa = a.value().data();
    const double* xb = b.value().data();
    size_t nd2 = plan.out_shape.size();
    std::vector<int64_t> idx2(nd2, 0);
    int64_t ja = 0, jb = 0;
    bool need_a = a.requires_grad();
    bool need_b = b.requires_grad();
    if (need_a) a.node()->ensure_grad();
    if (need_b) b.node()->ensure_grad();
    double* ga = need_a ? a.node()->grad.data() : nullptr;
    double* gb = need_b ? b.node()->grad.data() : nullptr;
    int64_t count = self.grad.numel();
    for (int64_t i = 0; i < count; ++i) {
      if (need_a) ga[ja] += g[i] * dfda(xa[ja], xb[jb]);
      if (need_b) gb[jb] += g[i] * dfdb(xa[ja], xb[jb]);
      for (size_t d = nd2; d-- > 0;) {
        idx2[d]++;
        ja += plan.stride_a[d];
        jb += plan.stride_b[d];
        if (idx2[d] < plan.out_shape[d]) break;
        idx2[d] = 0;
        ja -= plan.stride_a[d] * plan.out_shape[d];
        jb -= plan.stride_b[d] * plan.out_shape[d];
      }
    }
  });
  return Var(node);
}

template <class F, class DF>
Var unary_op(const Var& x, F fwd, DF dfdx) {
  Tensor out(x.shape());
  const double* px = x.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = fwd(px[i]);
  auto node = make_node(std::move(out));
  wire(node, {x}, [x, dfdx](Node& self) {
    x.node()->ensure_grad();
    double* gx = x.node()->grad.data();
    const double* g = self.grad.data();
    const double* xv = x.value().data();
    const double* yv = self.value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
  });
  return Var(node);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return broadcast_binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return broadcast_binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return broadcast_binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return broadcast_binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var add_scalar(const Var& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var relu(const Var& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary_op(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh_act(const Var& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary_op(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var abs_act(const Var& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary_op(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt_act(const Var& x) {
  return unary_op(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var sum_all(const Var& x) {
  Tensor out = Tensor::scalar(x.value().sum());
  auto node = make_node(std::move(out));
  wire(node, {x}, [x](Node& self) {
    x.node()->ensure_grad();
    double g = self.grad[0];
    double* gx = x.node()->grad.data();
    for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
  return Var(node);
}

Var mean_all(const Var& x) {
  double inv = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(x.value().sum() * inv);
  auto node = make_node(std::move(out));
  wire(node, {x}, [x, inv](Node& self) {
    x.node()->ensure_grad();
    double g = self.grad[0] * inv;
    double* gx = x.node()->grad.data();
    for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
  return Var(node);
}

Var mean_axes_keepdim(const Var& x, const std::vector<int>& axes) {
  const auto& shape = x.shape();
  std::vector<bool> reduced(shape.size(), false);
  for (int a : axes) reduced[static_cast<size_t>(a)] = true;
  std::vector<int64_t> out_shape(shape.size());
  int64_t count = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    out_shape[i] = reduced[i] ? 1 : shape[i];
    if (reduced[i]) count *= shape[i];
  }
  // strides of the output when indexed by the input's multi-index
  std::vector<int64_t> ostride(shape.size(), 0);
  int64_t r = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    if (!reduced[i]) {
      ostride[i] = r;
      r *= shape[i];
    }
  }
  Tensor out(out_shape);
  const double* px = x.value().data();
  double* po = out.data();
  std::vector<int64_t> idx(shape.size(), 0);
  int64_t oi = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    po[oi] += px[i];
    for (size_t d = shape.size(); d-- > 0;) {
      idx[d]++;
      oi += ostride[d];
      if (idx[d] < shape[d]) break;
      idx[d] = 0;
      oi -= ostride[d] * shape[d];
    }
  }
  double inv = 1.0 / static_cast<double>(count);
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= inv;

  auto node = make_node(std::move(out));
  std::vector<int64_t> shape_copy = shape;
  wire(node, {x}, [x, ostride, shape_copy, inv](Node& self) {
    x.node()->ensure_grad();
    double* gx = x.node()->grad.data();
    const double* g = self.grad.data();
    std::vector<int64_t> idx2(shape_copy.size(), 0);
    int64_t oi2 = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
      gx[i] += g[oi2] * inv;
      for (size_t d = shape_copy.size(); d-- > 0;) {
        idx2[d]++;
        oi2 += ostride[d];
        if (idx2[d] < shape_copy[d]) break;
        idx2[d] = 0;
        oi2 -= ostride[d] * shape_copy[d];
      }
    }
  });
  return Var(node);
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  auto node = make_node(std::move(out));
  wire(node, {x}, [x](Node& self) {
    x.node()->ensure_grad();
    double* gx = x.node()->grad.data();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i];
  });
  return Var(node);
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const auto& ref = parts[0].shape();
  std::vector<int64_t> out_shape = ref;
  int64_t axis_total = 0;
  for (const Var& p : parts) {
    const auto& s = p.shape();
    if (s.size() != ref.size()) throw std::invalid_argument("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != ref[i])
        throw std::invalid_argument("concat: shape mismatch off the concat axis");
    axis_total += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  // outer = product of dims before axis, inner = product after
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= ref[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < ref.size(); ++i) inner *= ref[i];

  Tensor out(out_shape);
  double* po = out.data();
  int64_t offset = 0;
  std::vector<int64_t> part_width(parts.size());
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    int64_t w = parts[pi].shape()[static_cast<size_t>(axis)] * inner;
    part_width[pi] = w;
    const double* ps = parts[pi].value().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(ps + o * w, ps + (o + 1) * w, po + o * axis_total * inner + offset);
    offset += w;
  }
  auto node = make_node(std::move(out));
  std::vector<Var> parents = parts;
  wire(node, parents, [parents, part_width, outer, inner, axis_total](Node& self) {
    const double* g = self.grad.data();
    int64_t off = 0;
    for (size_t pi = 0; pi < parents.size(); ++pi) {
      const Var& p = parents[pi];
      int64_t w = part_width[pi];
      if (p.requires_grad()) {
        p.node()->ensure_grad();
        double* gp = p.node()->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = g + o * axis_total * inner + off;
          double* dst = gp + o * w;
          for (int64_t i = 0; i < w; ++i) dst[i] += src[i];
        }
      }
      off += w;
    }
  });
  return Var(node);
}

Var detach(const Var& x) { return Var::leaf(x.value(), false); }

Var matmul(const Var& a, const Var& b) {
  int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor out({m, n});
  gemm(a.value().data(), b.value().data(), out.data(), m, k, n);
  auto node = make_node(std::move(out));
  wire(node, {a, b}, [a, b, m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      gemm_bt(g, b.value().data(), a.node()->grad.data(), m, n, k, true);  // dA = G B^T
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      gemm_at(a.value().data(), g, b.node()->grad.data(), k, m, n, true);  // dB = A^T G
    }
  });
  return Var(node);
}

Var linear(const Var& x, const Var& w, const Var& b) {
  int64_t n = x.shape()[0], d = x.shape()[1], o = w.shape()[0];
  if (w.shape()[1] != d) throw std::invalid_argument("linear: weight/input dimension mismatch");
  Tensor out({n, o});
  gemm_bt(x.value().data(), w.value().data(), out.data(), n, d, o);  // X W^T
  if (b.defined()) {
    double* po = out.data();
    const double* pb = b.value().data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < o; ++j) po[i * o + j] += pb[j];
  }
  auto node = make_node(std::move(out));
  std::vector<Var> parents = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  wire(node, parents, [x, w, b, n, d, o](Node& self) {
    const double* g = self.grad.data();
    if (x.requires_grad()) {
      x.node()->ensure_grad();
      gemm(g, w.value().data(), x.node()->grad.data(), n, o, d, true);  // dX = G W
    }
    if (w.requires_grad()) {
      w.node()->ensure_grad();
      gemm_at(g, x.value().data(), w.node()->grad.data(), o, n, d, true);  // dW = G^T X
    }
    if (b.defined() && b.requires_grad()) {
      b.node()->ensure_grad();
      double* gb = b.node()->grad.data();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < o; ++j) gb[j] += g[i * o + j];
    }
  });
  return Var(node);
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

void conv_out_size(int64_t h, int64_t w, int kh, int kw, int stride, int pad, int64_t* ho,
                   int64_t* wo) {
  *ho = (h + 2 * pad - kh) / stride + 1;
  *wo = (w + 2 * pad - kw) / stride + 1;
}

void im2col(const double* img, int64_t c, int64_t h, int64_t w, int kh, int kw, int stride,
            int pad, double* cols) {
  int64_t ho, wo;
  conv_out_size(h, w, kh, kw, stride, pad, &ho, &wo);
  int64_t span = ho * wo;
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* dst = cols + ((ch * kh + ky) * kw + kx) * span;
        const double* src = img + ch * h * w;
        for (int64_t oy = 0; oy < ho; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst + oy * wo, dst + (oy + 1) * wo, 0.0);
            continue;
          }
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[iy * w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int64_t c, int64_t h, int64_t w, int kh, int kw, int stride,
            int pad, double* img, bool accumulate) {
  int64_t ho, wo;
  conv_out_size(h, w, kh, kw, stride, pad, &ho, &wo);
  if (!accumulate) std::fill(img, img + c * h * w, 0.0);
  int64_t span = ho * wo;
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* src = cols + ((ch * kh + ky) * kw + kx) * span;
        double* dst = img + ch * h * w;
        for (int64_t oy = 0; oy < ho; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const auto& xs = x.shape();  // [N, Cin, H, W]
  const auto& ws = w.shape();  // [Cout, Cin, kh, kw]
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
    throw std::invalid_argument("conv2d: bad shapes");
  int64_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  int64_t cout = ws[0];
  int kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
  int64_t ho, wo;
  conv_out_size(h, wd, kh, kw, stride, pad, &ho, &wo);
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: output would be empty");
  int64_t k = cin * kh * kw;
  int64_t span = ho * wo;

  Tensor out({n, cout, ho, wo});
  auto cols_cache = std::make_shared<std::vector<Tensor>>();
  cols_cache->reserve(static_cast<size_t>(n));
  Tensor cols({k, span});
  for (int64_t i = 0; i < n; ++i) {
    im2col(x.value().data() + i * cin * h * wd, cin, h, wd, kh, kw, stride, pad, cols.data());
    gemm(w.value().data(), cols.data(), out.data() + i * cout * span, cout, k, span);
    if (g_grad_enabled && (x.requires_grad() || w.requires_grad())) cols_cache->push_back(cols);
  }
  if (b.defined()) {
    double* po = out.data();
    const double* pb = b.value().data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t oc = 0; oc < cout; ++oc) {
        double bias = pb[oc];
        double* row = po + (i * cout + oc) * span;
        for (int64_t s = 0; s < span; ++s) row[s] += bias;
      }
  }

  auto node = make_node(std::move(out));
  std::vector<Var> parents = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  wire(node, parents,
       [x, w, b, cols_cache, n, cin, h, wd, cout, kh, kw, stride, pad, k, span](Node& self) {
         const double* g = self.grad.data();
         Tensor dcols({k, span});
         for (int64_t i = 0; i < n; ++i) {
           const double* gi = g + i * cout * span;
           if (w.requires_grad()) {
             w.node()->ensure_grad();
             gemm_bt(gi, (*cols_cache)[static_cast<size_t>(i)].data(), w.node()->grad.data(),
                     cout, span, k, true);
           }
           if (x.requires_grad()) {
             x.node()->ensure_grad();
             gemm_at(w.value().data(), gi, dcols.data(), k, cout, span);
             col2im(dcols.data(), cin, h, wd, kh, kw, stride, pad,
                    x.node()->grad.data() + i * cin * h * wd, true);
           }
         }
         if (b.defined() && b.requires_grad()) {
           b.node()->ensure_grad();
           double* gb = b.node()->grad.data();
           for (int64_t i = 0; i < n; ++i)
             for (int64_t oc = 0; oc < cout; ++oc) {
               const double* row = g + (i * cout + oc) * span;
               double s = 0.0;
               for (int64_t sidx = 0; sidx < span; ++sidx) s += row[sidx];
               gb[oc] += s;
             }
         }
       });
  return Var(node);
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
                     int output_pad) {
  const auto& xs = x.shape();  // [N, Cin, H, W]
  const auto& ws = w.shape();  // [Cin, Cout, kh, kw]
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0])
    throw std::invalid_argument("conv_transpose2d: bad shapes");
  int64_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  int64_t cout = ws[1];
  int kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
  int64_t ho = (h - 1) * stride - 2 * pad + kh + output_pad;
  int64_t wo = (wd - 1) * stride - 2 * pad + kw + output_pad;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv_transpose2d: output would be empty");
  // Sanity: the forward geometry must invert a (stride,pad) convolution.
  {
    int64_t back_h, back_w;
    conv_out_size(ho, wo, kh, kw, stride, pad, &back_h, &back_w);
    if (back_h != h || back_w != wd)
      throw std::invalid_argument("conv_transpose2d: geometry does not invert");
  }
  int64_t k = cout * kh * kw;
  int64_t span_in = h * wd;

  Tensor out({n, cout, ho, wo});
  Tensor cols({k, span_in});
  for (int64_t i = 0; i < n; ++i) {
    // cols = W^T x_i, scattered into the upsampled output grid
    gemm_at(w.value().data(), x.value().data() + i * cin * span_in, cols.data(), k, cin, span_in);
    col2im(cols.data(), cout, ho, wo, kh, kw, stride, pad, out.data() + i * cout * ho * wo, false);
  }
  if (b.defined()) {
    double* po = out.data();
    const double* pb = b.value().data();
    int64_t span_out = ho * wo;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t oc = 0; oc < cout; ++oc) {
        double bias = pb[oc];
        double* row = po + (i * cout + oc) * span_out;
        for (int64_t s = 0; s < span_out; ++s) row[s] += bias;
      }
  }

  auto node = make_node(std::move(out));
  std::vector<Var> parents = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  wire(node, parents, [x, w, b, n, cin, h, wd, cout, kh, kw, stride, pad, ho, wo, k,
                       span_in](Node& self) {
    const double* g = self.grad.data();
    int64_t span_out = ho * wo;
    Tensor gcols({k, span_in});
    for (int64_t i = 0; i < n; ++i) {
      im2col(g + i * cout * span_out, cout, ho, wo, kh, kw, stride, pad, gcols.data());
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        gemm(w.value().data(), gcols.data(), x.node()->grad.data() + i * cin * span_in, cin, k,
             span_in, true);
      }
      if (w.requires_grad()) {
        w.node()->ensure_grad();
        gemm_bt(x.value().data() + i * cin * span_in, gcols.data(), w.node()->grad.data(), cin,
                span_in, k, true);
      }
    }
    if (b.defined() && b.requires_grad()) {
      b.node()->ensure_grad();
      double* gb = b.node()->grad.data();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t oc = 0; oc < cout; ++oc) {
          const double* row = g + (i * cout + oc) * span_out;
          double s = 0.0;
          for (int64_t sidx = 0; sidx < span_out; ++sidx) s += row[sidx];
          gb[oc] += s;
        }
    }
  });
  return Var(node);
}

Var maxpool2d(const Var& x, int kernel, int stride, int pad) {
  const auto& xs = x.shape();
  int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  int64_t ho, wo;
  conv_out_size(h, w, kernel, kernel, stride, pad, &ho, &wo);
  Tensor out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  const double* px = x.value().data();
  double* po = out.data();
  int64_t oi = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* plane = px + (i * c + ch) * h * w;
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox, ++oi) {
          double best = -1e300;
          int64_t best_idx = -1;
          for (int ky = 0; ky < kernel; ++ky) {
            int64_t iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              int64_t ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              double v = plane[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = (i * c + ch) * h * w + iy * w + ix;
              }
            }
          }
          po[oi] = best;
          (*argmax)[static_cast<size_t>(oi)] = best_idx;
        }
    }
  auto node = make_node(std::move(out));
  wire(node, {x}, [x, argmax](Node& self) {
    x.node()->ensure_grad();
    double* gx = x.node()->grad.data();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      int64_t src = (*argmax)[static_cast<size_t>(i)];
      if (src >= 0) gx[src] += g[i];
    }
  });
  return Var(node);
}

Var global_avg_pool(const Var& x) {
  const auto& xs = x.shape();
  int64_t n = xs[0], c = xs[1], span = xs[2] * xs[3];
  Tensor out({n, c});
  const double* px = x.value().data();
  double* po = out.data();
  double inv = 1.0 / static_cast<double>(span);
  for (int64_t i = 0; i < n * c; ++i) {
    const double* plane = px + i * span;
    double s = 0.0;
    for (int64_t j = 0; j < span; ++j) s += plane[j];
    po[i] = s * inv;
  }
  auto node = make_node(std::move(out));
  wire(node, {x}, [x, span, inv](Node& self) {
    x.node()->ensure_grad();
    double* gx = x.node()->grad.data();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      double gv = g[i] * inv;
      double* plane = gx + i * span;
      for (int64_t j = 0; j < span; ++j) plane[j] += gv;
    }
  });
  return Var(node);
}

Var softmax_rows(const Var& x) {
  int64_t n = x.shape()[0], c = x.shape()[1];
  Tensor out({n, c});
  const double* px = x.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* row = px + i * c;
    double m = row[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - m);
    double* orow = po + i * c;
    for (int64_t j = 0; j < c; ++j) orow[j] = std::exp(row[j] - m) / denom;
  }
  auto node = make_node(std::move(out));
  wire(node, {x}, [x, n, c](Node& self) {
    x.node()->ensure_grad();
    double* gx = x.node()->grad.data();
    const double* g = self.grad.data();
    const double* y = self.value.data();
    for (int64_t i = 0; i < n; ++i) {
      const double* gr = g + i * c;
      const double* yr = y + i * c;
      double dot = 0.0;
      for (int64_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
      double* gxr = gx + i * c;
      for (int64_t j = 0; j < c; ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
  });
  return Var(node);
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  int64_t n = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  for (int lab : labels)
    if (lab < 0 || lab >= c)
      throw std::invalid_argument("cross_entropy: label out of range [0," + std::to_string(c) +
                                  ")");
  const double* px = logits.value().data();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = px + i * c;
    double m = row[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - m);
    total += m + std::log(denom) - row[labels[static_cast<size_t>(i)]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  auto node = make_node(std::move(out));
  std::vector<int> labels_copy = labels;
  wire(node, {logits}, [logits, labels_copy, n, c](Node& self) {
    logits.node()->ensure_grad();
    double* gx = logits.node()->grad.data();
    const double* px2 = logits.value().data();
    double g = self.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      const double* row = px2 + i * c;
      double m = row[0];
      for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
      double denom = 0.0;
      for (int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - m);
      double* gxr = gx + i * c;
      for (int64_t j = 0; j < c; ++j) {
        double soft = std::exp(row[j] - m) / denom;
        gxr[j] += g * (soft - (j == labels_copy[static_cast<size_t>(i)] ? 1.0 : 0.0));
      }
    }
  });
  return Var(node);
}

Var gram_batch(const Var& x) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw std::invalid_argument("gram_batch: expected [N,C,H,W]");
  int64_t n = xs[0], c = xs[1], m = xs[2] * xs[3];
  Tensor out({n, c, c});
  for (int64_t i = 0; i < n; ++i) {
    const double* f = x.value().data() + i * c * m;
    gemm_bt(f, f, out.data() + i * c * c, c, m, c);
  }
  auto node = make_node(std::move(out));
  wire(node, {x}, [x, n, c, m](Node& self) {
    x.node()->ensure_grad();
    Tensor sym({c, c});
    for (int64_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * c * c;
      double* ps = sym.data();
      for (int64_t r = 0; r < c; ++r)
        for (int64_t q = 0; q < c; ++q) ps[r * c + q] = g[r * c + q] + g[q * c + r];
      // dF = (G + G^T) F
      gemm(sym.data(), x.value().data() + i * c * m, x.node()->grad.data() + i * c * m, c, c, m,
           true);
    }
  });
  return Var(node);
}

Var dropout(const Var& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  Tensor out(x.shape());
  const double* px = x.value().data();
  double* po = out.data();
  double scale = 1.0 / keep;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double m = rng.uniform() < keep ? scale : 0.0;
    (*mask)[static_cast<size_t>(i)] = m;
    po[i] = px[i] * m;
  }
  auto node = make_node(std::move(out));
  wire(node, {x}, [x, mask](Node& self) {
    x.node()->ensure_grad();
    double* gx = x.node()->grad.data();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      gx[i] += g[i] * (*mask)[static_cast<size_t>(i)];
  });
  return Var(node);
}

}  // namespace davr
