#include "egcn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "egcn/kernels.hpp"

namespace egcn {

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  return Var(n);
}

namespace {

NodePtr make_node(const char* op, Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p && p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(bwd);
  }
  return n;
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw Error("shape", std::string(op) + ": incompatible shapes " +
                           shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw Error("shape", std::string(op) + ": " + msg);
}

// (outer, len, inner) decomposition around one axis.
struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit a;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) a.outer *= s[static_cast<size_t>(i)];
    else if (i == axis) a.len = s[static_cast<size_t>(i)];
    else a.inner *= s[static_cast<size_t>(i)];
  }
  return a;
}

double sigmoid_d(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

void backward(const Var& loss) {
  if (!loss.defined()) throw Error("usage", "backward: undefined loss");
  if (loss.size() != 1) {
    throw Error("shape", "backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Post-order DFS, then reversed: children run before their parents.
  std::vector<NodePtr> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<NodePtr, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      NodePtr p = n->parents[idx++];
      if (p && p->requires_grad && seen.insert(p.get()).second) {
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad().fill(1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
    if (!n.is_leaf) {
      n.value.release();
      n.grad.release();
      n.backward_fn = nullptr;
    }
  }
}

namespace ops {

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) shape_fail("add", a.value(), b.value());
  Tensor y(a.shape());
  const int64_t n = y.size();
  for (int64_t i = 0; i < n; ++i) y[i] = a.value()[i] + b.value()[i];
  return Var(make_node("add", std::move(y), {a.node(), b.node()}, [](Node& self) {
    for (int pi = 0; pi < 2; ++pi) {
      Node& p = *self.parents[static_cast<size_t>(pi)];
      if (!p.requires_grad) continue;
      Tensor& g = p.ensure_grad();
      kern::axpy(self.grad.size(), 1.0, self.grad.data(), g.data());
    }
  }));
}

Var sub(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) shape_fail("sub", a.value(), b.value());
  Tensor y(a.shape());
  const int64_t n = y.size();
  for (int64_t i = 0; i < n; ++i) y[i] = a.value()[i] - b.value()[i];
  return Var(make_node("sub", std::move(y), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      kern::axpy(self.grad.size(), 1.0, self.grad.data(), self.parents[0]->ensure_grad().data());
    }
    if (self.parents[1]->requires_grad) {
      kern::axpy(self.grad.size(), -1.0, self.grad.data(), self.parents[1]->ensure_grad().data());
    }
  }));
}

Var mul(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) shape_fail("mul", a.value(), b.value());
  Tensor y(a.shape());
  const int64_t n = y.size();
  for (int64_t i = 0; i < n; ++i) y[i] = a.value()[i] * b.value()[i];
  return Var(make_node("mul", std::move(y), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const int64_t m = self.grad.size();
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (int64_t i = 0; i < m; ++i) g[i] = std::fma(self.grad[i], pb.value[i], g[i]);
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (int64_t i = 0; i < m; ++i) g[i] = std::fma(self.grad[i], pa.value[i], g[i]);
    }
  }));
}

Var scale(const Var& a, double s) {
  Tensor y(a.shape());
  const int64_t n = y.size();
  for (int64_t i = 0; i < n; ++i) y[i] = a.value()[i] * s;
  return Var(make_node("scale", std::move(y), {a.node()}, [s](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    kern::axpy(self.grad.size(), s, self.grad.data(), self.parents[0]->ensure_grad().data());
  }));
}

Var sigmoid(const Var& x) {
  Tensor y(x.shape());
  const int64_t n = y.size();
  for (int64_t i = 0; i < n; ++i) y[i] = sigmoid_d(x.value()[i]);
  return Var(make_node("sigmoid", std::move(y), {x.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = self.parents[0]->ensure_grad();
    const int64_t m = self.grad.size();
    for (int64_t i = 0; i < m; ++i) {
      const double yv = self.value[i];
      g[i] = std::fma(self.grad[i], yv * (1.0 - yv), g[i]);
    }
  }));
}

Var swish(const Var& x) {
  Tensor y(x.shape());
  const int64_t n = y.size();
  for (int64_t i = 0; i < n; ++i) {
    const double v = x.value()[i];
    y[i] = v * sigmoid_d(v);
  }
  return Var(make_node("swish", std::move(y), {x.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = self.parents[0]->ensure_grad();
    const Tensor& xv = self.parents[0]->value;
    const int64_t m = self.grad.size();
    for (int64_t i = 0; i < m; ++i) {
      const double s = sigmoid_d(xv[i]);
      g[i] = std::fma(self.grad[i], s * (1.0 + xv[i] * (1.0 - s)), g[i]);
    }
  }));
}

Var hardswish(const Var& x) {
  Tensor y(x.shape());
  const int64_t n = y.size();
  for (int64_t i = 0; i < n; ++i) {
    const double v = x.value()[i];
    y[i] = v * std::clamp(v + 3.0, 0.0, 6.0) / 6.0;
  }
  return Var(make_node("hardswish", std::move(y), {x.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = self.parents[0]->ensure_grad();
    const Tensor& xv = self.parents[0]->value;
    const int64_t m = self.grad.size();
    for (int64_t i = 0; i < m; ++i) {
      const double v = xv[i];
      double d = 0.0;
      if (v >= 3.0) d = 1.0;
      else if (v > -3.0) d = (2.0 * v + 3.0) / 6.0;
      g[i] = std::fma(self.grad[i], d, g[i]);
    }
  }));
}

Var softmax(const Var& x) {
  require(x.value().ndim() >= 1, "softmax", "needs at least one axis");
  Tensor y(x.shape());
  const int64_t L = x.shape().back();
  const int64_t rows = x.size() / L;
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * L;
    double* yr = y.data() + r * L;
    double mx = xr[0];
    for (int64_t j = 1; j < L; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (int64_t j = 0; j < L; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (int64_t j = 0; j < L; ++j) yr[j] /= s;
  }
  return Var(make_node("softmax", std::move(y), {x.node()}, [L](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = self.parents[0]->ensure_grad();
    const int64_t rows = self.grad.size() / L;
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = self.value.data() + r * L;
      const double* gr = self.grad.data() + r * L;
      double dot = 0.0;
      for (int64_t j = 0; j < L; ++j) dot = std::fma(gr[j], yr[j], dot);
      double* out = g.data() + r * L;
      for (int64_t j = 0; j < L; ++j) out[j] = std::fma(yr[j], gr[j] - dot, out[j]);
    }
  }));
}

Var mean_axis(const Var& x, int axis) {
  require(axis >= 0 && axis < x.value().ndim(), "mean_axis", "axis out of range");
  const AxisSplit a = split_axis(x.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < x.value().ndim(); ++i) {
    if (i != axis) out_shape.push_back(x.shape()[static_cast<size_t>(i)]);
  }
  if (out_shape.empty()) out_shape = {1};
  Tensor y(out_shape);
  const double inv = 1.0 / static_cast<double>(a.len);
  for (int64_t o = 0; o < a.outer; ++o) {
    double* yr = y.data() + o * a.inner;
    const double* xr = x.value().data() + o * a.len * a.inner;
    for (int64_t l = 0; l < a.len; ++l) {
      for (int64_t i = 0; i < a.inner; ++i) {
        yr[i] = std::fma(xr[l * a.inner + i], inv, yr[i]);
      }
    }
  }
  return Var(make_node("mean_axis", std::move(y), {x.node()}, [a, inv](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = self.parents[0]->ensure_grad();
    for (int64_t o = 0; o < a.outer; ++o) {
      const double* gr = self.grad.data() + o * a.inner;
      double* out = g.data() + o * a.len * a.inner;
      for (int64_t l = 0; l < a.len; ++l) {
        for (int64_t i = 0; i < a.inner; ++i) {
          out[l * a.inner + i] = std::fma(gr[i], inv, out[l * a.inner + i]);
        }
      }
    }
  }));
}

Var sum_all(const Var& x) {
  double s = 0.0;
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) s += x.value()[i];
  return Var(make_node("sum_all", Tensor::scalar(s), {x.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = self.parents[0]->ensure_grad();
    const double gs = self.grad[0];
    const int64_t m = g.size();
    for (int64_t i = 0; i < m; ++i) g[i] += gs;
  }));
}

Var reshape(const Var& x, Shape s) {
  Tensor y = x.value().reshaped(std::move(s));
  return Var(make_node("reshape", std::move(y), {x.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = self.parents[0]->ensure_grad();
    kern::axpy(self.grad.size(), 1.0, self.grad.data(), g.data());
  }));
}

Var concat(const std::vector<Var>& xs, int axis) {
  require(!xs.empty(), "concat", "empty operand list");
  const int nd = xs[0].value().ndim();
  require(axis >= 0 && axis < nd, "concat", "axis out of range");
  Shape out_shape = xs[0].shape();
  int64_t total = 0;
  for (const Var& v : xs) {
    require(v.value().ndim() == nd, "concat", "rank mismatch");
    for (int i = 0; i < nd; ++i) {
      if (i != axis && v.shape()[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)]) {
        shape_fail("concat", xs[0].value(), v.value());
      }
    }
    total += v.shape()[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;
  Tensor y(out_shape);
  const AxisSplit a = split_axis(out_shape, axis);
  std::vector<int64_t> lens;
  int64_t off = 0;
  for (const Var& v : xs) {
    const int64_t len = v.shape()[static_cast<size_t>(axis)];
    lens.push_back(len);
    for (int64_t o = 0; o < a.outer; ++o) {
      const double* src = v.value().data() + o * len * a.inner;
      double* dst = y.data() + (o * total + off) * a.inner;
      std::copy(src, src + len * a.inner, dst);
    }
    off += len;
  }
  std::vector<NodePtr> parents;
  for (const Var& v : xs) parents.push_back(v.node());
  return Var(make_node("concat", std::move(y), std::move(parents),
                       [a, lens, total](Node& self) {
    int64_t off2 = 0;
    for (size_t pi = 0; pi < self.parents.size(); ++pi) {
      const int64_t len = lens[pi];
      Node& p = *self.parents[pi];
      if (p.requires_grad) {
        Tensor& g = p.ensure_grad();
        for (int64_t o = 0; o < a.outer; ++o) {
          const double* src = self.grad.data() + (o * total + off2) * a.inner;
          double* dst = g.data() + o * len * a.inner;
          kern::axpy(len * a.inner, 1.0, src, dst);
        }
      }
      off2 += len;
    }
  }));
}

Var slice(const Var& x, int axis, int64_t start, int64_t len) {
  require(axis >= 0 && axis < x.value().ndim(), "slice", "axis out of range");
  const int64_t dim = x.shape()[static_cast<size_t>(axis)];
  require(start >= 0 && len > 0 && start + len <= dim, "slice", "range out of bounds");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  const AxisSplit a = split_axis(x.shape(), axis);
  Tensor y(out_shape);
  for (int64_t o = 0; o < a.outer; ++o) {
    const double* src = x.value().data() + (o * dim + start) * a.inner;
    std::copy(src, src + len * a.inner, y.data() + o * len * a.inner);
  }
  return Var(make_node("slice", std::move(y), {x.node()}, [a, dim, start, len](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = self.parents[0]->ensure_grad();
    for (int64_t o = 0; o < a.outer; ++o) {
      const double* src = self.grad.data() + o * len * a.inner;
      double* dst = g.data() + (o * dim + start) * a.inner;
      kern::axpy(len * a.inner, 1.0, src, dst);
    }
  }));
}

Var matmul(const Var& a, const Var& b) {
  require(a.value().ndim() == 2 && b.value().ndim() == 2, "matmul", "operands must be 2-D");
  if (a.shape()[1] != b.shape()[0]) shape_fail("matmul", a.value(), b.value());
  const int64_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  Tensor y({M, N});
  kern::gemm_nn(M, N, K, a.value().data(), b.value().data(), y.data(), false);
  return Var(make_node("matmul", std::move(y), {a.node(), b.node()}, [M, N, K](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      kern::gemm_nt(M, K, N, self.grad.data(), pb.value.data(), pa.ensure_grad().data(), true);
    }
    if (pb.requires_grad) {
      kern::gemm_tn(K, N, M, pa.value.data(), self.grad.data(), pb.ensure_grad().data(), true);
    }
  }));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require(x.value().ndim() == 2 && w.value().ndim() == 2, "linear", "x and w must be 2-D");
  if (x.shape()[1] != w.shape()[1]) shape_fail("linear", x.value(), w.value());
  const int64_t N = x.shape()[0], K = x.shape()[1], O = w.shape()[0];
  require(b.value().ndim() == 1 && b.shape()[0] == O, "linear", "bias must be (out)");
  Tensor y({N, O});
  for (int64_t i = 0; i < N; ++i) {
    std::copy(b.value().data(), b.value().data() + O, y.data() + i * O);
  }
  kern::gemm_nt(N, O, K, x.value().data(), w.value().data(), y.data(), true);
  return Var(make_node("linear", std::move(y), {x.node(), w.node(), b.node()},
                       [N, K, O](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    if (px.requires_grad) {
      kern::gemm_nn(N, K, O, self.grad.data(), pw.value.data(), px.ensure_grad().data(), true);
    }
    if (pw.requires_grad) {
      kern::gemm_tn(O, K, N, self.grad.data(), px.value.data(), pw.ensure_grad().data(), true);
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (int64_t i = 0; i < N; ++i) {
        kern::axpy(O, 1.0, self.grad.data() + i * O, g.data());
      }
    }
  }));
}

namespace {

// Shared implementation for conv1x1 forward/backward spatial bookkeeping.
struct Conv1x1Dims {
  int64_t N, C, T, V, Tout, S, Sout;
  int64_t stride;
};

Conv1x1Dims conv1x1_dims(const Tensor& x, int64_t stride, const char* op) {
  require(x.ndim() == 3 || x.ndim() == 4, op, "input must be (N,C,T[,V])");
  Conv1x1Dims d;
  d.N = x.dim(0);
  d.C = x.dim(1);
  d.T = x.dim(2);
  d.V = x.ndim() == 4 ? x.dim(3) : 1;
  d.stride = stride;
  require(stride >= 1, op, "stride must be positive");
  d.Tout = (d.T - 1) / stride + 1;
  d.S = d.T * d.V;
  d.Sout = d.Tout * d.V;
  return d;
}

void subsample_t(const double* x, int64_t C, int64_t T, int64_t V, int64_t stride,
                 int64_t Tout, double* out) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t to = 0; to < Tout; ++to) {
      const double* src = x + (c * T + to * stride) * V;
      std::copy(src, src + V, out + (c * Tout + to) * V);
    }
  }
}

}  // namespace

Var conv1x1(const Var& x, const Var& w, const Var& b, int64_t stride_t) {
  const Conv1x1Dims d = conv1x1_dims(x.value(), stride_t, "conv1x1");
  require(w.value().ndim() == 2, "conv1x1", "weight must be (Cout,Cin)");
  if (w.shape()[1] != d.C) shape_fail("conv1x1", x.value(), w.value());
  const int64_t Co = w.shape()[0];
  const bool has_bias = b.defined();
  if (has_bias) require(b.value().ndim() == 1 && b.shape()[0] == Co, "conv1x1", "bias must be (Cout)");

  Shape out_shape = x.shape();
  out_shape[1] = Co;
  out_shape[2] = d.Tout;
  Tensor y(out_shape);
  std::vector<double> xs;  // strided copy, reused per sample
  if (d.stride > 1) xs.resize(static_cast<size_t>(d.C * d.Sout));
  for (int64_t n = 0; n < d.N; ++n) {
    const double* xn = x.value().data() + n * d.C * d.S;
    double* yn = y.data() + n * Co * d.Sout;
    if (has_bias) {
      for (int64_t c = 0; c < Co; ++c) {
        std::fill(yn + c * d.Sout, yn + (c + 1) * d.Sout, b.value()[c]);
      }
    }
    const double* src = xn;
    if (d.stride > 1) {
      subsample_t(xn, d.C, d.T, d.V, d.stride, d.Tout, xs.data());
      src = xs.data();
    }
    kern::gemm_nn(Co, d.Sout, d.C, w.value().data(), src, yn, has_bias);
  }
  std::vector<NodePtr> parents = {x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  return Var(make_node("conv1x1", std::move(y), std::move(parents),
                       [d, Co, has_bias](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    std::vector<double> xs, dxs;
    if (d.stride > 1) {
      xs.resize(static_cast<size_t>(d.C * d.Sout));
      dxs.resize(static_cast<size_t>(d.C * d.Sout));
    }
    for (int64_t n = 0; n < d.N; ++n) {
      const double* gn = self.grad.data() + n * Co * d.Sout;
      const double* xn = px.value.data() + n * d.C * d.S;
      const double* src = xn;
      if (d.stride > 1) {
        subsample_t(xn, d.C, d.T, d.V, d.stride, d.Tout, xs.data());
        src = xs.data();
      }
      if (px.requires_grad) {
        Tensor& gx = px.ensure_grad();
        double* gxn = gx.data() + n * d.C * d.S;
        if (d.stride == 1) {
          kern::gemm_tn(d.C, d.Sout, Co, pw.value.data(), gn, gxn, true);
        } else {
          kern::gemm_tn(d.C, d.Sout, Co, pw.value.data(), gn, dxs.data(), false);
          for (int64_t c = 0; c < d.C; ++c) {
            for (int64_t to = 0; to < d.Tout; ++to) {
              kern::axpy(d.V, 1.0, dxs.data() + (c * d.Tout + to) * d.V,
                         gxn + (c * d.T + to * d.stride) * d.V);
            }
          }
        }
      }
      if (pw.requires_grad) {
        kern::gemm_nt(Co, d.C, d.Sout, gn, src, pw.ensure_grad().data(), true);
      }
      if (has_bias && self.parents[2]->requires_grad) {
        Tensor& gb = self.parents[2]->ensure_grad();
        for (int64_t c = 0; c < Co; ++c) {
          double s0 = 0.0;
          const double* row = gn + c * d.Sout;
          for (int64_t i = 0; i < d.Sout; ++i) s0 += row[i];
          gb[c] += s0;
        }
      }
    }
  }));
}

Var dwconv_t(const Var& x, const Var& w, const Var& b, int64_t stride) {
  require(x.value().ndim() == 4, "dwconv_t", "input must be (N,C,T,V)");
  const int64_t N = x.shape()[0], C = x.shape()[1], T = x.shape()[2], V = x.shape()[3];
  require(w.value().ndim() == 2 && w.shape()[0] == C, "dwconv_t", "weight must be (C,taps)");
  const int64_t taps = w.shape()[1];
  require(taps % 2 == 1, "dwconv_t", "kernel length must be odd");
  const int64_t pad = (taps - 1) / 2;
  const int64_t Tout = (T - 1) / stride + 1;
  const bool has_bias = b.defined();
  if (has_bias) require(b.value().ndim() == 1 && b.shape()[0] == C, "dwconv_t", "bias must be (C)");

  Tensor y({N, C, Tout, V});
  for (int64_t n = 0; n < N; ++n) {
    kern::dwconv_t(C, T, V, Tout, taps, stride, pad, x.value().data() + n * C * T * V,
                   w.value().data(), has_bias ? b.value().data() : nullptr,
                   y.data() + n * C * Tout * V);
  }
  std::vector<NodePtr> parents = {x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  return Var(make_node("dwconv_t", std::move(y), std::move(parents),
                       [N, C, T, V, taps, pad, stride, Tout, has_bias](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    for (int64_t n = 0; n < N; ++n) {
      const double* gn = self.grad.data() + n * C * Tout * V;
      const double* xn = px.value.data() + n * C * T * V;
      if (px.requires_grad) {
        double* gx = px.ensure_grad().data() + n * C * T * V;
        for (int64_t c = 0; c < C; ++c) {
          for (int64_t to = 0; to < Tout; ++to) {
            const int64_t base = to * stride - pad;
            for (int64_t tap = 0; tap < taps; ++tap) {
              const int64_t t = base + tap;
              if (t < 0 || t >= T) continue;
              kern::axpy(V, pw.value[c * taps + tap], gn + (c * Tout + to) * V,
                         gx + (c * T + t) * V);
            }
          }
        }
      }
      if (pw.requires_grad) {
        Tensor& gw = pw.ensure_grad();
        for (int64_t c = 0; c < C; ++c) {
          for (int64_t tap = 0; tap < taps; ++tap) {
            double s = 0.0;
            for (int64_t to = 0; to < Tout; ++to) {
              const int64_t t = to * stride - pad + tap;
              if (t < 0 || t >= T) continue;
              const double* gr = gn + (c * Tout + to) * V;
              const double* xr = xn + (c * T + t) * V;
              for (int64_t v = 0; v < V; ++v) s = std::fma(gr[v], xr[v], s);
            }
            gw[c * taps + tap] += s;
          }
        }
      }
      if (has_bias && self.parents[2]->requires_grad) {
        Tensor& gb = self.parents[2]->ensure_grad();
        for (int64_t c = 0; c < C; ++c) {
          double s = 0.0;
          const double* row = gn + c * Tout * V;
          for (int64_t i = 0; i < Tout * V; ++i) s += row[i];
          gb[c] += s;
        }
      }
    }
  }));
}

Var node_mix(const Var& x, const Var& m) {
  require(x.value().ndim() == 4, "node_mix", "input must be (N,C,T,V)");
  const int64_t N = x.shape()[0], C = x.shape()[1], T = x.shape()[2], V = x.shape()[3];
  require(m.value().ndim() == 2, "node_mix", "matrix must be 2-D");
  if (m.shape()[0] != V || m.shape()[1] != V) shape_fail("node_mix", x.value(), m.value());
  Tensor y(x.shape());
  const int64_t R = C * T;
  for (int64_t n = 0; n < N; ++n) {
    kern::gemm_nn(R, V, V, x.value().data() + n * R * V, m.value().data(),
                  y.data() + n * R * V, false);
  }
  return Var(make_node("node_mix", std::move(y), {x.node(), m.node()}, [N, R, V](Node& self) {
    Node& px = *self.parents[0];
    Node& pm = *self.parents[1];
    for (int64_t n = 0; n < N; ++n) {
      const double* gn = self.grad.data() + n * R * V;
      if (px.requires_grad) {
        kern::gemm_nt(R, V, V, gn, pm.value.data(), px.ensure_grad().data() + n * R * V, true);
      }
      if (pm.requires_grad) {
        kern::gemm_tn(V, V, R, px.value.data() + n * R * V, gn, pm.ensure_grad().data(), true);
      }
    }
  }));
}

Var node_mix_batched(const Var& x, const Var& m) {
  require(x.value().ndim() == 4, "node_mix_batched", "input must be (N,C,T,V)");
  const int64_t N = x.shape()[0], C = x.shape()[1], T = x.shape()[2], V = x.shape()[3];
  require(m.value().ndim() == 3, "node_mix_batched", "matrix must be (N,V,V)");
  if (m.shape()[0] != N || m.shape()[1] != V || m.shape()[2] != V) {
    shape_fail("node_mix_batched", x.value(), m.value());
  }
  Tensor y(x.shape());
  const int64_t R = C * T;
  for (int64_t n = 0; n < N; ++n) {
    kern::gemm_nn(R, V, V, x.value().data() + n * R * V, m.value().data() + n * V * V,
                  y.data() + n * R * V, false);
  }
  return Var(make_node("node_mix_batched", std::move(y), {x.node(), m.node()},
                       [N, R, V](Node& self) {
    Node& px = *self.parents[0];
    Node& pm = *self.parents[1];
    for (int64_t n = 0; n < N; ++n) {
      const double* gn = self.grad.data() + n * R * V;
      if (px.requires_grad) {
        kern::gemm_nt(R, V, V, gn, pm.value.data() + n * V * V,
                      px.ensure_grad().data() + n * R * V, true);
      }
      if (pm.requires_grad) {
        kern::gemm_tn(V, V, R, px.value.data() + n * R * V, gn,
                      pm.ensure_grad().data() + n * V * V, true);
      }
    }
  }));
}

Var similarity(const Var& ea, const Var& eb) {
  require(ea.value().ndim() == 4 && eb.value().ndim() == 4, "similarity",
          "embeddings must be (N,C,T,V)");
  if (!ea.value().same_shape(eb.value())) shape_fail("similarity", ea.value(), eb.value());
  const int64_t N = ea.shape()[0], D = ea.shape()[1] * ea.shape()[2], V = ea.shape()[3];
  Tensor y({N, V, V});
  for (int64_t n = 0; n < N; ++n) {
    kern::gemm_tn(V, V, D, ea.value().data() + n * D * V, eb.value().data() + n * D * V,
                  y.data() + n * V * V, false);
  }
  return Var(make_node("similarity", std::move(y), {ea.node(), eb.node()},
                       [N, D, V](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    std::vector<double> gT(static_cast<size_t>(V * V));
    for (int64_t n = 0; n < N; ++n) {
      const double* gn = self.grad.data() + n * V * V;
      if (pa.requires_grad) {
        for (int64_t i = 0; i < V; ++i) {
          for (int64_t j = 0; j < V; ++j) gT[static_cast<size_t>(j * V + i)] = gn[i * V + j];
        }
        kern::gemm_nn(D, V, V, pb.value.data() + n * D * V, gT.data(),
                      pa.ensure_grad().data() + n * D * V, true);
      }
      if (pb.requires_grad) {
        kern::gemm_nn(D, V, V, pa.value.data() + n * D * V, gn,
                      pb.ensure_grad().data() + n * D * V, true);
      }
    }
  }));
}

Var add_broadcast_mat(const Var& ck, const Var& ab) {
  require(ck.value().ndim() == 3 && ab.value().ndim() == 2, "add_broadcast_mat",
          "operands must be (N,V,V) and (V,V)");
  const int64_t N = ck.shape()[0], V = ck.shape()[1];
  if (ab.shape()[0] != V || ab.shape()[1] != V || ck.shape()[2] != V) {
    shape_fail("add_broadcast_mat", ck.value(), ab.value());
  }
  Tensor y(ck.shape());
  const int64_t VV = V * V;
  for (int64_t n = 0; n < N; ++n) {
    const double* c = ck.value().data() + n * VV;
    for (int64_t i = 0; i < VV; ++i) y[n * VV + i] = c[i] + ab.value()[i];
  }
  return Var(make_node("add_broadcast_mat", std::move(y), {ck.node(), ab.node()},
                       [N, VV](Node& self) {
    if (self.parents[0]->requires_grad) {
      kern::axpy(N * VV, 1.0, self.grad.data(), self.parents[0]->ensure_grad().data());
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        kern::axpy(VV, 1.0, self.grad.data() + n * VV, g.data());
      }
    }
  }));
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, double momentum, double eps) {
  require(x.value().ndim() >= 2, "batch_norm", "input must be (N,C,...)");
  const int64_t N = x.shape()[0], C = x.shape()[1];
  const int64_t R = x.size() / (N * C);  // per-sample spatial extent
  require(gamma.value().size() == C && beta.value().size() == C, "batch_norm",
          "affine parameters must be (C)");
  require(running_mean.size() == C && running_var.size() == C, "batch_norm",
          "running statistics must be (C)");
  const int64_t nel = N * R;

  std::vector<double> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* row = x.value().data() + (n * C + c) * R;
        for (int64_t i = 0; i < R; ++i) s += row[i];
      }
      const double m = s / static_cast<double>(nel);
      double v = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* row = x.value().data() + (n * C + c) * R;
        for (int64_t i = 0; i < R; ++i) {
          const double d = row[i] - m;
          v = std::fma(d, d, v);
        }
      }
      v /= static_cast<double>(nel);
      mean[static_cast<size_t>(c)] = m;
      invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(v + eps);
      const double unbiased = nel > 1 ? v * static_cast<double>(nel) / static_cast<double>(nel - 1) : v;
      running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * m;
      running_var[c] = momentum * running_var[c] + (1.0 - momentum) * unbiased;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = running_mean[c];
      invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor y(x.shape());
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const double m = mean[static_cast<size_t>(c)];
      const double is = invstd[static_cast<size_t>(c)];
      const double gsc = gamma.value()[c] * is;
      const double bt = beta.value()[c];
      const double* row = x.value().data() + (n * C + c) * R;
      double* out = y.data() + (n * C + c) * R;
      for (int64_t i = 0; i < R; ++i) out[i] = std::fma(gsc, row[i] - m, bt);
    }
  }
  return Var(make_node("batch_norm", std::move(y), {x.node(), gamma.node(), beta.node()},
                       [N, C, R, nel, training, mean, invstd](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const double inv_nel = 1.0 / static_cast<double>(nel);
    for (int64_t c = 0; c < C; ++c) {
      const double m = mean[static_cast<size_t>(c)];
      const double is = invstd[static_cast<size_t>(c)];
      double sg = 0.0, sgx = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* gr = self.grad.data() + (n * C + c) * R;
        const double* xr = px.value.data() + (n * C + c) * R;
        for (int64_t i = 0; i < R; ++i) {
          sg += gr[i];
          sgx = std::fma(gr[i], (xr[i] - m) * is, sgx);
        }
      }
      if (pg.requires_grad) pg.ensure_grad()[c] += sgx;
      if (pb.requires_grad) pb.ensure_grad()[c] += sg;
      if (px.requires_grad) {
        Tensor& gx = px.ensure_grad();
        const double gamma_is = pg.value[c] * is;
        for (int64_t n = 0; n < N; ++n) {
          const double* gr = self.grad.data() + (n * C + c) * R;
          const double* xr = px.value.data() + (n * C + c) * R;
          double* out = gx.data() + (n * C + c) * R;
          if (training) {
            for (int64_t i = 0; i < R; ++i) {
              const double xh = (xr[i] - m) * is;
              out[i] += gamma_is * (gr[i] - inv_nel * (sg + xh * sgx));
            }
          } else {
            for (int64_t i = 0; i < R; ++i) out[i] = std::fma(gamma_is, gr[i], out[i]);
          }
        }
      }
    }
  }));
}

Var apply_joint_gates(const Var& x, const Var& gt, const Var& gv) {
  require(x.value().ndim() == 4, "apply_joint_gates", "input must be (N,C,T,V)");
  const int64_t N = x.shape()[0], C = x.shape()[1], T = x.shape()[2], V = x.shape()[3];
  require(gt.value().ndim() == 3 && gt.shape()[0] == N && gt.shape()[1] == C &&
              gt.shape()[2] == T, "apply_joint_gates", "temporal gate must be (N,C,T)");
  require(gv.value().ndim() == 3 && gv.shape()[0] == N && gv.shape()[1] == C &&
              gv.shape()[2] == V, "apply_joint_gates", "spatial gate must be (N,C,V)");
  Tensor y(x.shape());
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const double* gtr = gt.value().data() + (n * C + c) * T;
      const double* gvr = gv.value().data() + (n * C + c) * V;
      const double* xr = x.value().data() + (n * C + c) * T * V;
      double* yr = y.data() + (n * C + c) * T * V;
      for (int64_t t = 0; t < T; ++t) {
        const double a = gtr[t];
        for (int64_t v = 0; v < V; ++v) yr[t * V + v] = xr[t * V + v] * a * gvr[v];
      }
    }
  }
  return Var(make_node("apply_joint_gates", std::move(y), {x.node(), gt.node(), gv.node()},
                       [N, C, T, V](Node& self) {
    Node& px = *self.parents[0];
    Node& pt = *self.parents[1];
    Node& pv = *self.parents[2];
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        const int64_t off = (n * C + c);
        const double* gtr = pt.value.data() + off * T;
        const double* gvr = pv.value.data() + off * V;
        const double* xr = px.value.data() + off * T * V;
        const double* gr = self.grad.data() + off * T * V;
        if (px.requires_grad) {
          double* out = px.ensure_grad().data() + off * T * V;
          for (int64_t t = 0; t < T; ++t) {
            const double a = gtr[t];
            for (int64_t v = 0; v < V; ++v) {
              out[t * V + v] = std::fma(gr[t * V + v], a * gvr[v], out[t * V + v]);
            }
          }
        }
        if (pt.requires_grad) {
          double* out = pt.ensure_grad().data() + off * T;
          for (int64_t t = 0; t < T; ++t) {
            double s = 0.0;
            for (int64_t v = 0; v < V; ++v) {
              s = std::fma(gr[t * V + v], xr[t * V + v] * gvr[v], s);
            }
            out[t] += s;
          }
        }
        if (pv.requires_grad) {
          double* out = pv.ensure_grad().data() + off * V;
          for (int64_t t = 0; t < T; ++t) {
            const double a = gtr[t];
            for (int64_t v = 0; v < V; ++v) {
              out[v] = std::fma(gr[t * V + v], xr[t * V + v] * a, out[v]);
            }
          }
        }
      }
    }
  }));
}

Var l2_norm_channels(const Var& x) {
  require(x.value().ndim() == 4, "l2_norm_channels", "input must be (N,C,T,V)");
  const int64_t N = x.shape()[0], C = x.shape()[1], T = x.shape()[2], V = x.shape()[3];
  Tensor y({N, 1, T, V});
  const int64_t R = T * V;
  for (int64_t n = 0; n < N; ++n) {
    double* yr = y.data() + n * R;
    for (int64_t c = 0; c < C; ++c) {
      const double* xr = x.value().data() + (n * C + c) * R;
      for (int64_t i = 0; i < R; ++i) yr[i] = std::fma(xr[i], xr[i], yr[i]);
    }
    for (int64_t i = 0; i < R; ++i) yr[i] = std::sqrt(yr[i]);
  }
  return Var(make_node("l2_norm_channels", std::move(y), {x.node()}, [N, C, R](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Node& px = *self.parents[0];
    Tensor& g = px.ensure_grad();
    for (int64_t n = 0; n < N; ++n) {
      const double* yr = self.value.data() + n * R;
      const double* gr = self.grad.data() + n * R;
      for (int64_t c = 0; c < C; ++c) {
        const double* xr = px.value.data() + (n * C + c) * R;
        double* out = g.data() + (n * C + c) * R;
        for (int64_t i = 0; i < R; ++i) {
          if (yr[i] > 0.0) out[i] = std::fma(gr[i], xr[i] / yr[i], out[i]);
        }
      }
    }
  }));
}

Var cross_entropy_sum(const Var& logits, const std::vector<int>& labels) {
  require(logits.value().ndim() == 2, "cross_entropy", "logits must be (N,K)");
  const int64_t N = logits.shape()[0], K = logits.shape()[1];
  require(static_cast<int64_t>(labels.size()) == N, "cross_entropy",
          "label count does not match batch");
  for (int lb : labels) {
    require(lb >= 0 && lb < K, "cross_entropy", "label out of range");
  }
  double loss = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const double* row = logits.value().data() + i * K;
    double mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double se = 0.0;
    for (int64_t k = 0; k < K; ++k) se += std::exp(row[k] - mx);
    loss += mx + std::log(se) - row[labels[static_cast<size_t>(i)]];
  }
  return Var(make_node("cross_entropy", Tensor::scalar(loss), {logits.node()},
                       [N, K, labels](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Node& pl = *self.parents[0];
    Tensor& g = pl.ensure_grad();
    const double gs = self.grad[0];
    for (int64_t i = 0; i < N; ++i) {
      const double* row = pl.value.data() + i * K;
      double* out = g.data() + i * K;
      double mx = row[0];
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      double se = 0.0;
      for (int64_t k = 0; k < K; ++k) se += std::exp(row[k] - mx);
      for (int64_t k = 0; k < K; ++k) {
        double p = std::exp(row[k] - mx) / se;
        if (k == labels[static_cast<size_t>(i)]) p -= 1.0;
        out[k] = std::fma(gs, p, out[k]);
      }
    }
  }));
}

}  // namespace ops

double finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                         double eps) {
  if (eps <= 0.0) throw Error("usage", "finite_diff_check: eps must be positive");
  Var xv = Var::leaf(x, true);
  Var y = f(xv);
  if (y.size() != 1) {
    throw Error("shape", "finite_diff_check: f must return a scalar, got " +
                             shape_str(y.shape()));
  }
  if (!std::isfinite(y.value()[0])) {
    throw Error("numeric", "finite_diff_check: f(x) is not finite");
  }
  backward(y);
  Tensor analytic = xv.grad().empty() ? Tensor(x.shape()) : xv.grad();

  double max_err = 0.0;
  Tensor xp = x;
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) {
    const double orig = xp[i];
    xp[i] = orig + eps;
    const double fp = f(Var::constant(xp)).value()[0];
    xp[i] = orig - eps;
    const double fm = f(Var::constant(xp)).value()[0];
    xp[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("numeric", "finite_diff_check: perturbed f(x) is not finite");
    }
    const double central = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace egcn
