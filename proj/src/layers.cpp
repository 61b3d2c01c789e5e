#include "egcn/layers.hpp"

#include <cmath>

namespace egcn {

void init_uniform(Tensor& t, int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(1, fan_in)));
  std::uniform_real_distribution<double> d(-bound, bound);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
}

void BatchNorm::init(int64_t channels) {
  gamma = Var::leaf(Tensor::full({channels}, 1.0), true);
  beta = Var::leaf(Tensor({channels}), true);
  running_mean = Tensor({channels});
  running_var = Tensor::full({channels}, 1.0);
}

Var BatchNorm::forward(const Var& x, bool training) {
  return ops::batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
}

void BatchNorm::visit(const std::string& prefix, const ParamVisitor& pv,
                      const StateVisitor& sv) {
  pv(prefix + ".gamma", gamma, false);
  pv(prefix + ".beta", beta, false);
  sv(prefix + ".running_mean", running_mean);
  sv(prefix + ".running_var", running_var);
}

void Conv1x1::init(int64_t cin_, int64_t cout_, std::mt19937_64& rng, int64_t stride_) {
  cin = cin_;
  cout = cout_;
  stride = stride_;
  Tensor wt({cout, cin});
  init_uniform(wt, cin, rng);
  w = Var::leaf(std::move(wt), true);
  Tensor bt({cout});
  init_uniform(bt, cin, rng);
  b = Var::leaf(std::move(bt), true);
}

void Conv1x1::visit(const std::string& prefix, const ParamVisitor& pv) {
  pv(prefix + ".weight", w, true);
  pv(prefix + ".bias", b, false);
}

void AgcLayer::init(int64_t cin_, int64_t cout_, const PartitionedAdjacency& adj,
                    std::mt19937_64& rng, bool residual) {
  cin = cin_;
  cout = cout_;
  V = adj.node_count;
  cprime = std::max<int64_t>(1, cout / 4);
  enable_skip = residual;
  for (size_t k = 0; k < kKernels; ++k) {
    a_fixed[k] = Var::constant(adj.normalized[k]);
    wk[k].init(cin, cout, rng);
    bk[k] = Var::leaf(Tensor({V, V}), true);  // zero start: fixed-graph behaviour
    emb_src[k].init(cin, cprime, rng);
    emb_dst[k].init(cin, cprime, rng);
  }
  bn.init(cout);
  if (residual && cin != cout) {
    res.emplace();
    res->init(cin, cout, rng);
    res_bn.emplace();
    res_bn->init(cout);
  }
}

Var AgcLayer::forward(const Var& x, bool training) {
  Var sum;
  for (size_t k = 0; k < kKernels; ++k) {
    const Var ab = ops::add(a_fixed[k], bk[k]);
    Var mixed;
    if (enable_ck) {
      const Var ea = emb_src[k].forward(x);
      const Var eb = emb_dst[k].forward(x);
      const Var ck = ops::softmax(ops::similarity(ea, eb));
      mixed = ops::node_mix_batched(x, ops::add_broadcast_mat(ck, ab));
    } else {
      mixed = ops::node_mix(x, ab);
    }
    const Var yk = wk[k].forward(mixed);
    sum = k == 0 ? yk : ops::add(sum, yk);
  }
  if (!fuse_output) return sum;
  Var y = bn.forward(sum, training);
  if (enable_skip) {
    const Var skip = res ? res_bn->forward(res->forward(x), training) : x;
    y = ops::add(y, skip);
  }
  return ops::swish(y);
}

void AgcLayer::visit(const std::string& prefix, const ParamVisitor& pv,
                     const StateVisitor& sv) {
  for (size_t k = 0; k < kKernels; ++k) {
    const std::string kp = prefix + ".k" + std::to_string(k);
    wk[k].visit(kp + ".w", pv);
    pv(kp + ".b_adj", bk[k], false);
    emb_src[k].visit(kp + ".emb_src", pv);
    emb_dst[k].visit(kp + ".emb_dst", pv);
  }
  bn.visit(prefix + ".bn", pv, sv);
  if (res) {
    res->visit(prefix + ".res", pv);
    res_bn->visit(prefix + ".res_bn", pv, sv);
  }
}

void TgcLayer::init(int64_t channels_, int64_t stride_, int64_t taps_,
                    std::mt19937_64& rng, bool residual) {
  channels = channels_;
  stride = stride_;
  taps = taps_;
  enable_skip = residual;
  const int64_t mid = 2 * channels;
  expand.init(channels, mid, rng);
  bn_expand.init(mid);
  Tensor wt({mid, taps});
  init_uniform(wt, taps, rng);
  dw_w = Var::leaf(std::move(wt), true);
  Tensor bt({mid});
  init_uniform(bt, taps, rng);
  dw_b = Var::leaf(std::move(bt), true);
  bn_depth.init(mid);
  project.init(mid, channels, rng);
  bn_project.init(channels);
  if (residual && stride != 1) {
    res.emplace();
    res->init(channels, channels, rng, stride);
    res_bn.emplace();
    res_bn->init(channels);
  }
}

Var TgcLayer::forward(const Var& x, bool training) {
  Var y = ops::swish(bn_expand.forward(expand.forward(x), training));
  y = ops::swish(bn_depth.forward(ops::dwconv_t(y, dw_w, dw_b, stride), training));
  y = bn_project.forward(project.forward(y), training);
  if (enable_skip) {
    const Var skip = res ? res_bn->forward(res->forward(x), training) : x;
    y = ops::add(y, skip);
  }
  return y;
}

void TgcLayer::visit(const std::string& prefix, const ParamVisitor& pv,
                     const StateVisitor& sv) {
  expand.visit(prefix + ".expand", pv);
  bn_expand.visit(prefix + ".bn_expand", pv, sv);
  pv(prefix + ".depth.weight", dw_w, true);
  pv(prefix + ".depth.bias", dw_b, false);
  bn_depth.visit(prefix + ".bn_depth", pv, sv);
  project.visit(prefix + ".project", pv);
  bn_project.visit(prefix + ".bn_project", pv, sv);
  if (res) {
    res->visit(prefix + ".res", pv);
    res_bn->visit(prefix + ".res_bn", pv, sv);
  }
}

void AttLayer::init(int64_t channels_, std::mt19937_64& rng) {
  channels = channels_;
  inner = std::max<int64_t>(1, channels / 4);
  fcn.init(channels, inner, rng);
  gate_t.init(inner, channels, rng);
  gate_v.init(inner, channels, rng);
}

Var AttLayer::forward(const Var& x) const {
  const int64_t T = x.shape()[2], V = x.shape()[3];
  const Var pooled_t = ops::mean_axis(x, 3);  // (N,C,T)
  const Var pooled_v = ops::mean_axis(x, 2);  // (N,C,V)
  const Var descriptor = ops::hardswish(fcn.forward(ops::concat({pooled_t, pooled_v}, 2)));
  const Var gt = ops::sigmoid(gate_t.forward(ops::slice(descriptor, 2, 0, T)));
  const Var gv = ops::sigmoid(gate_v.forward(ops::slice(descriptor, 2, T, V)));
  return ops::apply_joint_gates(x, gt, gv);
}

void AttLayer::visit(const std::string& prefix, const ParamVisitor& pv) {
  fcn.visit(prefix + ".fcn", pv);
  gate_t.visit(prefix + ".gate_t", pv);
  gate_v.visit(prefix + ".gate_v", pv);
}

}  // namespace egcn
