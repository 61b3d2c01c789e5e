#pragma once

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "egcn/autodiff.hpp"
#include "egcn/graph.hpp"

namespace egcn {

/// Visitors for the named trainable parameters (with weight-decay
/// eligibility) and persistent state (batch-norm running statistics).
using ParamVisitor = std::function<void(const std::string&, Var&, bool decay)>;
using StateVisitor = std::function<void(const std::string&, Tensor&)>;

/// Fan-in scaled uniform draw into an existing tensor.
void init_uniform(Tensor& t, int64_t fan_in, std::mt19937_64& rng);

struct BatchNorm {
  Var gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  void init(int64_t channels);
  Var forward(const Var& x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& pv, const StateVisitor& sv);
};

struct Conv1x1 {
  Var w, b;
  int64_t cin = 0, cout = 0, stride = 1;

  void init(int64_t cin, int64_t cout, std::mt19937_64& rng, int64_t stride = 1);
  Var forward(const Var& x) const { return ops::conv1x1(x, w, b, stride); }
  void visit(const std::string& prefix, const ParamVisitor& pv);
};

/// Adaptive graph convolution: three spatial kernels, each mixing nodes with
/// the sum of a fixed normalized adjacency, a learned matrix (zero at init),
/// and a data-driven similarity map, followed by a 1x1 convolution. Batch
/// norm, an additive skip, and Swish close the layer.
struct AgcLayer {
  int64_t cin = 0, cout = 0, V = 0, cprime = 0;
  bool enable_ck = true;      // data-driven similarity term
  bool enable_skip = true;    // additive residual
  bool fuse_output = true;    // batch norm + activation (off only in oracle tests)
  std::array<Var, kKernels> a_fixed;
  std::array<Conv1x1, kKernels> wk;
  std::array<Var, kKernels> bk;
  std::array<Conv1x1, kKernels> emb_src, emb_dst;
  BatchNorm bn;
  std::optional<Conv1x1> res;
  std::optional<BatchNorm> res_bn;

  void init(int64_t cin, int64_t cout, const PartitionedAdjacency& adj,
            std::mt19937_64& rng, bool residual);
  Var forward(const Var& x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& pv, const StateVisitor& sv);
};

/// Factorized temporal convolution: 1x1 expand to 2C, depthwise taps x 1
/// (stride on the temporal axis), 1x1 project back to C. The skip uses a
/// strided 1x1 convolution when the length changes.
struct TgcLayer {
  int64_t channels = 0, stride = 1, taps = 5;
  bool enable_skip = true;
  Conv1x1 expand;
  BatchNorm bn_expand;
  Var dw_w, dw_b;
  BatchNorm bn_depth;
  Conv1x1 project;
  BatchNorm bn_project;
  std::optional<Conv1x1> res;
  std::optional<BatchNorm> res_bn;

  void init(int64_t channels, int64_t stride, int64_t taps, std::mt19937_64& rng,
            bool residual);
  Var forward(const Var& x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& pv, const StateVisitor& sv);
};

/// ST-JointAtt: spatial and temporal mean pools concatenated, mapped to a
/// quarter-width inner descriptor (HardSwish), then two sigmoid gates whose
/// outer product scales the input.
struct AttLayer {
  int64_t channels = 0, inner = 0;
  Conv1x1 fcn, gate_t, gate_v;

  void init(int64_t channels, std::mt19937_64& rng);
  Var forward(const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& pv);
};

}  // namespace egcn
