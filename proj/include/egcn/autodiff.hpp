#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "egcn/tensor.hpp"

namespace egcn {

/// Error with a machine-parsable category ("shape", "format", "io",
/// "numeric", "usage"); the CLI maps it to a one-line diagnostic.
struct Error : std::runtime_error {
  std::string category;
  Error(std::string cat, const std::string& msg)
      : std::runtime_error(msg), category(std::move(cat)) {}
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded step of the computation graph. `backward_fn` reads this
/// node's grad and accumulates into the parents' grads.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

/// Handle to a node; cheap to copy. The graph stays alive through the
/// shared parent references of downstream nodes.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& ensure_grad() { return node_->ensure_grad(); }
  void zero_grad() { if (!node_->grad.empty()) node_->grad.zero(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t size() const { return node_->value.size(); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Reverse sweep from a scalar loss. Gradients accumulate (sum over all
/// paths) in every requires_grad leaf. Interior nodes are trimmed as soon
/// as their backward has run.
void backward(const Var& loss);

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var sigmoid(const Var& x);
Var swish(const Var& x);
Var hardswish(const Var& x);

/// Softmax along the last axis.
Var softmax(const Var& x);

Var mean_axis(const Var& x, int axis);
Var sum_all(const Var& x);
Var reshape(const Var& x, Shape s);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(const Var& x, int axis, int64_t start, int64_t len);

/// (M,K) x (K,N)
Var matmul(const Var& a, const Var& b);
/// x (N,K), w (O,K), b (O) -> (N,O)
Var linear(const Var& x, const Var& w, const Var& b);

/// 1x1 convolution. x is (N,C,spatial...) with 3 or 4 axes; w (Co,Ci),
/// b (Co) optional (pass undefined Var to skip). stride_t subsamples the
/// first spatial axis.
Var conv1x1(const Var& x, const Var& w, const Var& b, int64_t stride_t = 1);

/// Depthwise temporal convolution; x (N,C,T,V), w (C,taps), pad taps/2.
Var dwconv_t(const Var& x, const Var& w, const Var& b, int64_t stride);

/// Right-multiplies the node axis: y[n,c,t,:] = x[n,c,t,:] @ m. m (V,V).
Var node_mix(const Var& x, const Var& m);
/// Per-sample adjacency m (N,V,V).
Var node_mix_batched(const Var& x, const Var& m);

/// Per-sample (V,V) Gram matrix of two embeddings (N,C',T,V):
/// out[n] = ea[n]^T eb[n] with the (C',T) axes flattened.
Var similarity(const Var& ea, const Var& eb);

/// ck (N,V,V) + ab (V,V) broadcast over samples.
Var add_broadcast_mat(const Var& ck, const Var& ab);

/// Batch normalization over (N, spatial...) per channel; x (N,C,...).
/// Training mode uses batch statistics and updates running stats in place.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var, bool training,
               double momentum = 0.9, double eps = 1e-5);

/// y[n,c,t,v] = x[n,c,t,v] * gt[n,c,t] * gv[n,c,v]
Var apply_joint_gates(const Var& x, const Var& gt, const Var& gv);

/// L2 norm over the channel axis: x (N,C,T,V) -> (N,1,T,V).
Var l2_norm_channels(const Var& x);

/// Summed cross-entropy from logits (N,K) against integer labels.
Var cross_entropy_sum(const Var& logits, const std::vector<int>& labels);

}  // namespace ops

/// Max over coordinates of |analytic - central difference| / max(1,|analytic|).
/// f must map a leaf Var of x's shape to a scalar Var, deterministically.
double finite_diff_check(const std::function<Var(const Var&)>& f,
                         const Tensor& x, double eps = 1e-5);

}  // namespace egcn
