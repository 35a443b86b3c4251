#pragma once

#include <cstdint>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kScale,        // attr_d0 * x
  kRelu,
  kExp,
  kLog,
  kLogSumExp,    // 1-D input; attr_i0 = excluded index or -1
  kReduceSum,    // attr_i0 = axis
  kReduceMean,
  kReduceMax,
  kArgMax,       // non-differentiable, emits indices as doubles
  kRow,          // attr_i0 = row of a 2-D tensor
  kPick,         // attr_i0 = element of a 1-D tensor
  kStack,        // scalars -> 1-D tensor
  kSoftmaxRows,  // row-wise softmax of (N,C); 1-D treated as one row
  kLinear,       // x(N,C) * W(K,C)^T + b(K)
  kConv2d,       // attr_i0 = stride, attr_i1 = padding
  kBatchNorm,    // attr_i0 = train_stats flag; attr_d0 = eps
  kGroupNorm,    // attr_i0 = groups; attr_d0 = eps
  kGap,          // global average pool (N,C,H,W) -> (N,C)
  kAvgPool2,     // 2x2 stride-2 mean pool
  kChannelAffine,  // x(N,C,H,W) * gamma(C) + beta(C)
  kLerp,         // t*a + (1-t)*b with scalar node t
};

// One recorded operation. The tape is append-only and topologically ordered;
// backward walks it in reverse insertion order.
struct TapeNode {
  Op op = Op::kLeaf;
  std::vector<int32_t> inputs;
  Tensor value;
  Tensor grad;                 // allocated lazily during backward
  std::vector<Tensor> saved;   // tensors required by the backward rule
  bool needs_grad = false;
  int attr_i0 = 0;
  int attr_i1 = 0;
  double attr_d0 = 0.0;
};

struct Value {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Host-side context for one batch_norm application. In train-stats mode the
// forward pass may also fold the batch statistics into the running buffers.
struct BatchNormCall {
  double eps = 1e-5;
  double momentum = 0.1;
  bool train_stats = true;
  bool update_running = true;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

class Tape {
 public:
  Value param(Tensor v);      // leaf that accumulates a gradient
  Value constant(Tensor v);   // leaf without gradient (frozen/fixed data)

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value neg(Value a);
  Value scale(Value a, double c);
  Value relu(Value a);
  Value exp(Value a);
  Value log(Value a);

  Value log_sum_exp(Value a, int exclude = -1);
  Value reduce_sum(Value a, int axis);
  Value reduce_mean(Value a, int axis);
  Value reduce_max(Value a, int axis);
  Value reduce_argmax(Value a, int axis);
  Value row(Value m, int r);
  Value pick(Value v, int index);
  Value stack(const std::vector<Value>& scalars);
  Value softmax_rows(Value logits);

  Value linear(Value x, Value w, Value b);
  Value conv2d(Value x, Value w, Value b, int stride, int padding);
  Value batch_norm(Value x, Value gamma, Value beta, const BatchNormCall& call);
  Value group_norm(Value x, Value gamma, Value beta, int groups, double eps);
  Value gap(Value x);
  Value avg_pool2(Value x);
  Value channel_affine(Value x, Value gamma, Value beta);
  Value lerp(Value a, Value b, Value t);

  const Tensor& value(Value v) const { return at(v).value; }
  bool needs_grad(Value v) const { return at(v).needs_grad; }

  // Reverse-mode sweep from a scalar loss. A second call without clear() is
  // a contract error.
  void backward(Value loss);

  bool has_grad(Value v) const;
  const Tensor& grad(Value v) const;

  size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }
  void clear();

 private:
  friend class TapeTestPeer;
  int32_t push(TapeNode&& n);
  const TapeNode& at(Value v) const;
  TapeNode& at(Value v);
  Tensor& ensure_grad(int32_t id);
  void backward_node(int32_t id);

  std::vector<TapeNode> nodes_;
  bool backward_done_ = false;
};

// Host-side argmax with lowest-index tie-break; shared by the kArgMax node
// and callers that need plain indices.
int argmax_index(const double* v, int n);

}  // namespace tta
