#include "tta/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tta/errors.hpp"

namespace tta {

namespace {

void check_same_or_scalar(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b) && a.numel() != 1 && b.numel() != 1)
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                     " vs " + b.shape_string() +
                     " (only identical-shape or scalar broadcasting)");
}

// Collapse an axis reduction into (outer, len, inner) strides.
struct AxisView {
  size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Tensor& t, int axis, const char* op) {
  if (axis < 0 || axis >= t.rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + t.shape_string());
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<size_t>(t.dim(i));
  v.len = static_cast<size_t>(t.dim(axis));
  for (int i = axis + 1; i < t.rank(); ++i) v.inner *= static_cast<size_t>(t.dim(i));
  return v;
}

std::vector<int> drop_axis(const std::vector<int>& s, int axis) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out.push_back(s[static_cast<size_t>(i)]);
  if (out.empty()) out.push_back(1);
  return out;
}

int conv_out_dim(int in, int pad, int k, int stride, const char* what) {
  const int span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0)
    throw ShapeError(std::string("conv2d: ") + what + " size " + std::to_string(in) +
                     " with kernel " + std::to_string(k) + ", padding " +
                     std::to_string(pad) + ", stride " + std::to_string(stride) +
                     " does not yield an integer output size");
  return span / stride + 1;
}

}  // namespace

int argmax_index(const double* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

int32_t Tape::push(TapeNode&& n) {
  nodes_.push_back(std::move(n));
  return static_cast<int32_t>(nodes_.size() - 1);
}

const TapeNode& Tape::at(Value v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw ContractError("invalid tape value handle");
  return nodes_[static_cast<size_t>(v.id)];
}

TapeNode& Tape::at(Value v) {
  return const_cast<TapeNode&>(static_cast<const Tape*>(this)->at(v));
}

Tensor& Tape::ensure_grad(int32_t id) {
  TapeNode& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Tape::clear() {
  nodes_.clear();
  backward_done_ = false;
}

bool Tape::has_grad(Value v) const {
  const TapeNode& n = at(v);
  return !n.grad.data.empty();
}

const Tensor& Tape::grad(Value v) const {
  const TapeNode& n = at(v);
  if (n.grad.data.empty())
    throw ContractError("no gradient present for this node (frozen leaf, or backward not run)");
  return n.grad;
}

Value Tape::param(Tensor v) {
  TapeNode n;
  n.op = Op::kLeaf;
  n.value = std::move(v);
  n.needs_grad = true;
  return Value{push(std::move(n))};
}

Value Tape::constant(Tensor v) {
  TapeNode n;
  n.op = Op::kLeaf;
  n.value = std::move(v);
  n.needs_grad = false;
  return Value{push(std::move(n))};
}

// ---------------------------------------------------------------------------
// Elementwise

Value Tape::add(Value a, Value b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  check_same_or_scalar(va, vb, "add");
  Tensor out(va.numel() >= vb.numel() ? va.shape : vb.shape);
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i)
    out[i] = va[va.numel() == 1 ? 0 : i] + vb[vb.numel() == 1 ? 0 : i];
  TapeNode node;
  node.op = Op::kAdd;
  node.inputs = {a.id, b.id};
  node.needs_grad = at(a).needs_grad || at(b).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::sub(Value a, Value b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  check_same_or_scalar(va, vb, "sub");
  Tensor out(va.numel() >= vb.numel() ? va.shape : vb.shape);
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i)
    out[i] = va[va.numel() == 1 ? 0 : i] - vb[vb.numel() == 1 ? 0 : i];
  TapeNode node;
  node.op = Op::kSub;
  node.inputs = {a.id, b.id};
  node.needs_grad = at(a).needs_grad || at(b).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::mul(Value a, Value b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  check_same_or_scalar(va, vb, "mul");
  Tensor out(va.numel() >= vb.numel() ? va.shape : vb.shape);
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i)
    out[i] = va[va.numel() == 1 ? 0 : i] * vb[vb.numel() == 1 ? 0 : i];
  TapeNode node;
  node.op = Op::kMul;
  node.inputs = {a.id, b.id};
  node.needs_grad = at(a).needs_grad || at(b).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::neg(Value a) {
  const Tensor& va = at(a).value;
  Tensor out(va.shape);
  for (size_t i = 0; i < va.numel(); ++i) out[i] = -va[i];
  TapeNode node;
  node.op = Op::kNeg;
  node.inputs = {a.id};
  node.needs_grad = at(a).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::scale(Value a, double c) {
  const Tensor& va = at(a).value;
  Tensor out(va.shape);
  for (size_t i = 0; i < va.numel(); ++i) out[i] = c * va[i];
  TapeNode node;
  node.op = Op::kScale;
  node.inputs = {a.id};
  node.attr_d0 = c;
  node.needs_grad = at(a).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::relu(Value a) {
  const Tensor& va = at(a).value;
  Tensor out(va.shape);
  for (size_t i = 0; i < va.numel(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
  TapeNode node;
  node.op = Op::kRelu;
  node.inputs = {a.id};
  node.needs_grad = at(a).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::exp(Value a) {
  const Tensor& va = at(a).value;
  Tensor out(va.shape);
  for (size_t i = 0; i < va.numel(); ++i) out[i] = std::exp(va[i]);
  TapeNode node;
  node.op = Op::kExp;
  node.inputs = {a.id};
  node.needs_grad = at(a).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::log(Value a) {
  const Tensor& va = at(a).value;
  Tensor out(va.shape);
  for (size_t i = 0; i < va.numel(); ++i) {
    if (!(va[i] > 0.0))
      throw DomainError("log: non-positive input " + std::to_string(va[i]));
    out[i] = std::log(va[i]);
  }
  TapeNode node;
  node.op = Op::kLog;
  node.inputs = {a.id};
  node.needs_grad = at(a).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

// ---------------------------------------------------------------------------
// log-sum-exp and reductions

Value Tape::log_sum_exp(Value a, int exclude) {
  const Tensor& va = at(a).value;
  if (va.rank() != 1)
    throw ShapeError("log_sum_exp: expected 1-D logits, got " + va.shape_string());
  const int n = va.dim(0);
  if (n < 2) {
    if (exclude >= 0)
      throw DomainError("log_sum_exp: exclusion leaves an empty index set");
    throw ContractError("log_sum_exp: needs at least 2 classes");
  }
  if (exclude >= n)
    throw ShapeError("log_sum_exp: exclude index " + std::to_string(exclude) +
                     " out of range");
  double m = -HUGE_VAL;
  for (int i = 0; i < n; ++i)
    if (i != exclude && va[static_cast<size_t>(i)] > m) m = va[static_cast<size_t>(i)];
  double s = 0.0;
  Tensor p({n});
  for (int i = 0; i < n; ++i) {
    if (i == exclude) continue;
    const double e = std::exp(va[static_cast<size_t>(i)] - m);
    p[static_cast<size_t>(i)] = e;
    s += e;
  }
  for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] /= s;
  TapeNode node;
  node.op = Op::kLogSumExp;
  node.inputs = {a.id};
  node.attr_i0 = exclude;
  node.needs_grad = at(a).needs_grad;
  node.value = Tensor::scalar(m + std::log(s));
  node.saved.push_back(std::move(p));
  return Value{push(std::move(node))};
}

Value Tape::reduce_sum(Value a, int axis) {
  const Tensor& va = at(a).value;
  const AxisView v = axis_view(va, axis, "reduce_sum");
  Tensor out(drop_axis(va.shape, axis));
  for (size_t o = 0; o < v.outer; ++o)
    for (size_t i = 0; i < v.inner; ++i) {
      double s = 0.0;
      for (size_t k = 0; k < v.len; ++k) s += va[(o * v.len + k) * v.inner + i];
      out[o * v.inner + i] = s;
    }
  TapeNode node;
  node.op = Op::kReduceSum;
  node.inputs = {a.id};
  node.attr_i0 = axis;
  node.needs_grad = at(a).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::reduce_mean(Value a, int axis) {
  const Tensor& va = at(a).value;
  const AxisView v = axis_view(va, axis, "reduce_mean");
  Tensor out(drop_axis(va.shape, axis));
  const double inv = 1.0 / static_cast<double>(v.len);
  for (size_t o = 0; o < v.outer; ++o)
    for (size_t i = 0; i < v.inner; ++i) {
      double s = 0.0;
      for (size_t k = 0; k < v.len; ++k) s += va[(o * v.len + k) * v.inner + i];
      out[o * v.inner + i] = s * inv;
    }
  TapeNode node;
  node.op = Op::kReduceMean;
  node.inputs = {a.id};
  node.attr_i0 = axis;
  node.needs_grad = at(a).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::reduce_max(Value a, int axis) {
  const Tensor& va = at(a).value;
  const AxisView v = axis_view(va, axis, "reduce_max");
  Tensor out(drop_axis(va.shape, axis));
  for (size_t o = 0; o < v.outer; ++o)
    for (size_t i = 0; i < v.inner; ++i) {
      double m = va[o * v.len * v.inner + i];
      for (size_t k = 1; k < v.len; ++k)
        m = std::max(m, va[(o * v.len + k) * v.inner + i]);
      out[o * v.inner + i] = m;
    }
  TapeNode node;
  node.op = Op::kReduceMax;
  node.inputs = {a.id};
  node.attr_i0 = axis;
  node.needs_grad = at(a).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::reduce_argmax(Value a, int axis) {
  const Tensor& va = at(a).value;
  const AxisView v = axis_view(va, axis, "reduce_argmax");
  Tensor out(drop_axis(va.shape, axis));
  for (size_t o = 0; o < v.outer; ++o)
    for (size_t i = 0; i < v.inner; ++i) {
      size_t best = 0;
      double m = va[o * v.len * v.inner + i];
      for (size_t k = 1; k < v.len; ++k) {
        const double x = va[(o * v.len + k) * v.inner + i];
        if (x > m) {  // ties break to lowest index
          m = x;
          best = k;
        }
      }
      out[o * v.inner + i] = static_cast<double>(best);
    }
  TapeNode node;
  node.op = Op::kArgMax;
  node.inputs = {a.id};
  node.attr_i0 = axis;
  node.needs_grad = false;  // treated as a constant during backward
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

// ---------------------------------------------------------------------------
// Slicing / assembly

Value Tape::row(Value m, int r) {
  const Tensor& vm = at(m).value;
  if (vm.rank() != 2)
    throw ShapeError("row: expected a 2-D tensor, got " + vm.shape_string());
  if (r < 0 || r >= vm.dim(0))
    throw ShapeError("row: index " + std::to_string(r) + " out of range");
  const int c = vm.dim(1);
  Tensor out({c});
  std::memcpy(out.data.data(), vm.data.data() + static_cast<size_t>(r) * c,
              sizeof(double) * static_cast<size_t>(c));
  TapeNode node;
  node.op = Op::kRow;
  node.inputs = {m.id};
  node.attr_i0 = r;
  node.needs_grad = at(m).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::pick(Value v, int index) {
  const Tensor& vv = at(v).value;
  if (vv.rank() != 1)
    throw ShapeError("pick: expected a 1-D tensor, got " + vv.shape_string());
  if (index < 0 || index >= vv.dim(0))
    throw ShapeError("pick: index " + std::to_string(index) + " out of range");
  TapeNode node;
  node.op = Op::kPick;
  node.inputs = {v.id};
  node.attr_i0 = index;
  node.needs_grad = at(v).needs_grad;
  node.value = Tensor::scalar(vv[static_cast<size_t>(index)]);
  return Value{push(std::move(node))};
}

Value Tape::stack(const std::vector<Value>& scalars) {
  if (scalars.empty()) throw ContractError("stack: empty input list");
  Tensor out({static_cast<int>(scalars.size())});
  TapeNode node;
  node.op = Op::kStack;
  node.needs_grad = false;
  for (size_t i = 0; i < scalars.size(); ++i) {
    const TapeNode& in = at(scalars[i]);
    if (in.value.numel() != 1)
      throw ShapeError("stack: input " + std::to_string(i) + " is not a scalar");
    out[i] = in.value[0];
    node.needs_grad = node.needs_grad || in.needs_grad;
    node.inputs.push_back(scalars[i].id);
  }
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::softmax_rows(Value logits) {
  const Tensor& vl = at(logits).value;
  if (vl.rank() != 1 && vl.rank() != 2)
    throw ShapeError("softmax_rows: expected 1-D or 2-D logits, got " + vl.shape_string());
  const int rows = vl.rank() == 2 ? vl.dim(0) : 1;
  const int cols = vl.rank() == 2 ? vl.dim(1) : vl.dim(0);
  Tensor out(vl.shape);
  for (int r = 0; r < rows; ++r) {
    const double* in = vl.data.data() + static_cast<size_t>(r) * cols;
    double* o = out.data.data() + static_cast<size_t>(r) * cols;
    double m = in[0];
    for (int c = 1; c < cols; ++c) m = std::max(m, in[c]);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - m);
      s += o[c];
    }
    const double inv = 1.0 / s;
    for (int c = 0; c < cols; ++c) o[c] *= inv;
  }
  TapeNode node;
  node.op = Op::kSoftmaxRows;
  node.inputs = {logits.id};
  node.needs_grad = at(logits).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

// ---------------------------------------------------------------------------
// Layers

Value Tape::linear(Value x, Value w, Value b) {
  const Tensor& vx = at(x).value;
  const Tensor& vw = at(w).value;
  const Tensor& vb = at(b).value;
  if (vx.rank() != 2 || vw.rank() != 2 || vb.rank() != 1)
    throw ShapeError("linear: expected x(N,C), w(K,C), b(K)");
  const int n = vx.dim(0), c = vx.dim(1), k = vw.dim(0);
  if (vw.dim(1) != c || vb.dim(0) != k)
    throw ShapeError("linear: inconsistent shapes " + vx.shape_string() + ", " +
                     vw.shape_string() + ", " + vb.shape_string());
  Tensor out({n, k});
  for (int i = 0; i < n; ++i) {
    const double* xr = vx.data.data() + static_cast<size_t>(i) * c;
    double* orow = out.data.data() + static_cast<size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const double* wr = vw.data.data() + static_cast<size_t>(j) * c;
      double s = vb[static_cast<size_t>(j)];
      for (int l = 0; l < c; ++l) s += xr[l] * wr[l];
      orow[j] = s;
    }
  }
  TapeNode node;
  node.op = Op::kLinear;
  node.inputs = {x.id, w.id, b.id};
  node.needs_grad = at(x).needs_grad || at(w).needs_grad || at(b).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::conv2d(Value x, Value w, Value b, int stride, int padding) {
  const Tensor& vx = at(x).value;
  const Tensor& vw = at(w).value;
  const Tensor& vb = at(b).value;
  if (vx.rank() != 4 || vw.rank() != 4 || vb.rank() != 1)
    throw ShapeError("conv2d: expected x(N,C,H,W), w(OC,IC,KH,KW), b(OC)");
  if (stride < 1 || padding < 0) throw ContractError("conv2d: bad stride/padding");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int OC = vw.dim(0), IC = vw.dim(1), KH = vw.dim(2), KW = vw.dim(3);
  if (IC != C)
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, kernel expects " +
                     std::to_string(IC));
  if (vb.dim(0) != OC) throw ShapeError("conv2d: bias size mismatch");
  const int OH = conv_out_dim(H, padding, KH, stride, "height");
  const int OW = conv_out_dim(W, padding, KW, stride, "width");

  Tensor out({N, OC, OH, OW});
  const double* X = vx.data.data();
  const double* Wt = vw.data.data();
  double* O = out.data.data();
  const size_t x_n = static_cast<size_t>(C) * H * W;
  const size_t o_n = static_cast<size_t>(OC) * OH * OW;
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      double* obase = O + n * o_n + static_cast<size_t>(oc) * OH * OW;
      const double bias = vb[static_cast<size_t>(oc)];
      for (int i = 0; i < OH * OW; ++i) obase[i] = bias;
      for (int ic = 0; ic < C; ++ic) {
        const double* xbase = X + n * x_n + static_cast<size_t>(ic) * H * W;
        const double* wbase = Wt + (static_cast<size_t>(oc) * C + ic) * KH * KW;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const double wv = wbase[kh * KW + kw];
            if (stride == 1) {
              const int ow_lo = std::max(0, padding - kw);
              const int ow_hi = std::min(OW - 1, W - 1 - kw + padding);
              for (int oh = 0; oh < OH; ++oh) {
                const int ih = oh - padding + kh;
                if (ih < 0 || ih >= H) continue;
                const double* __restrict__ xr = xbase + static_cast<size_t>(ih) * W + kw - padding;
                double* __restrict__ orow = obase + static_cast<size_t>(oh) * OW;
                for (int ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * xr[ow];
              }
            } else {
              for (int oh = 0; oh < OH; ++oh) {
                const int ih = oh * stride - padding + kh;
                if (ih < 0 || ih >= H) continue;
                for (int ow = 0; ow < OW; ++ow) {
                  const int iw = ow * stride - padding + kw;
                  if (iw < 0 || iw >= W) continue;
                  obase[static_cast<size_t>(oh) * OW + ow] +=
                      wv * xbase[static_cast<size_t>(ih) * W + iw];
                }
              }
            }
          }
        }
      }
    }
  }
  TapeNode node;
  node.op = Op::kConv2d;
  node.inputs = {x.id, w.id, b.id};
  node.attr_i0 = stride;
  node.attr_i1 = padding;
  node.needs_grad = at(x).needs_grad || at(w).needs_grad || at(b).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::batch_norm(Value x, Value gamma, Value beta, const BatchNormCall& call) {
  const Tensor& vx = at(x).value;
  const Tensor& vg = at(gamma).value;
  const Tensor& vb = at(beta).value;
  if (vx.rank() != 4) throw ShapeError("batch_norm: expected x(N,C,H,W)");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  if (vg.rank() != 1 || vg.dim(0) != C || vb.rank() != 1 || vb.dim(0) != C)
    throw ShapeError("batch_norm: affine parameters must have shape (C)");
  const size_t plane = static_cast<size_t>(H) * W;
  const size_t count = static_cast<size_t>(N) * plane;

  Tensor mean({C}), inv_std({C});
  if (call.train_stats) {
    if (count < 2)
      throw ContractError("batch_norm: train-stats mode needs >= 2 values per channel");
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = vx.data.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = vx.data.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double d = p[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(count);  // biased (population) estimator
      mean[static_cast<size_t>(c)] = m;
      inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(v + call.eps);
      if (call.update_running) {
        if (!call.running_mean || !call.running_var)
          throw ContractError("batch_norm: running statistics buffers missing");
        (*call.running_mean)[static_cast<size_t>(c)] =
            (1.0 - call.momentum) * (*call.running_mean)[static_cast<size_t>(c)] +
            call.momentum * m;
        (*call.running_var)[static_cast<size_t>(c)] =
            (1.0 - call.momentum) * (*call.running_var)[static_cast<size_t>(c)] +
            call.momentum * v;
      }
    }
  } else {
    if (!call.running_mean || !call.running_var)
      throw ContractError("batch_norm: running statistics buffers missing");
    for (int c = 0; c < C; ++c) {
      const double v = (*call.running_var)[static_cast<size_t>(c)];
      if (!(v > 0.0)) throw DomainError("batch_norm: running variance must be positive");
      mean[static_cast<size_t>(c)] = (*call.running_mean)[static_cast<size_t>(c)];
      inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(v + call.eps);
    }
  }

  Tensor out(vx.shape);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double m = mean[static_cast<size_t>(c)];
      const double is = inv_std[static_cast<size_t>(c)];
      const double g = vg[static_cast<size_t>(c)];
      const double bt = vb[static_cast<size_t>(c)];
      const double* p = vx.data.data() + (static_cast<size_t>(n) * C + c) * plane;
      double* o = out.data.data() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) o[i] = g * ((p[i] - m) * is) + bt;
    }
  }
  TapeNode node;
  node.op = Op::kBatchNorm;
  node.inputs = {x.id, gamma.id, beta.id};
  node.attr_i0 = call.train_stats ? 1 : 0;
  node.attr_d0 = call.eps;
  node.needs_grad = at(x).needs_grad || at(gamma).needs_grad || at(beta).needs_grad;
  node.value = std::move(out);
  node.saved.push_back(std::move(mean));
  node.saved.push_back(std::move(inv_std));
  return Value{push(std::move(node))};
}

Value Tape::group_norm(Value x, Value gamma, Value beta, int groups, double eps) {
  const Tensor& vx = at(x).value;
  const Tensor& vg = at(gamma).value;
  const Tensor& vb = at(beta).value;
  if (vx.rank() != 4) throw ShapeError("group_norm: expected x(N,C,H,W)");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  if (groups < 1 || C % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(C) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  if (vg.rank() != 1 || vg.dim(0) != C || vb.rank() != 1 || vb.dim(0) != C)
    throw ShapeError("group_norm: affine parameters must have shape (C)");
  const int cg = C / groups;
  const size_t plane = static_cast<size_t>(H) * W;
  const size_t slice = static_cast<size_t>(cg) * plane;

  Tensor mean({N, groups}), inv_std({N, groups});
  Tensor out(vx.shape);
  for (int n = 0; n < N; ++n) {
    for (int g = 0; g < groups; ++g) {
      const double* base = vx.data.data() + (static_cast<size_t>(n) * C + static_cast<size_t>(g) * cg) * plane;
      double s = 0.0;
      for (size_t i = 0; i < slice; ++i) s += base[i];
      const double m = s / static_cast<double>(slice);
      double v = 0.0;
      for (size_t i = 0; i < slice; ++i) {
        const double d = base[i] - m;
        v += d * d;
      }
      v /= static_cast<double>(slice);
      const double is = 1.0 / std::sqrt(v + eps);
      mean.data[static_cast<size_t>(n) * groups + g] = m;
      inv_std.data[static_cast<size_t>(n) * groups + g] = is;
      for (int cc = 0; cc < cg; ++cc) {
        const int c = g * cg + cc;
        const double ga = vg[static_cast<size_t>(c)];
        const double bt = vb[static_cast<size_t>(c)];
        const double* p = vx.data.data() + (static_cast<size_t>(n) * C + c) * plane;
        double* o = out.data.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) o[i] = ga * ((p[i] - m) * is) + bt;
      }
    }
  }
  TapeNode node;
  node.op = Op::kGroupNorm;
  node.inputs = {x.id, gamma.id, beta.id};
  node.attr_i0 = groups;
  node.attr_d0 = eps;
  node.needs_grad = at(x).needs_grad || at(gamma).needs_grad || at(beta).needs_grad;
  node.value = std::move(out);
  node.saved.push_back(std::move(mean));
  node.saved.push_back(std::move(inv_std));
  return Value{push(std::move(node))};
}

Value Tape::gap(Value x) {
  const Tensor& vx = at(x).value;
  if (vx.rank() != 4) throw ShapeError("gap: expected x(N,C,H,W)");
  const int N = vx.dim(0), C = vx.dim(1);
  const size_t plane = static_cast<size_t>(vx.dim(2)) * vx.dim(3);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = vx.data.data() + (static_cast<size_t>(n) * C + c) * plane;
      double s = 0.0;
      for (size_t i = 0; i < plane; ++i) s += p[i];
      out.data[static_cast<size_t>(n) * C + c] = s / static_cast<double>(plane);
    }
  TapeNode node;
  node.op = Op::kGap;
  node.inputs = {x.id};
  node.needs_grad = at(x).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::avg_pool2(Value x) {
  const Tensor& vx = at(x).value;
  if (vx.rank() != 4) throw ShapeError("avg_pool2: expected x(N,C,H,W)");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("avg_pool2: spatial size " + vx.shape_string() + " not even");
  const int OH = H / 2, OW = W / 2;
  Tensor out({N, C, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = vx.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      double* o = out.data.data() + (static_cast<size_t>(n) * C + c) * OH * OW;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          const double* q = p + static_cast<size_t>(2 * oh) * W + 2 * ow;
          o[static_cast<size_t>(oh) * OW + ow] = 0.25 * (q[0] + q[1] + q[W] + q[W + 1]);
        }
    }
  TapeNode node;
  node.op = Op::kAvgPool2;
  node.inputs = {x.id};
  node.needs_grad = at(x).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::channel_affine(Value x, Value gamma, Value beta) {
  const Tensor& vx = at(x).value;
  const Tensor& vg = at(gamma).value;
  const Tensor& vb = at(beta).value;
  if (vx.rank() != 4) throw ShapeError("channel_affine: expected x(N,C,H,W)");
  const int N = vx.dim(0), C = vx.dim(1);
  const size_t plane = static_cast<size_t>(vx.dim(2)) * vx.dim(3);
  if (vg.rank() != 1 || vg.dim(0) != C || vb.rank() != 1 || vb.dim(0) != C)
    throw ShapeError("channel_affine: gamma/beta must have shape (C)");
  Tensor out(vx.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double g = vg[static_cast<size_t>(c)];
      const double bt = vb[static_cast<size_t>(c)];
      const double* p = vx.data.data() + (static_cast<size_t>(n) * C + c) * plane;
      double* o = out.data.data() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) o[i] = g * p[i] + bt;
    }
  TapeNode node;
  node.op = Op::kChannelAffine;
  node.inputs = {x.id, gamma.id, beta.id};
  node.needs_grad = at(x).needs_grad || at(gamma).needs_grad || at(beta).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

Value Tape::lerp(Value a, Value b, Value t) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  const Tensor& vt = at(t).value;
  if (!va.same_shape(vb))
    throw ShapeError("lerp: operands differ " + va.shape_string() + " vs " + vb.shape_string());
  if (vt.numel() != 1) throw ShapeError("lerp: mixing factor must be scalar");
  const double tv = vt[0];
  Tensor out(va.shape);
  for (size_t i = 0; i < va.numel(); ++i) out[i] = tv * va[i] + (1.0 - tv) * vb[i];
  TapeNode node;
  node.op = Op::kLerp;
  node.inputs = {a.id, b.id, t.id};
  node.needs_grad = at(a).needs_grad || at(b).needs_grad || at(t).needs_grad;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Value loss) {
  if (backward_done_)
    throw ContractError("backward: repeated call without clear()");
  const TapeNode& ln = at(loss);
  if (ln.value.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " + ln.value.shape_string());
  backward_done_ = true;
  if (!ln.needs_grad) return;
  ensure_grad(loss.id)[0] = 1.0;
  for (int32_t id = loss.id; id >= 0; --id) {
    TapeNode& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.data.empty()) continue;
    backward_node(id);
  }
}

void Tape::backward_node(int32_t id) {
  TapeNode& n = nodes_[static_cast<size_t>(id)];
  const Tensor& g = n.grad;
  auto in_val = [&](int k) -> const Tensor& {
    return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])].value;
  };
  auto in_needs = [&](int k) {
    return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])].needs_grad;
  };
  auto in_grad = [&](int k) -> Tensor& {
    return ensure_grad(n.inputs[static_cast<size_t>(k)]);
  };

  switch (n.op) {
    case Op::kLeaf:
      break;

    case Op::kAdd:
    case Op::kSub: {
      const double sign = n.op == Op::kSub ? -1.0 : 1.0;
      for (int k = 0; k < 2; ++k) {
        if (!in_needs(k)) continue;
        const double f = k == 1 ? sign : 1.0;
        Tensor& gi = in_grad(k);
        if (gi.numel() == g.numel()) {
          for (size_t i = 0; i < g.numel(); ++i) gi[i] += f * g[i];
        } else {  // scalar operand broadcast over the other
          double s = 0.0;
          for (size_t i = 0; i < g.numel(); ++i) s += g[i];
          gi[0] += f * s;
        }
      }
      break;
    }

    case Op::kMul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      if (in_needs(0)) {
        Tensor& ga = in_grad(0);
        if (a.numel() == g.numel()) {
          for (size_t i = 0; i < g.numel(); ++i)
            ga[i] += g[i] * b[b.numel() == 1 ? 0 : i];
        } else {
          double s = 0.0;
          for (size_t i = 0; i < g.numel(); ++i) s += g[i] * b[i];
          ga[0] += s;
        }
      }
      if (in_needs(1)) {
        Tensor& gb = in_grad(1);
        if (b.numel() == g.numel()) {
          for (size_t i = 0; i < g.numel(); ++i)
            gb[i] += g[i] * a[a.numel() == 1 ? 0 : i];
        } else {
          double s = 0.0;
          for (size_t i = 0; i < g.numel(); ++i) s += g[i] * a[i];
          gb[0] += s;
        }
      }
      break;
    }

    case Op::kNeg: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      for (size_t i = 0; i < g.numel(); ++i) gi[i] -= g[i];
      break;
    }

    case Op::kScale: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      for (size_t i = 0; i < g.numel(); ++i) gi[i] += n.attr_d0 * g[i];
      break;
    }

    case Op::kRelu: {
      if (!in_needs(0)) break;
      const Tensor& x = in_val(0);
      Tensor& gi = in_grad(0);
      for (size_t i = 0; i < g.numel(); ++i)
        if (x[i] > 0.0) gi[i] += g[i];
      break;
    }

    case Op::kExp: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      for (size_t i = 0; i < g.numel(); ++i) gi[i] += g[i] * n.value[i];
      break;
    }

    case Op::kLog: {
      if (!in_needs(0)) break;
      const Tensor& x = in_val(0);
      Tensor& gi = in_grad(0);
      for (size_t i = 0; i < g.numel(); ++i) gi[i] += g[i] / x[i];
      break;
    }

    case Op::kLogSumExp: {
      if (!in_needs(0)) break;
      const Tensor& p = n.saved[0];
      Tensor& gi = in_grad(0);
      const double g0 = g[0];
      for (size_t i = 0; i < p.numel(); ++i) gi[i] += g0 * p[i];
      break;
    }

    case Op::kReduceSum:
    case Op::kReduceMean: {
      if (!in_needs(0)) break;
      const Tensor& x = in_val(0);
      const AxisView v = axis_view(x, n.attr_i0, "reduce backward");
      const double f = n.op == Op::kReduceMean ? 1.0 / static_cast<double>(v.len) : 1.0;
      Tensor& gi = in_grad(0);
      for (size_t o = 0; o < v.outer; ++o)
        for (size_t k = 0; k < v.len; ++k)
          for (size_t i = 0; i < v.inner; ++i)
            gi.data[(o * v.len + k) * v.inner + i] += f * g.data[o * v.inner + i];
      break;
    }

    case Op::kReduceMax: {
      if (!in_needs(0)) break;
      const Tensor& x = in_val(0);
      const AxisView v = axis_view(x, n.attr_i0, "reduce backward");
      Tensor& gi = in_grad(0);
      for (size_t o = 0; o < v.outer; ++o)
        for (size_t i = 0; i < v.inner; ++i) {
          size_t best = 0;
          double m = x.data[o * v.len * v.inner + i];
          for (size_t k = 1; k < v.len; ++k) {
            const double val = x.data[(o * v.len + k) * v.inner + i];
            if (val > m) {
              m = val;
              best = k;
            }
          }
          gi.data[(o * v.len + best) * v.inner + i] += g.data[o * v.inner + i];
        }
      break;
    }

    case Op::kArgMax:
      break;  // constant

    case Op::kRow: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const size_t c = g.numel();
      double* dst = gi.data.data() + static_cast<size_t>(n.attr_i0) * c;
      for (size_t i = 0; i < c; ++i) dst[i] += g[i];
      break;
    }

    case Op::kPick: {
      if (!in_needs(0)) break;
      in_grad(0)[static_cast<size_t>(n.attr_i0)] += g[0];
      break;
    }

    case Op::kStack: {
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        if (!nodes_[static_cast<size_t>(n.inputs[k])].needs_grad) continue;
        ensure_grad(n.inputs[k])[0] += g[k];
      }
      break;
    }

    case Op::kSoftmaxRows: {
      if (!in_needs(0)) break;
      const Tensor& y = n.value;
      const int rows = y.rank() == 2 ? y.dim(0) : 1;
      const int cols = y.rank() == 2 ? y.dim(1) : y.dim(0);
      Tensor& gi = in_grad(0);
      for (int r = 0; r < rows; ++r) {
        const double* yr = y.data.data() + static_cast<size_t>(r) * cols;
        const double* gr = g.data.data() + static_cast<size_t>(r) * cols;
        double* dr = gi.data.data() + static_cast<size_t>(r) * cols;
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
        for (int c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
      }
      break;
    }

    case Op::kLinear: {
      const Tensor& x = in_val(0);
      const Tensor& w = in_val(1);
      const int N = x.dim(0), C = x.dim(1), K = w.dim(0);
      if (in_needs(0)) {
        Tensor& gx = in_grad(0);
        for (int i = 0; i < N; ++i) {
          const double* gr = g.data.data() + static_cast<size_t>(i) * K;
          double* dx = gx.data.data() + static_cast<size_t>(i) * C;
          for (int j = 0; j < K; ++j) {
            const double gv = gr[j];
            const double* wr = w.data.data() + static_cast<size_t>(j) * C;
            for (int l = 0; l < C; ++l) dx[l] += gv * wr[l];
          }
        }
      }
      if (in_needs(1)) {
        Tensor& gw = in_grad(1);
        for (int i = 0; i < N; ++i) {
          const double* gr = g.data.data() + static_cast<size_t>(i) * K;
          const double* xr = x.data.data() + static_cast<size_t>(i) * C;
          for (int j = 0; j < K; ++j) {
            const double gv = gr[j];
            double* dw = gw.data.data() + static_cast<size_t>(j) * C;
            for (int l = 0; l < C; ++l) dw[l] += gv * xr[l];
          }
        }
      }
      if (in_needs(2)) {
        Tensor& gb = in_grad(2);
        for (int i = 0; i < N; ++i) {
          const double* gr = g.data.data() + static_cast<size_t>(i) * K;
          for (int j = 0; j < K; ++j) gb[static_cast<size_t>(j)] += gr[j];
        }
      }
      break;
    }

    case Op::kConv2d: {
      const Tensor& x = in_val(0);
      const Tensor& w = in_val(1);
      const int stride = n.attr_i0, padding = n.attr_i1;
      const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
      const int OH = n.value.dim(2), OW = n.value.dim(3);
      const size_t x_n = static_cast<size_t>(C) * H * W;
      const size_t o_n = static_cast<size_t>(OC) * OH * OW;

      if (in_needs(0)) {
        Tensor& gx = in_grad(0);
        for (int nn = 0; nn < N; ++nn)
          for (int oc = 0; oc < OC; ++oc) {
            const double* gbase = g.data.data() + nn * o_n + static_cast<size_t>(oc) * OH * OW;
            for (int ic = 0; ic < C; ++ic) {
              double* xg = gx.data.data() + nn * x_n + static_cast<size_t>(ic) * H * W;
              const double* wbase = w.data.data() + (static_cast<size_t>(oc) * C + ic) * KH * KW;
              for (int kh = 0; kh < KH; ++kh)
                for (int kw = 0; kw < KW; ++kw) {
                  const double wv = wbase[kh * KW + kw];
                  if (stride == 1) {
                    const int ow_lo = std::max(0, padding - kw);
                    const int ow_hi = std::min(OW - 1, W - 1 - kw + padding);
                    for (int oh = 0; oh < OH; ++oh) {
                      const int ih = oh - padding + kh;
                      if (ih < 0 || ih >= H) continue;
                      double* __restrict__ xr = xg + static_cast<size_t>(ih) * W + kw - padding;
                      const double* __restrict__ grow = gbase + static_cast<size_t>(oh) * OW;
                      for (int ow = ow_lo; ow <= ow_hi; ++ow) xr[ow] += wv * grow[ow];
                    }
                  } else {
                    for (int oh = 0; oh < OH; ++oh) {
                      const int ih = oh * stride - padding + kh;
                      if (ih < 0 || ih >= H) continue;
                      for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - padding + kw;
                        if (iw < 0 || iw >= W) continue;
                        xg[static_cast<size_t>(ih) * W + iw] +=
                            wv * gbase[static_cast<size_t>(oh) * OW + ow];
                      }
                    }
                  }
                }
            }
          }
      }
      if (in_needs(1)) {
        Tensor& gw = in_grad(1);
        for (int nn = 0; nn < N; ++nn)
          for (int oc = 0; oc < OC; ++oc) {
            const double* gbase = g.data.data() + nn * o_n + static_cast<size_t>(oc) * OH * OW;
            for (int ic = 0; ic < C; ++ic) {
              const double* xbase = x.data.data() + nn * x_n + static_cast<size_t>(ic) * H * W;
              double* wg = gw.data.data() + (static_cast<size_t>(oc) * C + ic) * KH * KW;
              for (int kh = 0; kh < KH; ++kh)
                for (int kw = 0; kw < KW; ++kw) {
                  double acc = 0.0;
                  if (stride == 1) {
                    const int ow_lo = std::max(0, padding - kw);
                    const int ow_hi = std::min(OW - 1, W - 1 - kw + padding);
                    for (int oh = 0; oh < OH; ++oh) {
                      const int ih = oh - padding + kh;
                      if (ih < 0 || ih >= H) continue;
                      const double* __restrict__ xr =
                          xbase + static_cast<size_t>(ih) * W + kw - padding;
                      const double* __restrict__ grow = gbase + static_cast<size_t>(oh) * OW;
                      for (int ow = ow_lo; ow <= ow_hi; ++ow) acc += xr[ow] * grow[ow];
                    }
                  } else {
                    for (int oh = 0; oh < OH; ++oh) {
                      const int ih = oh * stride - padding + kh;
                      if (ih < 0 || ih >= H) continue;
                      for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - padding + kw;
                        if (iw < 0 || iw >= W) continue;
                        acc += xbase[static_cast<size_t>(ih) * W + iw] *
                               gbase[static_cast<size_t>(oh) * OW + ow];
                      }
                    }
                  }
                  wg[kh * KW + kw] += acc;
                }
            }
          }
      }
      if (in_needs(2)) {
        Tensor& gb = in_grad(2);
        for (int nn = 0; nn < N; ++nn)
          for (int oc = 0; oc < OC; ++oc) {
            const double* gbase = g.data.data() + nn * o_n + static_cast<size_t>(oc) * OH * OW;
            double s = 0.0;
            for (int i = 0; i < OH * OW; ++i) s += gbase[i];
            gb[static_cast<size_t>(oc)] += s;
          }
      }
      break;
    }

    case Op::kBatchNorm: {
      const Tensor& x = in_val(0);
      const Tensor& gamma = in_val(1);
      const Tensor& mean = n.saved[0];
      const Tensor& inv_std = n.saved[1];
      const bool train_stats = n.attr_i0 != 0;
      const int N = x.dim(0), C = x.dim(1);
      const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
      const double count = static_cast<double>(static_cast<size_t>(N) * plane);

      for (int c = 0; c < C; ++c) {
        const double m = mean[static_cast<size_t>(c)];
        const double is = inv_std[static_cast<size_t>(c)];
        const double ga = gamma[static_cast<size_t>(c)];
        double t1 = 0.0, t2 = 0.0;  // sum(dy), sum(dy * xhat)
        for (int nn = 0; nn < N; ++nn) {
          const double* gr = g.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
          const double* xr = x.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
          for (size_t i = 0; i < plane; ++i) {
            t1 += gr[i];
            t2 += gr[i] * ((xr[i] - m) * is);
          }
        }
        if (in_needs(1)) in_grad(1)[static_cast<size_t>(c)] += t2;
        if (in_needs(2)) in_grad(2)[static_cast<size_t>(c)] += t1;
        if (in_needs(0)) {
          Tensor& gx = in_grad(0);
          const double k1 = train_stats ? t1 / count : 0.0;
          const double k2 = train_stats ? t2 / count : 0.0;
          for (int nn = 0; nn < N; ++nn) {
            const double* gr = g.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
            const double* xr = x.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
            double* dx = gx.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
              const double xh = (xr[i] - m) * is;
              dx[i] += ga * is * (gr[i] - k1 - xh * k2);
            }
          }
        }
      }
      break;
    }

    case Op::kGroupNorm: {
      const Tensor& x = in_val(0);
      const Tensor& gamma = in_val(1);
      const Tensor& mean = n.saved[0];
      const Tensor& inv_std = n.saved[1];
      const int groups = n.attr_i0;
      const int N = x.dim(0), C = x.dim(1);
      const int cg = C / groups;
      const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
      const double slice = static_cast<double>(static_cast<size_t>(cg) * plane);

      for (int nn = 0; nn < N; ++nn) {
        for (int gi = 0; gi < groups; ++gi) {
          const double m = mean.data[static_cast<size_t>(nn) * groups + gi];
          const double is = inv_std.data[static_cast<size_t>(nn) * groups + gi];
          double t1 = 0.0, t2 = 0.0;  // sums of gamma-weighted dy over the slice
          for (int cc = 0; cc < cg; ++cc) {
            const int c = gi * cg + cc;
            const double ga = gamma[static_cast<size_t>(c)];
            const double* gr = g.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
            const double* xr = x.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
              const double gh = gr[i] * ga;
              t1 += gh;
              t2 += gh * ((xr[i] - m) * is);
            }
          }
          for (int cc = 0; cc < cg; ++cc) {
            const int c = gi * cg + cc;
            const double ga = gamma[static_cast<size_t>(c)];
            const double* gr = g.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
            const double* xr = x.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
            if (in_needs(1) || in_needs(2)) {
              double dg = 0.0, db = 0.0;
              for (size_t i = 0; i < plane; ++i) {
                dg += gr[i] * ((xr[i] - m) * is);
                db += gr[i];
              }
              if (in_needs(1)) in_grad(1)[static_cast<size_t>(c)] += dg;
              if (in_needs(2)) in_grad(2)[static_cast<size_t>(c)] += db;
            }
            if (in_needs(0)) {
              double* dx = in_grad(0).data.data() + (static_cast<size_t>(nn) * C + c) * plane;
              for (size_t i = 0; i < plane; ++i) {
                const double xh = (xr[i] - m) * is;
                dx[i] += is * (gr[i] * ga - t1 / slice - xh * (t2 / slice));
              }
            }
          }
        }
      }
      break;
    }

    case Op::kGap: {
      if (!in_needs(0)) break;
      const Tensor& x = in_val(0);
      const int N = x.dim(0), C = x.dim(1);
      const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
      const double inv = 1.0 / static_cast<double>(plane);
      Tensor& gx = in_grad(0);
      for (int nn = 0; nn < N; ++nn)
        for (int c = 0; c < C; ++c) {
          const double gv = g.data[static_cast<size_t>(nn) * C + c] * inv;
          double* dx = gx.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
          for (size_t i = 0; i < plane; ++i) dx[i] += gv;
        }
      break;
    }

    case Op::kAvgPool2: {
      if (!in_needs(0)) break;
      const Tensor& x = in_val(0);
      const int N = x.dim(0), C = x.dim(1), W = x.dim(3);
      const int OH = n.value.dim(2), OW = n.value.dim(3);
      Tensor& gx = in_grad(0);
      for (int nn = 0; nn < N; ++nn)
        for (int c = 0; c < C; ++c) {
          const double* gr = g.data.data() + (static_cast<size_t>(nn) * C + c) * OH * OW;
          double* dx = gx.data.data() + (static_cast<size_t>(nn) * C + c) * x.dim(2) * W;
          for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
              const double gv = 0.25 * gr[static_cast<size_t>(oh) * OW + ow];
              double* q = dx + static_cast<size_t>(2 * oh) * W + 2 * ow;
              q[0] += gv;
              q[1] += gv;
              q[W] += gv;
              q[W + 1] += gv;
            }
        }
      break;
    }

    case Op::kChannelAffine: {
      const Tensor& x = in_val(0);
      const Tensor& gamma = in_val(1);
      const int N = x.dim(0), C = x.dim(1);
      const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
      for (int c = 0; c < C; ++c) {
        const double ga = gamma[static_cast<size_t>(c)];
        double dg = 0.0, db = 0.0;
        for (int nn = 0; nn < N; ++nn) {
          const double* gr = g.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
          const double* xr = x.data.data() + (static_cast<size_t>(nn) * C + c) * plane;
          if (in_needs(0)) {
            double* dx = in_grad(0).data.data() + (static_cast<size_t>(nn) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) dx[i] += ga * gr[i];
          }
          for (size_t i = 0; i < plane; ++i) {
            dg += gr[i] * xr[i];
            db += gr[i];
          }
        }
        if (in_needs(1)) in_grad(1)[static_cast<size_t>(c)] += dg;
        if (in_needs(2)) in_grad(2)[static_cast<size_t>(c)] += db;
      }
      break;
    }

    case Op::kLerp: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      const double tv = in_val(2)[0];
      if (in_needs(0)) {
        Tensor& ga = in_grad(0);
        for (size_t i = 0; i < g.numel(); ++i) ga[i] += tv * g[i];
      }
      if (in_needs(1)) {
        Tensor& gb = in_grad(1);
        for (size_t i = 0; i < g.numel(); ++i) gb[i] += (1.0 - tv) * g[i];
      }
      if (in_needs(2)) {
        double s = 0.0;
        for (size_t i = 0; i < g.numel(); ++i) s += g[i] * (a[i] - b[i]);
        in_grad(2)[0] += s;
      }
      break;
    }
  }
}

}  // namespace tta
