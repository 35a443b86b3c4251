#include "tta/losses.hpp"

#include <cmath>

#include "tta/errors.hpp"

namespace tta {

DiversityState DiversityState::uniform(int n_classes, double kappa_) {
  DiversityState s;
  s.p_t = Tensor::full({n_classes}, 1.0 / n_classes);
  s.target = Tensor::full({n_classes}, 1.0 / n_classes);
  s.kappa = kappa_;
  s.step_count = 0;
  return s;
}

namespace {

int checked_classes(const Tape& t, Value logits) {
  const Tensor& v = t.value(logits);
  if (v.rank() != 1)
    throw ShapeError("confidence loss: expected a 1-D logit row, got " + v.shape_string());
  if (v.dim(0) < 2) throw ContractError("confidence loss: needs at least 2 classes");
  return v.dim(0);
}

}  // namespace

Value softmax(Tape& t, Value logits) {
  return t.softmax_rows(logits);
}

Value cross_entropy_logits(Tape& t, Value logits, int ref_class) {
  const int n = checked_classes(t, logits);
  if (ref_class < 0 || ref_class >= n)
    throw ContractError("cross_entropy_logits: reference class out of range");
  return t.sub(t.log_sum_exp(logits), t.pick(logits, ref_class));
}

Value cross_entropy_logits(Tape& t, Value logits, const Tensor& one_hot) {
  const int n = checked_classes(t, logits);
  if (one_hot.rank() != 1 || one_hot.dim(0) != n)
    throw ContractError("cross_entropy_logits: reference shape mismatch");
  int ref = -1;
  for (int i = 0; i < n; ++i) {
    const double v = one_hot[static_cast<size_t>(i)];
    if (v == 1.0) {
      if (ref >= 0) throw ContractError("cross_entropy_logits: reference has multiple ones");
      ref = i;
    } else if (v != 0.0) {
      throw ContractError("cross_entropy_logits: reference is not one-hot");
    }
  }
  if (ref < 0) throw ContractError("cross_entropy_logits: reference has no one");
  return cross_entropy_logits(t, logits, ref);
}

Value loss_pl(Tape& t, Value logits) {
  const Tensor& v = t.value(logits);
  checked_classes(t, logits);
  const int c_star = argmax_index(v.data.data(), v.dim(0));
  // -log yhat_{c*} = -o_{c*} + log sum_i e^{o_i}, with c* fixed.
  return t.sub(t.log_sum_exp(logits), t.pick(logits, c_star));
}

Value loss_ent(Tape& t, Value logits) {
  checked_classes(t, logits);
  // H(sm(o)) = lse(o) - sum_c sm(o)_c * o_c, stable at large margins.
  const Value p = t.softmax_rows(logits);
  return t.sub(t.log_sum_exp(logits), t.reduce_sum(t.mul(p, logits), 0));
}

Value loss_hlr(Tape& t, Value logits) {
  const Tensor& v = t.value(logits);
  checked_classes(t, logits);
  const int c_star = argmax_index(v.data.data(), v.dim(0));
  return t.sub(t.log_sum_exp(logits, c_star), t.pick(logits, c_star));
}

Value loss_slr(Tape& t, Value logits) {
  const int n = checked_classes(t, logits);
  const Value p = t.softmax_rows(logits);  // soft weights, differentiated
  std::vector<Value> terms;
  terms.reserve(static_cast<size_t>(n));
  for (int c = 0; c < n; ++c)
    terms.push_back(t.sub(t.log_sum_exp(logits, c), t.pick(logits, c)));
  return t.reduce_sum(t.mul(p, t.stack(terms)), 0);
}

double nll_ratio(const Tensor& y_hat, const Tensor& y_ref) {
  if (!y_hat.same_shape(y_ref) || y_hat.rank() != 1)
    throw ShapeError("nll_ratio: expected matching 1-D rows");
  constexpr double kFloor = 1e-30;
  double r = 0.0;
  for (size_t c = 0; c < y_hat.numel(); ++c) {
    if (y_ref[c] == 0.0) continue;
    double rest = 0.0;
    for (size_t i = 0; i < y_hat.numel(); ++i)
      if (i != c) rest += y_hat[i];
    r -= y_ref[c] * (std::log(std::max(y_hat[c], kFloor)) - std::log(std::max(rest, kFloor)));
  }
  return r;
}

Value mean_conf_loss(Tape& t, Value logits, ConfKind kind) {
  const Tensor& v = t.value(logits);
  if (v.rank() != 2) throw ShapeError("mean_conf_loss: expected logits (N,n_cl)");
  std::vector<Value> rows;
  rows.reserve(static_cast<size_t>(v.dim(0)));
  for (int r = 0; r < v.dim(0); ++r) {
    const Value o = t.row(logits, r);
    switch (kind) {
      case ConfKind::kEntropy: rows.push_back(loss_ent(t, o)); break;
      case ConfKind::kHardPl: rows.push_back(loss_pl(t, o)); break;
      case ConfKind::kHlr: rows.push_back(loss_hlr(t, o)); break;
      case ConfKind::kSlr: rows.push_back(loss_slr(t, o)); break;
      default: throw ContractError("mean_conf_loss: unknown confidence kind");
    }
  }
  return t.reduce_mean(t.stack(rows), 0);
}

void update_diversity(DiversityState& state, const Tensor& confidences) {
  if (confidences.rank() != 2 || confidences.dim(1) != static_cast<int>(state.p_t.numel()))
    throw ShapeError("update_diversity: expected confidences (N,n_cl)");
  if (confidences.dim(0) < 1) throw ContractError("update_diversity: empty batch");
  const int n = confidences.dim(0);
  const size_t cls = state.p_t.numel();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (size_t c = 0; c < cls; ++c) {
    double s = 0.0;
    for (int r = 0; r < n; ++r) s += confidences.data[static_cast<size_t>(r) * cls + c];
    // Same product/sum order as the tape path in total_loss, so the two
    // transitions agree bit-exactly.
    state.p_t[c] = (1.0 - state.kappa) * (s * inv_n) + state.kappa * state.p_t[c];
  }
  state.step_count += 1;
}

double loss_div(const DiversityState& state) {
  double kl = 0.0;
  for (size_t c = 0; c < state.p_t.numel(); ++c) {
    if (!(state.target[c] > 0.0))
      throw DomainError("loss_div: target distribution entry must be positive");
    const double p = state.p_t[c];
    if (p > 0.0) kl += p * std::log(p / state.target[c]);
  }
  return kl;
}

Value total_loss(Tape& t, Value logits, DiversityState& state, const LossWeights& w) {
  const Tensor& v = t.value(logits);
  if (v.rank() != 2 || v.dim(1) != static_cast<int>(state.p_t.numel()))
    throw ShapeError("total_loss: logits batch does not match diversity state");
  for (size_t c = 0; c < state.target.numel(); ++c)
    if (!(state.target[c] > 0.0))
      throw DomainError("total_loss: target distribution entry must be positive");

  // Diversity term over the updated running estimate. Only the current
  // batch's contribution is differentiated; the history term is constant.
  const Value conf = t.softmax_rows(logits);
  const Value p_emp = t.reduce_mean(conf, 0);
  Tensor history(state.p_t.shape);
  for (size_t c = 0; c < history.numel(); ++c) history[c] = state.kappa * state.p_t[c];
  const Value p_t = t.add(t.scale(p_emp, 1.0 - state.kappa), t.constant(history));
  Tensor log_target(state.target.shape);
  for (size_t c = 0; c < log_target.numel(); ++c) log_target[c] = std::log(state.target[c]);
  const Value kl =
      t.reduce_sum(t.mul(p_t, t.sub(t.log(p_t), t.constant(log_target))), 0);

  const Value total = t.add(kl, t.scale(mean_conf_loss(t, logits, w.conf_kind), w.delta));

  // Commit the running-estimate transition for the next batch.
  state.p_t = t.value(p_t);
  state.step_count += 1;
  return total;
}

}  // namespace tta
