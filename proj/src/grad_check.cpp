#include "tta/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "tta/errors.hpp"

namespace tta {

namespace {

double forward_value(const LossBuilder& builder, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Value> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));
  const Value loss = builder(tape, leaves);
  const Tensor& v = tape.value(loss);
  if (v.numel() != 1) throw ContractError("grad_check: loss builder must return a scalar");
  return v[0];
}

}  // namespace

GradReport grad_check(const LossBuilder& builder, const std::vector<Tensor>& params,
                      double h, double tol, double abs_floor) {
  if (!(h > 0.0) || h > 1e-3) throw ContractError("grad_check: h must be in (0, 1e-3]");

  // Reverse-mode gradients.
  std::vector<Tensor> analytic(params.size());
  {
    Tape tape;
    std::vector<Value> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.param(p));
    const Value loss = builder(tape, leaves);
    if (tape.value(loss).numel() != 1)
      throw ContractError("grad_check: loss builder must return a scalar");
    tape.backward(loss);
    for (size_t k = 0; k < params.size(); ++k)
      analytic[k] = tape.has_grad(leaves[k]) ? tape.grad(leaves[k]) : Tensor(params[k].shape);
  }

  GradReport report;
  report.per_param.resize(params.size());
  std::vector<Tensor> work = params;
  for (size_t k = 0; k < params.size(); ++k) {
    for (size_t i = 0; i < work[k].numel(); ++i) {
      const double orig = work[k][i];
      work[k][i] = orig + h;
      const double fp = forward_value(builder, work);
      work[k][i] = orig - h;
      const double fm = forward_value(builder, work);
      work[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
      report.per_param[k].max_abs_err = std::max(report.per_param[k].max_abs_err, abs_err);
      report.per_param[k].max_rel_err = std::max(report.per_param[k].max_rel_err, rel_err);
    }
    report.max_abs_err = std::max(report.max_abs_err, report.per_param[k].max_abs_err);
    report.max_rel_err = std::max(report.max_rel_err, report.per_param[k].max_rel_err);
  }
  report.pass = report.max_rel_err < tol || report.max_abs_err < abs_floor;
  return report;
}

}  // namespace tta
