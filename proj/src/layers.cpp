#include "tta/layers.hpp"

namespace tta {

Value conv2d_forward(Tape& t, Value x, const Conv2dParams& p) {
  const Value w = t.constant(p.weight);
  const Value b = t.constant(p.bias);
  return t.conv2d(x, w, b, p.stride, p.padding);
}

Value batch_norm_forward(Tape& t, Value x, NormLayerState& s, bool update_running) {
  BatchNormCall call;
  call.eps = s.eps;
  call.momentum = s.momentum;
  call.train_stats = s.mode == NormMode::kTrainStats;
  call.update_running = call.train_stats && update_running;
  call.running_mean = &s.running_mean;
  call.running_var = &s.running_var;
  const Value gamma = t.constant(s.gamma);
  const Value beta = t.constant(s.beta);
  return t.batch_norm(x, gamma, beta, call);
}

Value group_norm_forward(Tape& t, Value x, const NormLayerState& s) {
  const Value gamma = t.constant(s.gamma);
  const Value beta = t.constant(s.beta);
  return t.group_norm(x, gamma, beta, s.group_count, s.eps);
}

}  // namespace tta
