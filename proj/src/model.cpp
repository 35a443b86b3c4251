#include "tta/model.hpp"

#include <cmath>

#include "tta/errors.hpp"
#include "tta/rng.hpp"

namespace tta {

namespace {

Tensor he_normal(Rng& rng, std::vector<int> shape, int fan_in) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = std * rng.normal();
  return t;
}

}  // namespace

AdaptableModel AdaptableModel::build(uint64_t init_seed, const ModelLayout& layout) {
  AdaptableModel m;
  m.layout_ = layout;
  Rng rng(Rng::mix(init_seed, 0x6d6f64656cULL));  // independent init stream

  auto add_param = [&](std::string name, Tensor v, ParamRole role, int block) {
    m.params_.push_back(Param{std::move(name), std::move(v), role, block, false});
  };
  auto add_buffer = [&](std::string name, Tensor v) {
    m.buffers_.push_back(BufferEntry{std::move(name), std::move(v)});
  };

  const int chans[3] = {layout.c1, layout.c2, layout.c3};
  int in_ch = layout.in_channels;
  for (int b = 1; b <= 3; ++b) {
    const int out_ch = chans[b - 1];
    const std::string p = "f.block" + std::to_string(b);
    add_param(p + ".conv.w", he_normal(rng, {out_ch, in_ch, 3, 3}, in_ch * 9),
              ParamRole::kBackboneWeight, b);
    add_param(p + ".conv.b", Tensor({out_ch}), ParamRole::kBackboneWeight, b);
    add_param(p + ".bn.gamma", Tensor::full({out_ch}, 1.0), ParamRole::kNormAffine, b);
    add_param(p + ".bn.beta", Tensor({out_ch}), ParamRole::kNormAffine, b);
    add_buffer(p + ".bn.running_mean", Tensor({out_ch}));
    add_buffer(p + ".bn.running_var", Tensor::full({out_ch}, 1.0));
    in_ch = out_ch;
  }
  add_param("f.fc.w", he_normal(rng, {layout.n_classes, layout.c3}, layout.c3),
            ParamRole::kBackboneWeight, 3);
  add_param("f.fc.b", Tensor({layout.n_classes}), ParamRole::kBackboneWeight, 3);

  // Input transform d: identity at construction (tau=1, gamma=1, beta=0).
  add_param("d.tau", Tensor::scalar(1.0), ParamRole::kInputTransform, 0);
  add_param("d.gamma", Tensor::full({layout.in_channels}, 1.0), ParamRole::kInputTransform, 0);
  add_param("d.beta", Tensor({layout.in_channels}), ParamRole::kInputTransform, 0);
  if (layout.rpsi_hidden % layout.rpsi_groups != 0)
    throw ShapeError("r_psi hidden channels not divisible by group count");
  int r_in = layout.in_channels;
  for (int b = 1; b <= layout.rpsi_blocks; ++b) {
    const std::string p = "d.rpsi.block" + std::to_string(b);
    add_param(p + ".conv.w", he_normal(rng, {layout.rpsi_hidden, r_in, 3, 3}, r_in * 9),
              ParamRole::kInputTransform, 0);
    add_param(p + ".conv.b", Tensor({layout.rpsi_hidden}), ParamRole::kInputTransform, 0);
    add_param(p + ".gn.gamma", Tensor::full({layout.rpsi_hidden}, 1.0),
              ParamRole::kInputTransform, 0);
    add_param(p + ".gn.beta", Tensor({layout.rpsi_hidden}), ParamRole::kInputTransform, 0);
    r_in = layout.rpsi_hidden;
  }
  add_param("d.rpsi.out.w", he_normal(rng, {layout.in_channels, r_in, 3, 3}, r_in * 9),
            ParamRole::kInputTransform, 0);
  add_param("d.rpsi.out.b", Tensor({layout.in_channels}), ParamRole::kInputTransform, 0);

  m.snapshot_pristine();
  return m;
}

int AdaptableModel::param_index(const std::string& name) const {
  for (size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  return -1;
}

int AdaptableModel::buffer_index(const std::string& name) const {
  for (size_t i = 0; i < buffers_.size(); ++i)
    if (buffers_[i].name == name) return static_cast<int>(i);
  return -1;
}

void AdaptableModel::snapshot_pristine() {
  pristine_params_.clear();
  pristine_buffers_.clear();
  for (const Param& p : params_) pristine_params_.push_back(p.value);
  for (const BufferEntry& b : buffers_) pristine_buffers_.push_back(b.value);
}

void AdaptableModel::reset() {
  if (!has_pristine()) throw ContractError("reset: no pristine snapshot");
  for (size_t i = 0; i < params_.size(); ++i) params_[i].value = pristine_params_[i];
  for (size_t i = 0; i < buffers_.size(); ++i) buffers_[i].value = pristine_buffers_[i];
}

void AdaptableModel::partition(bool freeze_top, bool use_input_transform) {
  for (Param& p : params_) {
    switch (p.role) {
      case ParamRole::kBackboneWeight:
        p.adaptable = false;
        break;
      case ParamRole::kNormAffine:
        p.adaptable = !freeze_top || p.block <= 2;
        break;
      case ParamRole::kInputTransform:
        p.adaptable = use_input_transform;
        break;
    }
  }
}

void AdaptableModel::partition_for_pretraining() {
  for (Param& p : params_) p.adaptable = p.role != ParamRole::kInputTransform;
}

std::vector<int> AdaptableModel::adaptable_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < params_.size(); ++i)
    if (params_[i].adaptable) out.push_back(static_cast<int>(i));
  return out;
}

AdaptableModel::Bound AdaptableModel::bind(Tape& t, bool with_grads) {
  Bound b;
  b.values.reserve(params_.size());
  for (const Param& p : params_)
    b.values.push_back(with_grads && p.adaptable ? t.param(p.value) : t.constant(p.value));
  return b;
}

Value AdaptableModel::classifier(Tape& t, const Bound& b, Value x, NormMode mode,
                                 bool update_running) {
  auto pv = [&](const char* name) {
    const int i = param_index(name);
    if (i < 0) throw ContractError(std::string("unknown parameter ") + name);
    return b.values[static_cast<size_t>(i)];
  };
  Value v = x;
  for (int blk = 1; blk <= 3; ++blk) {
    const std::string p = "f.block" + std::to_string(blk);
    if (blk >= 2) v = t.avg_pool2(v);  // stride-2 downsample on blocks 2-3
    v = t.conv2d(v, pv((p + ".conv.w").c_str()), pv((p + ".conv.b").c_str()), 1, 1);
    BatchNormCall call;
    call.eps = layout_.bn_eps;
    call.momentum = layout_.bn_momentum;
    call.train_stats = mode == NormMode::kTrainStats;
    call.update_running = call.train_stats && update_running;
    call.running_mean = &buffers_[static_cast<size_t>(buffer_index(p + ".bn.running_mean"))].value;
    call.running_var = &buffers_[static_cast<size_t>(buffer_index(p + ".bn.running_var"))].value;
    v = t.batch_norm(v, pv((p + ".bn.gamma").c_str()), pv((p + ".bn.beta").c_str()), call);
    v = t.relu(v);
  }
  v = t.gap(v);
  return t.linear(v, pv("f.fc.w"), pv("f.fc.b"));
}

Value AdaptableModel::transform(Tape& t, const Bound& b, Value images) {
  auto pv = [&](const std::string& name) {
    const int i = param_index(name);
    if (i < 0) throw ContractError("unknown parameter " + name);
    return b.values[static_cast<size_t>(i)];
  };
  const Tensor& x = t.value(images);
  if (x.rank() != 4 || x.dim(1) != layout_.in_channels)
    throw ShapeError("transform: expected images (N," + std::to_string(layout_.in_channels) +
                     ",H,W), got " + x.shape_string());
  Value r = images;
  for (int blk = 1; blk <= layout_.rpsi_blocks; ++blk) {
    const std::string p = "d.rpsi.block" + std::to_string(blk);
    r = t.conv2d(r, pv(p + ".conv.w"), pv(p + ".conv.b"), 1, 1);
    r = t.group_norm(r, pv(p + ".gn.gamma"), pv(p + ".gn.beta"), layout_.rpsi_groups,
                     layout_.gn_eps);
    r = t.relu(r);
  }
  r = t.conv2d(r, pv("d.rpsi.out.w"), pv("d.rpsi.out.b"), 1, 1);
  const Value mixed = t.lerp(images, r, pv("d.tau"));
  return t.channel_affine(mixed, pv("d.gamma"), pv("d.beta"));
}

Value AdaptableModel::forward(Tape& t, const Bound& b, Value images, NormMode mode,
                              bool update_running, bool with_transform) {
  Value x = with_transform ? transform(t, b, images) : images;
  return classifier(t, b, x, mode, update_running);
}

Tensor classifier_logits(AdaptableModel& m, const Tensor& images, NormMode mode,
                         bool with_transform) {
  Tape t;
  auto bound = m.bind(t, /*with_grads=*/false);
  const Value x = t.constant(images);
  const Value o = m.forward(t, bound, x, mode, /*update_running=*/false, with_transform);
  return t.value(o);
}

}  // namespace tta
