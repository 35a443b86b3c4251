#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tta/layers.hpp"
#include "tta/tape.hpp"

namespace tta {

// Who owns a parameter and how the adaptation policy treats it.
enum class ParamRole {
  kBackboneWeight,  // conv/linear weights+biases of f; never adapted
  kNormAffine,      // channel-wise gamma/beta of a norm layer in f
  kInputTransform,  // tau, gamma, beta, psi of d
};

struct Param {
  std::string name;
  Tensor value;
  ParamRole role = ParamRole::kBackboneWeight;
  int block = 0;  // 1..3 for f's blocks, 0 otherwise
  bool adaptable = false;
};

struct BufferEntry {
  std::string name;
  Tensor value;
};

struct ModelLayout {
  int in_channels = 1;
  int image_hw = 28;
  int c1 = 16, c2 = 32, c3 = 64;
  int n_classes = 10;
  int rpsi_hidden = 8;
  int rpsi_blocks = 2;
  int rpsi_groups = 4;
  double bn_eps = 1e-5;
  double gn_eps = 1e-5;
  double bn_momentum = 0.1;
};

// Pretrained classifier f composed with the prependable transform d, plus
// the frozen/adaptable partition and a pristine snapshot for bit-exact
// resets between adaptation runs.
class AdaptableModel {
 public:
  static AdaptableModel build(uint64_t init_seed, const ModelLayout& layout = {});

  const ModelLayout& layout() const { return layout_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<BufferEntry>& buffers() { return buffers_; }
  const std::vector<BufferEntry>& buffers() const { return buffers_; }
  int param_index(const std::string& name) const;
  int buffer_index(const std::string& name) const;

  void snapshot_pristine();
  bool has_pristine() const { return !pristine_params_.empty(); }
  void reset();

  // Adaptation partition: norm affines outside frozen blocks plus, when
  // enabled, all input-transform parameters. Backbone weights stay frozen.
  void partition(bool freeze_top, bool use_input_transform);
  // Pretraining partition: every parameter of f trains; d stays frozen.
  void partition_for_pretraining();
  std::vector<int> adaptable_indices() const;

  struct Bound {
    std::vector<Value> values;  // aligned with params()
  };
  // Registers every parameter on the tape; adaptable ones become gradient
  // leaves when with_grads is set.
  Bound bind(Tape& t, bool with_grads);

  // Full model g = f . d (d only when with_transform).
  Value forward(Tape& t, const Bound& b, Value images, NormMode mode, bool update_running,
                bool with_transform);
  // d(x) alone.
  Value transform(Tape& t, const Bound& b, Value images);

 private:
  Value classifier(Tape& t, const Bound& b, Value x, NormMode mode, bool update_running);

  ModelLayout layout_;
  std::vector<Param> params_;
  std::vector<BufferEntry> buffers_;
  std::vector<Tensor> pristine_params_;
  std::vector<Tensor> pristine_buffers_;
};

// Spec-facing names for the two partition entry points.
inline void partition_parameters(AdaptableModel& m, bool freeze_top,
                                 bool use_input_transform) {
  m.partition(freeze_top, use_input_transform);
}

// Logits of a batch of images under the given normalization mode; the
// standalone classifier_forward used by evaluation helpers.
Tensor classifier_logits(AdaptableModel& m, const Tensor& images, NormMode mode,
                         bool with_transform);

}  // namespace tta
